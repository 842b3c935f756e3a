from .render import (FigureSpec, MalformedCSV, Series, load_series,
                     markers_from_manifest, render)

__all__ = ["FigureSpec", "MalformedCSV", "Series", "load_series",
           "markers_from_manifest", "render"]
__version__ = "0.1.0"
