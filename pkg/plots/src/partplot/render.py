"""Line charts from simulator metrics CSVs.

The CSV layout and the run manifest are the whole interface to the
simulator; nothing here recomputes statistics.  Rendering is deterministic:
fixed figure geometry, fixed fonts, no timestamps in the PNG.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

EXPECTED_COLUMNS = ("scenario", "runs", "round", "mean_rolling_confirmed",
                    "sd_rolling_confirmed", "submitted", "confirmed_cum",
                    "forks", "confirmed_ratio", "excluded")

RC = {
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "svg.hashsalt": "partplot",
}


class MalformedCSV(Exception):
    pass


@dataclass(frozen=True)
class Series:
    scenario: str
    rounds: list[int]
    values: list[float]
    spread: list[float]


@dataclass
class FigureSpec:
    csv_paths: list[str]
    markers: list[tuple[int, str]] = field(default_factory=list)
    out: str = "figure.png"
    title: str = ""


def load_series(path: str) -> Series:
    """Parse one metrics CSV, keeping only rows not flagged excluded."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedCSV(f"{path}: empty file")
    header = tuple(lines[0].split(","))
    if header != EXPECTED_COLUMNS:
        raise MalformedCSV(f"{path}:1: unexpected header {lines[0]!r}")
    scenario = None
    rounds: list[int] = []
    values: list[float] = []
    spread: list[float] = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(EXPECTED_COLUMNS):
            raise MalformedCSV(
                f"{path}:{lineno}: expected {len(EXPECTED_COLUMNS)} cells, "
                f"got {len(cells)}")
        try:
            rnd = int(cells[2])
            mean = float(cells[3])
            sd = float(cells[4])
            excluded = int(cells[9])
        except ValueError as exc:
            raise MalformedCSV(f"{path}:{lineno}: {exc}") from exc
        if excluded not in (0, 1):
            raise MalformedCSV(
                f"{path}:{lineno}: excluded flag must be 0 or 1")
        if scenario is None:
            scenario = cells[0]
        elif cells[0] != scenario:
            raise MalformedCSV(
                f"{path}:{lineno}: mixed scenarios {scenario!r} and "
                f"{cells[0]!r}")
        if rounds and rnd <= rounds[-1] and not excluded:
            raise MalformedCSV(f"{path}:{lineno}: rounds not increasing")
        if excluded:
            continue
        rounds.append(rnd)
        values.append(mean)
        spread.append(sd)
    if scenario is None:
        raise MalformedCSV(f"{path}: no data rows")
    if not rounds:
        raise MalformedCSV(f"{path}: every row is flagged excluded")
    return Series(scenario, rounds, values, spread)


def markers_from_manifest(path: str,
                          scenarios: set[str]) -> list[tuple[int, str]]:
    """Event markers for the given scenarios, from the run manifest."""
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedCSV(f"{path}: {exc}") from exc
    seen = set()
    out: list[tuple[int, str]] = []
    for entry in manifest.get("scenarios", []):
        if entry.get("scenario") not in scenarios:
            continue
        for ev in entry.get("events", []):
            key = (ev["round"], ev["label"])
            if key not in seen:
                seen.add(key)
                out.append(key)
    return sorted(out)


def render(spec: FigureSpec) -> None:
    series = [load_series(p) for p in spec.csv_paths]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 4.5))
        for s in series:
            ax.plot(s.rounds, s.values, linewidth=1.2, label=s.scenario)
        for rnd, label in spec.markers:
            ax.axvline(rnd, color="0.4", linestyle="--", linewidth=0.8)
            ax.annotate(label, (rnd, 1.0), xycoords=("data", "axes fraction"),
                        xytext=(2, -2), textcoords="offset points",
                        va="top", fontsize=8, color="0.3")
        ax.set_xlabel("round")
        ax.set_ylabel("confirmed per round (rolling mean)")
        ax.set_xlim(left=min(min(s.rounds) for s in series))
        ax.set_ylim(bottom=0)
        if spec.title:
            ax.set_title(spec.title)
        if len(series) > 1:
            ax.legend(loc="lower right", fontsize=8)
        fig.tight_layout()
        fig.savefig(spec.out, format="png",
                    metadata={"Software": "partplot"})
        plt.close(fig)
