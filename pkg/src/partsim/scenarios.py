"""Experiment configuration: scenario schema, validation, presets, YAML IO."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

from .detectors import (ALL_KINDS, EVENTUAL_KINDS, WEAK_KINDS,
                        DetectorSchedule, LieWindow, WagePeerPlan)


class ConfigInvalid(Exception):
    pass


@dataclass(frozen=True)
class SplitSpec:
    round: int
    peers_a: tuple[int, ...]
    peers_b: tuple[int, ...]
    fraction_a: Fraction = Fraction(1, 2)  # every account, side A's share


@dataclass(frozen=True)
class MergeSpec:
    round: int
    peers_a: tuple[int, ...]
    peers_b: tuple[int, ...]


@dataclass
class ScenarioConfig:
    name: str = "custom"
    n: int = 100
    d: int = 1
    rounds: int = 700
    tx_per_round: int = 1
    tx_every: int = 1  # submit every k-th round
    n_accounts: int = 8
    endowment_per_account: int = 1_000_000_000
    tx_amount_max: int = 100
    seed: int = 0
    mining_model: str = "uniform-completion"
    detector: DetectorSchedule = field(default_factory=DetectorSchedule)
    splits: list[SplitSpec] = field(default_factory=list)
    merges: list[MergeSpec] = field(default_factory=list)
    loss_rate: float = 0.0
    loss_force_after: int = 20  # K: forced delivery after K drops of a rebroadcast
    catchup: bool = False
    catchup_deep: bool = False  # replies carry the full ancestry of the block
    cooperative_merge: bool = False
    trace: bool = False

    def endowment(self) -> dict[str, int]:
        return {f"a{i:02d}": self.endowment_per_account
                for i in range(self.n_accounts)}

    def validate(self) -> None:
        if self.n < 2:
            raise ConfigInvalid("n must be at least 2")
        if self.d < 1:
            raise ConfigInvalid("d must be at least 1")
        if self.rounds < 0:
            raise ConfigInvalid("rounds must be non-negative")
        if not 0.0 <= self.loss_rate < 1.0:
            raise ConfigInvalid("loss_rate must lie in [0, 1)")
        if self.tx_every < 1:
            raise ConfigInvalid("tx_every must be at least 1")
        if self.mining_model not in ("uniform-completion",
                                     "per-round-bernoulli"):
            raise ConfigInvalid(f"unknown mining model {self.mining_model!r}")
        if self.detector.kind not in ALL_KINDS:
            raise ConfigInvalid(f"unknown detector {self.detector.kind!r}")
        peers = set(range(self.n))
        events = sorted([(s.round, "split", s) for s in self.splits]
                        + [(m.round, "merge", m) for m in self.merges])
        parts = [peers]
        for rnd, kind, ev in events:
            if rnd < 0 or rnd >= max(self.rounds, 1):
                raise ConfigInvalid(f"event round {rnd} outside the run")
            a, b = set(ev.peers_a), set(ev.peers_b)
            if kind == "split":
                if a & b or not a or not b:
                    raise ConfigInvalid("split sides must be disjoint, non-empty")
                if not 0 < ev.fraction_a < 1:
                    raise ConfigInvalid("split fraction must be in (0, 1)")
                if (a | b) not in parts:
                    raise ConfigInvalid(
                        f"split at {rnd} does not match a live partition")
                parts.remove(a | b)
                parts += [a, b]
            else:
                if a not in parts or b not in parts:
                    raise ConfigInvalid(
                        f"merge at {rnd} references unknown partitions")
                parts.remove(a)
                parts.remove(b)
                parts.append(a | b)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        cfg = replace(self)
        for k, v in kw.items():
            if v is None:
                continue
            if not hasattr(cfg, k):
                raise ConfigInvalid(f"unknown option {k!r}")
            setattr(cfg, k, v)
        return cfg

    def event_markers(self) -> list[dict]:
        markers = [{"round": s.round, "label": "split"} for s in self.splits]
        markers += [{"round": m.round, "label": "merge"} for m in self.merges]
        for w in self.detector.windows:
            markers.append({"round": w.from_round, "label": "detector-errs"})
            markers.append({"round": w.to_round, "label": "detector-corrects"})
        return sorted(markers, key=lambda m: (m["round"], m["label"]))


def _halves(n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return tuple(range(n // 2)), tuple(range(n // 2, n))


def preset(name: str, n: int = 100) -> ScenarioConfig:
    lo, hi = _halves(n)
    if name == "baseline":
        return ScenarioConfig(name=name, n=n, rounds=700)
    if name == "lagging-age":
        # Split at 100; the eventual-age detector keeps answering "old"
        # until round 200.
        det = DetectorSchedule(kind="EAGE",
                               windows=[LieWindow(100, 200, 0)])
        return ScenarioConfig(
            name=name, n=n, rounds=700, detector=det,
            splits=[SplitSpec(100, lo, hi)])
    if name == "lying-age":
        # No split; the detector claims one on [100, 200).
        det = DetectorSchedule(kind="EAGE",
                               windows=[LieWindow(100, 200, 1)])
        return ScenarioConfig(name=name, n=n, rounds=700, detector=det)
    if name == "message-loss":
        det = DetectorSchedule(kind="EAGE",
                               windows=[LieWindow(100, 200, 0)])
        return ScenarioConfig(
            name=name, n=n, d=2, rounds=700, tx_every=8, detector=det,
            splits=[SplitSpec(100, lo, hi)],
            loss_rate=0.05, catchup=True)
    if name == "multi-split-merge":
        q = n // 4
        b, bp = tuple(range(q)), tuple(range(q, n // 2))
        det = DetectorSchedule(kind="ERA")
        return ScenarioConfig(
            name=name, n=n, rounds=700, detector=det,
            splits=[SplitSpec(100, lo, hi), SplitSpec(200, b, bp)],
            merges=[MergeSpec(300, bp, hi), MergeSpec(500, b, bp + hi)],
            catchup=True, catchup_deep=True, cooperative_merge=True)
    raise ConfigInvalid(f"unknown preset {name!r}")


PRESETS = ("baseline", "lagging-age", "lying-age", "message-loss",
           "multi-split-merge")


# ---------------------------------------------------------------------------
# YAML scenario files
# ---------------------------------------------------------------------------

def load_scenario(path: str) -> ScenarioConfig:
    import yaml

    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid(f"{path}: top level must be a mapping")
    return scenario_from_dict(raw, source=path)


def scenario_from_dict(raw: dict, source: str = "<dict>") -> ScenarioConfig:
    cfg = ScenarioConfig()
    simple = {"name", "n", "d", "rounds", "tx_per_round", "tx_every",
              "n_accounts",
              "endowment_per_account", "tx_amount_max", "seed",
              "mining_model", "loss_rate", "loss_force_after", "catchup",
              "catchup_deep", "cooperative_merge", "trace"}
    for key, val in raw.items():
        if key in simple:
            setattr(cfg, key, val)
        elif key == "detector":
            cfg.detector = _detector_from_dict(val, source)
        elif key == "splits":
            cfg.splits = [_split_from_dict(s, source) for s in val]
        elif key == "merges":
            cfg.merges = [MergeSpec(m["round"], tuple(m["peers_a"]),
                                    tuple(m["peers_b"])) for m in val]
        else:
            raise ConfigInvalid(f"{source}: unknown field {key!r}")
    cfg.validate()
    return cfg


def _split_from_dict(s: dict, source: str) -> SplitSpec:
    frac = Fraction(str(s.get("fraction_a", "1/2")))
    return SplitSpec(s["round"], tuple(s["peers_a"]), tuple(s["peers_b"]),
                     frac)


def _detector_from_dict(d: dict, source: str) -> DetectorSchedule:
    kind = d.get("kind", "AGE")
    windows = []
    for w in d.get("windows", []):
        peers = frozenset(w["peers"]) if "peers" in w else None
        blocks = frozenset(w["blocks"]) if "blocks" in w else None
        windows.append(LieWindow(w["from"], w["to"], w["forced"],
                                 peers, blocks))
    plans = {}
    for p in d.get("wage_plans", []):
        plans[p["peer"]] = WagePeerPlan(
            truthful=p.get("truthful", False),
            stable_from=p.get("stable_from", 0),
            period=p.get("period", 7),
            phase=p.get("phase", 0))
    try:
        return DetectorSchedule(kind=kind, windows=windows, wage_plans=plans,
                                wage_window=d.get("wage_window", 50))
    except Exception as exc:
        raise ConfigInvalid(f"{source}: detector: {exc}") from exc
