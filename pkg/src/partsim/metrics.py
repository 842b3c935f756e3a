"""Aggregation of run results: rolling throughput, CSV output, and the
end-of-run ledger property checks."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO, Union

from . import chain
from .engine import RunResult

CSV_COLUMNS = ("scenario", "runs", "round", "mean_rolling_confirmed",
               "sd_rolling_confirmed", "submitted", "confirmed_cum",
               "forks", "confirmed_ratio", "excluded")
WARMUP_ROUNDS = 100
ROLLING_WINDOW = 10


class LengthMismatch(Exception):
    pass


def rolling_mean(values: Sequence[float],
                 window: int = ROLLING_WINDOW) -> list[float]:
    """Trailing mean over up to `window` entries (fewer near the start)."""
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(window, i + 1))
    return out


def aggregate(results: Sequence[RunResult],
              warmup: int = WARMUP_ROUNDS) -> list[dict]:
    """Per-round aggregate rows across same-length runs."""
    if not results:
        return []
    rounds = results[0].rounds
    for res in results:
        if res.rounds != rounds or len(res.confirmed) != rounds:
            raise LengthMismatch(
                f"run lengths differ: {res.rounds} vs {rounds}")
    n_runs = len(results)
    rollings = [rolling_mean(res.confirmed) for res in results]
    rows = []
    sub_cum = 0.0
    conf_cum = 0.0
    for r in range(rounds):
        vals = [roll[r] for roll in rollings]
        mean = sum(vals) / n_runs
        var = sum((v - mean) ** 2 for v in vals) / n_runs
        sub_cum += sum(res.submitted[r] for res in results) / n_runs
        conf_cum += sum(res.confirmed[r] for res in results) / n_runs
        forks = sum(res.forks[r] for res in results) / n_runs
        rows.append({
            "round": r,
            "mean_rolling_confirmed": mean,
            "sd_rolling_confirmed": var ** 0.5,
            "submitted": sub_cum,
            "confirmed_cum": conf_cum,
            "forks": forks,
            "confirmed_ratio": conf_cum / sub_cum if sub_cum else 0.0,
            "excluded": 1 if r < warmup else 0,
        })
    return rows


def write_csv(out: Union[str, TextIO], scenario: str, n_runs: int,
              rows: Sequence[dict]) -> None:
    """Fixed-layout CSV; float cells use 6 decimals so output is
    byte-reproducible."""
    own = isinstance(out, str)
    fh: TextIO = open(out, "w", newline="") if own else out
    try:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            cells = [scenario, str(n_runs), str(row["round"])]
            for col in CSV_COLUMNS[3:9]:
                cells.append(f"{row[col]:.6f}")
            cells.append(str(row["excluded"]))
            fh.write(",".join(cells) + "\n")
    finally:
        if own:
            fh.close()


def render_csv(scenario: str, n_runs: int, rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    write_csv(buf, scenario, n_runs, rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Ledger property checks
# ---------------------------------------------------------------------------

@dataclass
class PropertyReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_properties(result: RunResult,
                     progress_cutoff: Optional[int] = None) -> PropertyReport:
    """End-of-run checks: confirmed transactions sit once on their domain's
    common chain and replay cleanly, live partitions' chains stay mutually
    mergeable, and nothing permanently valid is left unconfirmed."""
    report = PropertyReport()
    sim = result.sim
    if sim is None:
        raise ValueError("result lacks its simulation state")
    _check_confirmations(result, sim, report)
    _check_compatibility(sim, report)
    if progress_cutoff is not None:
        _check_progress(result, sim, progress_cutoff, report)
    return report


def _live_partitions(sim) -> list[int]:
    return sorted(set(sim.peer_pid))


def _rep_chain(sim, pid: int) -> list:
    rep = sim.peers[min(sim.ctx.partitions[pid].peers)]
    return [sim.tree.blocks[bid] for bid in rep.chain_ids()]


def _check_confirmations(result: RunResult, sim, report) -> None:
    seen: set = set()
    for c in result.confirmations:
        if c.tx_id in seen:
            report.violations.append(f"{c.tx_id} confirmed twice")
        seen.add(c.tx_id)
        b = sim.tree.blocks[c.block_id]
        if b.tx is None or b.tx.tx_id != c.tx_id:
            report.violations.append(
                f"{c.tx_id} credited to block {c.block_id} not carrying it")
            continue
        members = sim.ctx.partitions[c.domain].peers
        for p in sorted(members):
            if c.block_id not in sim.peers[p].chain_set:
                report.violations.append(
                    f"{c.tx_id}: block {c.block_id} missing from peer {p}'s "
                    f"final chain")
                break
    for pid in _live_partitions(sim):
        branch = _rep_chain(sim, pid)
        ids = [b.tx.tx_id for b in branch if b.tx is not None]
        if len(ids) != len(set(ids)):
            report.violations.append(
                f"partition {pid}: duplicate transaction on the main chain")
        if not chain._replay_valid(branch, sim.ctx):
            report.violations.append(
                f"partition {pid}: main chain replay goes invalid")


def _strip_shared(a: list, b: list) -> tuple[list, list]:
    """Drop blocks carrying a transaction present on both chains.  A tx
    gossiped before the split sits in both pools and both sides may mine
    it; compatibility is about each side's own spending, and duplicates
    are collapsed by confirmation dedup anyway."""
    k = 0
    while k < min(len(a), len(b)) and a[k].block_id == b[k].block_id:
        k += 1
    ids_a = {x.tx.tx_id for x in a[k:] if x.tx is not None}
    ids_b = {x.tx.tx_id for x in b[k:] if x.tx is not None}
    shared = ids_a & ids_b
    keep = lambda x: x.tx is None or x.tx.tx_id not in shared
    return a[:k] + [x for x in a[k:] if keep(x)], \
        b[:k] + [x for x in b[k:] if keep(x)]


def _check_compatibility(sim, report) -> None:
    live = _live_partitions(sim)
    for i, pa in enumerate(live):
        for pb in live[i + 1:]:
            a, b = _rep_chain(sim, pa), _rep_chain(sim, pb)
            if any(x.is_merge for x in a + b):
                continue  # recombination is checked via conservation instead
            a, b = _strip_shared(a, b)
            if not chain.mergeable(a, b, sim.ctx):
                report.violations.append(
                    f"partitions {pa} and {pb}: chains not mergeable")


def _check_progress(result: RunResult, sim, cutoff: int, report) -> None:
    confirmed = result.confirmed_ids
    reps = {pid: _rep_chain(sim, pid) for pid in _live_partitions(sim)}
    for s in result.submissions:
        if s.round >= cutoff or s.tx.tx_id in confirmed:
            continue
        origin = sim.ctx.partitions[s.partition].peers
        for pid, branch in reps.items():
            if not (sim.ctx.partitions[pid].peers & origin):
                continue
            if chain.is_valid(s.tx, branch, sim.ctx, tree=sim.tree,
                              as_partition=pid):
                report.violations.append(
                    f"{s.tx.tx_id} (round {s.round}) still valid in "
                    f"partition {pid} but never confirmed")
                break
