"""Partition detector family and the weak-age to eventual-age reduction.

Detectors are oracles over simulator ground truth.  Imperfect variants are
driven by an error schedule: lie windows force an output for matching
(peer, block, round) triples; weak-age schedules make peers oscillate while
guaranteeing one designated truthful peer per partition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .chain import NEW, OLD, BlockId, SplitContext

PERFECT_KINDS = {"AGE", "MAGE", "SMAGE", "ERA", "SPLIT", "PROP"}
EVENTUAL_KINDS = {"EAGE", "EMAGE", "ESMAGE", "EERA"}
WEAK_KINDS = {"WAGE", "WMAGE"}
ALL_KINDS = PERFECT_KINDS | EVENTUAL_KINDS | WEAK_KINDS


class DetectorError(Exception):
    pass


class UnknownBlock(DetectorError):
    pass


class StaleUpdate(DetectorError):
    pass


@dataclass(frozen=True)
class BlockRecord:
    block_id: BlockId
    round: int
    miner: int
    partition: int


class GroundTruth:
    """Split/merge event log plus the per-block mining record."""

    def __init__(self, ctx: SplitContext):
        self.ctx = ctx
        self.records: dict[BlockId, BlockRecord] = {}
        self.events: list[tuple[int, str, tuple[int, ...]]] = []

    def record_block(self, block_id: BlockId, round_: int, miner: int,
                     partition: int) -> None:
        self.records[block_id] = BlockRecord(block_id, round_, miner,
                                             partition)

    def record_event(self, round_: int, kind: str,
                     pids: tuple[int, ...]) -> None:
        self.events.append((round_, kind, pids))

    def split_count(self, pid: int) -> int:
        info = self.ctx.partitions[pid]
        if not info.parents:
            return 0
        if len(info.parents) == 1:
            return self.split_count(info.parents[0]) + 1
        return max(self.split_count(p) for p in info.parents)

    def truth(self, kind: str, block_id: BlockId, round_: int):
        rec = self.records.get(block_id)
        if rec is None:
            raise UnknownBlock(block_id)
        part = self.ctx.partitions[rec.partition]
        all_peers = self.ctx.partitions[0].peers
        if kind in ("AGE", "EAGE", "WAGE"):
            return OLD if part.era == 0 else NEW
        if kind in ("MAGE", "EMAGE", "WMAGE"):
            return self.split_count(rec.partition)
        if kind in ("ERA", "EERA"):
            return part.era
        if kind in ("SMAGE", "ESMAGE"):
            return part.peers != all_peers
        if kind == "SPLIT":
            return any(r <= round_ and k == "split"
                       for r, k, _ in self.events)
        if kind == "PROP":
            return part.peers == all_peers
        raise DetectorError(f"unknown detector kind {kind!r}")


@dataclass(frozen=True)
class LieWindow:
    from_round: int
    to_round: int  # exclusive
    forced: object
    peers: Optional[frozenset[int]] = None  # None == every peer
    blocks: Optional[frozenset[BlockId]] = None  # None == every block

    def covers(self, peer: int, block_id: BlockId, round_: int) -> bool:
        return (self.from_round <= round_ < self.to_round
                and (self.peers is None or peer in self.peers)
                and (self.blocks is None or block_id in self.blocks))


@dataclass(frozen=True)
class WagePeerPlan:
    """Oscillating peers emit the wrong value except once every `period`
    rounds; truthful peers are lie-free from `stable_from` on."""
    truthful: bool = False
    stable_from: int = 0
    period: int = 7
    phase: int = 0


@dataclass
class DetectorSchedule:
    kind: str = "AGE"
    windows: list[LieWindow] = field(default_factory=list)
    wage_plans: dict[int, WagePeerPlan] = field(default_factory=dict)
    wage_window: int = 50  # finite-run surrogate for "infinitely often"

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise DetectorError(f"unknown detector kind {self.kind!r}")
        if self.kind in PERFECT_KINDS and self.windows:
            raise DetectorError(f"{self.kind} admits no lie windows")
        if self.kind in WEAK_KINDS:
            for plan in self.wage_plans.values():
                if not plan.truthful and plan.period > self.wage_window:
                    raise DetectorError(
                        "oscillation period exceeds the correctness window")

    def boundary_rounds(self) -> list[int]:
        rounds = set()
        for w in self.windows:
            rounds.add(w.from_round)
            rounds.add(w.to_round)
        return sorted(rounds)


def query(truth: GroundTruth, schedule: DetectorSchedule, peer: int,
          block_id: BlockId, round_: int):
    """Detector output for (peer, block, round): a lie-window override when
    active, the ground truth otherwise."""
    value = truth.truth(schedule.kind, block_id, round_)
    if schedule.kind in WEAK_KINDS:
        return _wage_value(schedule, value, peer, round_)
    for w in schedule.windows:
        if w.covers(peer, block_id, round_):
            return w.forced
    return value


def _wage_value(schedule: DetectorSchedule, value, peer: int, round_: int):
    plan = schedule.wage_plans.get(peer, WagePeerPlan(truthful=True))
    if plan.truthful:
        if round_ >= plan.stable_from:
            return value
        return _wrong(schedule.kind, value)
    if (round_ + plan.phase) % plan.period == 0:
        return value
    return _wrong(schedule.kind, value)


def _wrong(kind: str, value):
    if kind == "WAGE":
        return NEW if value == OLD else OLD
    return value + 1


# ---------------------------------------------------------------------------
# WAGE -> eventual-AGE reduction
# ---------------------------------------------------------------------------

@dataclass
class ReductionState:
    """Per-block reduction bookkeeping for one peer: last seen weak-age
    output and flip count for every peer in the network."""
    peer: int
    n: int
    flips: list[int] = field(init=False)
    ages: list[int] = field(init=False)

    def __post_init__(self):
        self.flips = [0] * self.n
        self.ages = [OLD] * self.n


def local_wage_change(state: ReductionState,
                      value) -> Optional[tuple[int, object]]:
    """Feed the peer's own weak-age output.  Returns the (flips, age) update
    to broadcast when the output changed, else None."""
    if state.ages[state.peer] == value:
        return None
    state.ages[state.peer] = value
    state.flips[state.peer] += 1
    return (state.flips[state.peer], value)


def receive_update(state: ReductionState, sender: int, num_flips: int,
                   age) -> None:
    if num_flips < state.flips[sender]:
        raise StaleUpdate(
            f"flips for peer {sender} went {state.flips[sender]} -> "
            f"{num_flips}")
    state.flips[sender] = num_flips
    state.ages[sender] = age


def reduced_output(state: ReductionState):
    """Age reported by the peer with the fewest output changes; ties go to
    the smallest peer id."""
    best = min(range(state.n), key=lambda p: (state.flips[p], p))
    return state.ages[best]


# ---------------------------------------------------------------------------
# Reduction harness: the protocol over FIFO channels with random delays
# ---------------------------------------------------------------------------

def run_reduction_sim(n: int, rounds: int, schedule: DetectorSchedule,
                      block_truths: dict[BlockId, int], max_delay: int = 2,
                      split: Optional[tuple[int, frozenset[int]]] = None,
                      seed: int = 0) -> dict[BlockId, list[list[int]]]:
    """Run the reduction protocol for each block and return, per block, the
    per-round list of every peer's reduced output.

    `split` optionally partitions the network at (round, peer set A); updates
    sent after the split only cross within a side, matching the simulator's
    delivery rule.
    """
    import random

    states = {b: [ReductionState(p, n) for p in range(n)]
              for b in block_truths}
    rngs = [random.Random(f"{seed}:red:{p}") for p in range(n)]
    # pending[r] -> list of (receiver, block, sender, flips, age)
    pending: dict[int, list[tuple]] = {}
    last_delivery: dict[tuple[int, int], int] = {}
    history: dict[BlockId, list[list[int]]] = {b: [] for b in block_truths}

    def same_side(p: int, q: int, rnd: int) -> bool:
        if split is None or rnd < split[0]:
            return True
        return (p in split[1]) == (q in split[1])

    for rnd in range(rounds):
        for msg in pending.pop(rnd, []):
            receiver, block, sender, flips, age = msg
            receive_update(states[block][receiver], sender, flips, age)
        for p in range(n):
            for block, truth_value in block_truths.items():
                out = _wage_value(schedule, truth_value, p, rnd)
                update = local_wage_change(states[block][p], out)
                if update is None:
                    continue
                for q in range(n):
                    if q == p or not same_side(p, q, rnd):
                        continue
                    delay = rngs[p].randint(1, max_delay)
                    due = max(rnd + delay, last_delivery.get((p, q), 0))
                    last_delivery[(p, q)] = due
                    pending.setdefault(due, []).append(
                        (q, block, p) + update)
        for block in block_truths:
            history[block].append(
                [reduced_output(states[block][p]) for p in range(n)])
    return history
