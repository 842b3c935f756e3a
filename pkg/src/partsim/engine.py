"""Round-based network simulation.

Each round: partition events, message delivery, client submissions, peer
handlers (transactions, blocks, catchup), mining, then metrics collection.
Delivery is partition-gated at send time and FIFO per channel.
"""

from __future__ import annotations

import random
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Optional

from . import chain, detectors
from .chain import OLD, NEW, Block, BlockTree, Transaction, SplitContext
from .detectors import (WEAK_KINDS, DetectorSchedule, GroundTruth,
                        ReductionState)
from .scenarios import ScenarioConfig, ConfigInvalid

GENESIS_ID = "genesis"


class SimError(Exception):
    pass


@dataclass(frozen=True, slots=True)
class Submission:
    tx: Transaction
    round: int
    partition: int


@dataclass(frozen=True, slots=True)
class Confirmation:
    tx_id: tuple[int, int]
    round: int
    block_id: str
    domain: int


@dataclass(frozen=True, slots=True)
class MiningAttempt:
    key: tuple
    label: int
    completion: int  # target round under the uniform-completion model


@dataclass
class RunResult:
    name: str
    n: int
    rounds: int
    seed: int
    submitted: list[int] = field(default_factory=list)  # per round
    confirmed: list[int] = field(default_factory=list)  # first confirmations
    forks: list[int] = field(default_factory=list)  # cumulative
    submissions: list[Submission] = field(default_factory=list)
    confirmations: list[Confirmation] = field(default_factory=list)
    chains: dict[int, list[str]] = field(default_factory=dict)
    conservation: list[tuple[int, bool, int]] = field(default_factory=list)
    convergence_round: Optional[int] = None
    trace: list[str] = field(default_factory=list)
    sim: Optional["Simulation"] = field(default=None, repr=False)

    @property
    def confirmed_ids(self) -> set[tuple[int, int]]:
        return {c.tx_id for c in self.confirmations}


class PeerState:
    __slots__ = ("ident", "pid", "have", "order_list", "unlinked", "txs",
                 "tx_order", "on_chain", "seg_best", "anchors", "sig",
                 "segments", "chain_set", "scan", "attempt", "label", "inbox",
                 "replied", "own_tree", "wage", "dirty_chain",
                 "dirty_mining", "chain_version", "txs_version")

    def __init__(self, ident: int, pid: int, slow: bool, genesis: Block):
        self.ident = ident
        self.pid = pid
        self.have: set[str] = {GENESIS_ID}
        self.order_list: list[str] = []
        self.unlinked: dict[str, Block] = {}
        self.txs: dict[tuple[int, int], Transaction] = {}
        self.tx_order: list[tuple[int, int]] = []
        self.on_chain: set[tuple[int, int]] = set()
        self.seg_best: dict[str, tuple[int, str]] = {GENESIS_ID: (1, GENESIS_ID)}
        self.anchors: dict[str, dict[int, tuple[int, str]]] = {}
        self.sig: tuple[str, ...] = (GENESIS_ID,)
        self.segments: list[list[str]] = [[GENESIS_ID]]
        self.chain_set: set[str] = {GENESIS_ID}
        self.scan = 0
        self.attempt: Optional[MiningAttempt] = None
        self.label = 0
        self.inbox: list[tuple] = []
        self.replied: dict[str, int] = {}
        self.own_tree = BlockTree(genesis) if slow else None
        self.wage: dict[object, ReductionState] = {}
        self.dirty_chain = False
        self.dirty_mining = True
        self.chain_version = 0
        self.txs_version = 0

    @property
    def tail(self) -> str:
        return self.sig[-1]

    def chain_ids(self) -> list[str]:
        out: list[str] = []
        for seg in self.segments:
            out.extend(seg)
        return out


class Simulation:
    """One seeded run of the peer network."""

    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        sched = cfg.detector
        if sched.kind in ("SPLIT", "PROP"):
            raise ConfigInvalid(f"{sched.kind} has no block labels to mine with")
        self.cfg = cfg
        self.sched = sched
        self.genesis = chain.genesis_block(GENESIS_ID)
        self.ctx = SplitContext(cfg.endowment(), range(cfg.n))
        self.ctx.register_genesis(GENESIS_ID)
        self.gt = GroundTruth(self.ctx)
        self.gt.record_block(GENESIS_ID, -1, -1, 0)
        self.tree = BlockTree(self.genesis)
        self.accounts = sorted(cfg.endowment())
        self.endow_total = sum(cfg.endowment().values())
        # Per-peer lie windows and the weak detectors need full per-round
        # recomputation; global windows admit the incremental fast path.
        self.slow = (sched.kind in WEAK_KINDS
                     or any(w.peers is not None or w.blocks is not None
                            for w in sched.windows))
        self.peer_pid = [0] * cfg.n
        self.peers = [PeerState(p, 0, self.slow, self.genesis)
                      for p in range(cfg.n)]
        self._round = 0
        self._submitted_now = 0
        self.rng_mine = [random.Random(f"{cfg.seed}:mine:{p}")
                         for p in range(cfg.n)]
        self.rng_chan = [random.Random(f"{cfg.seed}:chan:{p}")
                         for p in range(cfg.n)]
        self.rng_loss = [random.Random(f"{cfg.seed}:loss:{p}")
                         for p in range(cfg.n)]
        self.rng_tx = random.Random(f"{cfg.seed}:tx")
        self.buckets: list[list[tuple]] = [[] for _ in range(cfg.rounds + 1)]
        self.last_due: dict[tuple[int, int], int] = {}
        self.drops: dict[tuple, int] = {}
        self.seq = [0] * cfg.n
        self.events: dict[int, list[tuple]] = {}
        for s in cfg.splits:
            self.events.setdefault(s.round, []).append(("split", s))
        for m in cfg.merges:
            self.events.setdefault(m.round, []).append(("merge", m))
        self.boundaries = set(sched.boundary_rounds())
        self.forced = self._forced_at(0) if not self.slow else None
        # Regime-shared per-block intrinsics: (alive, segment root, depth).
        self.intr: dict[str, tuple[bool, Optional[str], int]] = {
            GENESIS_ID: (True, GENESIS_ID, 1)}
        self.bal_memo: dict[str, dict[str, int]] = {}
        chain.balances_at(self.tree, GENESIS_ID, self.ctx, self.bal_memo)
        self.branch_ok: dict[str, bool] = {GENESIS_ID: True}
        self.lossy: dict[str, bool] = {GENESIS_ID: False}
        self.gdepth: dict[str, int] = {GENESIS_ID: 1}
        self.block_domain: dict[str, int] = {GENESIS_ID: 0}
        self.anc_closure: dict[str, frozenset[str]] = {
            GENESIS_ID: frozenset((GENESIS_ID,))}
        self.forks_total = 0
        self.confirmed: set[tuple[int, int]] = set()
        self.counted: dict[int, set[str]] = {0: {GENESIS_ID}}
        self.final_merge_pid: Optional[int] = None
        self.result = RunResult(name=cfg.name, n=cfg.n, rounds=cfg.rounds,
                                seed=cfg.seed, sim=self)

    # -- ground-truth labels ------------------------------------------------

    def _truth_label(self, pid: int) -> int:
        kind = self.sched.kind
        part = self.ctx.partitions[pid]
        if kind in ("AGE", "EAGE", "WAGE"):
            return OLD if part.era == 0 else NEW
        if kind in ("ERA", "EERA"):
            return part.era
        if kind in ("MAGE", "EMAGE", "WMAGE"):
            return self.gt.split_count(pid)
        if kind in ("SMAGE", "ESMAGE"):
            return int(part.peers != self.ctx.partitions[0].peers)
        raise SimError(f"no block label for detector {kind}")

    def _det_label(self, b: Block) -> int:
        return self._truth_label(self.ctx.block_partition[b.block_id])

    def _forced_at(self, r: int):
        for w in self.sched.windows:
            if w.from_round <= r < w.to_round:
                return w.forced
        return None

    def _output_now(self, peer: int, pid: int, r: int) -> int:
        """Detector verdict a peer gets for a block it would mine now."""
        value = self._truth_label(pid)
        if self.sched.kind in WEAK_KINDS:
            st = self._wage_state(self.peers[peer], "part")
            return detectors.reduced_output(st)
        if self.slow:
            # block-keyed window overrides cannot name an unmined block
            for w in self.sched.windows:
                if w.from_round <= r < w.to_round and w.blocks is None \
                        and (w.peers is None or peer in w.peers):
                    return w.forced
            return value
        forced = self._forced_at(r)
        return value if forced is None else forced

    def _output_for(self, peer: PeerState, b: Block, r: int) -> int:
        if self.sched.kind in WEAK_KINDS:
            return detectors.reduced_output(self._wage_state(peer, b.block_id))
        value = self._det_label(b)
        for w in self.sched.windows:
            if w.covers(peer.ident, b.block_id, r):
                return w.forced
        return value

    # -- intrinsics and per-peer fork-choice tables -------------------------

    def _intr_of(self, b: Block) -> tuple[bool, Optional[str], int]:
        if not b.parents:
            return (True, b.block_id, 1)
        if self.forced is not None:
            included = self.forced == b.label
        else:
            included = self._det_label(b) == b.label
        if not included:
            return (False, None, 0)
        blocks = self.tree.blocks
        alive_parent = None
        for p in b.parents:
            ip = self.intr.get(p)
            if ip is not None and ip[0] and blocks[p].label <= b.label:
                alive_parent = p
                if blocks[p].label == b.label and not b.is_merge:
                    return (True, ip[1], ip[2] + 1)
        if alive_parent is None:
            return (False, None, 0)
        return (True, b.block_id, 1)

    def _rebuild_regime(self, forced) -> None:
        self.forced = forced
        blocks = self.tree.blocks
        self.intr = {GENESIS_ID: (True, GENESIS_ID, 1)}
        for bid, b in blocks.items():
            if bid != GENESIS_ID:
                self.intr[bid] = self._intr_of(b)
        for peer in self.peers:
            peer.seg_best = {GENESIS_ID: (1, GENESIS_ID)}
            peer.anchors = {}
            for bid in peer.order_list:
                self._update_tables(peer, blocks[bid])
            peer.dirty_chain = True
            peer.dirty_mining = True

    def _update_tables(self, peer: PeerState, b: Block) -> bool:
        info = self.intr[b.block_id]
        if not info[0]:
            return False
        root, depth = info[1], info[2]
        entry = peer.seg_best.get(root)
        bid = b.block_id
        if entry is not None and (depth < entry[0]
                                  or (depth == entry[0] and bid >= entry[1])):
            return False
        peer.seg_best[root] = (depth, bid)
        rb = self.tree.blocks[root]
        lbl = rb.label
        for p in rb.parents:
            ip = self.intr.get(p)
            if ip is None or not ip[0]:
                continue
            amap = peer.anchors.setdefault(p, {})
            cur = amap.get(lbl)
            if cur is None or depth > cur[0] or (depth == cur[0]
                                                 and bid < cur[1]):
                amap[lbl] = (depth, bid)
        return True

    def _derive(self, peer: PeerState) -> tuple[str, ...]:
        term = peer.seg_best[GENESIS_ID][1]
        sig = [term]
        while True:
            amap = peer.anchors.get(term)
            if not amap:
                return tuple(sig)
            lbl = min(amap)
            term = amap[lbl][1]
            sig.append(term)

    def _seg_path(self, term: str, stop: Optional[str]) -> list[str]:
        blocks = self.tree.blocks
        path = []
        bid = term
        while bid != stop:
            path.append(bid)
            b = blocks[bid]
            if not b.parents:
                break
            bid = stop if stop in b.parents else b.parents[0]
        path.reverse()
        return path

    def _refresh_chain(self, peer: PeerState) -> None:
        peer.dirty_chain = False
        if self.slow:
            self._refresh_chain_slow(peer)
            return
        sig = self._derive(peer)
        if sig == peer.sig:
            return
        old = peer.sig
        k = 0
        while k < len(sig) and k < len(old) and sig[k] == old[k]:
            k += 1
        if k == len(sig) - 1 and len(sig) == len(old):
            # Common case: the last segment grew (or its tip moved).
            if self._try_extend(peer, old[-1], sig[-1]):
                peer.sig = sig
                peer.chain_version += 1
                return
        self._rebuild_segments(peer, sig, k)
        peer.sig = sig
        peer.chain_version += 1

    def _try_extend(self, peer: PeerState, old_term: str,
                    new_term: str) -> bool:
        io, iq = self.intr[old_term], self.intr[new_term]
        if io[1] != iq[1] or iq[2] <= io[2]:
            return False
        blocks = self.tree.blocks
        suffix = []
        bid = new_term
        for _ in range(iq[2] - io[2]):
            suffix.append(bid)
            bid = blocks[bid].parents[0]
        if bid != old_term:
            return False
        suffix.reverse()
        peer.segments[-1].extend(suffix)
        for s in suffix:
            peer.chain_set.add(s)
            b = blocks[s]
            if b.is_merge:
                for p in b.parents:
                    peer.chain_set |= self._closure(p)
            if b.tx is not None:
                peer.on_chain.add(b.tx.tx_id)
        return True

    def _rebuild_segments(self, peer: PeerState, sig: tuple[str, ...],
                          k: int) -> None:
        blocks = self.tree.blocks
        for seg in peer.segments[k:]:
            for bid in seg:
                t = blocks[bid].tx
                if t is not None:
                    peer.on_chain.discard(t.tx_id)
        del peer.segments[k:]
        any_merge = False
        for i in range(k, len(sig)):
            stop = sig[i - 1] if i > 0 else None
            seg = self._seg_path(sig[i], stop)
            peer.segments.append(seg)
            for bid in seg:
                b = blocks[bid]
                if b.is_merge:
                    any_merge = True
                if b.tx is not None:
                    peer.on_chain.add(b.tx.tx_id)
        peer.chain_set = set()
        for seg in peer.segments:
            peer.chain_set.update(seg)
        if any_merge or self.cfg.merges:
            for seg in peer.segments:
                for bid in seg:
                    b = blocks[bid]
                    if b.is_merge:
                        for p in b.parents:
                            peer.chain_set |= self._closure(p)
        peer.scan = 0

    def _refresh_chain_slow(self, peer: PeerState) -> None:
        r = self._round
        out = lambda b: self._output_for(peer, b, r)
        mc = chain.main_chain(peer.own_tree, out)
        ids = [b.block_id for b in mc]
        if ids == peer.chain_ids():
            return
        peer.segments = [ids]
        peer.sig = (ids[-1],)
        peer.chain_set = set(ids)
        peer.on_chain = {b.tx.tx_id for b in mc if b.tx is not None}
        for b in mc:
            if b.is_merge:
                for p in b.parents:
                    peer.chain_set |= self._closure(p)
        peer.scan = 0
        peer.chain_version += 1

    def _closure(self, bid: str) -> frozenset[str]:
        got = self.anc_closure.get(bid)
        if got is not None:
            return got
        b = self.tree.blocks[bid]
        acc: set[str] = {bid}
        for p in b.parents:
            acc |= self._closure(p)
        out = frozenset(acc)
        self.anc_closure[bid] = out
        return out

    # -- block registration and receipt --------------------------------------

    def _register_block(self, b: Block, r: int, pid: int) -> None:
        fork_parents = sum(1 for p in b.parents if self.tree.children.get(p))
        self.tree.insert(b)
        bid = b.block_id
        self.ctx.block_partition[bid] = pid
        self.gt.record_block(bid, r, b.miner, pid)
        self.forks_total += fork_parents
        self.gdepth[bid] = 1 + max(self.gdepth[p] for p in b.parents)
        bal = chain.balances_at(self.tree, bid, self.ctx, self.bal_memo)
        ok = all(self.branch_ok[p] for p in b.parents)
        if b.tx is not None and bal.get(b.tx.source, 0) < 0:
            ok = False
        self.branch_ok[bid] = ok
        lossy = any(self.lossy[p] for p in b.parents)
        if b.is_merge:
            sides = self.ctx.partitions[pid].parents
            for parent, side in zip(b.parents, sides):
                ppid = self.ctx.block_partition[parent]
                if not chain.side_settled(self.ctx, ppid, side):
                    lossy = True
        self.lossy[bid] = lossy
        if not self.slow:
            self.intr[bid] = self._intr_of(b)
        self.block_domain[bid] = self._domain_of(b, pid)
        if self.cfg.trace:
            self.result.trace.append(
                f"{r} mine {bid} label={b.label} pid={pid}")

    def _domain_of(self, b: Block, pid: int) -> int:
        kind = self.sched.kind
        parts = self.ctx.partitions
        if kind in ("AGE", "EAGE", "WAGE"):
            if b.label != OLD:
                return pid
            cur = pid
            while parts[cur].era > 0 and len(parts[cur].parents) == 1:
                cur = parts[cur].parents[0]
            return cur if parts[cur].era == 0 else pid
        # era-valued labels: climb to the lineage partition of that era
        cur = pid
        while self._truth_label(cur) > b.label \
                and len(parts[cur].parents) == 1:
            cur = parts[cur].parents[0]
        return cur if self._truth_label(cur) == b.label else pid

    def _receive_block(self, peer: PeerState, b: Block) -> None:
        bid = b.block_id
        if bid in peer.have or bid in peer.unlinked:
            return
        if all(p in peer.have for p in b.parents):
            self._insert_block(peer, b)
            self._drain_unlinked(peer)
        else:
            peer.unlinked[bid] = b

    def _insert_block(self, peer: PeerState, b: Block) -> None:
        peer.have.add(b.block_id)
        peer.order_list.append(b.block_id)
        if peer.own_tree is not None:
            peer.own_tree.insert(b)
        if self.slow:
            peer.dirty_chain = True
            peer.dirty_mining = True
        elif self._update_tables(peer, b):
            peer.dirty_chain = True
            peer.dirty_mining = True

    def _drain_unlinked(self, peer: PeerState) -> None:
        progress = True
        while progress and peer.unlinked:
            progress = False
            for bid in list(peer.unlinked):
                b = peer.unlinked[bid]
                if all(p in peer.have for p in b.parents):
                    del peer.unlinked[bid]
                    self._insert_block(peer, b)
                    progress = True

    def _receive_tx(self, peer: PeerState, t: Transaction) -> None:
        if t.tx_id in peer.txs:
            return
        peer.txs[t.tx_id] = t
        idx = bisect_left(peer.tx_order, t.tx_id)
        peer.tx_order.insert(idx, t.tx_id)
        if idx < peer.scan:
            peer.scan = idx
        peer.txs_version += 1
        peer.dirty_mining = True

    # -- channels -----------------------------------------------------------

    def _broadcast(self, sender: int, kind: str, payload, r: int,
                   key=None) -> None:
        cfg = self.cfg
        members = self.ctx.partitions[self.peer_pid[sender]].peers
        rc, rl = self.rng_chan[sender], self.rng_loss[sender]
        lossy = cfg.loss_rate > 0.0
        for q in sorted(members):
            if q == sender:
                continue
            delay = 1 if cfg.d == 1 else rc.randint(1, cfg.d)
            if lossy and rl.random() < cfg.loss_rate:
                if key is None:
                    continue
                dk = (sender, q, key)
                n_drop = self.drops.get(dk, 0) + 1
                if n_drop < cfg.loss_force_after:
                    self.drops[dk] = n_drop
                    continue
                self.drops[dk] = 0  # forced through after K drops
            ck = (sender, q)
            due = max(r + delay, self.last_due.get(ck, 0))
            self.last_due[ck] = due
            if due < len(self.buckets):
                self.buckets[due].append((q, kind, payload, sender))

    # -- mining -------------------------------------------------------------

    def _merge_duty(self, peer_id: int) -> Optional[int]:
        if not self.cfg.cooperative_merge:
            return None
        pid = self.peer_pid[peer_id]
        info = self.ctx.partitions[pid]
        if len(info.parents) != 2:
            return None
        peer = self.peers[peer_id]
        tail_label = self.tree.blocks[peer.tail].label
        if tail_label >= info.era:
            return None
        return pid

    def _next_valid(self, peer: PeerState) -> Optional[Transaction]:
        if peer.dirty_chain:
            self._refresh_chain(peer)
        tail = peer.tail
        tail_pid = self.ctx.block_partition[tail]
        tail_label = self.tree.blocks[tail].label
        bal = self.bal_memo[tail]
        my_pid = peer.pid
        adjust = peer.label > tail_label and my_pid != tail_pid
        order, on_chain = peer.tx_order, peer.on_chain
        while peer.scan < len(order) and order[peer.scan] in on_chain:
            peer.scan += 1
        for i in range(peer.scan, len(order)):
            tid = order[i]
            if tid in on_chain:
                continue
            t = peer.txs[tid]
            avail = bal.get(t.source)
            if avail is None:
                continue
            if adjust and avail > 0:
                try:
                    avail = self.ctx.share_of(avail, t.source, tail_pid,
                                              my_pid)
                except chain.ChainError:
                    pass
            if avail >= t.amount:
                return t
        return None

    def _reset_mining(self, peer_id: int, r: int) -> None:
        peer = self.peers[peer_id]
        peer.dirty_mining = False
        duty = self._merge_duty(peer_id)
        if duty is not None:
            key = ("merge", duty)
            label = self.ctx.partitions[duty].era
        else:
            t = self._next_valid(peer)
            if t is None:
                peer.attempt = None
                return
            key = ("tx", t.tx_id)
            label = peer.label
        a = peer.attempt
        if a is not None and a.key == key and a.label == label:
            return
        cfg = self.cfg
        horizon = cfg.d * cfg.n
        done = r + self.rng_mine[peer_id].randint(1, horizon)
        peer.attempt = MiningAttempt(key=key, label=label, completion=done)

    def _mine_round(self, r: int) -> None:
        cfg = self.cfg
        bern = cfg.mining_model == "per-round-bernoulli"
        p_hit = 1.0 / (cfg.d * cfg.n)
        for peer_id, peer in enumerate(self.peers):
            a = peer.attempt
            if a is None:
                continue
            if bern:
                if self.rng_mine[peer_id].random() >= p_hit:
                    continue
            elif a.completion != r:
                continue
            if a.key[0] == "merge":
                self._mine_merge(peer_id, a.key[1], r)
            else:
                self._mine_tx(peer_id, a, r)
            peer.dirty_mining = True
        for peer_id, peer in enumerate(self.peers):
            if peer.dirty_mining:
                self._reset_mining(peer_id, r)

    def _mine_tx(self, peer_id: int, a: MiningAttempt, r: int) -> None:
        peer = self.peers[peer_id]
        t = peer.txs.get(a.key[1])
        if t is None or self._next_valid(peer) is not t:
            peer.attempt = None  # target went stale this round; redraw
            return
        pid = self.peer_pid[peer_id]
        out = self._output_now(peer_id, pid, r)
        tail = peer.tail
        if out != a.label or self.tree.blocks[tail].label > a.label:
            if peer.label != out and self.cfg.trace:
                self.result.trace.append(
                    f"{r} discard p={peer_id} label {a.label}->{out}")
            peer.label = out
            peer.attempt = None
            return
        bid = f"b{r:04d}p{peer_id:03d}"
        b = Block(block_id=bid, parents=(tail,), tx=t, label=a.label,
                  miner=peer_id)
        self._register_block(b, r, pid)
        self._receive_block(peer, b)
        self._broadcast(peer_id, "blk", b, r, key=bid)

    def _mine_merge(self, peer_id: int, pid_c: int, r: int) -> None:
        peer = self.peers[peer_id]
        info = self.ctx.partitions[pid_c]
        if self.tree.blocks[peer.tail].label >= info.era:
            peer.attempt = None
            return  # someone else's merge block already adopted
        tails = []
        for side in info.parents:
            tails.append(self._side_tail(peer, side))
        if tails[0] == tails[1]:
            peer.attempt = None
            return  # the two views degenerated to one branch
        bid = f"b{r:04d}p{peer_id:03d}"
        b = Block(block_id=bid, parents=tuple(tails), tx=None, label=info.era,
                  miner=peer_id)
        self._register_block(b, r, pid_c)
        self._receive_block(peer, b)
        self._broadcast(peer_id, "blk", b, r, key=bid)

    def _side_tail(self, peer: PeerState, side: int) -> str:
        """Tip of the peer's best branch restricted to one merged side's
        partition lineage."""
        lineage: set[int] = set()
        stack = [side]
        while stack:
            pid = stack.pop()
            if pid in lineage:
                continue
            lineage.add(pid)
            stack.extend(self.ctx.partitions[pid].parents)
        sub = BlockTree(self.genesis)
        blocks = self.tree.blocks
        held = [blocks[x] for x in peer.order_list]
        for b in held:
            if self.ctx.block_partition[b.block_id] in lineage \
                    and all(p in sub.blocks for p in b.parents):
                sub.insert(b)
        mc = chain.main_chain(sub, lambda b: b.label)
        return mc[-1].block_id

    # -- round loop ----------------------------------------------------------

    def run(self) -> RunResult:
        for r in range(self.cfg.rounds):
            self._round = r
            self.step(r)
        self._finalize()
        return self.result

    def step(self, r: int) -> None:
        self._round = r
        self._apply_events(r)
        if not self.slow and r in self.boundaries:
            self._rebuild_regime(self._forced_at(r))
        for (q, kind, payload, sender) in self.buckets[r]:
            self.peers[q].inbox.append((kind, payload, sender))
        self.buckets[r] = []
        self._submit(r)
        if self.sched.kind in WEAK_KINDS:
            self._wage_round(r)
        self._handlers(r)
        self._mine_round(r)
        self._collect(r)

    def _apply_events(self, r: int) -> None:
        for kind, ev in self.events.get(r, ()):
            if kind == "split":
                parent = self.peer_pid[ev.peers_a[0]]
                fa = {a: ev.fraction_a for a in self.accounts}
                ia, ib = self.ctx.add_split(parent, ev.peers_a, ev.peers_b,
                                            fa, round_=r)
                for p in ev.peers_a:
                    self.peer_pid[p] = ia
                    self.peers[p].pid = ia
                for p in ev.peers_b:
                    self.peer_pid[p] = ib
                    self.peers[p].pid = ib
                self.gt.record_event(r, "split", (ia, ib))
                self.counted.setdefault(ia, {GENESIS_ID}.copy())
                self.counted.setdefault(ib, {GENESIS_ID}.copy())
            else:
                pa = self.peer_pid[ev.peers_a[0]]
                pb = self.peer_pid[ev.peers_b[0]]
                pid = self.ctx.add_merge(pa, pb, round_=r)
                for p in ev.peers_a + ev.peers_b:
                    self.peer_pid[p] = pid
                    self.peers[p].pid = pid
                self.gt.record_event(r, "merge", (pid,))
                self.counted.setdefault(pid, {GENESIS_ID}.copy())
                self.final_merge_pid = pid
            for peer in self.peers:
                peer.dirty_mining = True
            if self.cfg.trace:
                self.result.trace.append(f"{r} event {kind}")

    def _submit(self, r: int) -> None:
        cfg, rng = self.cfg, self.rng_tx
        self._submitted_now = 0
        if r % cfg.tx_every:
            return
        self._submitted_now = cfg.tx_per_round
        for _ in range(cfg.tx_per_round):
            client = rng.randrange(cfg.n)
            seq = self.seq[client]
            self.seq[client] += 1
            src = self.accounts[rng.randrange(len(self.accounts))]
            dst = self.accounts[rng.randrange(len(self.accounts) - 1)]
            if dst == src:
                dst = self.accounts[-1]
            amount = rng.randint(1, cfg.tx_amount_max)
            t = Transaction((client, seq), src, dst, amount)
            self.result.submissions.append(
                Submission(t, r, self.peer_pid[client]))
            self._receive_tx(self.peers[client], t)
            self._broadcast(client, "tx", t, r, key=("tx", t.tx_id))

    def _handlers(self, r: int) -> None:
        cfg = self.cfg
        for peer_id, peer in enumerate(self.peers):
            replies: dict[str, Block] = {}
            for (kind, payload, sender) in peer.inbox:
                if kind == "tx":
                    self._receive_tx(peer, payload)
                elif kind == "blk":
                    self._receive_block(peer, payload)
                elif kind == "rep":
                    for b in payload:
                        self._receive_block(peer, b)
                elif kind == "req":
                    self._serve_request(peer, payload, replies, r)
                elif kind == "det":
                    self._receive_det(peer, payload)
            peer.inbox = []
            if replies:
                blocks = tuple(replies[k] for k in sorted(replies))
                self._broadcast(peer_id, "rep", blocks, r,
                                key=("rep", min(replies)))
            if cfg.catchup and peer.unlinked:
                missing = sorted({p for b in peer.unlinked.values()
                                  for p in b.parents
                                  if p not in peer.have
                                  and p not in peer.unlinked})
                if missing:
                    self._broadcast(peer_id, "req", tuple(missing), r)
            if peer.dirty_mining:
                self._reset_mining(peer_id, r)

    def _serve_request(self, peer: PeerState, wanted: tuple[str, ...],
                       replies: dict[str, Block], r: int) -> None:
        blocks = self.tree.blocks
        for bid in wanted:
            if bid not in peer.have:
                continue
            if r - peer.replied.get(bid, -10) < 3:
                continue
            peer.replied[bid] = r
            replies[bid] = blocks[bid]
            if self.cfg.catchup_deep:
                for anc in self._closure(bid):
                    if anc != GENESIS_ID and anc not in replies:
                        replies[anc] = blocks[anc]

    # -- weak-detector reduction ---------------------------------------------

    def _wage_state(self, peer: PeerState, target) -> ReductionState:
        st = peer.wage.get(target)
        if st is None:
            st = ReductionState(peer.ident, self.cfg.n)
            peer.wage[target] = st
        return st

    def _wage_round(self, r: int) -> None:
        sched = self.sched
        for peer_id, peer in enumerate(self.peers):
            targets = ["part"] + peer.order_list
            for target in targets:
                if target == "part":
                    value = detectors._wage_value(
                        sched, self._truth_label(self.peer_pid[peer_id]),
                        peer_id, r)
                else:
                    value = detectors.query(self.gt, sched, peer_id,
                                            target, r)
                st = self._wage_state(peer, target)
                change = detectors.local_wage_change(st, value)
                if change is not None:
                    self._broadcast(peer_id, "det",
                                    (target, peer_id, change[0], change[1]),
                                    r)
            peer.dirty_chain = True
            peer.dirty_mining = True

    def _receive_det(self, peer: PeerState, payload) -> None:
        target, origin, flips, age = payload
        st = self._wage_state(peer, target)
        try:
            detectors.receive_update(st, origin, flips, age)
        except detectors.StaleUpdate:
            pass  # superseded by a fresher report on this channel

    # -- metrics -------------------------------------------------------------

    def _collect(self, r: int) -> None:
        res = self.result
        for peer in self.peers:
            if peer.dirty_chain:
                self._refresh_chain(peer)
        before = len(res.confirmations)
        for pid in sorted(self.ctx.partitions):
            self._confirm_domain(pid, r)
        res.submitted.append(self._submitted_now)
        res.confirmed.append(len(res.confirmations) - before)
        res.forks.append(self.forks_total)
        res.conservation.append(self._conservation(r))
        if self.final_merge_pid is not None \
                and res.convergence_round is None:
            if self._converged(self.final_merge_pid):
                res.convergence_round = r

    def _confirm_domain(self, pid: int, r: int) -> None:
        members = self.ctx.partitions[pid].peers
        counted = self.counted.setdefault(pid, {GENESIS_ID}.copy())
        rep = self.peers[min(members)]
        pending: list[str] = []
        done = False
        for seg in reversed(rep.segments):
            for bid in reversed(seg):
                if bid in counted:
                    done = True
                    break
                pending.append(bid)
            if done:
                break
        mem_sets = [self.peers[p].chain_set for p in members]
        blocks = self.tree.blocks
        for bid in reversed(pending):
            if not all(bid in cs for cs in mem_sets):
                break
            counted.add(bid)
            self._count_block(bid, pid, r)
            b = blocks[bid]
            if b.is_merge:
                # everything under the other parent became common too
                for anc in sorted(self._closure(bid)):
                    if anc not in counted:
                        counted.add(anc)
                        self._count_block(anc, pid, r)

    def _count_block(self, bid: str, pid: int, r: int) -> None:
        b = self.tree.blocks[bid]
        if b.tx is None or self.block_domain[bid] != pid:
            return
        tid = b.tx.tx_id
        if tid in self.confirmed:
            return
        self.confirmed.add(tid)
        self.result.confirmations.append(Confirmation(tid, r, bid, pid))
        if self.cfg.trace:
            self.result.trace.append(f"{r} confirm {tid} in {bid}")

    def _current_partitions(self) -> list[int]:
        assigned = set(self.peer_pid)
        return sorted(assigned)

    def _conservation(self, r: int) -> tuple[int, bool, int]:
        total = 0
        settled = True
        for pid in self._current_partitions():
            members = self.ctx.partitions[pid].peers
            tail = self.peers[min(members)].tail
            tail_pid = self.ctx.block_partition[tail]
            bal = self.bal_memo[tail]
            if self.lossy[tail]:
                settled = False
            if tail_pid == pid:
                total += sum(bal.values())
                continue
            try:
                share = self.ctx.apportion_table(bal, tail_pid, pid)
                total += sum(share.values())
            except chain.ChainError:
                total += sum(bal.values())
                settled = False
        return (r, settled, total)

    def _converged(self, pid: int) -> bool:
        candidates = [bid for bid, p in self.ctx.block_partition.items()
                      if p == pid]
        for bid in candidates:
            if all(bid in peer.chain_set for peer in self.peers):
                return True
        return False

    def _finalize(self) -> None:
        for peer in self.peers:
            if peer.dirty_chain:
                self._refresh_chain(peer)
        self.result.chains = {p: peer.chain_ids()
                              for p, peer in enumerate(self.peers)}


def run_experiment(cfg: ScenarioConfig) -> RunResult:
    return Simulation(cfg).run()
