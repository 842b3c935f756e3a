"""Block/transaction tree model, per-branch balance accounting, fork choice.

Labels on blocks are small integers ("eras"): 0 for blocks mined before any
split, and one more for every split (or merge) event in the lineage of the
partition that mined the block.  For the single-split case this collapses to
the usual old/new distinction (OLD == 0, NEW == 1).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

OLD = 0
NEW = 1

AccountId = str
BlockId = str
TxId = tuple[int, int]  # (client id, per-client sequence number)


class ChainError(Exception):
    pass


class DuplicateBlock(ChainError):
    pass


class UnknownAccount(ChainError):
    pass


class OracleBound(ChainError):
    """Raised when the exhaustive merge oracle would exceed its work bound."""


@dataclass(frozen=True, slots=True)
class Transaction:
    tx_id: TxId
    source: AccountId
    target: AccountId
    amount: int

    def __post_init__(self):
        if self.amount < 0:
            raise ValueError("transaction amount must be non-negative")


@dataclass(frozen=True, slots=True)
class Block:
    block_id: BlockId
    parents: tuple[BlockId, ...]
    tx: Optional[Transaction]
    label: int
    miner: int = -1

    @property
    def is_merge(self) -> bool:
        return len(self.parents) == 2


def genesis_block(block_id: BlockId = "genesis") -> Block:
    return Block(block_id=block_id, parents=(), tx=None, label=0, miner=-1)


class BlockTree:
    """Per-peer tree of blocks rooted at the unique genesis.

    Only linkable blocks live here; blocks with missing parents are the
    caller's problem (see the peer-level unlinked set).
    """

    def __init__(self, genesis: Block):
        if genesis.parents:
            raise ValueError("genesis must have no parents")
        self.genesis_id = genesis.block_id
        self.blocks: dict[BlockId, Block] = {genesis.block_id: genesis}
        self.children: dict[BlockId, list[BlockId]] = {genesis.block_id: []}

    def __contains__(self, block_id: BlockId) -> bool:
        return block_id in self.blocks

    def __len__(self) -> int:
        return len(self.blocks)

    def insert(self, block: Block) -> bool:
        """Add a block.  Returns False (not linkable) if a parent is absent."""
        if block.block_id in self.blocks:
            raise DuplicateBlock(block.block_id)
        if not block.parents:
            raise ChainError("only genesis may have no parents")
        if any(p not in self.blocks for p in block.parents):
            return False
        self.blocks[block.block_id] = block
        self.children[block.block_id] = []
        for p in block.parents:
            self.children[p].append(block.block_id)
        return True

    def leaves(self) -> list[BlockId]:
        return [bid for bid, kids in self.children.items() if not kids]

    def branch_to(self, block_id: BlockId) -> list[Block]:
        """Path from genesis to `block_id`, following first parents."""
        path = []
        bid = block_id
        while True:
            b = self.blocks[bid]
            path.append(b)
            if not b.parents:
                break
            bid = b.parents[0]
        path.reverse()
        return path


@dataclass(frozen=True)
class PartitionInfo:
    pid: int
    peers: frozenset[int]
    era: int
    parents: tuple[int, ...]  # () for root, 1 pid for split child, 2 for merge
    created_round: int = 0


class SplitContext:
    """Ground truth needed to account balances along branches.

    Partition 0 is the root (whole network).  A split creates two child
    partitions with per-account fraction tables; a merge creates one child
    partition from two parents and recombines their shares.
    """

    def __init__(self, endowment: Mapping[AccountId, int],
                 all_peers: Iterable[int] = ()):
        self.endowment: dict[AccountId, int] = dict(endowment)
        root = PartitionInfo(pid=0, peers=frozenset(all_peers), era=0,
                             parents=())
        self.partitions: dict[int, PartitionInfo] = {0: root}
        # split-child pid -> account -> share of the parent partition
        self.fractions: dict[int, dict[AccountId, Fraction]] = {}
        self.siblings: dict[int, int] = {}  # split-child pid -> other child
        self.block_partition: dict[BlockId, int] = {}

    def register_genesis(self, genesis_id: BlockId) -> None:
        self.block_partition[genesis_id] = 0

    def add_split(self, parent_pid: int, peers_a: Iterable[int],
                  peers_b: Iterable[int],
                  fractions_a: Mapping[AccountId, Fraction],
                  round_: int = 0) -> tuple[int, int]:
        parent = self.partitions[parent_pid]
        pa, pb = frozenset(peers_a), frozenset(peers_b)
        if pa & pb or (pa | pb) != parent.peers or not pa or not pb:
            raise ValueError("split peer sets must partition the parent")
        fa = {a: Fraction(f) for a, f in fractions_a.items()}
        for a in self.endowment:
            fa.setdefault(a, Fraction(1, 2))
        fb = {a: 1 - f for a, f in fa.items()}
        if any(not (0 <= f <= 1) for f in fa.values()):
            raise ValueError("fractions must lie in [0, 1]")
        if all(f == 0 for f in fa.values()) or all(f == 1 for f in fa.values()):
            raise ValueError("each partition must keep some positive share")
        ia = self._new_pid()
        ib = ia + 1
        era = parent.era + 1
        self.partitions[ia] = PartitionInfo(ia, pa, era, (parent_pid,), round_)
        self.partitions[ib] = PartitionInfo(ib, pb, era, (parent_pid,), round_)
        self.fractions[ia] = fa
        self.fractions[ib] = fb
        self.siblings[ia] = ib
        self.siblings[ib] = ia
        return ia, ib

    def add_merge(self, pid_a: int, pid_b: int, round_: int = 0) -> int:
        a, b = self.partitions[pid_a], self.partitions[pid_b]
        pid = self._new_pid()
        era = max(a.era, b.era) + 1
        self.partitions[pid] = PartitionInfo(pid, a.peers | b.peers, era,
                                             (pid_a, pid_b), round_)
        return pid

    def _new_pid(self) -> int:
        return max(self.partitions) + 1

    def era_of(self, pid: int) -> int:
        return self.partitions[pid].era

    def label_of_block(self, block_id: BlockId) -> int:
        return self.partitions[self.block_partition[block_id]].era

    def split_path(self, from_pid: int, to_pid: int) -> list[int]:
        """Chain of split-child pids leading from `from_pid` down to `to_pid`."""
        path = []
        pid = to_pid
        while pid != from_pid:
            info = self.partitions[pid]
            if len(info.parents) != 1:
                raise ChainError(
                    f"no split path from partition {from_pid} to {to_pid}")
            path.append(pid)
            pid = info.parents[0]
        path.reverse()
        return path

    def share_of(self, amount: int, account: AccountId,
                 from_pid: int, to_pid: int) -> int:
        """Integer share of `amount` owned by `to_pid` after the splits
        separating it from `from_pid`.  Floors each step; the remainder goes
        to the lower-numbered sibling."""
        for child in self.split_path(from_pid, to_pid):
            amount = self._apportion(amount, account, child)
        return amount

    def _apportion(self, amount: int, account: AccountId, child: int) -> int:
        sib = self.siblings[child]
        if child < sib:
            other = (amount * self.fractions[sib].get(account, Fraction(1, 2)))
            return amount - (other.numerator // other.denominator)
        mine = amount * self.fractions[child].get(account, Fraction(1, 2))
        return mine.numerator // mine.denominator

    def apportion_table(self, balances: Mapping[AccountId, int],
                        from_pid: int, to_pid: int) -> dict[AccountId, int]:
        return {a: self.share_of(v, a, from_pid, to_pid)
                for a, v in balances.items()}


def balances_at(tree: BlockTree, block_id: BlockId, ctx: SplitContext,
                memo: Optional[dict] = None) -> dict[AccountId, int]:
    """Account balances after applying every block on the branch ending at
    `block_id`, with shares apportioned at each seed crossing and re-summed
    at merge blocks."""
    if memo is None:
        memo = {}
    order: list[BlockId] = []
    stack = [block_id]
    while stack:
        bid = stack.pop()
        if bid in memo:
            continue
        b = tree.blocks[bid]
        missing = [p for p in b.parents if p not in memo]
        if missing:
            stack.append(bid)
            stack.extend(missing)
        else:
            order.append(bid)
            memo[bid] = _balances_step(tree, bid, ctx, memo)
    return memo[block_id]


def _balances_step(tree: BlockTree, bid: BlockId, ctx: SplitContext,
                   memo: dict) -> dict[AccountId, int]:
    b = tree.blocks[bid]
    if not b.parents:
        return dict(ctx.endowment)
    my_pid = ctx.block_partition[bid]
    if b.is_merge:
        sides = ctx.partitions[my_pid].parents
        bal: dict[AccountId, int] = {}
        for parent, side in zip(b.parents, sides):
            pbal = memo[parent]
            ppid = ctx.block_partition[parent]
            if ppid != side:
                pbal = _side_contribution(ctx, pbal, ppid, side)
            for a, v in pbal.items():
                bal[a] = bal.get(a, 0) + v
    else:
        parent = b.parents[0]
        ppid = ctx.block_partition[parent]
        if ppid != my_pid:
            bal = ctx.apportion_table(memo[parent], ppid, my_pid)
        else:
            bal = dict(memo[parent])
    if b.tx is not None:
        t = b.tx
        if t.source not in bal:
            bal[t.source] = 0
        bal[t.source] -= t.amount
        bal[t.target] = bal.get(t.target, 0) + t.amount
    return bal


def _pid_ancestors(ctx: SplitContext, pid: int) -> set[int]:
    seen: set[int] = set()
    stack = [pid]
    while stack:
        p = stack.pop()
        if p not in seen:
            seen.add(p)
            stack.extend(ctx.partitions[p].parents)
    return seen


def _side_contribution(ctx: SplitContext, pbal: Mapping[AccountId, int],
                       ppid: int, side: int) -> dict[AccountId, int]:
    """Funds a merge side inherits from a parent block recorded in `ppid`.

    A stale view may sit above the side (pre-merge) or below it (one merged
    component only); apportion down split paths where they exist, recurse
    through merged sides, and contribute nothing for unrelated lineages.
    """
    if ppid == side:
        return dict(pbal)
    try:
        return ctx.apportion_table(pbal, ppid, side)
    except ChainError:
        pass
    info = ctx.partitions[side]
    if len(info.parents) == 2:
        out: dict[AccountId, int] = {}
        for s in info.parents:
            for a, v in _side_contribution(ctx, pbal, ppid, s).items():
                out[a] = out.get(a, 0) + v
        return out
    if side in _pid_ancestors(ctx, ppid):
        return dict(pbal)  # already a share of the side's funds
    return {}


def side_settled(ctx: SplitContext, ppid: int, side: int) -> bool:
    """True when a merge parent recorded in `ppid` carries exactly the
    side's funds (so recombination at the merge block is exact)."""
    if ppid == side:
        return True
    try:
        ctx.split_path(ppid, side)
        return True
    except ChainError:
        return False


def balance(branch: Sequence[Block], account: AccountId, ctx: SplitContext,
            tree: Optional[BlockTree] = None) -> int:
    """Balance of `account` at the end of `branch`.

    A branch containing merge blocks needs the enclosing `tree` so the other
    parent's history can be resolved.
    """
    if any(b.is_merge for b in branch):
        if tree is None:
            raise ChainError("branch crosses a merge block; pass the tree")
        bal = balances_at(tree, branch[-1].block_id, ctx)
    else:
        bal = dict(ctx.endowment)
        prev_pid = None
        for b in branch:
            pid = ctx.block_partition[b.block_id]
            if prev_pid is not None and pid != prev_pid:
                bal = ctx.apportion_table(bal, prev_pid, pid)
            prev_pid = pid
            if b.tx is not None:
                bal[b.tx.source] = bal.get(b.tx.source, 0) - b.tx.amount
                bal[b.tx.target] = bal.get(b.tx.target, 0) + b.tx.amount
    if account not in bal:
        raise UnknownAccount(account)
    return bal[account]


def is_valid(tx: Transaction, branch: Sequence[Block], ctx: SplitContext,
             tree: Optional[BlockTree] = None,
             as_partition: Optional[int] = None) -> bool:
    """True iff `tx` is affordable at the end of `branch` and not already
    mined on it.  `as_partition` evaluates affordability for a peer about to
    mine in that partition, applying its share at the pending crossing."""
    for b in branch:
        if b.tx is not None and b.tx.tx_id == tx.tx_id:
            return False
    try:
        avail = balance(branch, tx.source, ctx, tree)
    except UnknownAccount:
        return False
    tail_pid = ctx.block_partition[branch[-1].block_id]
    if as_partition is not None and as_partition != tail_pid:
        avail = ctx.share_of(avail, tx.source, tail_pid, as_partition)
    return avail - tx.amount >= 0


# ---------------------------------------------------------------------------
# Fork choice
# ---------------------------------------------------------------------------

def main_chain(tree: BlockTree,
               output: Callable[[Block], int]) -> list[Block]:
    """Two-phase (per-era, ascending) longest-branch fork choice.

    `output` is the detector's verdict for a block; a block participates only
    if the verdict matches its recorded label.  Genesis always participates.
    Ties are broken by the lexicographically smallest terminal block id.
    """
    blocks = tree.blocks
    alive: dict[BlockId, bool] = {tree.genesis_id: True}
    # Insertion order of dicts is a topological order for linkable trees.
    for bid, b in blocks.items():
        if bid == tree.genesis_id:
            continue
        ok = output(b) == b.label and any(
            alive.get(p, False) and blocks[p].label <= b.label
            for p in b.parents)
        alive[bid] = ok

    def best_from(start: BlockId, lbl: int) -> tuple[int, BlockId]:
        """(depth, terminal) of the deepest uniform-label path from `start`
        (exclusive) through children labelled `lbl`; ties pick min id."""
        best = (0, start)
        stack = [(start, 0)]
        while stack:
            bid, depth = stack.pop()
            extended = False
            for c in tree.children[bid]:
                if alive.get(c) and blocks[c].label == lbl:
                    stack.append((c, depth + 1))
                    extended = True
            if not extended and depth > 0:
                cand = (depth, bid)
                if cand[0] > best[0] or (cand[0] == best[0]
                                         and cand[1] < best[1]):
                    best = cand
        return best

    def path_to(start: BlockId, term: BlockId) -> list[BlockId]:
        path = [term]
        bid = term
        while bid != start:
            b = blocks[bid]
            if start in b.parents:
                bid = start
            else:
                # Within a uniform segment every non-head block has a
                # same-label parent; merge blocks only ever head a segment.
                bid = next(p for p in b.parents
                           if alive.get(p, False)
                           and blocks[p].label == b.label)
                path.append(bid)
        path.reverse()
        return path

    chain: list[BlockId] = [tree.genesis_id]
    tail = tree.genesis_id
    cur = blocks[tree.genesis_id].label
    while True:
        depth, term = best_from(tail, cur)
        if depth > 0:
            chain.extend(path_to(tail, term))
            tail = term
        nxt = {blocks[c].label for c in tree.children[tail]
               if alive.get(c) and blocks[c].label > cur}
        if not nxt:
            break
        cur = min(nxt)
    return [blocks[bid] for bid in chain]


# ---------------------------------------------------------------------------
# Mergeability
# ---------------------------------------------------------------------------

def _seed_index(branch: Sequence[Block], ctx: SplitContext) -> Optional[int]:
    """Index of the last block before the first partition crossing."""
    pid0 = ctx.block_partition[branch[0].block_id]
    for i, b in enumerate(branch):
        if ctx.block_partition[b.block_id] != pid0:
            return i - 1
    return None


def _replay_valid(branch: Sequence[Block], ctx: SplitContext) -> bool:
    bal = dict(ctx.endowment)
    prev_pid = None
    for b in branch:
        pid = ctx.block_partition[b.block_id]
        if prev_pid is not None and pid != prev_pid:
            bal = ctx.apportion_table(bal, prev_pid, pid)
        prev_pid = pid
        if b.tx is not None:
            if bal.get(b.tx.source, 0) - b.tx.amount < 0:
                return False
            bal[b.tx.source] = bal.get(b.tx.source, 0) - b.tx.amount
            bal[b.tx.target] = bal.get(b.tx.target, 0) + b.tx.amount
    return True


def mergeable(a: Sequence[Block], b: Sequence[Block],
              ctx: SplitContext) -> bool:
    """Whether two sibling-partition branches can be merged.

    Same seed, a shared pre-split prefix, and per-branch validity on the
    split shares suffice: the partition shares are disjoint portions of the
    seed balances, so every order-preserving interleaving of the suffixes
    stays valid on the combined funds.  `mergeable_oracle` is the exhaustive
    counterpart used to cross-check this.
    """
    ia, ib = _seed_index(a, ctx), _seed_index(b, ctx)
    seed_a = a[ia].block_id if ia is not None else a[-1].block_id
    seed_b = b[ib].block_id if ib is not None else b[-1].block_id
    if seed_a != seed_b:
        return False
    prefix_a = [blk.block_id for blk in (a[:ia + 1] if ia is not None else a)]
    prefix_b = [blk.block_id for blk in (b[:ib + 1] if ib is not None else b)]
    if prefix_a != prefix_b:
        return False
    suffix_ids_a = {blk.tx.tx_id for blk in a[len(prefix_a):] if blk.tx}
    suffix_ids_b = {blk.tx.tx_id for blk in b[len(prefix_b):] if blk.tx}
    if suffix_ids_a & suffix_ids_b:
        return False
    return _replay_valid(a, ctx) and _replay_valid(b, ctx)


def mergeable_oracle(a: Sequence[Block], b: Sequence[Block],
                     ctx: SplitContext, bound: int = 200_000) -> bool:
    """Exhaustive check: every order-preserving interleaving of the post-seed
    suffixes keeps all transactions valid on the recombined balances."""
    ia, ib = _seed_index(a, ctx), _seed_index(b, ctx)
    seed_a = a[ia].block_id if ia is not None else a[-1].block_id
    seed_b = b[ib].block_id if ib is not None else b[-1].block_id
    if seed_a != seed_b:
        return False
    prefix = a[:ia + 1] if ia is not None else list(a)
    prefix_b = b[:ib + 1] if ib is not None else list(b)
    if [x.block_id for x in prefix] != [x.block_id for x in prefix_b]:
        return False
    sa = [blk.tx for blk in a[len(prefix):] if blk.tx is not None]
    sb = [blk.tx for blk in b[len(prefix):] if blk.tx is not None]
    if {t.tx_id for t in sa} & {t.tx_id for t in sb}:
        return False
    n_interleavings = _binomial(len(sa) + len(sb), len(sa))
    if n_interleavings * (len(sa) + len(sb)) > bound:
        raise OracleBound(
            f"{n_interleavings} interleavings exceed bound {bound}")

    base = dict(ctx.endowment)
    for blk in prefix:
        if blk.tx is not None:
            base[blk.tx.source] = base.get(blk.tx.source, 0) - blk.tx.amount
            base[blk.tx.target] = base.get(blk.tx.target, 0) + blk.tx.amount

    def ok(seq: Sequence[Transaction]) -> bool:
        bal = dict(base)
        for t in seq:
            if bal.get(t.source, 0) - t.amount < 0:
                return False
            bal[t.source] = bal.get(t.source, 0) - t.amount
            bal[t.target] = bal.get(t.target, 0) + t.amount
        return True

    for picks in itertools.combinations(range(len(sa) + len(sb)), len(sa)):
        merged: list[Optional[Transaction]] = [None] * (len(sa) + len(sb))
        it_a = iter(sa)
        for i in picks:
            merged[i] = next(it_a)
        it_b = iter(sb)
        for i in range(len(merged)):
            if merged[i] is None:
                merged[i] = next(it_b)
        if not ok(merged):  # type: ignore[arg-type]
            return False
    return True


def _binomial(n: int, k: int) -> int:
    import math
    return math.comb(n, k)


# ---------------------------------------------------------------------------
# Canonical textual serialization
# ---------------------------------------------------------------------------

def serialize_tree(tree: BlockTree) -> str:
    """One block per line: id|parents|client,seq,source,target,amount|label|miner."""
    lines = []
    for bid in sorted(tree.blocks):
        b = tree.blocks[bid]
        if b.tx is None:
            txf = "-"
        else:
            t = b.tx
            txf = f"{t.tx_id[0]},{t.tx_id[1]},{t.source},{t.target},{t.amount}"
        lines.append("|".join(
            [b.block_id, ",".join(b.parents) or "-", txf,
             str(b.label), str(b.miner)]))
    return "\n".join(lines) + "\n"


def parse_tree(text: str) -> BlockTree:
    pending: list[Block] = []
    genesis = None
    for line in text.splitlines():
        if not line.strip():
            continue
        bid, parents_f, tx_f, label_f, miner_f = line.split("|")
        parents = tuple(parents_f.split(",")) if parents_f != "-" else ()
        tx = None
        if tx_f != "-":
            client, seq, src, dst, amount = tx_f.split(",")
            tx = Transaction((int(client), int(seq)), src, dst, int(amount))
        blk = Block(bid, parents, tx, int(label_f), int(miner_f))
        if not parents:
            genesis = blk
        else:
            pending.append(blk)
    if genesis is None:
        raise ChainError("serialized tree has no genesis")
    tree = BlockTree(genesis)
    held = pending
    while held:
        rest = [b for b in held if not tree.insert(b)]
        if len(rest) == len(held):
            raise ChainError("serialized tree is not linkable")
        held = rest
    return tree
