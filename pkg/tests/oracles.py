"""Independent reference implementations and random generators used to
cross-check the package: a brute-force fork-choice enumerator and random
tree/branch builders."""

from __future__ import annotations

import random
from fractions import Fraction
from itertools import groupby

from partsim.chain import Block, BlockTree, SplitContext, Transaction, genesis_block


def oracle_chain(tree: BlockTree, output) -> list[Block]:
    """Enumerate every maximal live monotone-label path from genesis and pick
    the winner by per-segment comparison: ascending label, then longer
    segment, then smaller terminal id.  Independent of the greedy walker."""
    blocks = tree.blocks
    alive = {tree.genesis_id: True}
    for bid, b in blocks.items():
        if bid == tree.genesis_id:
            continue
        alive[bid] = output(b) == b.label and any(
            alive.get(p, False) and blocks[p].label <= b.label
            for p in b.parents)

    paths: list[list[str]] = []

    def dfs(bid: str, path: list[str]) -> None:
        ext = [c for c in tree.children[bid]
               if alive.get(c) and blocks[c].label >= blocks[bid].label]
        if not ext:
            paths.append(list(path))
            return
        for c in ext:
            path.append(c)
            dfs(c, path)
            path.pop()

    dfs(tree.genesis_id, [tree.genesis_id])

    def key(path: list[str]):
        segs = []
        for lbl, grp in groupby(path, key=lambda x: blocks[x].label):
            ids = list(grp)
            segs.append((lbl, -len(ids), ids[-1]))
        return segs

    best = min(paths, key=key)
    return [blocks[bid] for bid in best]


def random_tree(rng: random.Random, max_blocks: int = 20):
    """Random linkable tree with monotone labels, occasional merge blocks,
    plus a per-block 'truth' map that sometimes disagrees with the label."""
    g = genesis_block()
    tree = BlockTree(g)
    truth = {g.block_id: 0}
    ids = [g.block_id]
    n = rng.randint(1, max_blocks - 1)
    for i in range(n):
        bid = f"r{i:03d}"
        if len(ids) > 3 and rng.random() < 0.15:
            pa, pb = rng.sample(ids, 2)
            label = max(tree.blocks[pa].label, tree.blocks[pb].label) + 1
            parents = (pa, pb)
        else:
            pa = rng.choice(ids)
            label = tree.blocks[pa].label + (1 if rng.random() < 0.3 else 0)
            parents = (pa,)
        b = Block(block_id=bid, parents=parents, tx=None, label=label,
                  miner=0)
        tree.insert(b)
        # wrong verdicts for ~25% of blocks
        truth[bid] = label if rng.random() < 0.75 else label + 1
        ids.append(bid)
    return tree, (lambda b: truth[b.block_id])


def sibling_branches(rng: random.Random, post_seed: int = 6):
    """A shared prefix plus two sibling-partition suffixes, with occasional
    deliberately incompatible pairs (shared suffix tx or unaffordable
    amounts)."""
    endow = {"x": rng.randint(6, 20), "y": rng.randint(6, 20)}
    ctx = SplitContext(endow, range(4))
    g = genesis_block()
    tree = BlockTree(g)
    ctx.register_genesis(g.block_id)
    branch = [g]
    bal = dict(endow)
    seq = 0
    for i in range(rng.randint(0, 2)):
        src, dst = rng.sample(("x", "y"), 2)
        amt = rng.randint(0, max(bal[src] // 2, 0))
        t = Transaction((0, seq), src, dst, amt)
        seq += 1
        b = Block(block_id=f"p{i}", parents=(branch[-1].block_id,), tx=t,
                  label=0, miner=0)
        tree.insert(b)
        ctx.block_partition[b.block_id] = 0
        bal[src] -= amt
        bal[dst] += amt
        branch.append(b)
    pa, pb = ctx.add_split(0, (0, 1), (2, 3),
                           {a: Fraction(1, 2) for a in endow})
    sabotage = rng.random()
    shared_tx = Transaction((9, 0), "x", "y", 1)
    sides = {}
    for pid, tag in ((pa, "a"), (pb, "b")):
        side = list(branch)
        sbal = ctx.apportion_table(bal, 0, pid)
        k = rng.randint(0, post_seed)
        for j in range(k):
            src, dst = rng.sample(("x", "y"), 2)
            hi = sbal[src] if rng.random() < 0.85 else sbal[src] + 3
            amt = rng.randint(0, max(hi, 0))
            t = Transaction((pid, j), src, dst, amt)
            if sabotage < 0.15 and j == 0:
                t = shared_tx  # same tx id on both suffixes
            b = Block(block_id=f"{tag}{j}", parents=(side[-1].block_id,),
                      tx=t, label=1, miner=pid)
            tree.insert(b)
            ctx.block_partition[b.block_id] = pid
            sbal[t.source] = sbal.get(t.source, 0) - t.amount
            sbal[t.target] = sbal.get(t.target, 0) + t.amount
            side.append(b)
        sides[tag] = side
    return sides["a"], sides["b"], ctx
