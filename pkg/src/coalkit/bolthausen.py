"""Random recursive trees and the coalescent they generate.

A recursive tree on a label set carries one block per vertex, with blocks
ordered by least element increasing away from the root. Lifting an edge
merges the whole subtree below it into the edge's upper vertex. With an
independent Exp(1) clock on every edge, the label sets of the lifted trees
evolve exactly as the coalescent driven by the uniform measure, which turns
tree surgery into a second, structurally different sampler for that
process, plus cheap access to its special statistics: the frequency of the
block containing 1 and the time of the last collision.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Iterator, Sequence

import numpy as np

from .kingman import CoalescentHistory, MergeEvent

__all__ = [
    "RecursiveTree",
    "rrt_sample",
    "lift_edge",
    "simulate_bs_rrt",
    "BsStatistics",
    "bs_statistics",
]


@dataclasses.dataclass(frozen=True)
class RecursiveTree:
    """Rooted tree whose vertices carry disjoint integer blocks.

    ``parent[i]`` is the index of vertex i's parent, with -1 marking the
    root. Along every edge the parent's least element is smaller than the
    child's, which forces the root to hold the overall least label and
    makes the parent map acyclic.
    """

    labels: tuple[tuple[int, ...], ...]
    parent: tuple[int, ...]

    def __post_init__(self) -> None:
        v = len(self.labels)
        if v == 0 or len(self.parent) != v:
            raise ValueError("labels and parent must be nonempty and aligned")
        seen: set[int] = set()
        for block in self.labels:
            if not block or list(block) != sorted(block):
                raise ValueError("labels must be nonempty sorted tuples")
            if seen & set(block):
                raise ValueError("labels must be disjoint")
            seen |= set(block)
        roots = [i for i, p in enumerate(self.parent) if p == -1]
        if len(roots) != 1:
            raise ValueError("exactly one vertex must have parent -1")
        for i, p in enumerate(self.parent):
            if p == -1:
                continue
            if not 0 <= p < v:
                raise ValueError(f"parent index {p} out of range")
            if self.labels[p][0] >= self.labels[i][0]:
                raise ValueError(
                    "least elements must increase from parent to child"
                )

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    @property
    def num_vertices(self) -> int:
        return len(self.labels)

    def edges(self) -> tuple[int, ...]:
        """Child indices; one per edge."""
        return tuple(i for i, p in enumerate(self.parent) if p != -1)

    def children_lists(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.labels]
        for i, p in enumerate(self.parent):
            if p != -1:
                out[p].append(i)
        return out

    def label_set(self) -> frozenset[int]:
        return frozenset(x for block in self.labels for x in block)

    def canonical_form(
        self,
    ) -> tuple[tuple[tuple[int, ...], ...], tuple[int, ...]]:
        """Vertex-order-free encoding: blocks sorted by least element,
        each paired with its parent block's least element (0 at the root)."""
        order = sorted(range(len(self.labels)), key=lambda i: self.labels[i][0])
        blocks = tuple(self.labels[i] for i in order)
        parent_least = tuple(
            0 if self.parent[i] == -1 else self.labels[self.parent[i]][0]
            for i in order
        )
        return blocks, parent_least

    def to_json(self) -> str:
        return json.dumps(
            {"labels": [list(b) for b in self.labels], "parent": list(self.parent)}
        )

    @classmethod
    def from_json(cls, text: str) -> "RecursiveTree":
        data = json.loads(text)
        return cls(
            tuple(tuple(sorted(b)) for b in data["labels"]),
            tuple(int(p) for p in data["parent"]),
        )


def rrt_sample(n: int, rng: np.random.Generator) -> RecursiveTree:
    """Uniform recursive tree on singletons {1}, ..., {n}.

    Vertex j+1 attaches to a uniform earlier vertex, which makes every one
    of the (n-1)! admissible trees equally likely.
    """
    if n < 1:
        raise ValueError("need at least one vertex")
    parent = [-1]
    if n > 1:
        parent.extend(int(p) for p in rng.integers(0, np.arange(1, n)))
    labels = tuple((i,) for i in range(1, n + 1))
    return RecursiveTree(labels, tuple(parent))


def _subtree(children: Sequence[Sequence[int]], top: int) -> list[int]:
    out = [top]
    stack = [top]
    while stack:
        v = stack.pop()
        for c in children[v]:
            out.append(c)
            stack.append(c)
    return out


def lift_edge(tree: RecursiveTree, edge: int) -> RecursiveTree:
    """Collapse the subtree below ``edge`` into that edge's upper vertex.

    ``edge`` is the child index of the edge being lifted. The labels of the
    child and all its descendants join the parent's block; the surviving
    vertices keep their relative order.
    """
    if not 0 <= edge < tree.num_vertices:
        raise ValueError(f"no vertex {edge}")
    upper = tree.parent[edge]
    if upper == -1:
        raise ValueError("the root has no edge above it")
    children = tree.children_lists()
    removed = set(_subtree(children, edge))
    merged = sorted(
        set(tree.labels[upper]).union(*(tree.labels[v] for v in removed))
    )
    keep = [v for v in range(tree.num_vertices) if v not in removed]
    new_index = {v: i for i, v in enumerate(keep)}
    labels = tuple(
        tuple(merged) if v == upper else tree.labels[v] for v in keep
    )
    parent = tuple(
        -1 if tree.parent[v] == -1 else new_index[tree.parent[v]] for v in keep
    )
    return RecursiveTree(labels, parent)


def simulate_bs_rrt(
    n: int,
    rng: np.random.Generator,
    t_max: float = math.inf,
    seed_info: dict | None = None,
) -> CoalescentHistory:
    """Coalescent history from lifting a uniform recursive tree.

    Each surviving edge rings after a fresh Exp(1) wait, so with b blocks
    the next lift happens after Exp(b-1) at an edge chosen uniformly. The
    resulting partition process is the coalescent of the uniform measure
    restricted to [n].

    Vertex v's block keeps least element v+1 throughout, because a lift
    removes whole subtrees and every subtree lies above its entry point in
    least-element order. Live vertex ids therefore double as the block
    order that merge events index into.
    """
    if n < 1:
        raise ValueError("need at least one lineage")
    parent = np.full(n, -1, dtype=np.int64)
    if n > 1:
        parent[1:] = rng.integers(0, np.arange(1, n))
    children: list[list[int]] = [[] for _ in range(n)]
    for v in range(1, n):
        children[parent[v]].append(v)

    live = np.arange(n)
    events: list[MergeEvent] = []
    t = 0.0
    while live.size > 1:
        t += rng.exponential(1.0 / (live.size - 1))
        if t > t_max:
            break
        c = int(live[int(rng.integers(1, live.size))])
        sub = _subtree(children, c)
        upper = int(parent[c])
        children[upper].remove(c)
        participants = np.asarray(sorted(sub + [upper]))
        ranks = np.searchsorted(live, participants)
        events.append(MergeEvent(t, tuple(int(r) for r in ranks)))
        live = np.delete(live, ranks[participants != upper])
    return CoalescentHistory(n=n, model="bs", seed_info=seed_info, events=tuple(events))


@dataclasses.dataclass(frozen=True)
class BsStatistics:
    """Per-replicate observables of the tree-lifting chain.

    frequency[r, j] is the size of the block containing 1 at times[j]
    divided by n, block_count[r, j] the number of blocks then, and
    last_collision[r] the absorption time. Values are right-continuous in
    time; runs that have absorbed report frequency 1 and count 1.
    """

    times: tuple[float, ...]
    frequency: np.ndarray
    block_count: np.ndarray
    last_collision: np.ndarray


def bs_statistics(
    n: int,
    reps: int,
    rng: np.random.Generator,
    times: Sequence[float] = (1.0,),
) -> BsStatistics:
    """Frequency of the block containing 1, block counts, and the final
    collision time, from independent tree-lifting runs.

    The block containing 1 is always the root's, so only subtree sizes are
    tracked. The reported frequency is block-size over n, an estimate of
    the asymptotic frequency with O(n**-0.5) discretization error.
    """
    if n < 1:
        raise ValueError("need at least one lineage")
    grid = np.asarray(sorted(times), dtype=float)
    if grid.size and grid[0] < 0.0:
        raise ValueError("times must be nonnegative")
    freq = np.ones((reps, grid.size))
    count = np.ones((reps, grid.size), dtype=np.int64)
    last = np.zeros(reps)
    for r in range(reps):
        parent = np.full(n, -1, dtype=np.int64)
        if n > 1:
            parent[1:] = rng.integers(0, np.arange(1, n))
        children: list[list[int]] = [[] for _ in range(n)]
        for v in range(1, n):
            children[parent[v]].append(v)
        size = np.ones(n, dtype=np.int64)
        # uniform edge picks via a swap-remove pool of non-root vertices
        pool = list(range(1, n))
        pos = {v: i for i, v in enumerate(pool)}
        t = 0.0
        ti = 0
        b = n
        while b > 1:
            t_new = t + rng.exponential(1.0 / (b - 1))
            while ti < grid.size and grid[ti] < t_new:
                freq[r, ti] = size[0] / n
                count[r, ti] = b
                ti += 1
            c = pool[int(rng.integers(0, len(pool)))]
            sub = _subtree(children, c)
            upper = int(parent[c])
            children[upper].remove(c)
            size[upper] += sum(size[v] for v in sub)
            for v in sub:
                i = pos.pop(v)
                moved = pool[-1]
                pool[i] = moved
                pool.pop()
                if moved != v:
                    pos[moved] = i
            b -= len(sub)
            t = t_new
        last[r] = t
    return BsStatistics(tuple(grid), freq, count, last)
