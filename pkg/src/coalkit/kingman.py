"""The pairwise-merger coalescent: histories, marginals, frequencies.

Also home of the CoalescentHistory container shared by every coalescent
simulator in the package. A history stores only the event stream (time plus
the indices of the blocks merged, in the least-element block order current at
that moment), so million-lineage starts stay cheap; partitions are
reconstructed on demand by replay.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Iterator, Sequence

import numpy as np

from .partitions import Partition

__all__ = [
    "MergeEvent",
    "CoalescentHistory",
    "simulate_kingman",
    "kingman_block_count",
    "kingman_marginal_prob",
    "uniform_simplex_frequencies",
    "total_branch_length",
]


@dataclasses.dataclass(frozen=True)
class MergeEvent:
    t: float
    merge: tuple[int, ...]  # indices into the live block list just before t

    def __post_init__(self) -> None:
        if len(self.merge) < 2 or len(set(self.merge)) != len(self.merge):
            raise ValueError(f"merge must name at least two distinct blocks: {self.merge}")


@dataclasses.dataclass
class CoalescentHistory:
    """Event-stream record of one coalescent run started from n singletons."""

    n: int
    model: str
    seed_info: dict
    events: list[MergeEvent]

    def num_blocks_at(self, t: float) -> int:
        k = self.n
        for e in self.events:
            if e.t > t:
                break
            k -= len(e.merge) - 1
        return k

    def replay(self) -> Iterator[tuple[float, Partition]]:
        """Yield (event time, partition immediately after the event)."""
        blocks = [[i] for i in range(1, self.n + 1)]
        for e in self.events:
            idx = sorted(e.merge)
            if idx[-1] >= len(blocks):
                raise ValueError("event refers to a block that does not exist")
            target = blocks[idx[0]]
            for j in reversed(idx[1:]):
                target.extend(blocks.pop(j))
            target.sort()
            yield e.t, Partition.from_blocks(self.n, blocks)

    def partition_at(self, t: float) -> Partition:
        result = Partition.singletons(self.n)
        for et, part in self.replay():
            if et > t:
                break
            result = part
        return result

    def mrca_time(self) -> float:
        """Time of the final merger; raises if the run did not reach one block."""
        k = self.n - sum(len(e.merge) - 1 for e in self.events)
        if k != 1:
            raise ValueError(f"history ends with {k} blocks, not 1")
        return self.events[-1].t

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "model": self.model,
                "seed_info": self.seed_info,
                "events": [
                    {"t": e.t, "merge": list(e.merge)} for e in self.events
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "CoalescentHistory":
        data = json.loads(text)
        events = [
            MergeEvent(float(e["t"]), tuple(int(i) for i in e["merge"]))
            for e in data["events"]
        ]
        return cls(int(data["n"]), str(data["model"]), dict(data["seed_info"]), events)


def simulate_kingman(
    n: int,
    rng: np.random.Generator,
    t_max: float = math.inf,
    seed_info: dict | None = None,
) -> CoalescentHistory:
    """Run the pairwise coalescent from n singletons.

    Every pair of blocks merges at rate 1: the holding time at k blocks is
    exponential with rate k(k-1)/2, and the merging pair is uniform. Block
    bookkeeping is implicit because a merge of indices (i, j) with i < j
    leaves the least-element order intact.
    """
    if n < 1:
        raise ValueError("n must be positive")
    events: list[MergeEvent] = []
    t = 0.0
    k = n
    while k > 1:
        rate = k * (k - 1) / 2.0
        t += rng.exponential(1.0 / rate)
        if t > t_max:
            break
        i, j = rng.choice(k, size=2, replace=False)
        pair = (int(min(i, j)), int(max(i, j)))
        events.append(MergeEvent(t, pair))
        k -= 1
    return CoalescentHistory(
        n=n, model="kingman", seed_info=seed_info or {}, events=events
    )


def kingman_block_count(
    n: int, times: Sequence[float], rng: np.random.Generator
) -> np.ndarray:
    """Number of blocks at each requested time, exactly and without a history.

    The block count is a pure death chain: the time to go from k to k-1
    blocks is an independent exponential with rate k(k-1)/2, so the whole
    path is a cumulative sum of n-1 draws.
    """
    ks = np.arange(n, 1, -1, dtype=float)
    rates = ks * (ks - 1) / 2.0
    hit = np.cumsum(rng.exponential(size=n - 1) / rates)  # hit[i]: time at n-1-i blocks
    t = np.asarray(times, dtype=float)
    return n - np.searchsorted(hit, t, side="right")


def kingman_marginal_prob(partition: Partition) -> float:
    """Probability that the coalescent from n singletons ever visits ``partition``.

    With k blocks of sizes m_1..m_k out of n leaves:
    (n-k)! k! (k-1)! / (n! (n-1)!) * prod m_i!.
    """
    n = partition.n
    k = partition.num_blocks
    logp = (
        math.lgamma(n - k + 1)
        + math.lgamma(k + 1)
        + math.lgamma(k)
        - math.lgamma(n + 1)
        - math.lgamma(n)
    )
    for b in partition.blocks:
        logp += math.lgamma(len(b) + 1)
    return math.exp(logp)


def uniform_simplex_frequencies(k: int, rng: np.random.Generator) -> np.ndarray:
    """Ranked block frequencies at the moment the coalescent has k blocks.

    When n -> infinity, the k block frequencies are the spacings of k-1 iid
    uniforms on [0, 1], returned here in decreasing order.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if k == 1:
        return np.array([1.0])
    cuts = np.sort(rng.uniform(size=k - 1))
    spacings = np.diff(np.concatenate(([0.0], cuts, [1.0])))
    return np.sort(spacings)[::-1]


def total_branch_length(history: CoalescentHistory) -> float:
    """Sum of all branch lengths carried by a completed history."""
    length = 0.0
    t_prev = 0.0
    k = history.n
    for e in history.events:
        length += k * (e.t - t_prev)
        t_prev = e.t
        k -= len(e.merge) - 1
    if k != 1:
        raise ValueError("history did not reach a single block")
    return length
