"""Exchangeable random partitions and their mass-partition representations.

The objects here are the shared currency of the whole package: partitions of
{1, ..., n} with canonical block order, the paintbox construction that turns a
mass sequence into a partition, Chinese-restaurant and stick-breaking samplers
for the two-parameter family, the Poissonian construction of stable masses,
and the exact sampling formulas those samplers are tested against.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Partition",
    "PdParams",
    "PartitionStats",
    "TauberianRow",
    "paintbox_sample",
    "crp_sample",
    "stick_breaking_masses",
    "pd_poisson_masses",
    "ewens_partition_prob",
    "pd_partition_prob",
    "ewens_spectrum_prob",
    "partition_stats",
    "expected_blocks_ewens",
    "expected_blocks_stable",
    "ewens_block_count_pmf",
    "set_partitions",
    "integer_spectra",
    "tauberian_diagnostics",
]


@dataclasses.dataclass(frozen=True)
class Partition:
    """Partition of {1, ..., n} with blocks ordered by least element.

    Blocks are sorted tuples; the canonical order makes equality, hashing,
    and JSON round-trips unambiguous.
    """

    n: int
    blocks: tuple[tuple[int, ...], ...]

    @classmethod
    def from_blocks(cls, n: int, blocks: Iterable[Iterable[int]]) -> "Partition":
        canon = tuple(
            sorted((tuple(sorted(b)) for b in blocks), key=lambda b: b[0])
        )
        seen: set[int] = set()
        for b in canon:
            if not b:
                raise ValueError("empty block")
            for i in b:
                if i in seen:
                    raise ValueError(f"element {i} appears in two blocks")
                seen.add(i)
        if seen != set(range(1, n + 1)):
            raise ValueError(f"blocks do not partition 1..{n}")
        return cls(n, canon)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Partition":
        """Build from an assignment array: labels[i] is the block key of i+1."""
        groups: dict[int, list[int]] = {}
        for i, lab in enumerate(labels, start=1):
            groups.setdefault(lab, []).append(i)
        blocks = sorted((tuple(g) for g in groups.values()), key=lambda b: b[0])
        return cls(len(labels), tuple(blocks))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(n, tuple((i,) for i in range(1, n + 1)))

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def block_sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    def spectrum(self) -> tuple[int, ...]:
        """(a_1, ..., a_n): a_j = number of blocks of size j."""
        a = [0] * self.n
        for b in self.blocks:
            a[len(b) - 1] += 1
        return tuple(a)

    def block_containing(self, i: int) -> tuple[int, ...]:
        for b in self.blocks:
            if i in b:
                return b
        raise KeyError(i)

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "blocks": [list(b) for b in self.blocks]})

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        data = json.loads(text)
        return cls.from_blocks(int(data["n"]), data["blocks"])


@dataclasses.dataclass(frozen=True)
class PdParams:
    """Parameters (alpha, theta) of the two-parameter partition family.

    Supported regimes are the Ewens case (alpha = 0, theta > 0) and the
    stable case (0 < alpha < 1, theta = 0); the seating rule below is the
    general admissible one, so mixed parameters inside the admissible cone
    are accepted too.
    """

    alpha: float = 0.0
    theta: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.theta <= -self.alpha:
            raise ValueError(f"theta must exceed -alpha, got {self.theta}")

    @classmethod
    def ewens(cls, theta: float) -> "PdParams":
        if theta <= 0:
            raise ValueError("theta must be positive")
        return cls(0.0, theta)

    @classmethod
    def stable(cls, alpha: float) -> "PdParams":
        if not (0.0 < alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        return cls(alpha, 0.0)


@dataclasses.dataclass(frozen=True)
class PartitionStats:
    num_blocks: int
    spectrum: tuple[int, ...]
    size_biased_block_size: int  # size of the block containing element 1


def partition_stats(partition: Partition) -> PartitionStats:
    return PartitionStats(
        num_blocks=partition.num_blocks,
        spectrum=partition.spectrum(),
        size_biased_block_size=len(partition.block_containing(1)),
    )


def paintbox_sample(
    masses: Sequence[float], n: int, rng: np.random.Generator
) -> Partition:
    """Partition of [n] induced by iid uniform throws onto a mass sequence.

    Elements landing on the same tile share a block; the leftover mass
    1 - sum(masses) is dust, and dust elements become singletons.
    """
    s = np.asarray(masses, dtype=float)
    if np.any(s < 0):
        raise ValueError("negative mass")
    total = float(s.sum())
    if total > 1.0 + 1e-12:
        raise ValueError(f"masses sum to {total} > 1")
    edges = np.cumsum(s)
    u = rng.uniform(size=n)
    tiles = np.searchsorted(edges, u, side="right")
    labels = []
    dust_key = len(s)  # keys >= len(s) mark dust singletons
    for i, t in enumerate(tiles):
        if t >= len(s):
            labels.append(dust_key)
            dust_key += 1
        else:
            labels.append(int(t))
    return Partition.from_labels(labels)


def crp_sample(params: PdParams, n: int, rng: np.random.Generator) -> Partition:
    """Sequential-seating sampler for the two-parameter family.

    Customer i+1 joins an existing block of size m with probability
    (m - alpha)/(i + theta) and opens a new one with probability
    (theta + k*alpha)/(i + theta), where k blocks exist so far.
    """
    alpha, theta = params.alpha, params.theta
    sizes: list[float] = []
    labels = [0] * n
    cum: list[float] = []  # running cumsum of (size - alpha)
    for i in range(n):
        if i == 0:
            sizes.append(1.0)
            cum.append(1.0 - alpha)
            labels[0] = 0
            continue
        k = len(sizes)
        total = i + theta
        u = rng.uniform() * total
        join_mass = i - k * alpha
        if u < join_mass:
            j = int(np.searchsorted(cum, u, side="right"))
            sizes[j] += 1.0
            for t in range(j, k):
                cum[t] += 1.0
            labels[i] = j
        else:
            labels[i] = k
            sizes.append(1.0)
            cum.append(cum[-1] + 1.0 - alpha if cum else 1.0 - alpha)
    return Partition.from_labels(labels)


def stick_breaking_masses(
    params: PdParams, count: int, rng: np.random.Generator
) -> np.ndarray:
    """First ``count`` masses in size-biased order via stick breaking.

    W_i ~ Beta(1 - alpha, theta + i*alpha) independently and
    P_i = W_i * prod_{j<i} (1 - W_j). For theta = 1, alpha = 0 the first
    mass is uniform on (0, 1); for no other theta is it uniform.
    """
    alpha, theta = params.alpha, params.theta
    i = np.arange(1, count + 1, dtype=float)
    w = rng.beta(1.0 - alpha, theta + i * alpha)
    stick = np.concatenate(([1.0], np.cumprod(1.0 - w)[:-1]))
    return w * stick


def pd_poisson_masses(
    alpha: float, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Ranked stable masses from the Poissonian construction.

    Points with intensity x^(-alpha-1) dx on (0, inf) are generated in
    decreasing order and normalized by their sum. Truncation at ``count``
    points is unavoidable, so the conditional expectation of the discarded
    tail is added to the normalizer and returned as a fraction instead of
    being silently renormalized away.

    Returns (ranked masses, estimated tail fraction not covered by them).
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    gammas = np.cumsum(rng.exponential(size=count))
    points = (alpha * gammas) ** (-1.0 / alpha)  # decreasing
    tail = points[-1] ** (1.0 - alpha) / (1.0 - alpha)
    denom = float(points.sum() + tail)
    return points / denom, tail / denom


def _log_rising(x: float, n: int) -> float:
    # log of x(x+1)...(x+n-1); lgamma form breaks down only at poles we never hit
    return math.lgamma(x + n) - math.lgamma(x)


def ewens_partition_prob(partition: Partition, theta: float) -> float:
    """Probability of a labeled partition of [n] in the Ewens family."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    k = partition.num_blocks
    logp = k * math.log(theta) - _log_rising(theta, partition.n)
    for b in partition.blocks:
        logp += math.lgamma(len(b))
    return math.exp(logp)


def pd_partition_prob(partition: Partition, alpha: float) -> float:
    """Probability of a labeled partition of [n] in the stable (alpha, 0) family.

    alpha^(k-1) (k-1)! / (n-1)! times, per block of size m, the product
    (1 - alpha)(2 - alpha)...(m - 1 - alpha).
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    k = partition.num_blocks
    n = partition.n
    logp = (k - 1) * math.log(alpha) + math.lgamma(k) - math.lgamma(n)
    for b in partition.blocks:
        m = len(b)
        logp += math.lgamma(m - alpha) - math.lgamma(1.0 - alpha)
    return math.exp(logp)


def ewens_spectrum_prob(spectrum: Sequence[int], theta: float) -> float:
    """Probability that the Ewens partition has block-size counts ``spectrum``.

    ``spectrum[j-1]`` is the number of blocks of size j; the implied n is
    sum(j * a_j).
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    a = list(spectrum)
    n = sum((j + 1) * a_j for j, a_j in enumerate(a))
    if n == 0:
        raise ValueError("empty spectrum")
    logp = math.lgamma(n + 1) - _log_rising(theta, n)
    for j, a_j in enumerate(a, start=1):
        if a_j:
            logp += a_j * (math.log(theta) - math.log(j)) - math.lgamma(a_j + 1)
    return math.exp(logp)


def expected_blocks_ewens(n: int, theta: float) -> float:
    """Exact E(number of blocks) for the Ewens partition of [n]."""
    i = np.arange(n, dtype=float)
    return float(np.sum(theta / (theta + i)))


def expected_blocks_stable(n: int, alpha: float) -> float:
    """Exact E(number of blocks) for the stable (alpha, 0) partition of [n].

    Computed by the recursion u_{m+1} = u_m (1 + alpha/m), u_1 = 1, which
    telescopes to Gamma(n + alpha) / (Gamma(n) Gamma(1 + alpha)).
    """
    u = 1.0
    for m in range(1, n):
        u *= 1.0 + alpha / m
    return u


def _stirling_first_unsigned_row(n: int) -> list[int]:
    # row[k] = number of permutations of n with k cycles
    row = [0] * (n + 1)
    row[0] = 1
    for m in range(n):
        new = [0] * (n + 1)
        for k in range(m + 1, 0, -1):
            new[k] = row[k - 1] + m * row[k]
        row = new
    return row


def ewens_block_count_pmf(n: int, theta: float) -> np.ndarray:
    """Exact law of the number of blocks: P(K = k) for k = 1..n.

    Uses unsigned Stirling numbers of the first kind, computed exactly with
    integer arithmetic and normalized in log space.
    """
    row = _stirling_first_unsigned_row(n)
    log_rising = _log_rising(theta, n)
    log_theta = math.log(theta)
    probs = np.zeros(n)
    for k in range(1, n + 1):
        probs[k - 1] = math.exp(math.log(row[k]) + k * log_theta - log_rising)
    return probs


def set_partitions(n: int) -> Iterator[Partition]:
    """All partitions of {1, ..., n} via restricted growth strings."""
    if n > 12:
        raise ValueError("refusing to enumerate more than Bell(12) partitions")
    labels = [0] * n

    def rec(i: int, max_label: int) -> Iterator[Partition]:
        if i == n:
            yield Partition.from_labels(labels)
            return
        for lab in range(max_label + 2):
            labels[i] = lab
            yield from rec(i + 1, max(max_label, lab))

    yield from rec(0, -1)


def integer_spectra(n: int) -> Iterator[tuple[int, ...]]:
    """All block-size spectra of n: tuples (a_1..a_n) with sum j*a_j = n."""

    def rec(remaining: int, max_part: int, acc: dict[int, int]) -> Iterator[tuple[int, ...]]:
        if remaining == 0:
            a = [0] * n
            for j, c in acc.items():
                a[j - 1] = c
            yield tuple(a)
            return
        for part in range(min(remaining, max_part), 0, -1):
            acc[part] = acc.get(part, 0) + 1
            yield from rec(remaining - part, part, acc)
            acc[part] -= 1
            if acc[part] == 0:
                del acc[part]

    yield from rec(n, n, {})


@dataclasses.dataclass(frozen=True)
class TauberianRow:
    n: int
    mean_blocks: float
    d_hat: float  # K_n / n^alpha averaged over replicates
    singleton_ratio: float  # mean K_{n,1} / K_n
    doubleton_ratio: float  # mean K_{n,2} / K_n
    z_hat: float  # plateau estimate of P_j * j^(1/alpha) from ranked masses
    d_from_z: float  # Gamma(1 - alpha) * z_hat^alpha, should track d_hat


def tauberian_diagnostics(
    alpha: float,
    n_values: Sequence[int],
    reps: int,
    rng: np.random.Generator,
) -> list[TauberianRow]:
    """Growth-rate diagnostics linking block counts to ranked-mass decay.

    For the stable family, K_n grows like D n^alpha while the ranked masses
    decay like Z j^(-1/alpha) with D = Gamma(1 - alpha) Z^alpha; the returned
    rows expose both ends of that correspondence from samples.
    """
    params = PdParams.stable(alpha)
    rows = []
    for n in n_values:
        ks, k1s, k2s = [], [], []
        z_vals = []
        for _ in range(reps):
            part = crp_sample(params, n, rng)
            a = part.spectrum()
            ks.append(part.num_blocks)
            k1s.append(a[0] / part.num_blocks)
            k2s.append(a[1] / part.num_blocks if len(a) > 1 else 0.0)
            masses, _ = pd_poisson_masses(alpha, 400, rng)
            j = np.arange(50, 201)
            z_vals.append(float(np.mean(masses[49:200] * j ** (1.0 / alpha))))
        mean_k = float(np.mean(ks))
        z_hat = float(np.mean(z_vals))
        d_from_z = float(
            np.mean([math.gamma(1.0 - alpha) * z**alpha for z in z_vals])
        )
        rows.append(
            TauberianRow(
                n=n,
                mean_blocks=mean_k,
                d_hat=mean_k / n**alpha,
                singleton_ratio=float(np.mean(k1s)),
                doubleton_ratio=float(np.mean(k2s)),
                z_hat=z_hat,
                d_from_z=d_from_z,
            )
        )
    return rows
