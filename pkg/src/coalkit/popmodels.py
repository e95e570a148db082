"""Forward population models and their backward genealogies.

Covers the exchange (birth-death) model, discrete-generation resampling,
general exchangeable-offspring populations, and a supercritical branching
population with heavy-tailed litter sizes. Each model exposes its ancestral
partition process for a subsample, plus the diagnostics that control which
coalescent appears in the large-population limit. The frequency diffusion
and its moment duality with the pair-merger genealogy close the loop.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, linalg, special

from .partitions import Partition

__all__ = [
    "AncestryPath",
    "CanningsSpec",
    "CanningsDiagnostics",
    "GwSpec",
    "DiffusionPath",
    "DualityRow",
    "moran_ancestry",
    "wf_ancestry",
    "cannings_diagnostics",
    "wf_cannings",
    "moran_cannings",
    "gw_cannings",
    "gw_offspring_sample",
    "select_survivors",
    "gw_generation",
    "gw_cn_prediction",
    "gw_pmerger_prediction",
    "wf_diffusion",
    "wf_absorption",
    "wf_moments",
    "duality_check",
]


@dataclasses.dataclass(frozen=True)
class AncestryPath:
    """Partition-valued record of a subsample's ancestry.

    ``states[i]`` is the partition of the sampled lineages just after the
    event at ``times[i]``. Before the first event the sample is all
    singletons. Times are in whatever clock the producing model documents.
    """

    n: int
    model: str
    times: tuple[float, ...]
    states: tuple[Partition, ...]

    def __post_init__(self) -> None:
        if len(self.times) != len(self.states):
            raise ValueError("times and states must align")
        if any(t1 <= t0 for t0, t1 in zip(self.times, self.times[1:])):
            raise ValueError("event times must increase")
        for p in self.states:
            if p.n != self.n:
                raise ValueError("states must partition the sampled lineages")

    def partition_at(self, t: float) -> Partition:
        idx = np.searchsorted(self.times, t, side="right")
        if idx == 0:
            return Partition.singletons(self.n)
        return self.states[idx - 1]

    def block_count_at(self, t: float) -> int:
        return self.partition_at(t).num_blocks

    def coalescence_time(self, i: int, j: int) -> float:
        """First time lineages i and j share a block (inf if never)."""
        for t, p in zip(self.times, self.states):
            if p.block_containing(i) == p.block_containing(j):
                return t
        return math.inf


def _merge_pair(blocks: list[tuple[int, ...]], a: int, b: int) -> None:
    lo, hi = (a, b) if a < b else (b, a)
    merged = tuple(sorted(blocks[lo] + blocks[hi]))
    del blocks[hi]
    blocks[lo] = merged
    blocks.sort(key=lambda blk: blk[0])


def moran_ancestry(
    N: int, sample_k: int, horizon: float, rng: np.random.Generator
) -> AncestryPath:
    """Backward ancestry of k lineages in the exchange model, sped up.

    Forward, every individual carries a unit-rate clock; at a ring it dies
    and is replaced by a copy of one of the other N-1 individuals, chosen
    uniformly. Backward, only rings on individuals currently hosting a
    lineage matter: the lineage jumps to the parent and merges if the
    parent already hosts one. Times are reported multiplied by 2/(N-1),
    which makes the two-lineage coalescence time a unit exponential.
    """
    if not 1 <= sample_k <= N:
        raise ValueError("need 1 <= sample_k <= N")
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    scale = 2.0 / (N - 1) if N > 1 else 0.0
    blocks = [(i,) for i in range(1, sample_k + 1)]
    times: list[float] = []
    states: list[Partition] = []
    t = 0.0
    while len(blocks) > 1:
        b = len(blocks)
        t += scale * rng.exponential(1.0 / b)
        if t > horizon:
            break
        # the ringing host's parent is uniform over the other N-1
        # individuals, of which b-1 host another lineage
        if rng.random() < (b - 1) / (N - 1):
            dying = int(rng.integers(b))
            other = int(rng.integers(b - 1))
            if other >= dying:
                other += 1
            _merge_pair(blocks, dying, other)
            times.append(t)
            states.append(Partition.from_blocks(sample_k, blocks))
    return AncestryPath(
        n=sample_k, model=f"moran:N={N}", times=tuple(times), states=tuple(states)
    )


def wf_ancestry(
    N: int, sample_k: int, generations: int, rng: np.random.Generator
) -> AncestryPath:
    """Backward ancestry under discrete uniform parent choice.

    Each generation every lineage picks a parent uniformly among the N
    individuals of the previous generation; lineages choosing the same
    parent merge, possibly several at once. Event times are generation
    numbers.
    """
    if not 1 <= sample_k <= N:
        raise ValueError("need 1 <= sample_k <= N")
    if generations < 0:
        raise ValueError("generations must be nonnegative")
    blocks = [(i,) for i in range(1, sample_k + 1)]
    times: list[float] = []
    states: list[Partition] = []
    for g in range(1, generations + 1):
        if len(blocks) == 1:
            break
        parents = rng.integers(N, size=len(blocks))
        if len(np.unique(parents)) == len(blocks):
            continue
        grouped: dict[int, list[int]] = {}
        for blk, par in zip(blocks, parents):
            grouped.setdefault(int(par), []).extend(blk)
        blocks = [tuple(sorted(v)) for v in grouped.values()]
        blocks.sort(key=lambda blk: blk[0])
        times.append(float(g))
        states.append(Partition.from_blocks(sample_k, blocks))
    return AncestryPath(
        n=sample_k, model=f"wf:N={N}", times=tuple(times), states=tuple(states)
    )


@dataclasses.dataclass(frozen=True)
class CanningsSpec:
    """Exchangeable-offspring population of fixed size N.

    The sampler returns one offspring vector (nu_1 .. nu_N) with sum N;
    diagnostics apply a uniform relabeling on top, so exchangeability of
    the reported moments holds by construction.
    """

    N: int
    offspring_sampler: Callable[[np.random.Generator], np.ndarray]

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        nu = np.asarray(self.offspring_sampler(rng))
        if nu.shape != (self.N,) or nu.sum() != self.N:
            raise ValueError("offspring vector must have length N and sum N")
        return rng.permutation(nu)


@dataclasses.dataclass(frozen=True)
class CanningsDiagnostics:
    """Monte Carlo moments of one offspring coordinate.

    c_n estimates E(nu(nu-1))/(N-1), the per-generation pair-coalescence
    probability. The ratio estimates E(nu(nu-1)(nu-2))/(N^2 c_n); the
    genealogy is pair-merger in the limit exactly when it vanishes. The
    ratio's standard error propagates the numerator only.
    """

    N: int
    reps: int
    c_n_hat: float
    c_n_se: float
    mohle_ratio_hat: float
    mohle_ratio_se: float

    def to_csv(self, prediction: float | None = None) -> str:
        tail = "" if prediction is None else f",{prediction:.10g}"
        head = "N,c_N_hat,se,prediction" if prediction is not None else "N,c_N_hat,se"
        return f"{head}\n{self.N},{self.c_n_hat:.10g},{self.c_n_se:.10g}{tail}\n"


def cannings_diagnostics(
    spec: CanningsSpec, reps: int, rng: np.random.Generator
) -> CanningsDiagnostics:
    if reps < 10**3:
        raise ValueError("need at least 1000 replicates")
    pair = np.empty(reps)
    triple = np.empty(reps)
    for r in range(reps):
        nu = spec.draw(rng).astype(float)
        pair[r] = np.mean(nu * (nu - 1.0))
        triple[r] = np.mean(nu * (nu - 1.0) * (nu - 2.0))
    c_hat = pair.mean() / (spec.N - 1)
    c_se = pair.std(ddof=1) / math.sqrt(reps) / (spec.N - 1)
    denom = spec.N**2 * c_hat
    ratio = triple.mean() / denom
    ratio_se = triple.std(ddof=1) / math.sqrt(reps) / denom
    return CanningsDiagnostics(
        N=spec.N,
        reps=reps,
        c_n_hat=c_hat,
        c_n_se=c_se,
        mohle_ratio_hat=ratio,
        mohle_ratio_se=ratio_se,
    )


def wf_cannings(N: int) -> CanningsSpec:
    """Multinomial offspring: every child picks its parent uniformly."""

    def sampler(rng: np.random.Generator) -> np.ndarray:
        return rng.multinomial(N, np.full(N, 1.0 / N))

    return CanningsSpec(N=N, offspring_sampler=sampler)


def moran_cannings(N: int) -> CanningsSpec:
    """One individual doubles, one dies, the rest reproduce exactly once."""

    def sampler(rng: np.random.Generator) -> np.ndarray:
        nu = np.ones(N, dtype=np.int64)
        up, down = rng.choice(N, size=2, replace=False)
        nu[up] = 2
        nu[down] = 0
        return nu

    return CanningsSpec(N=N, offspring_sampler=sampler)


@dataclasses.dataclass(frozen=True)
class GwSpec:
    """Supercritical branching population with a polynomial offspring tail.

    The offspring law satisfies P(X > x) ~ tail_constant * x^(-tail_index)
    and E(X) = mean > 1. Merger asymptotics concern tail_index in (1, 2);
    larger indices are allowed and give a pair-merger limit.
    """

    N: int
    tail_index: float
    tail_constant: float
    mean: float

    def __post_init__(self) -> None:
        if self.N < 2:
            raise ValueError("need at least two individuals")
        if self.tail_index <= 1.0:
            raise ValueError("tail index must exceed 1")
        if self.tail_constant <= 0.0:
            raise ValueError("tail constant must be positive")
        if self.mean <= 1.0:
            raise ValueError("offspring mean must exceed 1 (supercritical)")
        _gw_mixture(self.tail_index, self.tail_constant, self.mean)


@functools.lru_cache(maxsize=64)
def _gw_mixture(alpha: float, c: float, mu: float) -> tuple[float, int, float, float]:
    """Mixture weights behind the offspring law.

    With probability w the offspring count is floor(Y) for Y Pareto with
    index alpha and scale 2, giving P(X > x) = c (x+1)^(-alpha) for
    integer x >= 2. The leftover mass sits on two adjacent small integers
    chosen to hit the requested mean exactly. Returns (w, a, p_a, p_a1)
    with point masses p_a at a and p_a1 at a+1.
    """
    w = c * 2.0**-alpha
    if w > 1.0:
        raise ValueError("tail constant too large for a probability law")
    floor_mean = 1.0 + 2.0**alpha * (special.zeta(alpha) - 1.0)
    rest = 1.0 - w
    need = mu - w * floor_mean
    if need < -1e-12:
        raise ValueError("tail too heavy for the requested mean")
    if rest <= 0.0:
        if abs(need) > 1e-9:
            raise ValueError("tail mass one leaves no room to fix the mean")
        return w, 0, 0.0, 0.0
    per_unit = max(need, 0.0) / rest
    a = int(per_unit)
    frac = per_unit - a
    return w, a, rest * (1.0 - frac), rest * frac


def gw_offspring_sample(
    spec: GwSpec, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw offspring counts X_1..X_size from the spec's law."""
    w, a, p_a, p_a1 = _gw_mixture(spec.tail_index, spec.tail_constant, spec.mean)
    u = rng.random(size)
    out = np.empty(size, dtype=np.int64)
    tail = u < w
    n_tail = int(tail.sum())
    out[tail] = np.floor(
        2.0 * rng.random(n_tail) ** (-1.0 / spec.tail_index)
    ).astype(np.int64)
    mid = ~tail & (u < w + p_a)
    out[mid] = a
    out[~tail & ~mid] = a + 1
    return out


def select_survivors(
    offspring: np.ndarray, N: int, rng: np.random.Generator
) -> np.ndarray:
    """Keep N of the children uniformly at random, per-family counts."""
    offspring = np.asarray(offspring, dtype=np.int64)
    total = int(offspring.sum())
    if total < N:
        raise ValueError("fewer children than slots")
    return rng.multivariate_hypergeometric(offspring, N, method="marginals")


def gw_generation(
    spec: GwSpec, rng: np.random.Generator, max_retries: int = 100
) -> np.ndarray:
    """One generation of the branching population, culled back to size N.

    Families whose combined litter falls short of N are redrawn; repeated
    shortfalls indicate a subcritical configuration and raise.
    """
    for _ in range(max_retries):
        children = gw_offspring_sample(spec, spec.N, rng)
        if children.sum() >= spec.N:
            return select_survivors(children, spec.N, rng)
    raise RuntimeError(
        f"total offspring stayed below N in {max_retries} consecutive draws"
    )


def gw_cannings(spec: GwSpec) -> CanningsSpec:
    return CanningsSpec(
        N=spec.N, offspring_sampler=lambda rng: gw_generation(spec, rng)
    )


def gw_cn_prediction(spec: GwSpec) -> float:
    """Large-N limit of N^(alpha-1) c_N for tail indices in (1, 2):
    C alpha mu^(-alpha) Gamma(alpha) Gamma(2-alpha)."""
    a = spec.tail_index
    if not 1.0 < a < 2.0:
        raise ValueError("the asymptotics need a tail index in (1, 2)")
    return (
        spec.tail_constant
        * a
        * spec.mean**-a
        * special.gamma(a)
        * special.gamma(2.0 - a)
    )


def gw_pmerger_prediction(spec: GwSpec, p: float) -> float:
    """Large-N limit of (N / c_N) P(nu_1 >= pN): the rate at which a single
    family captures at least a fraction p of the population."""
    a = spec.tail_index
    if not 1.0 < a < 2.0:
        raise ValueError("the asymptotics need a tail index in (1, 2)")
    if not 0.0 < p < 1.0:
        raise ValueError("need a fraction p in (0, 1)")
    norm = special.gamma(a) * special.gamma(2.0 - a)

    def integrand(y: float) -> float:
        return y ** (-1.0 - a) * (1.0 - y) ** (a - 1.0)

    val, _ = integrate.quad(integrand, p, 1.0)
    return val / norm


@dataclasses.dataclass(frozen=True)
class DiffusionPath:
    """Euler path of the neutral frequency diffusion on [0, 1]."""

    times: np.ndarray
    values: np.ndarray
    absorption_time: float
    absorbed_at: float

    def __post_init__(self) -> None:
        v = self.values
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("frequencies must stay in [0, 1]")


_EDGE = 1e-6


def wf_diffusion(
    p0: float, dt: float, horizon: float, rng: np.random.Generator
) -> DiffusionPath:
    """Single Euler path of dX = sqrt(X(1-X)) dW started at p0.

    Steps clamp to [0, 1]; once within 1e-6 of a boundary the path is
    declared absorbed and held constant. Absorption time and boundary are
    nan when the horizon arrives first.
    """
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must be a probability")
    if dt <= 0.0 or horizon <= 0.0:
        raise ValueError("dt and horizon must be positive")
    steps = int(math.ceil(horizon / dt))
    times = np.linspace(0.0, steps * dt, steps + 1)
    values = np.empty(steps + 1)
    values[0] = x = p0
    t_abs = math.nan
    hit = math.nan
    sq = math.sqrt(dt)
    for i in range(1, steps + 1):
        if math.isnan(t_abs):
            x += math.sqrt(x * (1.0 - x)) * sq * rng.standard_normal()
            x = min(1.0, max(0.0, x))
            if x <= _EDGE or x >= 1.0 - _EDGE:
                x = 0.0 if x <= _EDGE else 1.0
                t_abs = times[i]
                hit = x
        values[i] = x
    return DiffusionPath(
        times=times, values=values, absorption_time=t_abs, absorbed_at=hit
    )


def _euler_batch(
    p0: float, dt: float, horizon: float, reps: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run many Euler paths at once; returns (final x, absorption time,
    boundary) with nan where the horizon arrived before absorption."""
    steps = int(math.ceil(horizon / dt))
    x = np.full(reps, float(p0))
    t_abs = np.full(reps, math.nan)
    hit = np.full(reps, math.nan)
    active = np.arange(reps)
    sq = math.sqrt(dt)
    for i in range(1, steps + 1):
        if active.size == 0:
            break
        xa = x[active]
        xa += np.sqrt(xa * (1.0 - xa)) * sq * rng.standard_normal(active.size)
        np.clip(xa, 0.0, 1.0, out=xa)
        low = xa <= _EDGE
        high = xa >= 1.0 - _EDGE
        xa[low] = 0.0
        xa[high] = 1.0
        x[active] = xa
        done = low | high
        if done.any():
            idx = active[done]
            t_abs[idx] = i * dt
            hit[idx] = x[idx]
            active = active[~done]
    return x, t_abs, hit


def wf_absorption(
    p0: float, dt: float, reps: int, rng: np.random.Generator, horizon: float = 16.0
) -> tuple[np.ndarray, np.ndarray]:
    """Absorption times and boundaries for many paths (nan if the horizon
    cut the path off first)."""
    if not 0.0 < p0 < 1.0:
        raise ValueError("absorption timing needs an interior start")
    _, t_abs, hit = _euler_batch(p0, dt, horizon, reps, rng)
    return t_abs, hit


def wf_moments(
    p0: float, dt: float, t: float, reps: int, rng: np.random.Generator
) -> np.ndarray:
    """Frequencies of many paths at time t (absorbed paths report 0 or 1)."""
    x, _, _ = _euler_batch(p0, dt, t, reps, rng)
    return x


@functools.lru_cache(maxsize=256)
def _block_count_pmf(n: int, t: float) -> tuple[float, ...]:
    """Exact law of the pair-merger block count at time t from n blocks."""
    gen = np.zeros((n, n))
    for k in range(2, n + 1):
        rate = k * (k - 1) / 2.0
        gen[k - 1, k - 1] = -rate
        gen[k - 1, k - 2] = rate
    probs = linalg.expm(gen.T * t)[:, n - 1]
    return tuple(probs)


@dataclasses.dataclass(frozen=True)
class DualityRow:
    n: int
    lhs: float
    lhs_se: float
    rhs: float
    z: float


def duality_check(
    p0: float,
    t: float,
    n_max: int,
    reps: int,
    rng: np.random.Generator,
    dt: float = 1e-3,
) -> tuple[DualityRow, ...]:
    """Compare E[X_t^n] against E[p0^(block count at t)] for n up to n_max.

    The left side is a Monte Carlo moment of the frequency diffusion; the
    right side is exact, from the death-chain law of the pair-merger block
    count started from n lineages. Agreement for all n is the moment
    duality between the two processes.
    """
    if n_max > 6:
        raise ValueError("duality table capped at n_max = 6")
    if n_max < 1:
        raise ValueError("need n_max >= 1")
    x = wf_moments(p0, dt, t, reps, rng)
    rows = []
    for n in range(1, n_max + 1):
        xn = x**n
        lhs = float(xn.mean())
        se = float(xn.std(ddof=1) / math.sqrt(reps))
        pmf = _block_count_pmf(n, t)
        rhs = sum(pk * p0**k for k, pk in enumerate(pmf, start=1))
        z = (lhs - rhs) / se if se > 0 else math.inf * (lhs - rhs != 0.0)
        rows.append(DualityRow(n=n, lhs=lhs, lhs_se=se, rhs=rhs, z=z))
    return tuple(rows)
