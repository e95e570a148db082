"""Mutation overlays on coalescent histories.

Marks fall on the genealogy as a Poisson process with constant intensity
per unit branch length. Under the infinite-alleles reading, leaves sharing
their nearest mark above (or sharing an unmarked path to the root) carry
the same type; under the infinite-sites reading every mark is its own
segregating site, counted by how many leaves sit below it. Both readings
are computed in one sweep over the history's inter-event intervals.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np
from scipy import optimize

from .kingman import CoalescentHistory
from .lambda_coalescent import LambdaMeasure, _cdi_analytic, _fast_psi, cdi_test
from .numerics import integrate_unit
from .partitions import Partition, expected_blocks_ewens

__all__ = [
    "MutationMarks",
    "SiteSpectrum",
    "throw_mutations",
    "allelic_partition",
    "site_spectrum",
    "theta_estimators",
    "lambda_allele_prediction",
    "beta_allele_constant",
    "allele_multiplicity_fraction",
    "moran_site_green",
]


@dataclasses.dataclass(frozen=True)
class MutationMarks:
    """Poisson marks on a history's branches.

    Each mark is (interval id, branch id, time): interval i spans the time
    between event i-1 (or zero) and event i, and the branch id indexes the
    live blocks of that interval in least-element order. Marks are sorted
    by time.
    """

    rate: float
    marks: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        if self.rate < 0.0:
            raise ValueError("mutation rate must be nonnegative")
        last_t = -math.inf
        last_i = -1
        for interval, branch, t in self.marks:
            if interval < last_i or t < last_t:
                raise ValueError("marks must be sorted by time")
            if branch < 0:
                raise ValueError("branch ids are nonnegative")
            last_t, last_i = t, interval


@dataclasses.dataclass(frozen=True)
class SiteSpectrum:
    """Counts of segregating sites by multiplicity.

    M[j] is the number of sites carried by exactly j of the n leaves; the
    leading entry M[0] is always zero and total is the number of
    segregating sites.
    """

    n: int
    M: tuple[int, ...]
    total: int

    def __post_init__(self) -> None:
        if len(self.M) != self.n + 1 or self.M[0] != 0:
            raise ValueError("M must have n+1 entries with M[0] = 0")
        if sum(self.M) != self.total:
            raise ValueError("total must equal the sum of the spectrum")

    def to_csv(self, theta: float) -> str:
        """Rows (j, M_j, theta/j), the last column being the neutral
        constant-size expectation for the pair-merger genealogy."""
        lines = ["j,M_j,expected"]
        for j in range(1, self.n + 1):
            lines.append(f"{j},{self.M[j]},{theta / j:.10g}")
        return "\n".join(lines) + "\n"


def _interval_blocks(h: CoalescentHistory):
    """Yield (t_start, t_end, block_count) for each inter-event interval."""
    t_prev = 0.0
    b = h.n
    for e in h.events:
        yield t_prev, e.t, b
        b -= len(e.merge) - 1
        t_prev = e.t


def _require_complete(h: CoalescentHistory) -> None:
    merged = sum(len(e.merge) - 1 for e in h.events)
    if merged != h.n - 1:
        raise ValueError("history must run to a single block")


def throw_mutations(
    h: CoalescentHistory, rho: float, rng: np.random.Generator
) -> MutationMarks:
    """Poisson(rho * length) marks on every branch, uniform in time.

    The genealogy stops at the final merger, so the root itself carries no
    branch and receives no marks.
    """
    if rho < 0.0:
        raise ValueError("mutation rate must be nonnegative")
    _require_complete(h)
    marks: list[tuple[int, int, float]] = []
    for i, (t0, t1, b) in enumerate(_interval_blocks(h)):
        dt = t1 - t0
        if dt <= 0.0 or rho == 0.0:
            continue
        counts = rng.poisson(rho * dt, size=b)
        total = int(counts.sum())
        if total == 0:
            continue
        times = t0 + dt * rng.random(total)
        branches = np.repeat(np.arange(b), counts)
        marks.extend(
            (i, int(branch), float(t)) for branch, t in zip(branches, times)
        )
    marks.sort(key=lambda mk: mk[2])
    return MutationMarks(rate=rho, marks=tuple(marks))


def allelic_partition(h: CoalescentHistory, m: MutationMarks) -> Partition:
    """Group leaves by the first mark on their path to the root.

    Leaves with no mark below the root share the ancestral type. A branch
    with several marks contributes one type, claimed by its earliest mark;
    later marks on the same lineage sit above already-typed leaves.
    """
    _require_complete(h)
    unmarked: list[list[int]] = [[i] for i in range(1, h.n + 1)]
    blocks: list[list[int]] = []
    mk = 0
    order = m.marks
    for i, e in enumerate(h.events):
        while mk < len(order) and order[mk][0] == i:
            _, branch, _t = order[mk]
            mk += 1
            if not 0 <= branch < len(unmarked):
                raise ValueError("mark points at a branch that is not live")
            if unmarked[branch]:
                blocks.append(unmarked[branch])
                unmarked[branch] = []
        idx = sorted(e.merge)
        acc = unmarked[idx[0]]
        for j in idx[1:]:
            other = unmarked[j]
            if len(other) > len(acc):
                acc, other = other, acc
            acc.extend(other)
        unmarked[idx[0]] = acc
        for j in reversed(idx[1:]):
            del unmarked[j]
    if mk < len(order):
        raise ValueError("mark points past the final merger")
    if unmarked[0]:
        blocks.append(unmarked[0])
    return Partition.from_blocks(h.n, blocks)


def site_spectrum(h: CoalescentHistory, m: MutationMarks) -> SiteSpectrum:
    """Count marks by the number of leaves their branch subtends."""
    _require_complete(h)
    sizes = [1] * h.n
    spectrum = [0] * (h.n + 1)
    mk = 0
    order = m.marks
    for i, e in enumerate(h.events):
        while mk < len(order) and order[mk][0] == i:
            _, branch, _t = order[mk]
            mk += 1
            if not 0 <= branch < len(sizes):
                raise ValueError("mark points at a branch that is not live")
            spectrum[sizes[branch]] += 1
        idx = sorted(e.merge)
        sizes[idx[0]] = sum(sizes[j] for j in idx)
        for j in reversed(idx[1:]):
            del sizes[j]
    if mk < len(order):
        raise ValueError("mark points past the final merger")
    return SiteSpectrum(n=h.n, M=tuple(spectrum), total=sum(spectrum))


def theta_estimators(data, n: int) -> tuple[float, float]:
    """Moment estimators of the scaled mutation rate.

    From a Partition, the block-count estimator solves
    sum_i theta/(theta+i-1) = K_n; all-singleton data pushes the root to
    infinity. From a SiteSpectrum, the site estimator divides the number
    of segregating sites by the harmonic number h_{n-1}. The estimator the
    input cannot support is returned as nan.
    """
    if n < 2:
        raise ValueError("need a sample of at least two")
    blocks_hat = math.nan
    sites_hat = math.nan
    if isinstance(data, Partition):
        k = data.num_blocks
        if k == 1:
            blocks_hat = 0.0
        elif k >= n:
            blocks_hat = math.inf
        else:
            hi = 1.0
            while expected_blocks_ewens(n, hi) < k:
                hi *= 2.0
            # the mean block count tends to 1 as theta drops to zero, so
            # for k >= 2 the root sits strictly inside the bracket
            blocks_hat = optimize.brentq(
                lambda th: expected_blocks_ewens(n, th) - k, 1e-12, hi, xtol=1e-12
            )
    elif isinstance(data, SiteSpectrum):
        h = sum(1.0 / j for j in range(1, n))
        sites_hat = data.total / h
    else:
        raise TypeError("data must be a Partition or a SiteSpectrum")
    return blocks_hat, sites_hat


def lambda_allele_prediction(m: LambdaMeasure, rho: float, n: int) -> float:
    """Predicted number of allelic types in a sample of n.

    Evaluates rho times the integral of q/psi(q) for q from 1 to n, the
    first-order count of mutations that survive to the allelic partition.
    Only descending measures admit the prediction.
    """
    if rho <= 0.0:
        raise ValueError("mutation rate must be positive")
    if n < 2:
        raise ValueError("need a sample of at least two")
    verdict = _cdi_analytic(m)
    if verdict is None:
        verdict = cdi_test(m).verdict
    if verdict != "comes-down":
        raise ValueError(
            "the allelic prediction needs a measure that descends from infinity"
        )
    mech = _fast_psi(m)
    log_n = math.log(n)

    def integrand(u: float) -> float:
        # q = n**u turns the range into the unit interval
        q = math.exp(u * log_n)
        return log_n * q * q / mech(q)

    return rho * integrate_unit(integrand, tol=1e-9).value


def beta_allele_constant(alpha: float) -> float:
    """Closed-form limit constant for the beta family: the number of types
    scales like rho * C * n**(2-alpha) with C = alpha*(alpha-1), the
    density's own normalization cancelling from the displayed constant."""
    if not 1.0 < alpha < 2.0:
        raise ValueError("the closed form needs alpha in (1, 2)")
    return alpha * (alpha - 1.0)


def allele_multiplicity_fraction(alpha: float, k: int) -> float:
    """Limit fraction of types with multiplicity k for the beta family.

    The k = 1 case reduces to 2 - alpha: the asymptotic fraction of
    singleton types.
    """
    if not 1.0 < alpha < 2.0:
        raise ValueError("need alpha in (1, 2)")
    if k < 1:
        raise ValueError("multiplicity must be at least 1")
    out = 2.0 - alpha
    for j in range(k - 1):
        # product (alpha-1)(alpha)...(alpha+k-3) over k!, built one factor
        # at a time; empty for k = 1
        out *= (alpha - 1.0 + j) / (j + 2.0)
    return out


def moran_site_green(N: int) -> np.ndarray:
    """Occupation times of the mutant-count chain started from one copy.

    In the exchange model with N individuals, an allele at count k moves
    to k+1 or k-1 at equal rates k(N-k)/N. Solving the absorbing-chain
    linear system gives the expected time spent at each count before the
    allele fixes or dies, which is exactly 1/k: the finite-population root
    of the 1/j site-spectrum law. Returns G[k] for k = 1..N-1.
    """
    if not 2 <= N:
        raise ValueError("need at least two individuals")
    states = np.arange(1, N)
    rates = states * (N - states) / N
    # occupation measure g solves Q^T g = -e_1 on the transient states
    q = np.zeros((N - 1, N - 1))
    for i, k in enumerate(states):
        q[i, i] = -2.0 * rates[i]
        if k + 1 < N:
            q[i, i + 1] = rates[i]
        if k - 1 >= 1:
            q[i, i - 1] = rates[i]
    rhs = np.zeros(N - 1)
    rhs[0] = -1.0
    return np.linalg.solve(q.T, rhs)
