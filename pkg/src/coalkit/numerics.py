"""Shared numeric kernel.

Everything downstream (rates, criteria, speed functions, goodness-of-fit
checks) funnels through the handful of primitives in this module so that
tolerances and randomness are controlled in exactly one place:

* quadrature on [0, 1] with endpoint singularities removed by substitution,
* tail integrals on [a, inf) with an explicit divergence verdict,
* bisection on decreasing functions with a tolerance on the *value*,
* chi-square and Kolmogorov-Smirnov goodness-of-fit reports,
* counter-based random streams keyed by (seed, stream_id).
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Iterable, Literal, Sequence

import numpy as np
from scipy import integrate, special, stats

__all__ = [
    "RNG_ALGORITHM",
    "EXACT_TOL",
    "IMPROPER_TOL",
    "NumericsError",
    "QuadResult",
    "TailIntegral",
    "GofReport",
    "RngStream",
    "integrate_unit",
    "integrate_tail",
    "bisect_decreasing",
    "chi_square_gof",
    "ks_one_sample",
]

#: Bit generator used by every RngStream; recorded in CLI output metadata.
RNG_ALGORITHM = "philox4x64"

#: Default absolute tolerance for exact (closed-form-checkable) quantities.
EXACT_TOL = 1e-10

#: Default tolerance for improper integrals and other limit computations.
IMPROPER_TOL = 1e-6

_MASK64 = (1 << 64) - 1


class NumericsError(RuntimeError):
    """A numeric routine could not meet its contract."""


@dataclasses.dataclass(frozen=True)
class QuadResult:
    value: float
    abs_error_estimate: float


@dataclasses.dataclass(frozen=True)
class TailIntegral:
    """Result of a [a, inf) integral; ``diverges`` is the explicit verdict."""

    value: float
    abs_error_estimate: float
    diverges: bool


@dataclasses.dataclass(frozen=True)
class GofReport:
    statistic: float
    p_value: float
    dof: int


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclasses.dataclass(frozen=True)
class RngStream:
    """Reproducible random stream: same (seed, stream_id) means same draws.

    Backed by the Philox counter-based generator, so streams with distinct
    ids are statistically independent and replicate-parallel runs can hand
    one stream per replicate without coordination.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64
        )
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> "RngStream":
        """Derived stream for replicate ``index``; deterministic in (self, index)."""
        mixed = _splitmix64(_splitmix64(self.stream_id & _MASK64) ^ (index & _MASK64))
        return RngStream(self.seed, mixed)

    def metadata(self) -> dict:
        return {
            "seed": int(self.seed),
            "stream_id": int(self.stream_id),
            "algorithm": RNG_ALGORITHM,
        }


def _half_integral(
    f: Callable[[float], float],
    exponent: float,
    mirrored: bool,
    tol: float,
) -> tuple[float, float]:
    # Substitution x = u**p (or 1 - u**p from the right) with p chosen so the
    # transformed integrand is bounded near the endpoint: f ~ x**e needs
    # p*(1+e) >= 1. p = 2 even in the regular case also smooths half-integer
    # kinks such as sqrt(1-x*x) at no real cost.
    p = max(1.0 / (1.0 + exponent), 2.0)

    if mirrored:
        def g(u: float) -> float:
            return f(1.0 - u**p) * p * u ** (p - 1.0)
    else:
        def g(u: float) -> float:
            return f(u**p) * p * u ** (p - 1.0)

    upper = 0.5 ** (1.0 / p)
    out = integrate.quad(
        g, 0.0, upper, epsabs=0.25 * tol, epsrel=max(0.1 * tol, 1e-13),
        limit=300, full_output=1,
    )
    value, err = out[0], out[1]
    if not math.isfinite(value):
        raise NumericsError("quadrature on [0,1] produced a non-finite value")
    return value, err


def integrate_unit(
    integrand: Callable[[float], float],
    left_singularity_exponent: float = 0.0,
    tol: float = EXACT_TOL,
    right_singularity_exponent: float = 0.0,
) -> QuadResult:
    """Integrate ``integrand`` over (0, 1).

    ``left_singularity_exponent`` is the signed power e with integrand ~ x**e
    as x -> 0 (e in (-1, 0] for an integrable singularity; 0 when regular),
    and symmetrically for the right endpoint in terms of (1-x). The
    substitution x = u**(1/(1+e)) flattens the singularity before adaptive
    subdivision runs.
    """
    for e in (left_singularity_exponent, right_singularity_exponent):
        if e <= -1.0:
            raise ValueError(f"non-integrable endpoint exponent {e}")
    v1, e1 = _half_integral(integrand, left_singularity_exponent, False, tol)
    v2, e2 = _half_integral(integrand, right_singularity_exponent, True, tol)
    return QuadResult(v1 + v2, e1 + e2)


_MAX_DOUBLINGS = 60


def integrate_tail(
    integrand: Callable[[float], float],
    a: float,
    tol: float = IMPROPER_TOL,
    tail_hint: Literal["convergent", "divergent", None] = None,
) -> TailIntegral:
    """Integrate ``integrand`` over [a, inf) with a divergence verdict.

    The integral is accumulated over doubling windows; if the partial sums
    fail the Cauchy criterion after 60 doublings the result carries
    ``diverges=True`` with the partial value, never a fabricated number.
    Convergence of a slowly-decaying tail is undecidable from samples alone,
    so callers with analytic knowledge may pass ``tail_hint``: "convergent"
    delegates to infinite-range quadrature, "divergent" skips the scan.
    """
    if tail_hint == "convergent":
        value, err = integrate.quad(
            integrand, a, np.inf, epsabs=tol, epsrel=tol, limit=400, full_output=1
        )[:2]
        return TailIntegral(value, err, diverges=False)

    total = 0.0
    err_total = 0.0
    lo = a
    width = max(abs(a), 1.0)
    small_streak = 0
    last_seg = math.inf
    for k in range(_MAX_DOUBLINGS):
        hi = lo + width
        seg, seg_err = integrate.quad(
            integrand, lo, hi, epsabs=0.25 * tol, epsrel=1e-12, limit=200,
            full_output=1,
        )[:2]
        total += seg
        err_total += seg_err
        if tail_hint == "divergent":
            return TailIntegral(total, err_total, diverges=True)
        scale = max(1.0, abs(total))
        if abs(seg) <= 0.25 * tol * scale:
            small_streak += 1
            if small_streak >= 2:
                # Geometric extrapolation of what is left beyond the scan.
                if 0.0 < abs(seg) < abs(last_seg):
                    r = abs(seg) / abs(last_seg)
                    err_total += abs(seg) * r / (1.0 - r)
                return TailIntegral(total, err_total, diverges=False)
        else:
            small_streak = 0
        last_seg = seg
        lo = hi
        width *= 2.0
    return TailIntegral(total, err_total, diverges=True)


def bisect_decreasing(
    g: Callable[[float], float],
    target: float,
    lo: float,
    hi: float,
    tol: float = IMPROPER_TOL,
    max_iter: int = 500,
) -> float:
    """Solve g(x) = target for decreasing g on [lo, hi].

    The stopping rule is on the *value*: the returned x satisfies
    |g(x) - target| <= tol. Raises if the bracket is bad or the interval
    collapses before the value tolerance is met.
    """
    g_lo = g(lo)
    g_hi = g(hi)
    if g_lo < target - tol or g_hi > target + tol:
        raise ValueError(
            f"bracket does not straddle target: g({lo})={g_lo}, g({hi})={g_hi}, "
            f"target={target}"
        )
    if abs(g_lo - target) <= tol:
        return lo
    if abs(g_hi - target) <= tol:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        if abs(g_mid - target) <= tol:
            return mid
        if g_mid > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, abs(hi)):
            raise NumericsError(
                "bisection interval collapsed before meeting the value tolerance"
            )
    raise NumericsError("bisection failed to converge")


def chi_square_gof(
    observed: Sequence[int] | np.ndarray,
    expected_probs: Sequence[float] | np.ndarray,
    total: int | None = None,
    min_expected: float = 5.0,
) -> GofReport:
    """Pearson chi-square test of counts against a discrete law.

    Bins are pooled smallest-expectation-first until every expected count is
    at least ``min_expected``; it is an error if fewer than two bins survive.
    """
    obs = np.asarray(observed, dtype=float)
    probs = np.asarray(expected_probs, dtype=float)
    if obs.shape != probs.shape:
        raise ValueError("observed and expected_probs must have equal length")
    if np.any(probs < -1e-15):
        raise ValueError("negative expected probability")
    if abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError(f"expected probabilities sum to {probs.sum()!r}, not 1")
    n = float(obs.sum()) if total is None else float(total)
    if total is not None and abs(obs.sum() - n) > 0.5:
        raise ValueError("total disagrees with the observed counts")

    expected = n * probs
    obs_list = list(obs)
    exp_list = list(expected)
    while len(exp_list) > 1 and min(exp_list) < min_expected:
        i = int(np.argmin(exp_list))
        # Pool the weakest bin with the next weakest.
        j = int(np.argmin([v if k != i else np.inf for k, v in enumerate(exp_list)]))
        exp_i = exp_list.pop(i)
        obs_i = obs_list.pop(i)
        if j > i:
            j -= 1
        exp_list[j] += exp_i
        obs_list[j] += obs_i
    if len(exp_list) < 2:
        raise ValueError("fewer than two bins with adequate expected counts")

    o = np.array(obs_list)
    e = np.array(exp_list)
    statistic = float(np.sum((o - e) ** 2 / e))
    dof = len(e) - 1
    p_value = float(stats.chi2.sf(statistic, dof))
    return GofReport(statistic, p_value, dof)


def ks_one_sample(
    samples: Sequence[float] | np.ndarray,
    cdf: Callable[[np.ndarray], np.ndarray],
) -> GofReport:
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    try:
        f = np.asarray(cdf(x), dtype=float)
        if f.shape != x.shape:
            raise TypeError
    except TypeError:
        f = np.array([float(cdf(v)) for v in x])
    if np.any(f < -1e-12) or np.any(f > 1.0 + 1e-12):
        raise ValueError("cdf values outside [0, 1]")
    grid = np.arange(1, n + 1) / n
    d_plus = float(np.max(grid - f))
    d_minus = float(np.max(f - (grid - 1.0 / n)))
    d = max(d_plus, d_minus)
    p_value = float(special.kolmogorov(math.sqrt(n) * d))
    return GofReport(d, p_value, n)
