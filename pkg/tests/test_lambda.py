"""Tests for the multiple-merger coalescent module.

Exact rates are checked against closed forms and direct quadrature, the
branching mechanism against an independent series/special-function oracle,
descent criteria against known verdicts, and the speed of descent against
an independently tabulated inverse of the tail integral. Samplers are
validated by goodness-of-fit tests at desk scale.
"""

import math

import numpy as np
import pytest
from scipy import integrate, interpolate, optimize, special

from coalkit import lambda_coalescent as lc
from coalkit.kingman import simulate_kingman
from coalkit.numerics import NumericsError, RngStream, chi_square_gof, ks_one_sample

EULER_GAMMA = 0.5772156649015329


def bs_psi_closed(q):
    """Mechanism of the uniform measure via the exponential integral."""
    return q * (EULER_GAMMA + np.log(q) + special.exp1(q)) - q + 1.0 - np.exp(-q)


# ---------------------------------------------------------------------------
# measure algebra


class TestMeasureAlgebra:
    def test_named_masses(self):
        assert lc.kingman().total_mass == pytest.approx(1.0)
        assert lc.bolthausen_sznitman().total_mass == pytest.approx(1.0)
        assert lc.beta(1.5).total_mass == pytest.approx(1.0)
        assert lc.dirac(0.3).total_mass == pytest.approx(1.0)
        assert lc.dirac(0.3, mass=2.5).total_mass == pytest.approx(2.5)

    def test_star_shaped_flag(self):
        assert lc.dirac(1.0).star_shaped
        assert not lc.dirac(0.99).star_shaped
        assert not lc.kingman().star_shaped

    def test_beta_domain(self):
        for bad in (0.0, 2.0, -0.5, 2.5):
            with pytest.raises(ValueError):
                lc.beta(bad)

    def test_dirac_domain(self):
        for bad in (0.0, 1.5, -0.1):
            with pytest.raises(ValueError):
                lc.dirac(bad)
        with pytest.raises(ValueError):
            lc.dirac(0.5, mass=0.0)

    def test_equality_and_hash(self):
        assert lc.beta(1.5) == lc.beta(1.5)
        assert hash(lc.beta(1.5)) == hash(lc.beta(1.5))
        assert lc.beta(1.5) != lc.beta(1.2)
        assert lc.kingman() == lc.kingman()

    def test_mix_merges_identical_atoms(self):
        m = lc.mix([(lc.dirac(0.3), 0.5), (lc.dirac(0.3), 0.25)])
        assert len(m.atoms) == 1
        x, w = m.atoms[0]
        assert x == pytest.approx(0.3)
        assert w == pytest.approx(0.75)

    def test_mix_combines_parts(self):
        m = lc.mix([(lc.kingman(), 0.5), (lc.beta(1.5), 0.5)])
        assert m.kingman_mass == pytest.approx(0.5)
        assert m.total_mass == pytest.approx(1.0)
        assert len(m.components) == 1

    def test_mass_below_matches_quadrature(self):
        m = lc.beta(1.5)
        for cut in (0.1, 0.5, 0.9):
            direct, _ = integrate.quad(m.density, 0.0, cut)
            assert m.mass_below(cut) == pytest.approx(direct, rel=1e-8)
        assert lc.dirac(0.3).mass_below(0.2) == 0.0
        assert lc.dirac(0.3).mass_below(0.5) == pytest.approx(1.0)

    def test_custom_mass_declaration_checked(self):
        with pytest.raises(ValueError):
            lc.custom(lambda x: 2.0 * x, mass=0.5)
        m = lc.custom(lambda x: 2.0 * x, mass=1.0)
        assert m.total_mass == pytest.approx(1.0, rel=1e-7)

    def test_sweep_measure_atoms(self):
        m = lc.sweep_measure([(2.0, 0.1, 0.05)])
        assert m.kingman_mass == pytest.approx(1.0)
        (x, w), = m.atoms
        p = math.exp(-0.05 / 0.1)
        assert x == pytest.approx(p)
        assert w == pytest.approx(0.1 * 2.0 * p * p)

    def test_sweep_with_no_recombination_hits_one(self):
        m = lc.sweep_measure([(1.0, 0.2, 0.0)])
        assert m.star_shaped
        assert m.atoms[0][0] == 1.0

    def test_sweep_empty_is_pair_measure(self):
        assert lc.sweep_measure([]) == lc.kingman()

    def test_sweep_validation(self):
        with pytest.raises(ValueError):
            lc.sweep_measure([(0.0, 0.1, 0.0)])
        with pytest.raises(ValueError):
            lc.sweep_measure([(1.0, 1.5, 0.0)])
        with pytest.raises(ValueError):
            lc.sweep_measure([(1.0, 0.1, -1.0)])


class TestParseGrammar:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("kingman", lc.kingman()),
            ("bs", lc.bolthausen_sznitman()),
            ("beta:1.5", lc.beta(1.5)),
            ("dirac:0.3", lc.dirac(0.3)),
        ],
    )
    def test_named_round_trip(self, text, expected):
        m = lc.parse_measure(text)
        assert m == expected
        assert m.spec_string == text

    def test_mix_string(self):
        m = lc.parse_measure("mix:kingman*0.5+dirac:0.3*0.5")
        assert m.kingman_mass == pytest.approx(0.5)
        assert m.atoms[0][0] == pytest.approx(0.3)
        assert m.atoms[0][1] == pytest.approx(0.5)

    def test_sweep_string(self):
        m = lc.parse_measure("sweep:[(1.0,0.02,0.0)]")
        assert m.kingman_mass == pytest.approx(1.0)
        assert m.star_shaped

    @pytest.mark.parametrize(
        "bad",
        ["beta:2.5", "frog", "dirac:0", "mix:kingman*abc", "beta:", "sweep:nope"],
    )
    def test_rejects_malformed(self, bad):
        with pytest.raises(ValueError):
            lc.parse_measure(bad)


# ---------------------------------------------------------------------------
# exact rates


class TestRates:
    def test_uniform_pair_rate(self):
        assert lc.lambda_bk(lc.bolthausen_sznitman(), 3, 2) == pytest.approx(0.5)

    def test_pair_measure_rates(self):
        m = lc.kingman()
        for b in (2, 3, 7, 20):
            assert lc.lambda_bk(m, b, 2) == pytest.approx(1.0)
        for k in (3, 4, 7):
            assert lc.lambda_bk(m, 10, k) == 0.0

    def test_total_merger_rates(self):
        m = lc.dirac(1.0)
        assert lc.lambda_bk(m, 4, 4) == pytest.approx(1.0)
        assert lc.lambda_bk(m, 4, 2) == 0.0
        assert lc.lambda_bk(m, 4, 3) == 0.0

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            lc.lambda_bk(lc.kingman(), 3, 1)
        with pytest.raises(ValueError):
            lc.lambda_bk(lc.kingman(), 3, 4)
        with pytest.raises(ValueError):
            lc.rate_summaries(lc.kingman(), 1)

    def test_summaries_frozen_values(self):
        lam, gam = lc.rate_summaries(lc.kingman(), 4)
        assert lam == pytest.approx(6.0)
        assert gam == pytest.approx(6.0)
        lam, gam = lc.rate_summaries(lc.bolthausen_sznitman(), 3)
        assert lam == pytest.approx(2.0)
        assert gam == pytest.approx(2.5)
        lam, gam = lc.rate_summaries(lc.dirac(1.0), 5)
        assert lam == pytest.approx(1.0)
        assert gam == pytest.approx(4.0)

    def test_uniform_closed_forms(self):
        m = lc.bolthausen_sznitman()
        for b in (2, 3, 10, 40):
            lam, gam = lc.rate_summaries(m, b)
            h = sum(1.0 / j for j in range(1, b + 1))
            assert lam == pytest.approx(b - 1.0, rel=1e-10)
            assert gam == pytest.approx(b * (h - 1.0), rel=1e-10)

    def test_uniform_rate_formula(self):
        m = lc.bolthausen_sznitman()
        for b in (4, 9):
            for k in range(2, b + 1):
                want = (
                    math.factorial(k - 2)
                    * math.factorial(b - k)
                    / math.factorial(b - 1)
                )
                assert lc.lambda_bk(m, b, k) == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize("alpha", [0.5, 1.5])
    def test_beta_rates_match_quadrature(self, alpha):
        # the full integrand is a polynomial against the singular weight
        # x**(1-alpha) (1-x)**(alpha-1), which the QAWS rule treats exactly
        m = lc.beta(alpha)
        b = 9
        norm = 1.0 / special.beta(2.0 - alpha, alpha)
        for k in range(2, b + 1):
            want, _ = integrate.quad(
                lambda x: norm * x ** (k - 2) * (1.0 - x) ** (b - k),
                0.0,
                1.0,
                weight="alg",
                wvar=(1.0 - alpha, alpha - 1.0),
            )
            assert lc.lambda_bk(m, b, k) == pytest.approx(want, rel=1e-10)

    def test_mix_rates_are_additive(self):
        m = lc.mix([(lc.kingman(), 0.5), (lc.dirac(0.3), 0.5)])
        for b, k in [(4, 2), (4, 3), (6, 4)]:
            want = 0.5 * lc.lambda_bk(lc.kingman(), b, k) + 0.5 * lc.lambda_bk(
                lc.dirac(0.3), b, k
            )
            assert lc.lambda_bk(m, b, k) == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize(
        "m,tol",
        [
            (lc.kingman(), 1e-12),
            (lc.dirac(0.3), 1e-12),
            (lc.dirac(1.0), 1e-12),
            (lc.bolthausen_sznitman(), 1e-9),
            (lc.beta(1.5), 1e-9),
            (lc.beta(0.5), 1e-9),
            (lc.sweep_measure([(1.0, 0.1, 0.02)]), 1e-9),
        ],
    )
    def test_consistency_recursion(self, m, tol):
        # removing one block: rate(b, k) = rate(b+1, k) + rate(b+1, k+1)
        assert lc.consistency_max_gap(m, 12) < tol

    @pytest.mark.parametrize(
        "m", [lc.kingman(), lc.bolthausen_sznitman(), lc.beta(1.5), lc.dirac(0.3)]
    )
    def test_block_loss_rate_nondecreasing(self, m):
        gams = [lc.rate_summaries(m, b)[1] for b in range(2, 61)]
        assert all(b >= a - 1e-12 for a, b in zip(gams, gams[1:]))

    def test_huge_b_stays_stable(self):
        b = 10**6
        lam, gam = lc.rate_summaries(lc.bolthausen_sznitman(), b)
        h = math.log(b) + EULER_GAMMA + 0.5 / b
        assert lam == pytest.approx(b - 1.0, rel=1e-9)
        assert gam == pytest.approx(b * (h - 1.0), rel=1e-8)

    def test_beta_loss_rate_power_growth(self):
        # gamma_b tracks the mechanism, so doubling b scales it by 2**alpha
        m = lc.beta(1.5)
        g1 = lc.rate_summaries(m, 10**5)[1]
        g2 = lc.rate_summaries(m, 2 * 10**5)[1]
        assert g2 / g1 == pytest.approx(2.0**1.5, rel=0.05)


# ---------------------------------------------------------------------------
# branching mechanism


class TestMechanism:
    def test_pair_measure_is_quadratic(self):
        assert lc.psi(lc.kingman(), 2.0) == pytest.approx(2.0, rel=1e-12)
        assert lc.psi(lc.kingman(), 7.0) == pytest.approx(24.5, rel=1e-12)

    def test_atom_at_one(self):
        assert lc.psi(lc.dirac(1.0), 1.0) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_atom_exact_formula(self):
        x = 0.3
        for q in (0.5, 2.0, 11.0):
            want = (math.exp(-q * x) - 1.0 + q * x) / (x * x)
            assert lc.psi(lc.dirac(x), q) == pytest.approx(want, rel=1e-12)

    def test_zero_and_negative(self):
        assert lc.psi(lc.beta(1.5), 0.0) == 0.0
        with pytest.raises(ValueError):
            lc.psi(lc.kingman(), -1.0)

    def test_uniform_against_exponential_integral(self):
        m = lc.bolthausen_sznitman()
        assert lc.psi(m, 1.0) == pytest.approx(0.4287201581256109, rel=1e-9)
        for q in (0.1, 1.0, 5.0, 50.0, 1e4):
            assert lc.psi(m, q) == pytest.approx(bs_psi_closed(q), rel=1e-8)

    def test_beta_tail_exponent(self):
        m = lc.beta(1.5)
        slope = (math.log(lc.psi(m, 1e4)) - math.log(lc.psi(m, 1e3))) / math.log(10.0)
        assert 1.45 <= slope <= 1.55

    def test_mix_additivity(self):
        m = lc.mix([(lc.kingman(), 0.4), (lc.dirac(0.5), 0.6)])
        for q in (0.7, 3.0):
            want = 0.4 * lc.psi(lc.kingman(), q) + 0.6 * lc.psi(lc.dirac(0.5), q)
            assert lc.psi(m, q) == pytest.approx(want, rel=1e-10)

    def test_spline_surrogate_tracks_quadrature(self):
        for m in (lc.bolthausen_sznitman(), lc.beta(1.5), lc.beta(0.5)):
            fast = lc._fast_psi(m)
            for q in np.geomspace(1e-3, 1e10, 27):
                assert fast(float(q)) == pytest.approx(lc.psi(m, float(q)), rel=2e-6)


# ---------------------------------------------------------------------------
# dust and descent criteria


class TestDust:
    def test_verdicts(self):
        assert lc.dust_test(lc.beta(0.5)).verdict == "dust"
        assert lc.dust_test(lc.bolthausen_sznitman()).verdict == "no-dust"
        assert lc.dust_test(lc.kingman()).verdict == "no-dust"
        assert lc.dust_test(lc.beta(1.5)).verdict == "no-dust"

    def test_certificate_values(self):
        rep = lc.dust_test(lc.beta(0.5))
        assert rep.integral_value == pytest.approx(2.0, rel=1e-9)
        rep = lc.dust_test(lc.dirac(0.3))
        assert rep.verdict == "dust"
        assert rep.integral_value == pytest.approx(10.0 / 3.0, rel=1e-12)

    def test_custom_requires_index(self):
        with pytest.raises(ValueError):
            lc.dust_test(lc.custom(lambda x: 2.0 * x))

    def test_custom_with_index(self):
        norm = 1.0 / special.beta(1.5, 0.5)
        m = lc.custom(
            lambda x: norm * math.sqrt(x) * (1.0 - x) ** (-0.5),
            regular_variation_index=0.5,
            left_exponent=0.5,
            right_exponent=-0.5,
        )
        rep = lc.dust_test(m)
        assert rep.verdict == "dust"
        assert rep.integral_value == pytest.approx(2.0, rel=1e-6)


class TestDescent:
    @pytest.mark.parametrize(
        "m,verdict",
        [
            (lc.kingman(), "comes-down"),
            (lc.beta(1.5), "comes-down"),
            (lc.beta(1.2), "comes-down"),
            (lc.beta(0.5), "stays-infinite"),
            (lc.bolthausen_sznitman(), "stays-infinite"),
            (lc.dirac(0.3), "stays-infinite"),
            (lc.mix([(lc.kingman(), 0.5), (lc.dirac(0.3), 0.5)]), "comes-down"),
        ],
    )
    def test_verdict_table(self, m, verdict):
        rep = lc.cdi_test(m)
        assert rep.verdict == verdict
        assert rep.sum_route_verdict == verdict
        assert rep.integral_route_verdict == verdict
        assert not rep.heuristic

    def test_descending_sum_certificate_is_finite(self):
        rep = lc.cdi_test(lc.beta(1.5))
        assert np.isfinite(rep.sum_route_partial)
        assert rep.integral_route.value < np.inf
        assert not rep.integral_route.diverges

    def test_star_shaped_rejected(self):
        with pytest.raises(ValueError):
            lc.cdi_test(lc.dirac(1.0))
        with pytest.raises(ValueError):
            lc.cdi_test(lc.sweep_measure([(1.0, 0.1, 0.0)]))

    def test_empty_measure_rejected(self):
        with pytest.raises(ValueError):
            lc.cdi_test(lc.LambdaMeasure(kingman_mass=0.0, atoms=(), components=()))

    def test_custom_with_hint_uses_analytic_route(self):
        norm = 1.0 / special.beta(0.5, 1.5)
        m = lc.custom(
            lambda x: norm * x**-0.5 * math.sqrt(1.0 - x),
            regular_variation_index=1.5,
            left_exponent=-0.5,
            right_exponent=0.5,
        )
        rep = lc.cdi_test(m)
        assert rep.verdict == "comes-down"
        assert not rep.heuristic

    def test_custom_without_hint_is_heuristic(self):
        rep = lc.cdi_test(lc.custom(lambda x: 2.0 * x))
        assert rep.verdict == "stays-infinite"
        assert rep.heuristic
        norm = 1.0 / special.beta(0.5, 1.5)
        rep = lc.cdi_test(
            lc.custom(
                lambda x: norm * x**-0.5 * math.sqrt(1.0 - x),
                left_exponent=-0.5,
                right_exponent=0.5,
            )
        )
        assert rep.verdict == "comes-down"
        assert rep.heuristic


# ---------------------------------------------------------------------------
# speed of descent


def tabulated_speed(alpha, t_targets):
    """Invert the tail integral of 1/psi from an independent tabulation.

    The mechanism is evaluated by splitting at 30/q: the inner part uses
    Gauss-Jacobi nodes matched to the x**(1-alpha) singularity, the outer
    part reduces to incomplete beta integrals with closed forms obtained
    from the parameter-shift recurrence. The tail integral is accumulated
    with a cubic spline on a log grid and inverted by bracketed root
    finding.
    """
    norm = 1.0 / special.beta(2.0 - alpha, alpha)
    nod, wts = special.roots_jacobi(160, 0.0, 1.0 - alpha)
    s_nodes = 0.5 * (nod + 1.0)
    s_wts = wts * 0.5 ** (2.0 - alpha)

    def psi_ref(q):
        c = min(1.0, 30.0 / q)
        x = c * s_nodes
        u = q * x
        phi = np.where(
            u < 1e-6,
            0.5 * q * q * (1.0 - u / 3.0),
            (np.expm1(-u) + u) / np.maximum(x, 1e-300) ** 2,
        )
        inner = norm * c ** (2.0 - alpha) * float(
            np.sum(s_wts * phi * (1.0 - x) ** (alpha - 1.0))
        )
        if c >= 1.0:
            return inner
        i1 = (
            math.pi / math.sin(math.pi * alpha)
            - c ** (1.0 - alpha) * (1.0 - c) ** alpha / (1.0 - alpha)
            - special.betainc(2.0 - alpha, alpha, c)
            * special.beta(2.0 - alpha, alpha)
            / (1.0 - alpha)
        )
        i2 = c ** (-alpha) * (1.0 - c) ** alpha / alpha
        return inner + norm * (q * i1 - i2)

    y = np.linspace(math.log(2e3), math.log(1e12), 1001)
    g = np.array([q / psi_ref(q) for q in np.exp(y)])
    spline = interpolate.CubicSpline(y, g)
    local_slope = (math.log(g[-1]) - math.log(g[-21])) / (y[-1] - y[-21])
    tail_beyond_grid = g[-1] / (-local_slope)

    out = []
    for t in t_targets:
        root = optimize.brentq(
            lambda yy: spline.integrate(yy, y[-1]) + tail_beyond_grid - t,
            y[0],
            y[-1],
            xtol=1e-12,
        )
        out.append(math.exp(root))
    return out


class TestSpeed:
    def test_pair_measure_exact(self):
        assert lc.speed_v(lc.kingman(), 0.1) == pytest.approx(20.0, abs=1e-6)
        assert lc.speed_v(lc.kingman(), 0.005) == pytest.approx(400.0, rel=1e-6)
        assert lc.speed_v(lc.kingman(), 2.0) == pytest.approx(1.0, rel=1e-6)

    def test_strictly_decreasing(self):
        assert lc.speed_v(lc.beta(1.5), 0.1) > lc.speed_v(lc.beta(1.5), 0.2)

    def test_beta_against_tabulated_inverse(self):
        oracle = tabulated_speed(1.5, [0.01, 0.005])
        assert lc.speed_v(lc.beta(1.5), 0.01) == pytest.approx(oracle[0], rel=1e-4)
        assert lc.speed_v(lc.beta(1.5), 0.005) == pytest.approx(oracle[1], rel=1e-4)

    def test_frozen_regression_values(self):
        assert lc.speed_v(lc.beta(1.5), 0.01) == pytest.approx(17848.4085, rel=1e-6)
        assert lc.speed_v(lc.beta(1.2), 0.05) == pytest.approx(5879233.9, rel=1e-5)

    def test_requires_descent(self):
        with pytest.raises(ValueError):
            lc.speed_v(lc.bolthausen_sznitman(), 0.1)
        with pytest.raises(ValueError):
            lc.speed_v(lc.beta(0.5), 0.1)
        with pytest.raises(ValueError):
            lc.speed_v(lc.kingman(), 0.0)

    def test_unit_mass_lower_bound(self):
        # phi is at most q**2/2, so any unit-mass measure descends no
        # faster than the pure pair measure
        m = lc.mix([(lc.kingman(), 0.5), (lc.dirac(0.3), 0.5)])
        for t in (0.05, 0.5):
            assert lc.speed_v(m, t) >= 2.0 / t - 1e-6


# ---------------------------------------------------------------------------
# jump-chain sampler


def partition_state(part, n):
    """Key a partition of {1..n} for histogramming."""
    return tuple(tuple(b) for b in part.blocks)


def three_state_probs(pair_rate, triple_rate, t):
    """Exact law at time t for three starting blocks.

    Each of the three pairs merges at pair_rate, the triple at triple_rate;
    after any pair merger the remaining two blocks merge at the pair rate
    of two blocks, which equals the total measure mass here (unit mass).
    """
    total = 3.0 * pair_rate + triple_rate
    p_sing = math.exp(-total * t)
    # reach a specific pair state at s, survive the 2-block stage to t
    p_pair = pair_rate * (
        (math.exp(-t) - math.exp(-total * t)) / (total - 1.0)
    )
    p_full = 1.0 - p_sing - 3.0 * p_pair
    return p_sing, p_pair, p_full


def histogram_three(parts):
    """Counts as (singletons, pair states..., full) for partitions of [3]."""
    keys = [
        ((1,), (2,), (3,)),
        ((1, 2), (3,)),
        ((1, 3), (2,)),
        ((1,), (2, 3)),
        ((1, 2, 3),),
    ]
    counts = {k: 0 for k in keys}
    for p in parts:
        counts[partition_state(p, 3)] += 1
    return [counts[k] for k in keys]


class TestJumpChainSampler:
    def test_star_measure_single_event(self):
        rng = RngStream(301, 0).generator()
        times = []
        for _ in range(800):
            h = lc.simulate_lambda(lc.dirac(1.0), 6, rng)
            assert len(h.events) == 1
            assert len(h.events[0].merge) == 6
            times.append(h.events[0].t)
        rep = ks_one_sample(times, lambda x: 1.0 - np.exp(-np.asarray(x)))
        assert rep.p_value > 1e-3

    def test_pair_measure_matches_dedicated_sampler(self):
        t = 0.4
        p_sing, p_pair, p_full = three_state_probs(1.0, 0.0, t)
        probs = [p_sing, p_pair, p_pair, p_pair, p_full]
        rng = RngStream(302, 0).generator()
        via_lambda = [
            lc.simulate_lambda(lc.kingman(), 3, rng).partition_at(t)
            for _ in range(2000)
        ]
        rep = chi_square_gof(histogram_three(via_lambda), probs)
        assert rep.p_value > 1e-3
        via_kingman = [
            simulate_kingman(3, rng).partition_at(t) for _ in range(2000)
        ]
        rep = chi_square_gof(histogram_three(via_kingman), probs)
        assert rep.p_value > 1e-3

    def test_uniform_measure_law_at_fixed_time(self):
        t = 0.5
        p_sing, p_pair, p_full = three_state_probs(0.5, 0.5, t)
        probs = [p_sing, p_pair, p_pair, p_pair, p_full]
        rng = RngStream(303, 0).generator()
        parts = [
            lc.simulate_lambda(lc.bolthausen_sznitman(), 3, rng).partition_at(t)
            for _ in range(3000)
        ]
        rep = chi_square_gof(histogram_three(parts), probs)
        assert rep.p_value > 1e-3

    def test_uniform_measure_triple_first_event(self):
        # triple rate 1/2 against total rate 2
        rng = RngStream(304, 0).generator()
        reps = 20000
        hits = 0
        for _ in range(reps):
            h = lc.simulate_lambda(lc.bolthausen_sznitman(), 3, rng)
            hits += len(h.events[0].merge) == 3
        se = math.sqrt(0.25 * 0.75 / reps)
        assert abs(hits / reps - 0.25) < 3.0 * se

    def test_restriction_consistency(self):
        # dropping element 4 from a 4-block run reproduces the 3-block law
        t = 0.5
        p_sing, p_pair, p_full = three_state_probs(0.5, 0.5, t)
        probs = [p_sing, p_pair, p_pair, p_pair, p_full]
        rng = RngStream(305, 0).generator()
        parts = []
        from coalkit.partitions import Partition

        for _ in range(3000):
            h = lc.simulate_lambda(lc.bolthausen_sznitman(), 4, rng)
            blocks = [
                [i for i in b if i != 4] for b in h.partition_at(t).blocks
            ]
            parts.append(
                Partition.from_blocks(3, [b for b in blocks if b])
            )
        rep = chi_square_gof(histogram_three(parts), probs)
        assert rep.p_value > 1e-3

    def test_pair_choice_is_exchangeable(self):
        rng = RngStream(306, 0).generator()
        pair_counts = {}
        total = 0
        for _ in range(3000):
            h = lc.simulate_lambda(lc.bolthausen_sznitman(), 4, rng)
            merge = h.events[0].merge
            if len(merge) == 2:
                pair_counts[tuple(merge)] = pair_counts.get(tuple(merge), 0) + 1
                total += 1
        counts = [pair_counts.get(p, 0) for p in
                  [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]]
        rep = chi_square_gof(counts, [1.0 / 6.0] * 6, total=total)
        assert rep.p_value > 1e-3

    def test_time_cutoff(self):
        rng = RngStream(307, 0).generator()
        h = lc.simulate_lambda(lc.bolthausen_sznitman(), 30, rng, t_max=0.05)
        assert all(0.0 < e.t <= 0.05 for e in h.events)

    def test_history_metadata(self):
        rng = RngStream(308, 0).generator()
        h = lc.simulate_lambda(lc.beta(1.5), 10, rng, seed_info={"seed": 308})
        assert h.model == "beta:1.5"
        assert h.seed_info == {"seed": 308}
        assert h.n == 10
        assert h.num_blocks_at(1e9) == 1

    def test_deterministic_under_stream(self):
        a = lc.simulate_lambda(lc.beta(1.5), 12, RngStream(9, 4).generator())
        b = lc.simulate_lambda(lc.beta(1.5), 12, RngStream(9, 4).generator())
        c = lc.simulate_lambda(lc.beta(1.5), 12, RngStream(9, 5).generator())
        assert a.to_json() == b.to_json()
        assert a.to_json() != c.to_json()


# ---------------------------------------------------------------------------
# merger-size samplers


class TestMergerSizeSamplers:
    def test_uniform_measure_jump_size_pmf(self):
        b = 7
        rng = RngStream(401, 0).generator()
        draws = lc._uniform_merger_sizes(np.full(20000, b), rng)
        probs = [b / ((b - 1.0) * k * (k - 1.0)) for k in range(2, b + 1)]
        counts = [int(np.sum(draws == k)) for k in range(2, b + 1)]
        rep = chi_square_gof(counts, probs)
        assert rep.p_value > 1e-3

    @pytest.mark.parametrize("b", [6, 50])
    def test_beta_jump_size_pmf(self, b):
        alpha = 1.5
        sampler = lc._BetaMergerSampler(alpha)
        rng = RngStream(402, b).generator()
        draws = sampler.sample(np.full(8000, b, dtype=np.int64), rng)
        m = lc.beta(alpha)
        weights = np.array(
            [math.comb(b, k) * lc.lambda_bk(m, b, k) for k in range(2, b + 1)]
        )
        probs = weights / weights.sum()
        counts = [int(np.sum(draws == k)) for k in range(2, b + 1)]
        rep = chi_square_gof(counts, probs)
        assert rep.p_value > 1e-3

    def test_atom_jump_size_small_bx(self):
        b, x = 40, 0.05
        rng = RngStream(403, 0).generator()
        draws = np.array([lc._atom_merger_size(b, x, rng) for _ in range(5000)])
        weights = np.array(
            [math.comb(b, k) * x**k * (1.0 - x) ** (b - k) for k in range(2, b + 1)]
        )
        probs = weights / weights.sum()
        counts = [int(np.sum(draws == k)) for k in range(2, b + 1)]
        rep = chi_square_gof(counts, probs)
        assert rep.p_value > 1e-3

    def test_atom_jump_size_large_bx(self):
        b, x = 4000, 0.15
        rng = RngStream(404, 0).generator()
        draws = np.array([lc._atom_merger_size(b, x, rng) for _ in range(400)])
        assert draws.min() >= 2
        sd = math.sqrt(b * x * (1.0 - x))
        assert abs(draws.mean() - b * x) < 4.0 * sd / math.sqrt(draws.size)

    def test_cached_jump_step_total_rate(self):
        for m in (lc.bolthausen_sznitman(), lc.beta(1.5)):
            lam, cum = lc._jump_chain_step(m, 9)
            assert lam == pytest.approx(lc.rate_summaries(m, 9)[0], rel=1e-9)
            assert cum[-1] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# block-count engine


class TestBlockCountEngine:
    def test_counts_start_at_n_and_decrease(self):
        rng = RngStream(501, 0).generator()
        counts = lc.block_counts(
            lc.bolthausen_sznitman(), 50, [0.0, 0.1, 0.5, 2.0, 50.0], 40, rng
        )
        assert counts.shape == (40, 5)
        assert np.all(counts[:, 0] == 50)
        assert np.all(np.diff(counts, axis=1) <= 0)
        assert np.all(counts[:, -1] == 1)

    def test_star_measure_two_levels(self):
        rng = RngStream(502, 0).generator()
        counts = lc.block_counts(lc.dirac(1.0), 9, [1e-4, 50.0], 200, rng)
        assert set(np.unique(counts)) <= {1, 9}
        assert np.all(counts[:, 1] == 1)

    def test_pair_measure_count_tracks_speed(self):
        rng = RngStream(503, 0).generator()
        t = 0.01
        counts = lc.block_counts(lc.kingman(), 20000, [t], 10, rng)
        ratio = counts[:, 0].mean() * t / 2.0
        assert 0.9 < ratio < 1.1

    def test_beta_count_tracks_shifted_speed(self):
        # starting from n blocks joins the descent from infinity at the
        # warm-up time u_n with integral of 1/psi from n upward
        m = lc.beta(1.5)
        n, t = 10**5, 0.02
        mech = lc._fast_psi(m)
        u_n = lc._reciprocal_tail_integral(m, mech, float(n), 1e-10)
        rng = RngStream(504, 0).generator()
        counts = lc.block_counts(m, n, [t], 8, rng)
        ratio = counts[:, 0].mean() / lc.speed_v(m, t + u_n)
        assert 0.9 < ratio < 1.1

    def test_generic_engine_agrees_with_fast_path(self):
        # a custom uniform density forces the scalar fallback engine
        flat = lc.custom(lambda x: 1.0, regular_variation_index=1.0)
        rng = RngStream(505, 0).generator()
        slow = lc.collision_count(flat, 40, 200, rng)
        fast = lc.collision_count(lc.bolthausen_sznitman(), 40, 200, rng)
        se = math.sqrt(slow.var() / 200 + fast.var() / 200)
        assert abs(slow.mean() - fast.mean()) < 4.0 * se


class TestCollisionCount:
    def test_pair_measure_always_n_minus_one(self):
        rng = RngStream(601, 0).generator()
        ev = lc.collision_count(lc.kingman(), 50, 30, rng)
        assert np.all(ev == 49)

    def test_star_measure_single_collision(self):
        rng = RngStream(602, 0).generator()
        ev = lc.collision_count(lc.dirac(1.0), 50, 30, rng)
        assert np.all(ev == 1)

    def test_beta_linear_growth(self):
        rng = RngStream(603, 0).generator()
        ev = lc.collision_count(lc.beta(1.5), 2000, 40, rng)
        assert 0.45 < ev.mean() / 2000 < 0.60

    def test_uniform_log_correction(self):
        rng = RngStream(604, 0).generator()
        ev = lc.collision_count(lc.bolthausen_sznitman(), 3000, 60, rng)
        r = ev.mean() * math.log(3000) / 3000
        assert 1.0 < r < 1.5


# ---------------------------------------------------------------------------
# first-coagulation observables


class TestFirstCoagulation:
    def test_uniform_measure_time_is_exponential(self):
        rng = RngStream(701, 0).generator()
        T, _ = lc.first_coagulation_observables(
            lc.bolthausen_sznitman(), 2000, 2000, rng
        )
        rep = ks_one_sample(T, lambda x: 1.0 - np.exp(-np.asarray(x)))
        assert rep.p_value > 1e-3

    def test_uniform_measure_fraction_near_uniform(self):
        # the estimated fraction carries a finite-block-count bias, so the
        # law is matched only within a tolerance band
        rng = RngStream(702, 0).generator()
        _, F = lc.first_coagulation_observables(
            lc.bolthausen_sznitman(), 2000, 2000, rng
        )
        assert np.all((F > 0.0) & (F <= 1.0))
        ec = np.sort(F)
        gap = np.max(np.abs(ec - np.arange(1, ec.size + 1) / ec.size))
        assert gap < 0.2
        assert 0.50 < F.mean() < 0.65

    def test_beta_observables(self):
        rng = RngStream(703, 0).generator()
        T, F = lc.first_coagulation_observables(lc.beta(1.2), 2000, 1500, rng)
        rep = ks_one_sample(T, lambda x: 1.0 - np.exp(-np.asarray(x)))
        assert rep.p_value > 1e-3
        cdf = lambda x: special.betainc(0.8, 1.2, np.clip(x, 0.0, 1.0))
        ec = np.sort(F)
        gap = np.max(np.abs(cdf(ec) - np.arange(1, ec.size + 1) / ec.size))
        assert gap < 0.3

    def test_rejects_mass_at_zero(self):
        rng = RngStream(704, 0).generator()
        with pytest.raises(ValueError):
            lc.first_coagulation_observables(lc.kingman(), 2000, 10, rng)
        with pytest.raises(ValueError):
            lc.first_coagulation_observables(
                lc.mix([(lc.kingman(), 0.5), (lc.dirac(0.3), 0.5)]), 2000, 10, rng
            )

    def test_rejects_small_start(self):
        rng = RngStream(705, 0).generator()
        with pytest.raises(ValueError):
            lc.first_coagulation_observables(lc.bolthausen_sznitman(), 500, 10, rng)


# ---------------------------------------------------------------------------
# measure-driven construction


class TestPoissonConstruction:
    def test_cutoff_validation(self):
        rng = RngStream(801, 0).generator()
        with pytest.raises(ValueError):
            lc.simulate_poisson_construction(
                lc.bolthausen_sznitman(), 5, rng, cutoff=0.0
            )
        with pytest.raises(ValueError):
            lc.simulate_poisson_construction(
                lc.bolthausen_sznitman(), 5, rng, cutoff=1.5
            )

    def test_uniform_triple_frequency(self):
        # small-merger truncation biases rates by O(cutoff), so allow that
        # on top of the Monte Carlo band
        rng = RngStream(802, 0).generator()
        reps = 3000
        hits = 0
        for _ in range(reps):
            h = lc.simulate_poisson_construction(
                lc.bolthausen_sznitman(), 3, rng, cutoff=1e-3
            )
            hits += len(h.events[0].merge) == 3
        se = math.sqrt(0.25 * 0.75 / reps)
        assert abs(hits / reps - 0.25) < 4.0 * se + 0.01

    def test_atom_only_measure_runs_to_absorption(self):
        rng = RngStream(803, 0).generator()
        for _ in range(50):
            h = lc.simulate_poisson_construction(lc.dirac(0.5), 4, rng)
            assert all(len(e.merge) >= 2 for e in h.events)
            assert h.num_blocks_at(1e12) == 1
