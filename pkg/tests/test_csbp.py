"""Tests for the continuous-state branching module."""

import math

import numpy as np
import pytest
from scipy import stats

import coalkit.csbp as cs
from coalkit import lambda_coalescent as lc
from coalkit.numerics import RngStream


@pytest.fixture(scope="module")
def mechanisms():
    return {
        "feller": cs.feller_mechanism(),
        "neveu": cs.neveu_mechanism(),
        "beta": cs.mechanism_from_lambda(lc.parse_measure("beta:1.5")),
        "bs": cs.mechanism_from_lambda(lc.parse_measure("bs")),
        "dirac": cs.mechanism_from_lambda(lc.parse_measure("dirac:0.3")),
    }


class TestMechanisms:
    def test_closed_form_values(self, mechanisms):
        assert mechanisms["feller"](3.0) == pytest.approx(4.5)
        assert mechanisms["neveu"](math.e) == pytest.approx(math.e)
        assert mechanisms["neveu"](0.0) == 0.0

    def test_nonvanishing_at_zero_rejected(self):
        with pytest.raises(ValueError):
            cs.custom_mechanism(lambda q: q + 1.0)

    def test_concave_shape_rejected(self):
        with pytest.raises(ValueError):
            cs.custom_mechanism(lambda q: math.sqrt(q) if q > 0 else 0.0)

    def test_bad_hint_rejected(self):
        with pytest.raises(ValueError):
            cs.custom_mechanism(lambda q: q * q, grey_hint="maybe")

    def test_lambda_mechanism_matches_module_psi(self, mechanisms):
        m = lc.parse_measure("beta:1.5")
        for q in (0.5, 2.0, 10.0, 100.0, 1e4):
            want = lc.psi(m, q)
            got = mechanisms["beta"](q)
            assert got == pytest.approx(want, rel=2e-6)


class TestFlow:
    def test_feller_closed_form(self, mechanisms):
        for t, lam in ((2.0, 2.0), (0.5, 1.0), (3.0, 10.0)):
            want = 2.0 * lam / (2.0 + lam * t)
            got = cs.u_t_lambda(mechanisms["feller"], t, lam)
            assert got == pytest.approx(want, abs=1e-6)

    def test_neveu_closed_form(self, mechanisms):
        got = cs.u_t_lambda(mechanisms["neveu"], math.log(2.0), 4.0)
        assert got == pytest.approx(2.0, abs=1e-6)
        got = cs.u_t_lambda(mechanisms["neveu"], 1.0, 10.0)
        assert got == pytest.approx(10.0 ** math.exp(-1.0), abs=1e-6)

    def test_fixed_points(self, mechanisms):
        assert cs.u_t_lambda(mechanisms["feller"], 5.0, 0.0) == 0.0
        assert cs.u_t_lambda(mechanisms["feller"], 0.0, 3.0) == 3.0

    def test_argument_validation(self, mechanisms):
        with pytest.raises(ValueError):
            cs.u_t_lambda(mechanisms["feller"], -1.0, 1.0)
        with pytest.raises(ValueError):
            cs.u_t_lambda(mechanisms["feller"], 1.0, -1.0)
        with pytest.raises(ValueError):
            cs.u_t_lambda(mechanisms["feller"], 1.0, 1.0, route="magic")

    def test_routes_agree(self, mechanisms):
        for name in ("feller", "beta", "bs"):
            mech = mechanisms[name]
            for t in (0.1, 1.0):
                for lam in (0.5, 5.0, 500.0):
                    a = cs.u_t_lambda(mech, t, lam, route="ode")
                    b = cs.u_t_lambda(mech, t, lam, route="integral")
                    assert a == pytest.approx(b, rel=1e-7, abs=1e-12)

    def test_integral_route_handles_huge_arguments(self, mechanisms):
        u = cs.u_t_lambda(mechanisms["beta"], 0.01, 1e8, route="integral")
        assert 0.0 < u < 1e8
        assert u == pytest.approx(17385.44, rel=1e-4)

    def test_flow_monotone(self, mechanisms):
        mech = mechanisms["beta"]
        lams = [0.5, 1.0, 4.0, 20.0]
        us = [cs.u_t_lambda(mech, 0.5, lam) for lam in lams]
        assert all(a < b for a, b in zip(us, us[1:]))
        ts = [0.1, 0.5, 1.0, 2.0]
        vs = [cs.u_t_lambda(mech, t, 5.0) for t in ts]
        assert all(a > b for a, b in zip(vs, vs[1:]))

    def test_semigroup_property(self, mechanisms):
        for name in ("feller", "dirac", "beta"):
            mech = mechanisms[name]
            lam, s, t = 3.0, 0.4, 0.7
            whole = cs.u_t_lambda(mech, s + t, lam)
            nested = cs.u_t_lambda(mech, t, cs.u_t_lambda(mech, s, lam))
            assert whole == pytest.approx(nested, rel=1e-8)


class TestGrey:
    def test_closed_form_verdicts(self, mechanisms):
        rep = cs.grey_test(mechanisms["feller"])
        assert rep.verdict == "extinct"
        assert rep.certificate == pytest.approx(2.0)
        rep = cs.grey_test(mechanisms["neveu"])
        assert rep.verdict == "not-extinct"
        assert math.isinf(rep.certificate)

    def test_lambda_mechanisms_follow_descent(self, mechanisms):
        rep = cs.grey_test(mechanisms["beta"])
        assert rep.verdict == "extinct"
        assert 0.0 < rep.certificate < math.inf
        assert lc.cdi_test(lc.parse_measure("beta:1.5")).verdict == "comes-down"
        for name in ("bs", "dirac"):
            assert cs.grey_test(mechanisms[name]).verdict == "not-extinct"

    def test_custom_needs_a_hint(self):
        bare = cs.custom_mechanism(lambda q: q * q)
        with pytest.raises(ValueError):
            cs.grey_test(bare)
        hinted = cs.custom_mechanism(
            lambda q: 0.25 * q * q, grey_hint="extinct", name="quartic"
        )
        rep = cs.grey_test(hinted)
        assert rep.verdict == "extinct"
        assert rep.certificate == pytest.approx(4.0, rel=1e-8)
        other = cs.custom_mechanism(lambda q: q, grey_hint="not-extinct")
        assert math.isinf(cs.grey_test(other).certificate)


class TestExtinctionProb:
    def test_feller_closed_form(self, mechanisms):
        for z, t in ((1.0, 2.0), (0.5, 1.0), (3.0, 0.5)):
            want = math.exp(-2.0 * z / t)
            got = cs.extinction_prob(mechanisms["feller"], z, t)
            assert got == pytest.approx(want, abs=1e-9)

    def test_generic_route_matches_feller(self):
        mech = cs.custom_mechanism(
            lambda q: 0.5 * q * q, grey_hint="extinct", name="feller-copy"
        )
        got = cs.extinction_prob(mech, 1.0, 2.0)
        assert got == pytest.approx(math.exp(-1.0), rel=1e-6)

    def test_monotone_in_time(self, mechanisms):
        ps = [
            cs.extinction_prob(mechanisms["beta"], 1.0, t)
            for t in (0.1, 0.3, 1.0, 3.0)
        ]
        assert all(a < b for a, b in zip(ps, ps[1:]))

    def test_small_mass_limit(self, mechanisms):
        # a vanishing initial mass dies out almost immediately
        assert cs.extinction_prob(mechanisms["feller"], 1e-10, 1.0) > 1.0 - 1e-9

    def test_validation(self, mechanisms):
        with pytest.raises(ValueError):
            cs.extinction_prob(mechanisms["feller"], -1.0, 1.0)
        with pytest.raises(ValueError):
            cs.extinction_prob(mechanisms["feller"], 1.0, 0.0)
        with pytest.raises(ValueError):
            cs.extinction_prob(mechanisms["neveu"], 1.0, 1.0)
        with pytest.raises(ValueError):
            cs.extinction_prob(mechanisms["bs"], 1.0, 1.0)


class TestFellerSimulation:
    def test_mean_mass_is_conserved(self):
        rng = RngStream(41, 0).generator()
        z = cs.feller_ensemble(1.0, 1e-3, 1.0, 10**4, rng)
        se = z.std(ddof=1) / math.sqrt(z.size)
        assert abs(z.mean() - 1.0) < 3 * se

    def test_extinct_fraction_tracks_the_speed(self):
        rng = RngStream(41, 1).generator()
        mech = cs.feller_mechanism()
        for t in (1.0, 2.0):
            z = cs.feller_ensemble(1.0, 1e-3, t, 10**4, rng)
            frac = float(np.mean(z == 0.0))
            want = cs.extinction_prob(mech, 1.0, t)
            assert want == pytest.approx(math.exp(-2.0 / t))
            se = math.sqrt(want * (1.0 - want) / z.size)
            # the Euler clamp inflates extinction by O(sqrt(dt))
            assert abs(frac - want) < 3 * se + 0.01

    def test_laplace_transform_matches_the_flow(self, mechanisms):
        rng = RngStream(41, 2).generator()
        z = cs.feller_ensemble(1.0, 1e-3, 1.0, 10**4, rng)
        emp = np.exp(-z)
        se = emp.std(ddof=1) / math.sqrt(z.size)
        want = math.exp(-cs.u_t_lambda(mechanisms["feller"], 1.0, 1.0))
        assert abs(emp.mean() - want) < 3 * se + 0.005

    def test_path_absorbs_and_reports(self):
        rng = RngStream(41, 3).generator()
        path = cs.feller_simulate(0.25, 1e-3, 20.0, rng)
        assert not math.isnan(path.extinction_time)
        after = path.masses[path.times >= path.extinction_time]
        assert np.all(after == 0.0)

    def test_csv_layout(self):
        path = cs.CsbpPath(
            times=np.array([0.0, 1.0]),
            masses=np.array([1.0, 0.5]),
            extinction_time=math.nan,
        )
        lines = path.to_csv().splitlines()
        assert lines[0] == "t,Z_t"
        assert lines[1] == "0,1"

    def test_path_validation(self):
        with pytest.raises(ValueError):
            cs.CsbpPath(
                times=np.array([0.0, 1.0]),
                masses=np.array([1.0, -0.5]),
                extinction_time=math.nan,
            )
        with pytest.raises(ValueError):
            cs.CsbpPath(
                times=np.array([0.0, 1.0, 2.0]),
                masses=np.array([1.0, 0.0, 0.5]),
                extinction_time=1.0,
            )

    def test_argument_validation(self):
        rng = RngStream(41, 4).generator()
        with pytest.raises(ValueError):
            cs.feller_simulate(0.0, 1e-3, 1.0, rng)
        with pytest.raises(ValueError):
            cs.feller_simulate(1.0, 0.0, 1.0, rng)
        with pytest.raises(ValueError):
            cs.feller_ensemble(1.0, 1e-3, 0.0, 10, rng)


class TestLamperti:
    def test_measure_validation(self):
        rng = RngStream(42, 0).generator()
        with pytest.raises(ValueError):
            cs.lamperti_csbp(lc.parse_measure("kingman"), 1.0, 1.0, rng)
        with pytest.raises(ValueError):
            cs.lamperti_csbp(lc.parse_measure("beta:1.5"), 1.0, 1.0, rng)
        with pytest.raises(ValueError):
            cs.lamperti_csbp(lc.parse_measure("dirac:0.3"), 0.0, 1.0, rng)
        with pytest.raises(ValueError):
            cs.lamperti_csbp(lc.parse_measure("dirac:0.3"), 1.0, -1.0, rng)

    def test_jobless_path_is_exponential_decay(self):
        # an atom with a vanishing rate leaves only the compensator drift
        rng = RngStream(42, 1).generator()
        m = lc.LambdaMeasure(atoms=((0.5, 1e-9),))
        path = cs.lamperti_csbp(m, 1.0, 1.0, rng)
        drift = (1e-9 / 0.25) * 0.5
        assert path.masses[-1] == pytest.approx(math.exp(-drift), rel=1e-12)
        assert path.times[-1] == 1.0

    def test_path_shape(self):
        rng = RngStream(42, 2).generator()
        m = lc.parse_measure("dirac:0.3")
        path = cs.lamperti_csbp(m, 1.0, 2.0, rng)
        assert path.times[0] == 0.0
        assert path.masses[0] == 1.0
        assert path.times[-1] == 2.0
        assert np.all(np.diff(path.times) > 0)
        assert path.masses.min() > 0.0

    @pytest.mark.slow
    def test_branching_property(self):
        rng = RngStream(42, 3).generator()
        m = lc.parse_measure("dirac:0.3")
        reps = 4000
        split = np.array(
            [
                cs.lamperti_csbp(m, 1.0, 1.0, rng).masses[-1]
                + cs.lamperti_csbp(m, 1.0, 1.0, rng).masses[-1]
                for _ in range(reps)
            ]
        )
        joint = np.array(
            [cs.lamperti_csbp(m, 2.0, 1.0, rng).masses[-1] for _ in range(reps)]
        )
        assert stats.ks_2samp(split, joint).pvalue > 1e-3

    def test_laplace_matches_the_flow(self, mechanisms):
        rng = RngStream(42, 4).generator()
        m = lc.parse_measure("dirac:0.3")
        vals = np.array(
            [cs.lamperti_csbp(m, 1.0, 0.5, rng).masses[-1] for _ in range(4000)]
        )
        emp = np.exp(-2.0 * vals)
        se = emp.std(ddof=1) / math.sqrt(vals.size)
        want = math.exp(-cs.u_t_lambda(mechanisms["dirac"], 0.5, 2.0))
        assert abs(emp.mean() - want) < 3 * se


class TestSpeedBridge:
    @pytest.mark.slow
    def test_flow_limit_recovers_the_descent_speed(self, mechanisms):
        # at lam = 1e8 the flow still needs a warm-up time of order
        # 1.3e-4 to fall from lam to the speed curve, so the comparison
        # is made at times where that shift is inside the tolerance
        m = lc.parse_measure("beta:1.5")
        for t in (0.3, 0.5, 1.0):
            v = lc.speed_v(m, t)
            u = cs.u_t_lambda(mechanisms["beta"], t, 1e8, route="integral")
            assert abs(u - v) / v < 1e-3
