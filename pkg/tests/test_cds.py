"""CDS analytics: affine survival, book value, fair spread, gains process."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import assert_within, flat_hazard_params, make_params
from rccr_engine import cds
from rccr_engine.model import IntensityFn, IntensityMap
from rccr_engine.paths import ScenarioPath, iter_path_chunks


class TestAffineSurvival:
    def test_zero_horizon_is_one(self):
        p = make_params()
        assert cds.affine_survival(p, 0.3, 0.3, 0.08) == pytest.approx(1.0)

    def test_frozen_factor_is_exponential(self):
        p = flat_hazard_params(0.07)
        for u in (0.25, 0.5, 1.0):
            s = float(cds.affine_survival(p, 0.0, u, 0.07))
            assert s == pytest.approx(math.exp(-0.07 * u), rel=1e-12)

    def test_deterministic_mean_reversion_limit(self):
        # sigma=0, kappa>0: survival equals the exponential of the ODE integral
        p = make_params(sigma_y=0.0, kappa_y=2.0, mean_y=0.03, y0=0.08)
        for u in (0.3, 1.0):
            grid = np.linspace(0.0, u, 20001)
            y_path = p.mean_y + (p.y0 - p.mean_y) * np.exp(-p.kappa_y * grid)
            expected = math.exp(-np.trapezoid(y_path, grid))
            assert float(cds.affine_survival(p, 0.0, u, p.y0)) == pytest.approx(
                expected, rel=1e-8
            )

    def test_decreasing_in_horizon_and_level(self):
        p = make_params()
        h = cds.hazard_model(p)
        taus = np.linspace(0.01, 1.0, 25)
        s = h.survival(taus, 0.05)
        assert (np.diff(s) < 0).all()
        ys = np.linspace(0.01, 0.2, 25)
        s = h.survival(0.7, ys)
        assert (np.diff(s) < 0).all()

    def test_against_monte_carlo(self, case1_params, fine_grid):
        exact = float(cds.affine_survival(case1_params, 0.0, 1.0, case1_params.y0))
        tot, sq, n = 0.0, 0.0, 0
        for ch in iter_path_chunks(case1_params, fine_grid, 50_000, seed=31, mode="tilde"):
            v = np.exp(-ch.lam_r_full_int)
            tot += v.sum()
            sq += (v**2).sum()
            n += ch.n_paths
        mean = tot / n
        se = math.sqrt((sq / n - mean**2) / n)
        assert_within(mean, exact, 3 * se, "affine survival vs MC")

    def test_requires_ordered_times(self):
        with pytest.raises(ValueError):
            cds.affine_survival(make_params(), 0.5, 0.4, 0.05)


class TestAffineCoefficientProperties:
    @given(
        kappa=st.floats(min_value=0.0, max_value=4.0),
        mean=st.floats(min_value=0.0, max_value=0.3),
        sigma=st.floats(min_value=0.0, max_value=0.6),
        y=st.floats(min_value=0.0, max_value=0.5),
        tau=st.floats(min_value=1e-6, max_value=2.0),
    )
    @settings(max_examples=120, deadline=None)
    def test_survival_in_unit_interval_and_density_nonnegative(
        self, kappa, mean, sigma, y, tau
    ):
        h = cds.CirAffineHazard(kappa=kappa, mean=mean, sigma=sigma)
        s = float(h.survival(tau, y))
        assert 0.0 < s <= 1.0 + 1e-12
        assert float(h.density(tau, y)) >= -1e-12
        # longer horizons can only lower survival
        assert float(h.survival(2.0 * tau, y)) <= s + 1e-12


class TestCdsValue:
    def test_terminal_value_zero(self):
        curve = cds.make_curve(make_params().with_zeta(0.05))
        assert float(curve.value(1.0, 0.08)[0]) == 0.0

    def test_flat_hazard_protection_leg(self):
        # zeta = 0, r = 0, unit loss given default: g = 1 - e^{-c (T - t)}
        p = flat_hazard_params(0.06).with_zeta(0.0)
        # zeta=0 fails the positivity gate of validate but is a legal curve input
        curve = cds.CdsCurve(hazard=cds.hazard_model(p), rate=0.0, delta_cds=1.0,
                             zeta=0.0, maturity=1.0)
        for t in (0.0, 0.4):
            assert float(curve.value(t, 0.06)[0]) == pytest.approx(
                1.0 - math.exp(-0.06 * (1.0 - t)), rel=1e-9
            )

    def test_dvalue_dy_nonnegative_for_protection_only(self):
        p = make_params()
        curve = cds.CdsCurve(hazard=cds.hazard_model(p), rate=0.0, delta_cds=1.0,
                             zeta=0.0, maturity=1.0)
        ys = np.linspace(0.005, 0.2, 9)
        assert (curve.dvalue_dy(0.3, ys) >= 0).all()

    def test_fair_spread_flat_hazard_equals_rate(self):
        p = flat_hazard_params(0.06, r=0.0)
        assert cds.fair_spread(p) == pytest.approx(0.06, abs=1e-10)

    def test_fair_spread_zero_recovery_payment(self):
        p = flat_hazard_params(0.06, delta_cds=1e-12)
        assert cds.fair_spread(p) == pytest.approx(0.0, abs=1e-10)

    def test_fair_spread_zeroes_initial_value(self, case1_params):
        zeta = cds.fair_spread(case1_params)
        curve = cds.make_curve(case1_params.with_zeta(zeta))
        assert abs(float(curve.value(0.0, case1_params.y0)[0])) < 1e-10

    def test_both_legs_against_monte_carlo(self, case1_params, fine_grid):
        # independent check of the fair-spread curve: E[discounted cashflows] = 0
        p = case1_params.with_zeta(cds.fair_spread(case1_params))
        curve = cds.make_curve(p)
        vals = []
        for ch in iter_path_chunks(p, fine_grid, 50_000, seed=37, mode="tilde"):
            s = cds.gains_at_nodes(curve, ch.times, ch.y, ch.tau, [0, fine_grid.n_steps])
            vals.append(s[:, 1] - s[:, 0])
        vals = np.concatenate(vals)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert_within(vals.mean(), 0.0, 3 * se, "CDS gains martingale")


class TestPdeResidual:
    def test_residual_small_at_interior_points(self, case1_params):
        p = case1_params.with_zeta(0.05)
        curve = cds.make_curve(p)
        rng = np.random.default_rng(3)
        ts = rng.uniform(0.05, 0.9, size=20)
        ys = rng.uniform(0.01, 0.15, size=20)
        for t, y in zip(ts, ys):
            res = float(cds.pde_residual(p, curve, float(t), np.array([y]))[0])
            assert abs(res) < 1e-5, f"residual {res:.2e} at (t={t:.3f}, y={y:.4f})"


class TestGains:
    def _frozen_path(self, y_level: float, tau: float, n: int = 10) -> ScenarioPath:
        times = np.linspace(0.0, 1.0, n + 1)
        return ScenarioPath(
            times=times,
            x=np.full(n + 1, 100.0),
            y=np.full(n + 1, y_level),
            loss=np.zeros(n + 1),
            claim_times=np.empty(0),
            claim_sizes=np.empty(0),
            tau_r=tau,
            tilde=False,
        )

    def test_frozen_no_default_increment(self):
        p = flat_hazard_params(0.06, r=0.0).with_zeta(0.02)
        curve = cds.make_curve(p)
        path = self._frozen_path(0.06, math.inf)
        t1, t2 = path.times[2], path.times[7]
        got = cds.gains_increment(curve, path, 2, 7)
        expected = (
            float(curve.value(t2, 0.06)[0]) - float(curve.value(t1, 0.06)[0])
            - 0.02 * (t2 - t1)
        )
        assert got == pytest.approx(expected, abs=1e-12)

    def test_full_interval_no_default(self):
        p = flat_hazard_params(0.06, r=0.0).with_zeta(0.03)
        curve = cds.make_curve(p)
        path = self._frozen_path(0.06, math.inf)
        got = cds.gains_increment(curve, path, 0, 10)
        expected = -float(curve.value(0.0, 0.06)[0]) - 0.03 * 1.0
        assert got == pytest.approx(expected, abs=1e-12)

    def test_default_payment_included(self):
        p = flat_hazard_params(0.06, r=0.0).with_zeta(0.03)
        curve = cds.make_curve(p)
        tau = 0.55
        path = self._frozen_path(0.06, tau)
        got = cds.gains_increment(curve, path, 0, 10)
        expected = -float(curve.value(0.0, 0.06)[0]) - 0.03 * tau + 1.0
        assert got == pytest.approx(expected, abs=1e-12)

    def test_premium_integral_discounted(self):
        times = np.linspace(0.0, 1.0, 521)
        r = 0.04
        out = cds.premium_leg_integral(times, np.array([math.inf]), r)[0]
        exact = (1.0 - math.exp(-r)) / r
        assert out[-1] == pytest.approx(exact, abs=1e-6)
        tau = 0.437
        out = cds.premium_leg_integral(times, np.array([tau]), r)[0]
        exact = (1.0 - math.exp(-r * tau)) / r
        assert out[-1] == pytest.approx(exact, abs=1e-6)

    def test_requires_ordered_nodes(self):
        p = flat_hazard_params(0.06).with_zeta(0.03)
        curve = cds.make_curve(p)
        with pytest.raises(ValueError):
            cds.gains_increment(curve, self._frozen_path(0.06, math.inf), 5, 5)


class TestConstantIntensityMapCurve:
    def test_constant_map_overrides_factor_dynamics(self):
        p = make_params(
            intensity=IntensityMap(default=IntensityFn.constant(0.08)),
        )
        h = cds.hazard_model(p)
        assert isinstance(h, cds.FlatHazard)
        assert float(h.survival(1.0, 0.05)) == pytest.approx(math.exp(-0.08))
        assert cds.fair_spread(p) == pytest.approx(0.08, abs=1e-10)
