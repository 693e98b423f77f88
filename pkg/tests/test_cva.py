"""CVA engine: oracle agreement, martingale identities, sensitivities, sweeps."""

import math
import warnings

import numpy as np
import pytest
from scipy.integrate import simpson

from conftest import assert_within, flat_hazard_params, make_params
from rccr_engine import cds, cva
from rccr_engine.aggregate import build_loss_value_table, discretize_claims, panjer_aggregate
from rccr_engine.model import IntensityFn, IntensityMap, effective_claim_law
from rccr_engine.paths import SimGrid, iter_path_chunks


def flat_hazard_cva_oracle(params, c: float, t: float, l: float, n_s: int = 129) -> float:
    """Deterministic double-Panjer + quadrature value of the adjustment factor.

    f(t, l) = int_t^T e^{-r(s-t)} P(t, s, l) c e^{-c (s-t)} ds with
    P(t, s, l) = E[v_post(s, l + A_pre(s-t))].
    """
    claims = discretize_claims(effective_claim_law(params.claim, params.payoff), 0.03125)
    t_grid = np.linspace(0.0, params.maturity, 105)
    table = build_loss_value_table(
        params, params.loss_intensity_post, t_grid, step=0.03125
    )
    s_nodes = np.linspace(t, params.maturity, n_s)
    vals = np.empty(n_s)
    for i, s in enumerate(s_nodes):
        agg = panjer_aggregate(claims, params.loss_intensity_pre, s - t)
        offsets = l + 0.03125 * np.arange(len(agg.pmf))
        v_vals = table.value(s, offsets)
        p_val = float(agg.pmf @ v_vals)
        vals[i] = math.exp(-params.r * (s - t)) * p_val * c * math.exp(-c * (s - t))
    return float(simpson(vals, x=s_nodes))


class TestBasics:
    def test_terminal_value_zero(self, case1_estimator):
        est = case1_estimator
        f = est.f_value(1.0, np.array([55.0]), np.array([100.0]), np.array([0.05]))
        assert float(f[0]) == 0.0
        mc = est.cva_at(1.0, 55.0, 100.0, 0.05, n_paths=10, seed=1)
        assert mc.value == 0.0

    def test_zero_hazard_zero_adjustment(self, coarse_grid):
        p = make_params(intensity=IntensityMap(default=IntensityFn.constant(0.0)))
        est = cva.make_estimator(p, coarse_grid)
        mc = est.cva_at(0.0, 0.0, p.x0, p.y0, n_paths=2000, seed=1)
        assert mc.value == pytest.approx(0.0, abs=1e-14)
        f = est.f_value(0.3, np.array([10.0]), np.array([100.0]), np.array([0.05]))
        assert float(f[0]) == pytest.approx(0.0, abs=1e-12)

    def test_bounds(self, case1_estimator):
        est = case1_estimator
        rng = np.random.default_rng(0)
        t = rng.uniform(0, 1, 20)
        l = rng.uniform(0, 300, 20)
        y = rng.uniform(0.005, 0.2, 20)
        for ti, li, yi in zip(t, l, y):
            f = float(est.f_value(float(ti), np.array([li]), np.array([100.0]),
                                  np.array([yi]))[0])
            assert 0.0 <= f <= est.params.payoff.cap

    def test_monotone_in_hazard_level(self, case1_estimator):
        est = case1_estimator
        ys = np.linspace(0.01, 0.2, 9)
        f = est.f_value(0.4, np.full(9, 50.0), np.full(9, 100.0), ys)
        assert (np.diff(f) > 0).all()


@pytest.fixture(scope="module")
def flat_oracle_setup():
    c = 0.05
    p = flat_hazard_params(c)
    grid = SimGrid.for_horizon(1.0, 520, 26)
    est = cva.make_estimator(p, grid, step=0.03125)
    return p, c, est


class TestFlatHazardOracle:
    # states at rebalancing dates, where the surface carries no t-interpolation
    DATE_STATES = ((0.0, 0.0), (6 / 26, 20.0), (13 / 26, 55.0),
                   (19 / 26, 80.0), (8 / 26, 100.0))

    def test_deterministic_surface_matches_oracle(self, flat_oracle_setup):
        p, c, est = flat_oracle_setup
        for t, l in self.DATE_STATES:
            oracle = flat_hazard_cva_oracle(p, c, t, l)
            got = float(est.det_surface.value(t, np.array([l]), np.array([c]))[0])
            assert abs(got - oracle) < 2e-4, f"state ({t},{l}): {got} vs {oracle}"

    def test_between_date_interpolation_stays_close(self, flat_oracle_setup):
        p, c, est = flat_oracle_setup
        oracle = flat_hazard_cva_oracle(p, c, 0.25, 20.0)
        got = float(est.det_surface.value(0.25, np.array([20.0]), np.array([c]))[0])
        assert abs(got - oracle) < 0.02 * max(oracle, 0.1)

    def test_monte_carlo_matches_oracle(self, flat_oracle_setup):
        p, c, est = flat_oracle_setup
        for t, l in self.DATE_STATES:
            oracle = flat_hazard_cva_oracle(p, c, t, l)
            mc = est.cva_at(t, l, p.x0, c, n_paths=30_000, seed=101)
            assert_within(mc.value, oracle, mc.halfwidth(3.0), f"MC vs oracle at ({t},{l})")


class TestCvaPath:
    def test_zero_after_default_and_common_start(self, case1_estimator, case1_batch_full):
        cva_dates = case1_estimator.cva_path(case1_batch_full)
        batch = case1_batch_full
        dates = batch.grid.rebalance_times
        dead = batch.tau[:, None] <= dates[None, :]
        assert np.all(cva_dates[dead] == 0.0)
        assert np.allclose(cva_dates[:, 0], cva_dates[0, 0])
        assert cva_dates[0, 0] == pytest.approx(case1_estimator.cva0().value, rel=1e-12)

    def test_credit_loss_martingale(self, case1_params, case1_estimator, fine_grid):
        # discounted credit loss accumulates to the initial reserve on average
        p = case1_params
        est = case1_estimator
        cva0 = est.cva0().value
        samples = []
        for ch in iter_path_chunks(p, fine_grid, 50_000, seed=77, mode="full"):
            cl = np.zeros(ch.n_paths)
            d = ch.defaulted
            if d.any():
                v = est.post_value(ch.tau[d], ch.l_at_default[d], ch.x_at_default[d])
                cl[d] = p.delta_r * np.exp(-p.r * ch.tau[d]) * np.asarray(v)
            samples.append(cl)
        samples = np.concatenate(samples) - cva0
        se = samples.std(ddof=1) / math.sqrt(len(samples))
        assert_within(samples.mean(), 0.0, 3 * se, "credit-loss martingale")


class TestPaymentAtDefaultIdentity:
    def test_payment_at_default_equals_terminal_claim(self, case1_params, fine_grid,
                                                      case1_estimator):
        # shared full-mode paths: e^{-r tau} V_tau vs H_T e^{-rT} payoff(L_T)
        p = case1_params
        est = case1_estimator
        lhs_parts, rhs_parts = [], []
        for ch in iter_path_chunks(p, fine_grid, 50_000, seed=78, mode="full"):
            d = ch.defaulted
            lhs = np.zeros(ch.n_paths)
            if d.any():
                v = est.post_value(ch.tau[d], ch.l_at_default[d], ch.x_at_default[d])
                lhs[d] = np.exp(-p.r * ch.tau[d]) * np.asarray(v)
            rhs = np.where(d, math.exp(-p.r * p.maturity)
                           * p.payoff.evaluate(ch.loss[:, -1]), 0.0)
            lhs_parts.append(lhs)
            rhs_parts.append(rhs)
        diff = np.concatenate(lhs_parts) - np.concatenate(rhs_parts)
        se = diff.std(ddof=1) / math.sqrt(len(diff))
        assert_within(diff.mean(), 0.0, 3 * se, "payment-at-default identity")


class TestSensitivities:
    def test_flat_map_has_zero_y_sensitivity(self, coarse_grid):
        p = make_params(intensity=IntensityMap(default=IntensityFn.constant(0.05)))
        est = cva.make_estimator(p, coarse_grid)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sens = est.cva_sensitivities(0.0, 0.0, p.x0, p.y0, n_paths=4000, seed=11)
        assert abs(sens["df_dy"].value) <= max(3 * sens["df_dy"].stderr, 1e-10)

    def test_identity_map_matches_flat_oracle_derivative(self):
        c = 0.05
        p = flat_hazard_params(c)
        grid = SimGrid.for_horizon(1.0, 260, 26)
        est = cva.make_estimator(p, grid)
        eps = 1e-5
        oracle = (
            flat_hazard_cva_oracle(p, c + eps, 0.0, 0.0, n_s=65)
            - flat_hazard_cva_oracle(p, c - eps, 0.0, 0.0, n_s=65)
        ) / (2 * eps)
        sens = est.cva_sensitivities(0.0, 0.0, p.x0, c, n_paths=30_000, seed=13)
        assert_within(sens["df_dy"].value, oracle, sens["df_dy"].halfwidth(3.0),
                      "hazard-level sensitivity")

    def test_surface_dy_nonnegative(self, case1_estimator):
        est = case1_estimator
        for t, l in ((0.1, 5.0), (0.5, 60.0), (0.8, 90.0)):
            d = float(est.f_dy(t, np.array([l]), np.array([100.0]), np.array([0.05]))[0])
            assert d >= 0.0

    def test_noisy_estimate_warns(self, case1_params, coarse_grid):
        # a tiny loss-factor bump rarely flips a claim count, so the paired
        # difference is dominated by a handful of outliers
        est = cva.make_estimator(case1_params, coarse_grid)
        with pytest.warns(RuntimeWarning):
            est.cva_sensitivities(0.0, 0.0, case1_params.x0, case1_params.y0,
                                  n_paths=400, seed=3, bump_x=1e-3)


class TestGeneralMode:
    def test_tower_anchor(self):
        # no contagion, no correlation: CVA0 factorizes exactly
        from rccr_engine.presets import sweep_base

        p = sweep_base("rho")  # gamma = 0, rho = 0 base
        grid = SimGrid.for_horizon(1.0, 260, 26)
        tot, n = 0.0, 0
        for ch in iter_path_chunks(p, grid, 100_000, seed=42, mode="tilde"):
            tot += p.payoff.evaluate(ch.loss[:, -1]).sum()
            n += ch.n_paths
        anchor = (tot / n) * (1.0 - float(cds.affine_survival(p, 0.0, 1.0, p.y0)))
        est = cva.make_estimator(p, grid, seed=7, regression_paths=10_000)
        mc = est.cva_at(0.0, 0.0, p.x0, p.y0, n_paths=20_000, seed=3, n_steps=260)
        assert_within(mc.value, anchor, mc.halfwidth(3.0) + 0.01, "tower anchor")

    def test_deterministic_method_rejected(self):
        from rccr_engine.presets import case3

        with pytest.raises(ValueError):
            cva.make_estimator(case3(), SimGrid.for_horizon(1.0, 130, 26),
                               f_method="deterministic")


class TestSweeps:
    def test_gamma_sweep_pathwise_monotone(self):
        from rccr_engine.presets import sweep_base

        p = sweep_base("gamma")
        grid = SimGrid.for_horizon(1.0, 130, 26)
        res = cva.wrong_way_sweep(p, grid, "gamma", 0.0, 1.0, n_points=4,
                                  n_paths=4000, seed=5)
        assert res.values[0] > 0.0
        # coupled claim construction: increments are nonnegative path by path
        assert (np.diff(res.samples, axis=0) >= -1e-12).all()
        assert res.monotone_within(3.0)

    def test_rho_sweep_monotone_in_mean(self):
        from rccr_engine.presets import sweep_base

        p = sweep_base("rho")
        grid = SimGrid.for_horizon(1.0, 130, 26)
        res = cva.wrong_way_sweep(p, grid, "rho", 0.0, 1.0, n_points=4,
                                  n_paths=20_000, seed=5)
        assert res.monotone_within(3.0)
        assert res.total_increase > 0.0

    def test_rejects_unknown_parameter(self, case1_params, coarse_grid):
        with pytest.raises(ValueError):
            cva.wrong_way_sweep(case1_params, coarse_grid, "sigma")


class TestReproducibility:
    def test_cva_at_deterministic(self, case1_estimator):
        a = case1_estimator.cva_at(0.0, 0.0, 100.0, 0.05, n_paths=2000, seed=9)
        b = case1_estimator.cva_at(0.0, 0.0, 100.0, 0.05, n_paths=2000, seed=9)
        assert a.value == b.value and a.stderr == b.stderr
