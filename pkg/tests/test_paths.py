"""Path engine: law checks, martingale compensators, coupling, determinism."""

import math

import numpy as np
import pytest

from conftest import assert_within, flat_hazard_params, make_params
from rccr_engine import cds
from rccr_engine.model import IntensityFn, IntensityMap, PayoffSpec
from rccr_engine.paths import (
    SimGrid,
    SimulationError,
    default_probability_mc,
    iter_path_chunks,
    simulate_paths,
)


class TestSimGrid:
    def test_basic_properties(self):
        grid = SimGrid.for_horizon(1.0, 520, 26)
        assert grid.dt == pytest.approx(1 / 520)
        assert len(grid.times) == 521
        assert len(grid.rebalance_times) == 27
        assert grid.rebalance_times[1] == pytest.approx(1 / 26)

    def test_stride_must_divide(self):
        with pytest.raises(ValueError):
            SimGrid(n_steps=10, dt=0.1, rebalance_stride=3)
        with pytest.raises(ValueError):
            SimGrid.for_horizon(1.0, 100, 26)

    def test_positivity(self):
        with pytest.raises(ValueError):
            SimGrid(n_steps=0, dt=0.1)


class TestLawChecks:
    def test_zero_hazard_never_defaults(self, coarse_grid):
        p = make_params(intensity=IntensityMap(default=IntensityFn.constant(0.0)))
        batch = simulate_paths(p, coarse_grid, 500, seed=1)
        assert not np.isfinite(batch.tau).any()

    def test_case1_mean_terminal_loss(self, case1_params, coarse_grid):
        # contagion-free aggregate is compound Poisson with mean x0 * T * m1
        tot, sq, n = 0.0, 0.0, 0
        for ch in iter_path_chunks(case1_params, coarse_grid, 100_000, seed=2, mode="tilde"):
            lt = ch.loss[:, -1]
            tot += lt.sum()
            sq += (lt**2).sum()
            n += ch.n_paths
        mean = tot / n
        se = math.sqrt((sq / n - mean**2) / n)
        assert_within(mean, 100.0, 3 * se, "mean contagion-free terminal loss")

    def test_survival_fraction_matches_affine(self, case1_params, coarse_grid):
        exact = float(cds.affine_survival(case1_params, 0.0, 1.0, case1_params.y0))
        est = default_probability_mc(case1_params, coarse_grid, 100_000, seed=3, t=1.0)
        assert_within(1.0 - est.value, exact, est.halfwidth(3.0), "survival fraction")

    def test_default_probability_at_zero(self, case1_params, coarse_grid):
        est = default_probability_mc(case1_params, coarse_grid, 2000, seed=4, t=0.0)
        assert est.value == 0.0

    def test_flat_hazard_default_probability(self, coarse_grid):
        p = flat_hazard_params(0.3)
        est = default_probability_mc(p, coarse_grid, 50_000, seed=5, t=0.7)
        assert_within(est.value, 1.0 - math.exp(-0.3 * 0.7), est.halfwidth(3.0),
                      "flat-hazard default probability")


class TestMartingales:
    def test_default_indicator_compensator(self, case1_batch_full):
        # H_T - int_0^{T ^ tau} lam(Y) ds has mean zero
        samples = case1_batch_full.defaulted.astype(float) - case1_batch_full.lam_r_stopped_int
        se = samples.std(ddof=1) / math.sqrt(len(samples))
        assert_within(samples.mean(), 0.0, 3 * se, "default compensator")

    def test_claim_count_compensator(self, case1_batch_full):
        samples = case1_batch_full.n_claims - case1_batch_full.lam_l_int
        se = samples.std(ddof=1) / math.sqrt(len(samples))
        assert_within(samples.mean(), 0.0, 3 * se, "claim-count compensator")


@pytest.fixture(scope="module")
def pair():
    # strong hazard and a diffusing loss factor exercise the jump coupling
    p = make_params(kappa_x=1.0, sigma_x=0.2, rho=0.3,
                    y0=1.0, mean_y=1.0, sigma_y=0.4)
    grid = SimGrid.for_horizon(1.0, 130, 26)
    full = simulate_paths(p, grid, 400, seed=9, mode="full")
    tilde = simulate_paths(p, grid, 400, seed=9, mode="tilde")
    return full, tilde


class TestCoupling:
    def test_default_layer_identical(self, pair):
        full, tilde = pair
        assert np.array_equal(full.y, tilde.y)
        assert np.array_equal(full.tau, tilde.tau)
        assert full.defaulted.sum() > 100

    def test_pre_default_bitwise_coincidence(self, pair):
        full, tilde = pair
        for i in range(len(full)):
            pre = full.times < full.tau[i]
            assert np.array_equal(full.x[i][pre], tilde.x[i][pre])
            assert np.array_equal(full.loss[i][pre], tilde.loss[i][pre])
            m = min(len(full.claim_times[i]), len(tilde.claim_times[i]))
            keep = full.claim_times[i][:m] < full.tau[i]
            assert np.array_equal(full.claim_times[i][:m][keep],
                                  tilde.claim_times[i][:m][keep])
            assert np.array_equal(full.claim_sizes[i][:m][keep],
                                  tilde.claim_sizes[i][:m][keep])

    def test_contagion_jump_applied_after_default(self, pair):
        full, tilde = pair
        moved = 0
        for i in np.flatnonzero(full.defaulted):
            post = full.times >= full.tau[i]
            if post.sum() > 1:
                moved += int(not np.allclose(full.x[i][post], tilde.x[i][post]))
        assert moved > 0.9 * full.defaulted.sum()


class TestDeterminism:
    def test_bit_identical_reruns(self, case1_params, coarse_grid):
        a = simulate_paths(case1_params, coarse_grid, 300, seed=17)
        b = simulate_paths(case1_params, coarse_grid, 300, seed=17)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.loss, b.loss)
        assert np.array_equal(a.tau, b.tau)
        for i in range(len(a)):
            assert np.array_equal(a.claim_times[i], b.claim_times[i])

    def test_seed_changes_results(self, case1_params, coarse_grid):
        a = simulate_paths(case1_params, coarse_grid, 100, seed=17)
        b = simulate_paths(case1_params, coarse_grid, 100, seed=18)
        assert not np.array_equal(a.loss, b.loss)


class TestEngineGuards:
    def test_intensity_ceiling_violation(self, coarse_grid):
        p = make_params(
            x0=200.0,
            intensity=IntensityMap(loss=IntensityFn.identity(ceiling=150.0)),
        )
        with pytest.raises(SimulationError):
            simulate_paths(p, coarse_grid, 10, seed=1)

    def test_mode_validation(self, case1_params, coarse_grid):
        with pytest.raises(ValueError):
            list(iter_path_chunks(case1_params, coarse_grid, 10, 1, mode="bogus"))

    def test_memory_guard(self, case1_params):
        grid = SimGrid.for_horizon(1.0, 520, 26)
        with pytest.raises(ValueError):
            simulate_paths(case1_params, grid, 10_000_000, seed=1)


class TestDefaultStateRefinement:
    def test_loss_at_default_bracketed(self, case1_batch_full):
        batch = case1_batch_full
        times = batch.times
        for i in np.flatnonzero(batch.defaulted)[:200]:
            tau = batch.tau[i]
            k = int(np.searchsorted(times, tau, side="right") - 1)
            lo, hi = batch.loss[i, k], batch.loss[i, min(k + 1, len(times) - 1)]
            assert lo - 1e-9 <= batch.l_at_default[i] <= hi + 1e-9

    def test_hazard_integral_stopped_at_threshold(self, case1_batch_full):
        batch = case1_batch_full
        d = batch.defaulted
        assert (batch.lam_r_stopped_int[d] <= batch.lam_r_full_int[d] + 1e-12).all()
        assert np.allclose(
            batch.lam_r_stopped_int[~d], batch.lam_r_full_int[~d], atol=1e-12
        )


class TestScenarioPathView:
    def test_hr_and_counts(self, case1_batch_full):
        i = int(np.flatnonzero(case1_batch_full.defaulted)[0])
        path = case1_batch_full[i]
        assert path.hr[0] == 0 and path.hr[-1] == 1
        assert path.counts[-1] == len(path.claim_times)
        assert (np.diff(path.claim_times) >= 0).all()

    def test_csv_dump(self, case1_params, tmp_path):
        grid = SimGrid.for_horizon(1.0, 10, 5)
        batch = simulate_paths(case1_params, grid, 3, seed=2)
        out = tmp_path / "paths.csv"
        with open(out, "w") as fh:
            batch.write_csv(fh, header_comment="seed=2")
        lines = out.read_text().splitlines()
        assert lines[0] == "# seed=2"
        assert lines[1] == "path,time,x,y,loss,hr"
        assert len(lines) == 2 + 3 * 11


class TestCappedXlAggregation:
    def test_losses_use_claim_excess(self, coarse_grid):
        p_sl = make_params()
        p_xl = make_params(payoff=PayoffSpec.capped_xl(0.0, 200.0))
        a = simulate_paths(p_sl, coarse_grid, 200, seed=6, mode="tilde")
        b = simulate_paths(p_xl, coarse_grid, 200, seed=6, mode="tilde")
        # retention zero: excess equals the raw claim, aggregates coincide
        assert np.allclose(a.loss, b.loss)
        p_xl2 = make_params(payoff=PayoffSpec.capped_xl(2.0, 200.0))
        c = simulate_paths(p_xl2, coarse_grid, 200, seed=6, mode="tilde")
        assert (c.loss[:, -1] <= a.loss[:, -1] + 1e-12).all()
        assert c.loss[:, -1].sum() < a.loss[:, -1].sum()
