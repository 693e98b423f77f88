"""Shared fixtures: parameter builders and session-cached heavy objects."""

from __future__ import annotations

import pytest

from rccr_engine import presets
from rccr_engine.model import ClaimLaw, JumpSpec, ModelParams, PayoffSpec
from rccr_engine.paths import SimGrid


def make_params(**overrides) -> ModelParams:
    base = dict(
        x0=100.0,
        y0=0.05,
        jump=JumpSpec.relative(0.2),
        kappa_x=0.0,
        mean_x=100.0,
        sigma_x=0.0,
        kappa_y=1.0,
        mean_y=0.05,
        sigma_y=0.1,
        rho=0.0,
        r=0.0,
        maturity=1.0,
        delta_r=1.0,
        delta_cds=1.0,
        claim=ClaimLaw.gamma(1.0, 1.0),
        payoff=PayoffSpec.stop_loss(90.0, 200.0),
    )
    base.update(overrides)
    return ModelParams(**base)


def flat_hazard_params(level: float = 0.05, **overrides) -> ModelParams:
    """Frozen default factor: constant hazard at ``level``."""
    return make_params(
        kappa_y=0.0, sigma_y=0.0, y0=level, mean_y=level, **overrides
    )


@pytest.fixture(scope="session")
def case1_params() -> ModelParams:
    return presets.case1()


@pytest.fixture(scope="session")
def coarse_grid() -> SimGrid:
    return SimGrid.for_horizon(1.0, 130, 26)


@pytest.fixture(scope="session")
def fine_grid() -> SimGrid:
    return SimGrid.for_horizon(1.0, 520, 26)


@pytest.fixture(scope="session")
def case1_batch_full(case1_params, coarse_grid):
    from rccr_engine.paths import simulate_paths

    return simulate_paths(case1_params, coarse_grid, 4000, seed=11, mode="full")


@pytest.fixture(scope="session")
def case1_estimator(case1_params, fine_grid):
    from rccr_engine.cva import make_estimator

    return make_estimator(case1_params, fine_grid)


@pytest.fixture(scope="session")
def case1_tools(case1_params, fine_grid, case1_estimator):
    from rccr_engine import cds
    from rccr_engine.hedging import HedgeTools

    params = case1_params.with_zeta(cds.fair_spread(case1_params))
    return HedgeTools(
        params=params, curve=cds.make_curve(params), estimator=case1_estimator
    )


def assert_within(value: float, target: float, half_width: float, label: str = ""):
    assert abs(value - target) <= half_width, (
        f"{label}: {value:.6g} differs from {target:.6g} by more than {half_width:.3g}"
    )
