"""Pricing, value adjustment and CDS hedge backtesting for reinsurance
counterparty credit risk."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    ClaimLaw,
    IntensityFn,
    IntensityMap,
    JumpSpec,
    ModelParams,
    PayoffSpec,
    ValidationReport,
    payoff_eval,
    validate,
)
from .paths import SimGrid, default_grid, simulate_paths  # noqa: F401
