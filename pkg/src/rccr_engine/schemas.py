"""Pydantic request/response models for the pricing service.

The JSON parameter schema mirrors the model parameter set field by field;
presets can be named instead of (or partially overridden by) inline
parameters.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

from . import presets as preset_lib
from .model import (
    ClaimLaw,
    IntensityFn,
    IntensityMap,
    JumpSpec,
    ModelParams,
    PayoffSpec,
    DEFAULT_INTENSITY_CEILING,
)
from .paths import SimGrid


class ClaimLawModel(BaseModel):
    kind: Literal["gamma", "discrete"] = "gamma"
    alpha: float = 1.0
    beta: float = 1.0
    atoms: Optional[list[tuple[float, float]]] = None

    def build(self) -> ClaimLaw:
        if self.kind == "gamma":
            return ClaimLaw.gamma(self.alpha, self.beta)
        if not self.atoms:
            raise ValueError("discrete claim law requires atoms")
        return ClaimLaw.discrete(self.atoms)

    @staticmethod
    def from_law(law: ClaimLaw) -> "ClaimLawModel":
        if law.kind == "gamma":
            return ClaimLawModel(kind="gamma", alpha=law.alpha, beta=law.beta)
        return ClaimLawModel(kind="discrete", atoms=[(z, p) for z, p in law.atoms])


class PayoffModel(BaseModel):
    kind: Literal["stop_loss", "capped_xl"] = "stop_loss"
    priority: float = 90.0
    cap: float = 200.0

    def build(self) -> PayoffSpec:
        if self.kind == "stop_loss":
            return PayoffSpec.stop_loss(self.priority, self.cap)
        return PayoffSpec.capped_xl(self.priority, self.cap)

    @staticmethod
    def from_spec(spec: PayoffSpec) -> "PayoffModel":
        return PayoffModel(kind=spec.kind, priority=spec.priority, cap=spec.cap)


class JumpModel(BaseModel):
    kind: Literal["relative", "absolute"] = "relative"
    size: float = 0.2

    def build(self) -> JumpSpec:
        return JumpSpec.relative(self.size) if self.kind == "relative" else JumpSpec.absolute(self.size)


class IntensityFnModel(BaseModel):
    kind: Literal["identity", "constant"] = "identity"
    level: float = 0.0
    ceiling: float = DEFAULT_INTENSITY_CEILING

    def build(self) -> IntensityFn:
        if self.kind == "identity":
            return IntensityFn.identity(self.ceiling)
        return IntensityFn.constant(self.level, self.ceiling)


class ParamsModel(BaseModel):
    """JSON mirror of the model parameter set."""

    x0: float = 100.0
    y0: float = 0.05
    jump: JumpModel = Field(default_factory=JumpModel)
    kappa_x: float = 0.0
    mean_x: float = 100.0
    sigma_x: float = 0.0
    kappa_y: float = 1.0
    mean_y: float = 0.05
    sigma_y: float = 0.1
    rho: float = 0.0
    r: float = 0.0
    maturity: float = 1.0
    delta_r: float = 1.0
    delta_cds: float = 1.0
    zeta: Optional[float] = None
    claim: ClaimLawModel = Field(default_factory=ClaimLawModel)
    payoff: PayoffModel = Field(default_factory=PayoffModel)
    loss_intensity: IntensityFnModel = Field(default_factory=IntensityFnModel)
    default_intensity: IntensityFnModel = Field(default_factory=IntensityFnModel)

    def build(self) -> ModelParams:
        return ModelParams(
            x0=self.x0,
            y0=self.y0,
            jump=self.jump.build(),
            kappa_x=self.kappa_x,
            mean_x=self.mean_x,
            sigma_x=self.sigma_x,
            kappa_y=self.kappa_y,
            mean_y=self.mean_y,
            sigma_y=self.sigma_y,
            rho=self.rho,
            r=self.r,
            maturity=self.maturity,
            delta_r=self.delta_r,
            delta_cds=self.delta_cds,
            zeta=self.zeta,
            claim=self.claim.build(),
            payoff=self.payoff.build(),
            intensity=IntensityMap(
                loss=self.loss_intensity.build(), default=self.default_intensity.build()
            ),
        )

    @staticmethod
    def from_params(p: ModelParams) -> "ParamsModel":
        return ParamsModel(
            x0=p.x0, y0=p.y0,
            jump=JumpModel(kind=p.jump.kind, size=p.jump.size),
            kappa_x=p.kappa_x, mean_x=p.mean_x, sigma_x=p.sigma_x,
            kappa_y=p.kappa_y, mean_y=p.mean_y, sigma_y=p.sigma_y,
            rho=p.rho, r=p.r, maturity=p.maturity,
            delta_r=p.delta_r, delta_cds=p.delta_cds, zeta=p.zeta,
            claim=ClaimLawModel.from_law(p.claim),
            payoff=PayoffModel.from_spec(p.payoff),
            loss_intensity=IntensityFnModel(
                kind=p.intensity.loss.kind, level=p.intensity.loss.level,
                ceiling=p.intensity.loss.ceiling),
            default_intensity=IntensityFnModel(
                kind=p.intensity.default.kind, level=p.intensity.default.level,
                ceiling=p.intensity.default.ceiling),
        )


class GridModel(BaseModel):
    n_steps: int = 520
    n_rebalance: int = 26

    def build(self, maturity: float) -> SimGrid:
        return SimGrid.for_horizon(maturity, self.n_steps, self.n_rebalance)


class ModelRequest(BaseModel):
    """Base request: a preset name, inline parameters, or both (overrides)."""

    preset: Optional[str] = None
    params: Optional[ParamsModel] = None
    grid: GridModel = Field(default_factory=GridModel)

    @model_validator(mode="after")
    def _check_source(self):
        if self.preset is None and self.params is None:
            raise ValueError("provide a preset name or inline params")
        return self

    def resolve_params(self) -> ModelParams:
        if self.params is not None:
            return self.params.build()
        return preset_lib.get_preset(self.preset)

    def resolve_grid(self) -> SimGrid:
        return self.grid.build(self.resolve_params().maturity)


# -- per-command requests ----------------------------------------------------


class ValidateRequest(ModelRequest):
    pass


class PriceRequest(ModelRequest):
    regime: Literal["pre", "post"] = "pre"
    step: Optional[float] = None
    n_time_points: int = 27
    l_stride: int = 8
    regression_paths: int = 10_000
    seed: int = 0


class CdsRequest(ModelRequest):
    n_time_points: int = 27
    y_points: list[float] = Field(default_factory=lambda: [0.01, 0.03, 0.05, 0.08, 0.12])


class CvaRequest(ModelRequest):
    t: float = 0.0
    l: float = 0.0
    x: Optional[float] = None
    y: Optional[float] = None
    n_paths: int = 50_000
    seed: int = 0
    with_sensitivities: bool = False
    f_method: Literal["auto", "deterministic", "regression"] = "auto"


class SweepRequest(ModelRequest):
    parameter: Literal["gamma", "rho"] = "gamma"
    lo: float = 0.0
    hi: float = 1.0
    n_points: int = 11
    n_paths: int = 20_000
    seed: int = 0


class BacktestRequest(ModelRequest):
    n_paths: int = 2000
    seed: int = 7
    strategies: list[str] = Field(default_factory=lambda: ["unhedged", "static", "dynamic"])
    perturbations: list[float] = Field(default_factory=list)
    f_method: Literal["deterministic", "regression"] = "regression"
    n_trajectories: int = 12


class DensityRequest(BacktestRequest):
    strategy: str = "dynamic"
    bins: int = 40
    min_defaults: int = 100


class TrajectoryRequest(ModelRequest):
    path_index: int = 0
    n_paths: int = 64
    seed: int = 7
    f_method: Literal["deterministic", "regression"] = "regression"


# -- responses ----------------------------------------------------------------


class CheckModel(BaseModel):
    name: str
    status: str
    detail: str


class ValidateResponse(BaseModel):
    ok: bool
    checks: list[CheckModel]
    resolved: ParamsModel


class PriceResponse(BaseModel):
    mode: str
    regime_intensity: float
    v0: float
    rows: list[tuple[float, float, float]]  # (t, l, value)


class CdsResponse(BaseModel):
    fair_spread: float
    zeta: float
    g0: float
    rows: list[tuple[float, float, float]]  # (t, y, g)


class EstimateModel(BaseModel):
    value: float
    stderr: float
    n_samples: int


class CvaResponse(BaseModel):
    mode: str
    surface_value: float
    mc: EstimateModel
    cva0: float
    sensitivities: Optional[dict[str, EstimateModel]] = None


class SweepResponse(BaseModel):
    parameter: str
    rows: list[tuple[float, float, float]]  # (param, cva0, stderr)
    increments: list[float]
    increment_stderrs: list[float]
    total_increase: float
    monotone_within_3se: bool


class StrategyStatsModel(BaseModel):
    name: str
    mean_sq: float
    mean_sq_stderr: float
    mean: float
    mean_stderr: float


class BacktestResponse(BaseModel):
    cva0: float
    zeta: float
    n_paths: int
    n_defaults: int
    stats: list[StrategyStatsModel]
    perturbations: dict[str, float] = Field(default_factory=dict)
    e_terminal: dict[str, list[float]]
    tau: list[float]
    dates: list[float]
    trajectory_ids: list[int]
    trajectories: dict[str, list[list[float]]]


class DensityResponse(BaseModel):
    strategy: str
    n_defaults: int
    bin_edges: list[float]
    masses: list[float]
    kde_x: list[float]
    kde_y: list[float]


class TrajectoryResponse(BaseModel):
    dates: list[float]
    dynamic: list[float]
    static: list[float]
    tau: float
    loss: list[float]
    x: list[float]
    y: list[float]


class ErrorModel(BaseModel):
    code: str
    message: str
