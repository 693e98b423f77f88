"""FastAPI service exposing the pricing, CVA and backtest engine.

Each endpoint wraps one batch operation of the core package; requests name a
preset or carry inline parameters.  Domain errors surface as HTTP 400 with a
machine-readable code; everything else is a plain 500.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from . import __version__, cds, cva, hedging, presets
from .aggregate import LatticeBoundError, RankDeficientError, build_loss_value_table
from .cds import QuadratureError
from .hedging import HedgeError, TooFewDefaultsError
from .model import validate as validate_params
from .paths import SimulationError, simulate_paths
from .schemas import (
    BacktestRequest,
    BacktestResponse,
    CdsRequest,
    CdsResponse,
    CheckModel,
    CvaRequest,
    CvaResponse,
    DensityRequest,
    DensityResponse,
    EstimateModel,
    ParamsModel,
    PriceRequest,
    PriceResponse,
    StrategyStatsModel,
    SweepRequest,
    SweepResponse,
    TrajectoryRequest,
    TrajectoryResponse,
    ValidateRequest,
    ValidateResponse,
)

_DOMAIN_ERRORS = (
    SimulationError,
    LatticeBoundError,
    RankDeficientError,
    QuadratureError,
    HedgeError,
    TooFewDefaultsError,
)

app = FastAPI(title="rccr-engine", version=__version__)


def _bad_request(code: str, message: str) -> HTTPException:
    return HTTPException(status_code=400, detail={"code": code, "message": message})


def _guard(fn):
    try:
        return fn()
    except HTTPException:
        raise
    except (ValueError, KeyError) as exc:
        raise _bad_request("bad_request", str(exc)) from exc
    except _DOMAIN_ERRORS as exc:
        raise _bad_request(type(exc).__name__, str(exc)) from exc


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.get("/presets")
def list_presets():
    return {
        name: ParamsModel.from_params(presets.get_preset(name)).model_dump()
        for name in presets.PRESET_NAMES
    }


@app.post("/validate", response_model=ValidateResponse)
def validate_endpoint(req: ValidateRequest) -> ValidateResponse:
    def run():
        params = req.resolve_params()
        report = validate_params(params)
        return ValidateResponse(
            ok=report.ok,
            checks=[CheckModel(name=c.name, status=c.status, detail=c.detail)
                    for c in report.checks],
            resolved=ParamsModel.from_params(params),
        )

    return _guard(run)


@app.post("/price", response_model=PriceResponse)
def price_endpoint(req: PriceRequest) -> PriceResponse:
    def run():
        params = req.resolve_params()
        grid = req.resolve_grid()
        mode = cva.select_mode(params)
        t_grid = np.linspace(0.0, params.maturity, req.n_time_points)
        if mode == "frozen":
            regime = (params.loss_intensity_pre if req.regime == "pre"
                      else params.loss_intensity_post)
            kwargs = {} if req.step is None else {"step": req.step}
            table = build_loss_value_table(params, regime, t_grid, **kwargs)
            lat = table.lattice
            rows = [
                (float(t), float(lat[j]), float(table.values[i, j]))
                for i, t in enumerate(table.t_grid)
                for j in range(0, len(lat), max(req.l_stride, 1))
            ]
            v0 = float(table.value(0.0, 0.0))
            return PriceResponse(mode=mode, regime_intensity=regime, v0=v0, rows=rows)
        surface = cva.fit_value_surface(
            params, grid, req.regression_paths, req.seed, degree=3
        )
        factor = params.x0
        if req.regime == "post":
            factor = params.x0 + float(params.jump.jump(params.x0))
        l_grid = np.linspace(0.0, params.payoff.saturation, 64)
        rows = []
        for t in t_grid:
            vals = surface.value(float(t), l_grid, np.full_like(l_grid, factor))
            rows.extend((float(t), float(l), float(v)) for l, v in zip(l_grid, vals))
        v0 = float(surface.value(0.0, np.array([0.0]), np.array([factor]))[0])
        return PriceResponse(mode=mode, regime_intensity=float(factor), v0=v0, rows=rows)

    return _guard(run)


@app.post("/cds", response_model=CdsResponse)
def cds_endpoint(req: CdsRequest) -> CdsResponse:
    def run():
        params = req.resolve_params()
        fair = cds.fair_spread(params)
        curve = cds.make_curve(params)
        g0 = float(curve.value(0.0, params.y0)[0])
        rows = []
        for t in np.linspace(0.0, params.maturity, req.n_time_points):
            vals = curve.value(float(t), np.asarray(req.y_points, dtype=float))
            rows.extend((float(t), float(y), float(g)) for y, g in zip(req.y_points, vals))
        return CdsResponse(fair_spread=fair, zeta=curve.zeta, g0=g0, rows=rows)

    return _guard(run)


@app.post("/cva", response_model=CvaResponse)
def cva_endpoint(req: CvaRequest) -> CvaResponse:
    def run():
        params = req.resolve_params()
        grid = req.resolve_grid()
        x = params.x0 if req.x is None else req.x
        y = params.y0 if req.y is None else req.y
        est = cva.make_estimator(params, grid, seed=req.seed, f_method=req.f_method)
        d = params.delta_r
        surface_val = d * float(
            est.f_value(req.t, np.array([req.l]), np.array([x]), np.array([y]))[0]
        )
        mc = est.cva_at(req.t, req.l, x, y, n_paths=req.n_paths, seed=req.seed)
        sens = None
        if req.with_sensitivities:
            raw = est.cva_sensitivities(
                req.t, req.l, x, y, n_paths=req.n_paths, seed=req.seed
            )
            sens = {
                k: EstimateModel(value=d * v.value, stderr=d * v.stderr,
                                 n_samples=v.n_samples)
                for k, v in raw.items()
            }
        return CvaResponse(
            mode=est.mode,
            surface_value=surface_val,
            mc=EstimateModel(value=d * mc.value, stderr=d * mc.stderr,
                             n_samples=mc.n_samples),
            cva0=est.cva0().value,
            sensitivities=sens,
        )

    return _guard(run)


@app.post("/sweep", response_model=SweepResponse)
def sweep_endpoint(req: SweepRequest) -> SweepResponse:
    def run():
        params = req.resolve_params()
        grid = req.resolve_grid()
        res = cva.wrong_way_sweep(
            params, grid, req.parameter, req.lo, req.hi, req.n_points,
            req.n_paths, req.seed,
        )
        return SweepResponse(
            parameter=res.parameter,
            rows=[(float(p), float(v), float(se))
                  for p, v, se in zip(res.param_values, res.values, res.stderrs)],
            increments=[float(v) for v in res.increments],
            increment_stderrs=[float(v) for v in res.increment_stderrs],
            total_increase=res.total_increase,
            monotone_within_3se=res.monotone_within(3.0),
        )

    return _guard(run)


def _run_backtest(req: BacktestRequest):
    params = req.resolve_params()
    grid = req.resolve_grid()
    tools = hedging.make_tools(params, grid, seed=req.seed, f_method=req.f_method)
    report = hedging.backtest(
        params, grid, req.n_paths, req.seed, req.strategies,
        tools=tools, n_trajectories=req.n_trajectories,
    )
    return tools, report


@app.post("/backtest", response_model=BacktestResponse)
def backtest_endpoint(req: BacktestRequest) -> BacktestResponse:
    def run():
        _, report = _run_backtest(req)
        stats = []
        for name, ms, ms_se, mu, mu_se in report.summary_rows():
            stats.append(StrategyStatsModel(
                name=name, mean_sq=ms, mean_sq_stderr=ms_se, mean=mu, mean_stderr=mu_se
            ))
        perturb = {}
        if "dynamic" in report.strategies:
            for c in req.perturbations:
                perturb[f"{c:g}"] = report.perturbed_mean_sq(c).value
        return BacktestResponse(
            cva0=report.cva0,
            zeta=report.zeta,
            n_paths=report.n_paths,
            n_defaults=int(report.defaulted.sum()),
            stats=stats,
            perturbations=perturb,
            e_terminal={k: v.e_terminal.tolist() for k, v in report.strategies.items()},
            tau=[float(t) if np.isfinite(t) else -1.0 for t in report.tau],
            dates=report.dates.tolist(),
            trajectory_ids=report.trajectory_ids.tolist(),
            trajectories={k: v.tolist() for k, v in report.trajectories.items()},
        )

    return _guard(run)


@app.post("/density", response_model=DensityResponse)
def density_endpoint(req: DensityRequest) -> DensityResponse:
    def run():
        _, report = _run_backtest(req)
        dens = hedging.density_report(report, req.strategy, req.bins, req.min_defaults)
        return DensityResponse(
            strategy=dens.strategy,
            n_defaults=dens.n_defaults,
            bin_edges=dens.bin_edges.tolist(),
            masses=dens.masses.tolist(),
            kde_x=dens.kde_x.tolist(),
            kde_y=dens.kde_y.tolist(),
        )

    return _guard(run)


@app.post("/trajectory", response_model=TrajectoryResponse)
def trajectory_endpoint(req: TrajectoryRequest) -> TrajectoryResponse:
    def run():
        params = req.resolve_params()
        grid = req.resolve_grid()
        if not 0 <= req.path_index < req.n_paths:
            raise ValueError("path_index out of range")
        tools = hedging.make_tools(params, grid, seed=req.seed, f_method=req.f_method)
        batch = simulate_paths(tools.params, grid, req.n_paths, req.seed, mode="full",
                               store_claims=False)
        # claim arrays are not needed for the trajectory; build a light view
        from .paths import ScenarioPath

        path = ScenarioPath(
            times=batch.times,
            x=batch.x[req.path_index],
            y=batch.y[req.path_index],
            loss=batch.loss[req.path_index],
            claim_times=np.empty(0),
            claim_sizes=np.empty(0),
            tau_r=float(batch.tau[req.path_index]),
            tilde=False,
        )
        traj = hedging.strategy_trajectory(tools, grid, path)
        idx = grid.rebalance_node_indices
        return TrajectoryResponse(
            dates=traj["dates"].tolist(),
            dynamic=traj["dynamic"].tolist(),
            static=traj["static"].tolist(),
            tau=float(path.tau_r) if np.isfinite(path.tau_r) else -1.0,
            loss=batch.loss[req.path_index, idx].tolist(),
            x=batch.x[req.path_index, idx].tolist(),
            y=batch.y[req.path_index, idx].tolist(),
        )

    return _guard(run)
