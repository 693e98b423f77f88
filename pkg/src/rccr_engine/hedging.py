"""Mean-variance CDS hedging of the counterparty-risk loss, and backtests.

The optimal CDS notional is the ratio of the predictable covariation density
between the credit-loss martingale and the CDS gains process to the
quadratic-variation density of the gains process:

  numerator  = delta_r e^{-2rt} [ rho sx(x) sy(y) f_x g_y + sy(y)^2 f_y g_y
               + lam(y) (delta_cds - g) (v_post - f) ]
  denominator =        e^{-2rt} [ lam(y) (delta_cds - g)^2 + sy(y)^2 g_y^2 ]

with ``f`` the CVA factor, ``g`` the CDS book value and ``v_post`` the
contract value at the post-jump loss-factor level.  Backtests rebalance the
position at a fixed stride, accumulate realized CDS gains against the
discounted credit loss, and report terminal tracking-error statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.stats as st

from . import cds
from .cva import CvaEstimator, make_estimator
from .model import ModelParams
from .paths import MonteCarloEstimate, SimGrid, iter_path_chunks, mc_estimate

DEFAULT_PERTURBATIONS = (0.5, 0.8, 1.2, 1.5)
STRATEGY_NAMES = ("unhedged", "static", "dynamic")


class HedgeError(RuntimeError):
    """Raised when the hedge-ratio denominator degenerates."""


class TooFewDefaultsError(RuntimeError):
    """Not enough defaulted paths for a conditional density."""


# ---------------------------------------------------------------------------
# Hedge ratio
# ---------------------------------------------------------------------------


@dataclass
class HedgeTools:
    """Everything the hedge ratio needs: model, CDS curve, CVA surfaces."""

    params: ModelParams
    curve: cds.CdsCurve
    estimator: CvaEstimator

    @property
    def zeta(self) -> float:
        return self.curve.zeta


def make_tools(
    params: ModelParams, grid: SimGrid, *, seed: int = 0,
    estimator: CvaEstimator | None = None, f_method: str = "regression",
    **estimator_kwargs,
) -> HedgeTools:
    """Resolve the CDS spread (fair if unset) and build the pricing tools.

    The hedge surfaces default to the regression route used by the
    backtests to evaluate the factor along paths; pass
    ``f_method="deterministic"`` for the exact frozen-intensity quadrature.
    """
    zeta = params.zeta if params.zeta is not None else cds.fair_spread(params)
    params = params.with_zeta(zeta)
    curve = cds.make_curve(params)
    if estimator is None:
        estimator = make_estimator(
            params, grid, seed=seed + 104729, f_method=f_method, **estimator_kwargs
        )
    return HedgeTools(params=params, curve=curve, estimator=estimator)


def covariation_densities(
    tools: HedgeTools, t: float, l, x, y
) -> tuple[np.ndarray, np.ndarray]:
    """Densities d<M,S>/dt and d<S>/dt at a pre-default state (arrays ok)."""
    p = tools.params
    l = np.asarray(l, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lam = np.asarray(p.intensity.default(y), dtype=float)
    sx = p.sigma_x_fn(x)
    sy = p.sigma_y_fn(y)
    g = tools.curve.value(t, y)
    g_y = tools.curve.dvalue_dy(t, y)
    f = tools.estimator.f_value(t, l, x, y)
    v_post = tools.estimator.post_value(t, l, x)
    disc2 = math.exp(-2.0 * p.r * t)

    cross = p.rho * sx * sy * tools.estimator.f_dx(t, l, x, y) * g_y if p.sigma_x else 0.0
    spread = sy**2 * tools.estimator.f_dy(t, l, x, y) * g_y if p.sigma_y else 0.0
    jump = lam * (p.delta_cds - g) * (v_post - f)
    num = p.delta_r * disc2 * (cross + spread + jump)
    den = disc2 * (lam * (p.delta_cds - g) ** 2 + sy**2 * g_y**2)
    return num, den


def hedge_ratio(tools: HedgeTools, t: float, l, x, y) -> np.ndarray:
    """Mean-variance-minimizing CDS notional at a pre-default state."""
    num, den = covariation_densities(tools, t, l, x, y)
    den = np.asarray(den, dtype=float)
    if (den < 1e-12).any():
        raise HedgeError("quadratic-variation density is numerically zero")
    return np.asarray(num, dtype=float) / den


# ---------------------------------------------------------------------------
# Backtest
# ---------------------------------------------------------------------------


@dataclass
class StrategyResult:
    name: str
    e_terminal: np.ndarray
    gains: np.ndarray

    @property
    def mean_sq(self) -> MonteCarloEstimate:
        return mc_estimate(self.e_terminal**2)

    @property
    def mean(self) -> MonteCarloEstimate:
        return mc_estimate(self.e_terminal)


@dataclass
class BacktestReport:
    """Tracking errors per strategy plus the shared credit-loss leg."""

    params: ModelParams
    grid: SimGrid
    seed: int
    n_paths: int
    cva0: float
    zeta: float
    dates: np.ndarray
    credit_loss: np.ndarray
    tau: np.ndarray
    strategies: dict[str, StrategyResult]
    trajectory_ids: np.ndarray
    trajectories: dict[str, np.ndarray]  # [n_sampled, n_dates] running error
    hedge_paths: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def defaulted(self) -> np.ndarray:
        return np.isfinite(self.tau)

    def perturbed_mean_sq(self, factor: float) -> MonteCarloEstimate:
        """E[e_T^2] when the dynamic notional is scaled by ``factor``."""
        base = self.strategies["dynamic"]
        e = self.credit_loss - self.cva0 - factor * base.gains
        return mc_estimate(e**2)

    def perturbation_excess(self, factor: float) -> MonteCarloEstimate:
        """Paired mean of e_T(factor)^2 - e_T(1)^2 across paths."""
        base = self.strategies["dynamic"]
        e1 = base.e_terminal
        ef = self.credit_loss - self.cva0 - factor * base.gains
        return mc_estimate(ef**2 - e1**2)

    def summary_rows(self):
        for name in self.strategies:
            res = self.strategies[name]
            ms = res.mean_sq
            mu = res.mean
            yield name, ms.value, ms.stderr, mu.value, mu.stderr


def backtest(
    params: ModelParams,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    strategies: Iterable[str] = STRATEGY_NAMES,
    *,
    tools: HedgeTools | None = None,
    n_trajectories: int = 12,
    keep_hedge_paths: bool = False,
) -> BacktestReport:
    """Simulate hedged positions rebalanced at the grid's stride.

    Every strategy starts with the CVA reserve in the bank account; the
    terminal tracking error is the discounted credit loss minus the reserve
    and the accumulated CDS gains.
    """
    strategies = list(strategies)
    unknown = set(strategies) - set(STRATEGY_NAMES)
    if unknown:
        raise ValueError(f"unknown strategies: {sorted(unknown)}")
    if tools is None:
        tools = make_tools(params, grid, seed=seed)
    p = tools.params
    est = tools.estimator
    cva0 = est.cva0().value
    zeta = tools.zeta

    dates_idx = grid.rebalance_node_indices
    dates = grid.times[dates_idx]
    n_dates = len(dates)

    cl_parts, tau_parts = [], []
    gains = {name: [] for name in strategies}
    traj_ids: list[int] = []
    traj_rows: dict[str, list[np.ndarray]] = {name: [] for name in strategies}
    hedge_rows: dict[str, list[np.ndarray]] = {name: [] for name in strategies}

    for chunk in iter_path_chunks(p, grid, n_paths, seed, mode="full"):
        n = chunk.n_paths
        s_nodes = cds.gains_at_nodes(tools.curve, chunk.times, chunk.y, chunk.tau, dates_idx)
        ds = np.diff(s_nodes, axis=1)
        alive = chunk.tau[:, None] > dates[None, :-1]

        defaulted = chunk.defaulted
        cl = np.zeros(n)
        if defaulted.any():
            v_def = est.post_value(
                chunk.tau[defaulted] - chunk.times[0],
                chunk.l_at_default[defaulted],
                chunk.x_at_default[defaulted],
            )
            cl[defaulted] = (
                p.delta_r * np.exp(-p.r * chunk.tau[defaulted]) * np.asarray(v_def)
            )
        cl_parts.append(cl)
        tau_parts.append(chunk.tau)

        xi = {}
        if "unhedged" in strategies:
            xi["unhedged"] = np.zeros((n, n_dates - 1))
        if "static" in strategies:
            xi["static"] = (cva0 / zeta) * alive.astype(float)
        if "dynamic" in strategies:
            xi_dyn = np.zeros((n, n_dates - 1))
            for j in range(n_dates - 1):
                live = alive[:, j]
                if not live.any():
                    continue
                node = dates_idx[j]
                xi_dyn[live, j] = hedge_ratio(
                    tools,
                    float(dates[j]),
                    chunk.loss[live, node],
                    chunk.x[live, node],
                    chunk.y[live, node],
                )
            xi["dynamic"] = xi_dyn

        for name in strategies:
            gains[name].append((xi[name] * ds).sum(axis=1))

        # Running tracking error samples for trajectory plots.
        want = n_trajectories - len(traj_ids)
        if want > 0:
            pick = list(range(min(want, n)))
            extra = [int(i) for i in np.flatnonzero(defaulted)[: max(want // 2, 1)]
                     if i not in pick]
            pick = (pick + extra)[:want]
            if pick:
                sel = np.array(pick, dtype=int)
                cva_dates = np.zeros((len(sel), n_dates))
                # the booked reserve anchors the running error at zero
                cva_dates[:, 0] = cva0
                for j, node in list(enumerate(dates_idx))[1:]:
                    live = chunk.tau[sel] > dates[j]
                    vals = est.cva_value(
                        float(dates[j]),
                        chunk.loss[sel, node], chunk.x[sel, node], chunk.y[sel, node],
                    )
                    cva_dates[:, j] = np.where(live, vals, 0.0)
                cl_acc = np.where(
                    chunk.tau[sel, None] <= dates[None, :], cl[sel, None], 0.0
                )
                for name in strategies:
                    cum = np.concatenate(
                        [np.zeros((len(sel), 1)), np.cumsum(xi[name][sel] * ds[sel], axis=1)],
                        axis=1,
                    )
                    e_run = (
                        np.exp(-p.r * dates)[None, :] * cva_dates + cl_acc - cva0 - cum
                    )
                    traj_rows[name].append(e_run)
                traj_ids.extend(int(chunk.offset + i) for i in sel)
        if keep_hedge_paths:
            for name in strategies:
                hedge_rows[name].append(xi[name])

    credit_loss = np.concatenate(cl_parts)
    tau = np.concatenate(tau_parts)
    results = {}
    for name in strategies:
        gain = np.concatenate(gains[name])
        results[name] = StrategyResult(
            name=name, e_terminal=credit_loss - cva0 - gain, gains=gain
        )
    return BacktestReport(
        params=p,
        grid=grid,
        seed=seed,
        n_paths=n_paths,
        cva0=cva0,
        zeta=zeta,
        dates=dates,
        credit_loss=credit_loss,
        tau=tau,
        strategies=results,
        trajectory_ids=np.array(traj_ids, dtype=int),
        trajectories={k: np.concatenate(v) if v else np.empty((0, n_dates))
                      for k, v in traj_rows.items()},
        hedge_paths={k: np.concatenate(v) for k, v in hedge_rows.items()}
        if keep_hedge_paths else {},
    )


# ---------------------------------------------------------------------------
# Conditional densities and strategy trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityReport:
    strategy: str
    n_defaults: int
    bin_edges: np.ndarray
    masses: np.ndarray  # normalized to unit total over defaulted paths
    kde_x: np.ndarray
    kde_y: np.ndarray


def density_report(
    report: BacktestReport, strategy: str, bins: int = 40, min_defaults: int = 100
) -> DensityReport:
    """Histogram and Silverman-bandwidth KDE of e_T given a default occurred."""
    res = report.strategies[strategy]
    mask = report.defaulted
    data = res.e_terminal[mask]
    if len(data) < min_defaults:
        raise TooFewDefaultsError(
            f"{len(data)} defaulted paths < {min_defaults}; raise the default "
            "intensity or the number of paths"
        )
    counts, edges = np.histogram(data, bins=bins)
    masses = counts / counts.sum()
    if data.std() > 0:
        kde = st.gaussian_kde(data, bw_method="silverman")
        xs = np.linspace(data.min(), data.max(), 256)
        ys = kde(xs)
    else:
        xs = np.array([data.mean()])
        ys = np.array([np.inf])
    return DensityReport(
        strategy=strategy,
        n_defaults=int(len(data)),
        bin_edges=edges,
        masses=masses,
        kde_x=xs,
        kde_y=ys,
    )


def strategy_trajectory(
    tools: HedgeTools, grid: SimGrid, path
) -> dict[str, np.ndarray]:
    """Per-date dynamic notional and the constant static overlay for a path;
    positions are zero from the default time on."""
    est = tools.estimator
    cva0 = est.cva0().value
    dates_idx = grid.rebalance_node_indices
    dates = grid.times[dates_idx]
    xi = np.zeros(len(dates))
    for j, node in enumerate(dates_idx):
        if path.tau_r > dates[j] and dates[j] < grid.horizon:
            xi[j] = float(
                hedge_ratio(
                    tools, float(dates[j]),
                    np.array([path.loss[node]]),
                    np.array([path.x[node]]),
                    np.array([path.y[node]]),
                )[0]
            )
    static = np.where(dates <= min(path.tau_r, grid.horizon), cva0 / tools.zeta, 0.0)
    return {"dates": dates, "dynamic": xi, "static": static}
