"""Credit value adjustment: payment-at-default valuation and sensitivities.

The adjustment factor ``f(t, l, x, y)`` is the conditional expectation of
``int_t^T v(s, L_s, X_s + jump(X_s)) lam(Y_s) exp(-int_t^s (r + lam(Y_u)) du) ds``
along contagion-free paths; the reserve itself is
``CVA_t = delta_r (1 - H_t) f(t, L_t, X_t, Y_t)``.

Two estimator modes:

* ``frozen`` (constant pre-default loss intensity): the loss layer is independent of the
  default factor, so the time integral factorizes into a compound-Poisson
  convolution term (exact double Panjer) and the closed-form hazard density;
  ``f`` and its y-derivative are then deterministic quadratures;
* ``general`` (diffusing loss intensity): ``f`` is fitted per rebalancing
  date by least-squares regression of realized suffix integrals on a
  polynomial in ``(l, x, y)``, with the inner contract value itself a fitted
  surface in ``(l, x)``.

Plain Monte Carlo point estimates (``cva_at``) are kept alongside as the
cross-check route and for finite-difference sensitivities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
import scipy.signal as signal

from . import cds, rng
from .aggregate import (
    DEFAULT_LATTICE_STEP,
    DEFAULT_MASS_TOL,
    LossValueTable,
    RegressionSurface,
    build_loss_value_table,
    discretize_claims,
    fit_dated_surface,
    panjer_aggregate,
)
from .model import JumpSpec, ModelParams, effective_claim_law
from .paths import MonteCarloEstimate, SimGrid, iter_path_chunks, mc_estimate

CvaMode = Literal["frozen", "general"]

DEFAULT_POINT_PATHS = 200_000
DEFAULT_SWEEP_PATHS = 20_000
DEFAULT_REGRESSION_PATHS = 10_000
DEFAULT_BUMP_X = 1.0
DEFAULT_BUMP_Y = 0.005


def select_mode(params: ModelParams) -> CvaMode:
    """Pick the estimator mode: a driftless, volatility-free loss factor is
    constant before default, which unlocks the deterministic route."""
    if params.kappa_x == 0.0 and params.sigma_x == 0.0:
        return "frozen"
    return "general"


def _simpson_weights(n_intervals: int, h: float) -> np.ndarray:
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


# ---------------------------------------------------------------------------
# Frozen-regime deterministic surface
# ---------------------------------------------------------------------------


@dataclass
class DeterministicCvaSurface:
    """Exact (quadrature-level) adjustment factor for a frozen loss regime.

    ``columns[i][j]`` tabulates ``E[v(s_j, l + A)]`` on the loss lattice,
    where ``A`` is the pre-default aggregate over ``s_j - t_i``; the time
    integral against the closed-form hazard density uses Simpson's rule on
    the refined date grid.
    """

    params: ModelParams
    dates: np.ndarray
    s_times: np.ndarray
    refine: int
    lattice: np.ndarray
    columns: list  # per date: [n_s_i, n_lattice]
    hazard: object
    value_table: LossValueTable

    def _date_index(self, t: float) -> tuple[int, int, float]:
        t = float(np.clip(t, self.dates[0], self.dates[-1]))
        i = int(np.clip(np.searchsorted(self.dates, t, side="right") - 1, 0,
                        len(self.dates) - 2))
        span = self.dates[i + 1] - self.dates[i]
        w = (t - self.dates[i]) / span if span > 0 else 0.0
        return i, i + 1, w

    def _date_eval(self, i: int, l: np.ndarray, y: np.ndarray, derivative: bool) -> np.ndarray:
        cols = self.columns[i]
        n_s = cols.shape[0]
        if n_s < 2:
            return np.zeros(np.broadcast(l, y).shape)
        taus = self.s_times[self.refine * i :] - self.dates[i]
        weights = _simpson_weights(n_s - 1, taus[1] - taus[0])
        disc = np.exp(-self.params.r * taus)
        q_fn = self.hazard.ddensity_dy if derivative else self.hazard.density
        out = np.zeros(np.broadcast(l, y).shape)
        for j in range(n_s):
            p_vals = np.interp(l, self.lattice, cols[j])
            out += weights[j] * disc[j] * p_vals * q_fn(taus[j], y)
        return out

    def value(self, t: float, l, y) -> np.ndarray:
        l = np.asarray(l, dtype=float)
        y = np.asarray(y, dtype=float)
        i, j, w = self._date_index(t)
        out = (1 - w) * self._date_eval(i, l, y, False)
        if w > 0:
            out += w * self._date_eval(j, l, y, False)
        return out

    def dvalue_dy(self, t: float, l, y) -> np.ndarray:
        l = np.asarray(l, dtype=float)
        y = np.asarray(y, dtype=float)
        i, j, w = self._date_index(t)
        out = (1 - w) * self._date_eval(i, l, y, True)
        if w > 0:
            out += w * self._date_eval(j, l, y, True)
        return out

    def dvalue_dx(self, t: float, l, y) -> np.ndarray:
        return np.zeros(np.broadcast(np.asarray(l), np.asarray(y)).shape)


def build_deterministic_surface(
    params: ModelParams,
    grid: SimGrid,
    *,
    refine: int = 2,
    step: float = DEFAULT_LATTICE_STEP,
    tol: float = DEFAULT_MASS_TOL,
) -> DeterministicCvaSurface:
    if select_mode(params) != "frozen":
        raise ValueError("deterministic surface requires a frozen loss factor")
    dates = grid.rebalance_times
    n_fine = refine * (len(dates) - 1)
    s_times = np.linspace(dates[0], dates[-1], n_fine + 1)
    lam_pre = params.loss_intensity_pre
    table = build_loss_value_table(params, params.loss_intensity_post, s_times, step, tol)
    claims = discretize_claims(effective_claim_law(params.claim, params.payoff), step, tol)

    n_l = int(np.ceil(params.payoff.saturation / step)) + 2
    lattice = step * np.arange(n_l)
    delta_s = s_times[1] - s_times[0]
    # Pre-default aggregate pmfs keyed by horizon index on the refined grid.
    pre_pmfs = [panjer_aggregate(claims, lam_pre, m * delta_s).pmf for m in range(n_fine + 1)]

    columns = []
    for i in range(len(dates)):
        n_s = n_fine - refine * i + 1
        cols = np.empty((n_s, n_l))
        for j in range(n_s):
            pmf = pre_pmfs[j]
            v_ext = table.column_extended(refine * i + j, len(pmf) - 1)
            cols[j] = signal.fftconvolve(v_ext, pmf[::-1], mode="valid")
        columns.append(cols)

    return DeterministicCvaSurface(
        params=params,
        dates=dates,
        s_times=s_times,
        refine=refine,
        lattice=lattice,
        columns=columns,
        hazard=cds.hazard_model(params),
        value_table=table,
    )


# ---------------------------------------------------------------------------
# General-mode regression surfaces
# ---------------------------------------------------------------------------


def fit_value_surface(
    params: ModelParams,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    degree: int = 3,
    x_start_range: tuple[float, float] | None = None,
) -> RegressionSurface:
    """LSMC fit of the contract value ``v(t, l, x)`` from contagion-free paths.

    ``x_start_range`` disperses initial loss-factor levels uniformly so the
    fit stays reliable at post-jump evaluations beyond the natural range.
    """
    dates_idx = grid.rebalance_node_indices
    times = grid.times[dates_idx]
    designs = [[] for _ in times]
    responses = [[] for _ in times]
    x_init = None
    if x_start_range is not None:
        lo, hi = x_start_range
        u = rng.counter_uniform(seed ^ 0x5A5A, rng.STREAM_DIFFUSION,
                                np.arange(n_paths), 0)
        x_init = lo + (hi - lo) * u
    for chunk in iter_path_chunks(params, grid, n_paths, seed, mode="tilde", x_init=x_init):
        payoff_t = params.payoff.evaluate(chunk.loss[:, -1])
        for i, node in enumerate(dates_idx[:-1]):
            designs[i].append(np.column_stack([chunk.loss[:, node], chunk.x[:, node]]))
            disc = np.exp(-params.r * (params.maturity - times[i]))
            responses[i].append(disc * payoff_t)
    designs = [np.concatenate(d) if d else np.empty((0, 2)) for d in designs]
    responses = [np.concatenate(r) if r else np.empty(0) for r in responses]

    def terminal(z: np.ndarray) -> np.ndarray:
        return params.payoff.evaluate(z[:, 0])

    def upper(t: float) -> float:
        return params.payoff.cap * np.exp(-params.r * (params.maturity - t))

    return fit_dated_surface(times, designs, responses, degree, terminal, upper)


@dataclass
class RegressionCvaSurface:
    """Per-date polynomial fit of the adjustment factor in ``(l, x, y)``."""

    params: ModelParams
    surface: RegressionSurface
    cva0_samples: np.ndarray

    def value(self, t: float, l, x, y) -> np.ndarray:
        return self.surface.value(t, l, x, y)

    def dvalue_dx(self, t: float, l, x, y) -> np.ndarray:
        return self.surface.gradient(t, 1, l, x, y)

    def dvalue_dy(self, t: float, l, x, y) -> np.ndarray:
        return self.surface.gradient(t, 2, l, x, y)


def _hazard_rate_nodes(params: ModelParams, y_nodes: np.ndarray) -> np.ndarray:
    return np.asarray(params.intensity.default(y_nodes))


def _suffix_integrals(params, chunk, v_values, date_cols):
    """Per-path CVA integrand suffixes at the requested node columns.

    ``v_values`` holds the inner contract value at every node (post-jump
    regime).  Returns (suffix[n, n_dates], integral_from_zero[n]).
    """
    times = chunk.times
    dt = np.diff(times)
    lam = _hazard_rate_nodes(params, chunk.y)
    kill = lam + params.r
    d_cum = np.zeros_like(lam)
    d_cum[:, 1:] = np.cumsum(0.5 * (kill[:, :-1] + kill[:, 1:]) * dt, axis=1)
    integrand = v_values * lam * np.exp(-d_cum)
    seg = 0.5 * (integrand[:, :-1] + integrand[:, 1:]) * dt
    i_cum = np.zeros_like(integrand)
    i_cum[:, 1:] = np.cumsum(seg, axis=1)
    total = i_cum[:, -1]
    suffix = (total[:, None] - i_cum[:, date_cols]) * np.exp(d_cum[:, date_cols])
    return suffix, total


def fit_cva_surface(
    params: ModelParams,
    grid: SimGrid,
    inner_value,
    n_paths: int,
    seed: int,
    degree: int = 3,
) -> RegressionCvaSurface:
    """Regress realized suffix integrals on ``(l, x, y)`` per rebalancing date.

    ``inner_value(t, l, x)`` supplies the post-jump contract value along the
    paths: a lattice table in the frozen-intensity regime, a fitted surface
    otherwise.  With a frozen loss factor the ``x`` regressor is constant and
    drops out of the fit.
    """
    dates_idx = grid.rebalance_node_indices
    times = grid.times[dates_idx]
    designs = [[] for _ in times]
    responses = [[] for _ in times]
    cva0_parts = []
    for chunk in iter_path_chunks(params, grid, n_paths, seed, mode="tilde"):
        v_vals = np.empty_like(chunk.x)
        for k, t in enumerate(chunk.times):
            v_vals[:, k] = inner_value(float(t), chunk.loss[:, k], chunk.x[:, k])
        suffix, total = _suffix_integrals(params, chunk, v_vals, dates_idx)
        cva0_parts.append(total)
        for i, node in enumerate(dates_idx[:-1]):
            designs[i].append(
                np.column_stack([chunk.loss[:, node], chunk.x[:, node], chunk.y[:, node]])
            )
            responses[i].append(suffix[:, i])
    designs = [np.concatenate(d) if d else np.empty((0, 3)) for d in designs]
    responses = [np.concatenate(r) if r else np.empty(0) for r in responses]

    surface = fit_dated_surface(
        times,
        designs,
        responses,
        degree,
        terminal_fn=lambda z: np.zeros(z.shape[0]),
        upper_fn=lambda t: params.payoff.cap,
    )
    return RegressionCvaSurface(
        params=params, surface=surface, cva0_samples=np.concatenate(cva0_parts)
    )


# ---------------------------------------------------------------------------
# Estimator facade
# ---------------------------------------------------------------------------


@dataclass
class CvaEstimator:
    """Adjustment-factor evaluator plus Monte Carlo point estimation.

    ``f_method`` picks the surface backing the factor and its derivatives:
    ``deterministic`` (frozen-intensity quadrature; exact) or ``regression``
    (fitted per date from simulated suffix integrals).
    """

    params: ModelParams
    grid: SimGrid
    mode: CvaMode
    f_method: str = "deterministic"
    det_surface: DeterministicCvaSurface | None = None
    reg_surface: RegressionCvaSurface | None = None
    v_surface: RegressionSurface | None = None

    # -- surface evaluations -------------------------------------------------

    def f_value(self, t: float, l, x, y) -> np.ndarray:
        if self.f_method == "deterministic":
            return self.det_surface.value(t, l, y)
        return self.reg_surface.value(t, l, x, y)

    def f_dx(self, t: float, l, x, y) -> np.ndarray:
        if self.f_method == "deterministic":
            return self.det_surface.dvalue_dx(t, l, y)
        return self.reg_surface.dvalue_dx(t, l, x, y)

    def f_dy(self, t: float, l, x, y) -> np.ndarray:
        if self.f_method == "deterministic":
            return self.det_surface.dvalue_dy(t, l, y)
        return self.reg_surface.dvalue_dy(t, l, x, y)

    def post_value(self, t, l, x) -> np.ndarray:
        """Inner contract value at the post-jump loss-factor level.

        ``t`` may be a scalar or a per-entry array (for states observed at
        path-specific default times).
        """
        if self.mode == "frozen":
            return self.det_surface.value_table.value(t, l)
        x = np.asarray(x, dtype=float)
        x_post = x + self.params.jump.jump(x)
        if np.ndim(t) == 0:
            return self.v_surface.value(float(t), l, x_post)
        t = np.asarray(t, dtype=float).ravel()
        l = np.asarray(l, dtype=float).ravel()
        x_post = x_post.ravel()
        out = np.empty(len(t))
        for i in range(len(t)):
            out[i] = self.v_surface.value(t[i], l[i : i + 1], x_post[i : i + 1])[0]
        return out

    def cva0(self) -> MonteCarloEstimate:
        p = self.params
        if self.mode == "frozen":
            # Exact anchor regardless of the hedge-surface method.
            f0 = float(self.det_surface.value(0.0, np.array([0.0]), np.array([p.y0]))[0])
            return MonteCarloEstimate(value=p.delta_r * f0, stderr=0.0, n_samples=0)
        est = mc_estimate(self.reg_surface.cva0_samples)
        return MonteCarloEstimate(
            value=p.delta_r * est.value, stderr=p.delta_r * est.stderr, n_samples=est.n_samples
        )

    def cva_value(self, t: float, l, x, y) -> np.ndarray:
        """Pre-default reserve ``delta_r * f``; callers apply (1 - H)."""
        return self.params.delta_r * self.f_value(t, l, x, y)

    def cva_path(self, batch) -> np.ndarray:
        """CVA at rebalancing dates along stored full-mode paths."""
        idx = batch.grid.rebalance_node_indices
        times = batch.times[idx]
        out = np.zeros((len(batch), len(idx)))
        for j, node in enumerate(idx):
            alive = batch.tau > times[j]
            vals = self.cva_value(
                float(times[j]) - batch.times[0],
                batch.loss[:, node], batch.x[:, node], batch.y[:, node],
            )
            out[:, j] = np.where(alive, vals, 0.0)
        return out

    # -- Monte Carlo point estimates ------------------------------------------

    def _mc_samples(
        self, t: float, l: float, x: float, y: float, n_paths: int, seed: int,
        n_steps: int | None = None,
    ) -> np.ndarray:
        p = self.params
        horizon = p.maturity - t
        if horizon <= 0.0:
            return np.zeros(n_paths)
        if n_steps is None:
            n_steps = max(int(round(horizon / self.grid.dt)), 2)
        sub = SimGrid.for_horizon(horizon, n_steps, 1)
        parts = []
        for chunk in iter_path_chunks(
            p, sub, n_paths, seed, mode="tilde",
            start_time=t, initial_loss=l, x_init=x, y_init=y,
        ):
            if self.mode == "frozen":
                v_vals = self.det_surface.value_table.value(
                    chunk.times[None, :], chunk.loss
                )
            else:
                x_post = chunk.x + p.jump.jump(chunk.x)
                v_vals = np.empty_like(chunk.x)
                for k, s in enumerate(chunk.times):
                    v_vals[:, k] = self.v_surface.value(float(s), chunk.loss[:, k], x_post[:, k])
            _, total = _suffix_integrals(p, chunk, v_vals, np.array([0]))
            parts.append(total)
        return np.concatenate(parts)

    def cva_at(
        self, t: float, l: float, x: float, y: float,
        n_paths: int = DEFAULT_POINT_PATHS, seed: int = 0,
        n_steps: int | None = None,
    ) -> MonteCarloEstimate:
        """Monte Carlo estimate of ``f(t, l, x, y)`` with standard error."""
        samples = self._mc_samples(t, l, x, y, n_paths, seed, n_steps)
        return mc_estimate(samples)

    def cva_sensitivities(
        self, t: float, l: float, x: float, y: float,
        n_paths: int = DEFAULT_POINT_PATHS, seed: int = 0,
        bump_x: float = DEFAULT_BUMP_X, bump_y: float = DEFAULT_BUMP_Y,
        n_steps: int | None = None,
    ) -> dict[str, MonteCarloEstimate]:
        """Central finite differences of ``f`` with common random numbers."""
        out: dict[str, MonteCarloEstimate] = {}
        for name, bump, lo_args, hi_args in (
            ("df_dx", bump_x, (t, l, x - bump_x, y), (t, l, x + bump_x, y)),
            ("df_dy", bump_y, (t, l, x, max(y - bump_y, 0.0)), (t, l, x, y + bump_y)),
        ):
            hi = self._mc_samples(*hi_args, n_paths, seed, n_steps)
            lo = self._mc_samples(*lo_args, n_paths, seed, n_steps)
            width = hi_args[3] - lo_args[3] if name == "df_dy" else 2.0 * bump
            est = mc_estimate((hi - lo) / width)
            if est.stderr > 0.25 * abs(est.value) and abs(est.value) > 0:
                warnings.warn(
                    f"{name}: standard error {est.stderr:.3g} exceeds 25% of the "
                    f"estimate {est.value:.3g}", RuntimeWarning,
                )
            out[name] = est
        return out


def make_estimator(
    params: ModelParams,
    grid: SimGrid,
    *,
    seed: int = 0,
    mode: CvaMode | None = None,
    f_method: str = "auto",
    regression_paths: int = DEFAULT_REGRESSION_PATHS,
    degree: int = 3,
    x_start_range: tuple[float, float] | None = None,
    refine: int = 2,
    step: float = DEFAULT_LATTICE_STEP,
    tol: float = DEFAULT_MASS_TOL,
    v_surface: RegressionSurface | None = None,
) -> CvaEstimator:
    mode = mode or select_mode(params)
    if mode == "frozen":
        if f_method == "auto":
            f_method = "deterministic"
        det = build_deterministic_surface(params, grid, refine=refine, step=step, tol=tol)
        reg = None
        if f_method == "regression":
            table = det.value_table
            reg = fit_cva_surface(
                params, grid, lambda t, l, x: table.value(t, l),
                regression_paths, seed + 1, degree,
            )
        return CvaEstimator(
            params=params, grid=grid, mode=mode, f_method=f_method,
            det_surface=det, reg_surface=reg,
        )
    if f_method == "deterministic":
        raise ValueError("deterministic surfaces require a frozen loss factor")
    if v_surface is None:
        v_surface = fit_value_surface(
            params, grid, regression_paths, seed, degree, x_start_range
        )
    jump = params.jump

    def inner(t, l, x):
        x = np.asarray(x, dtype=float)
        return v_surface.value(t, l, x + jump.jump(x))

    reg = fit_cva_surface(params, grid, inner, regression_paths, seed + 1, degree)
    return CvaEstimator(
        params=params, grid=grid, mode=mode, f_method="regression",
        reg_surface=reg, v_surface=v_surface,
    )


# ---------------------------------------------------------------------------
# Wrong-way-risk sweeps
# ---------------------------------------------------------------------------


def payment_at_default_samples(
    params: ModelParams, grid: SimGrid, n_paths: int, seed: int
) -> np.ndarray:
    """Per-path ``H_T e^{-rT} payoff(L_T)`` on paths with the contagion jump.

    By optional sampling this is an exact single-layer representation of the
    time-zero adjustment factor: no inner contract value is needed.
    """
    parts = []
    disc = np.exp(-params.r * params.maturity)
    for chunk in iter_path_chunks(params, grid, n_paths, seed, mode="full"):
        val = np.where(chunk.defaulted, params.payoff.evaluate(chunk.loss[:, -1]), 0.0)
        parts.append(disc * val)
    return np.concatenate(parts)


@dataclass(frozen=True)
class SweepResult:
    """CVA-at-zero estimates across sweep points, with paired increments."""

    parameter: str
    param_values: np.ndarray
    samples: np.ndarray  # [n_points, n_paths] per-path CVA contributions

    @property
    def values(self) -> np.ndarray:
        return self.samples.mean(axis=1)

    @property
    def stderrs(self) -> np.ndarray:
        n = self.samples.shape[1]
        return self.samples.std(axis=1, ddof=1) / np.sqrt(n)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    @property
    def increment_stderrs(self) -> np.ndarray:
        """Standard errors of adjacent-point differences, paired per path."""
        diffs = np.diff(self.samples, axis=0)
        n = diffs.shape[1]
        return diffs.std(axis=1, ddof=1) / np.sqrt(n)

    @property
    def total_increase(self) -> float:
        return float(self.values[-1] - self.values[0])

    def monotone_within(self, k_sigma: float = 3.0) -> bool:
        return bool((self.increments >= -k_sigma * self.increment_stderrs).all())

    def estimates(self) -> tuple[MonteCarloEstimate, ...]:
        return tuple(
            MonteCarloEstimate(value=float(v), stderr=float(se), n_samples=self.samples.shape[1])
            for v, se in zip(self.values, self.stderrs)
        )


def wrong_way_sweep(
    params: ModelParams,
    grid: SimGrid,
    parameter: Literal["gamma", "rho"],
    lo: float = 0.0,
    hi: float = 1.0,
    n_points: int = 11,
    n_paths: int = DEFAULT_SWEEP_PATHS,
    seed: int = 0,
) -> SweepResult:
    """CVA at time zero across a contagion or correlation sweep.

    Every point re-simulates with the same seed (common random numbers);
    claim randomness is counter-addressed per path, so a contagion sweep
    couples the points pathwise and its increments are nonnegative path by
    path.  Each point uses the exact payment-at-default estimator.
    """
    values = np.linspace(lo, hi, n_points)
    rows = []
    for val in values:
        if parameter == "gamma":
            p_i = replace(params, jump=JumpSpec.relative(float(val)))
        elif parameter == "rho":
            p_i = replace(params, rho=float(val))
        else:
            raise ValueError("parameter must be 'gamma' or 'rho'")
        rows.append(
            p_i.delta_r * payment_at_default_samples(p_i, grid, n_paths, seed)
        )
    return SweepResult(
        parameter=parameter, param_values=values, samples=np.stack(rows)
    )
