"""Counterparty-risk-free contract valuation on a loss lattice.

Two routes realize the backward equation for the contract value:

* for a frozen loss-intensity regime the aggregate claim distribution is
  compound Poisson, computed exactly on a lattice by Panjer recursion and
  folded against the payoff into a ``LossValueTable``;
* for a diffusing intensity factor a least-squares Monte Carlo projection of
  the discounted terminal payoff on a polynomial basis gives a fitted value
  surface per rebalancing date.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.signal as signal

from .model import ModelParams, effective_claim_law


class LatticeBoundError(ValueError):
    """Lattice support required by the inputs exceeds the configured bound."""


class RankDeficientError(RuntimeError):
    """Regression design has fewer observations than basis functions."""


DEFAULT_LATTICE_STEP = 0.0625
DEFAULT_MASS_TOL = 1e-10
DEFAULT_MAX_LATTICE_POINTS = 1 << 18
RIDGE_SHRINKAGE = 1e-8


# ---------------------------------------------------------------------------
# Claim-size discretization and Panjer recursion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscretizedClaims:
    """Claim-size law rounded to the lattice {0, h, 2h, ...}.

    ``pmf[k]`` is the mass of ``[k*h - h/2, k*h + h/2)``; the right tail past
    the truncation point is dropped and recorded in ``truncated_mass``.
    """

    step: float
    pmf: np.ndarray
    truncated_mass: float

    @property
    def mean(self) -> float:
        return self.step * float(np.arange(len(self.pmf)) @ self.pmf)

    @property
    def second_moment(self) -> float:
        k = np.arange(len(self.pmf), dtype=float)
        return float((self.step * k) ** 2 @ self.pmf)


def discretize_claims(
    law,
    step: float,
    tol: float = DEFAULT_MASS_TOL,
    max_points: int = DEFAULT_MAX_LATTICE_POINTS,
) -> DiscretizedClaims:
    """Round a claim-size law to the lattice by mass-of-cell assignment.

    ``law`` needs ``cdf`` and ``quantile``; gamma and discrete laws and the
    per-claim excess law all qualify.
    """
    if step <= 0:
        raise ValueError("lattice step must be positive")
    upper = law.quantile(1.0 - tol)
    n = int(np.ceil(upper / step)) + 2
    if n > max_points:
        raise LatticeBoundError(
            f"claim support needs {n} lattice points, bound is {max_points}"
        )
    edges = (np.arange(n + 1) - 0.5) * step
    cdf_vals = law.cdf(edges)
    cdf_vals[0] = 0.0
    pmf = np.diff(cdf_vals)
    pmf = np.maximum(pmf, 0.0)
    return DiscretizedClaims(step=float(step), pmf=pmf, truncated_mass=float(1.0 - pmf.sum()))


@dataclass(frozen=True)
class AggregateDistribution:
    """Compound Poisson aggregate on the claim lattice."""

    step: float
    pmf: np.ndarray
    truncated_mass: float

    @property
    def mean(self) -> float:
        return self.step * float(np.arange(len(self.pmf)) @ self.pmf)

    @property
    def variance(self) -> float:
        k = self.step * np.arange(len(self.pmf), dtype=float)
        m = float(k @ self.pmf)
        return float((k - m) ** 2 @ self.pmf)


def _panjer_pmf(lam: float, severity: np.ndarray, n_out: int) -> np.ndarray:
    """Poisson-Panjer recursion; severity pmf may carry mass at zero."""
    g = np.zeros(n_out)
    p0 = severity[0] if len(severity) else 0.0
    g[0] = np.exp(-lam * (1.0 - p0))
    if len(severity) < 2:
        return g
    j = np.arange(1, len(severity), dtype=float)
    jp = j * severity[1:]
    for k in range(1, n_out):
        m = min(k, len(severity) - 1)
        g[k] = (lam / k) * float(jp[:m] @ g[k - m : k][::-1])
    return g


def panjer_aggregate(
    claims: DiscretizedClaims,
    intensity: float,
    horizon: float,
    max_points: int = DEFAULT_MAX_LATTICE_POINTS,
    n_points: int | None = None,
) -> AggregateDistribution:
    """Aggregate-loss distribution of a compound Poisson over ``horizon``.

    The expected count is ``intensity * horizon``.  When the seed term of the
    recursion would underflow, the expected count is halved until it is safe
    and the result is squared back up by self-convolution.
    """
    if intensity < 0 or horizon < 0:
        raise ValueError("intensity and horizon must be nonnegative")
    lam = intensity * horizon
    if lam == 0.0 or len(claims.pmf) == 0:
        return AggregateDistribution(step=claims.step, pmf=np.ones(1), truncated_mass=0.0)

    if n_points is None:
        m1 = max(claims.mean, 0.0)
        m2 = max(claims.second_moment, claims.step**2)
        span = lam * m1 + 12.0 * np.sqrt(lam * m2) + len(claims.pmf) * claims.step
        n_points = min(max_points, int(np.ceil(span / claims.step)) + 2)

    p0 = float(claims.pmf[0])
    halvings = 0
    effective = lam
    while effective * (1.0 - p0) > 700.0:
        effective *= 0.5
        halvings += 1
    g = _panjer_pmf(effective, claims.pmf, n_points)
    for _ in range(halvings):
        g = np.convolve(g, g)[:n_points]
    return AggregateDistribution(
        step=claims.step, pmf=g, truncated_mass=float(max(1.0 - g.sum(), 0.0))
    )


# ---------------------------------------------------------------------------
# Lattice value tables (frozen-intensity regime)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossValueTable:
    """Contract value ``v(t, l)`` for a frozen loss-intensity regime.

    Values sit on a rectangular (time, loss-lattice) grid; evaluation
    interpolates linearly in both directions.  The lattice reaches the payoff
    saturation point, beyond which the value equals the discounted cap, so
    clamping to the last column is exact.
    """

    intensity: float
    t_grid: np.ndarray
    step: float
    values: np.ndarray  # [n_t, n_l]
    rate: float
    cap: float
    maturity: float

    @property
    def lattice(self) -> np.ndarray:
        return self.step * np.arange(self.values.shape[1])

    def value(self, t, loss) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        loss = np.asarray(loss, dtype=float)
        t_b, l_b = np.broadcast_arrays(t, loss)
        t_c = np.clip(t_b, self.t_grid[0], self.t_grid[-1])
        it = np.clip(np.searchsorted(self.t_grid, t_c, side="right") - 1, 0,
                     len(self.t_grid) - 2)
        dt_col = self.t_grid[it + 1] - self.t_grid[it]
        wt = np.where(dt_col > 0, (t_c - self.t_grid[it]) / np.where(dt_col > 0, dt_col, 1.0), 0.0)

        n_l = self.values.shape[1]
        pos = np.clip(l_b, 0.0, None) / self.step
        il = np.clip(np.floor(pos).astype(int), 0, n_l - 2)
        wl = np.clip(pos - il, 0.0, 1.0)

        v00 = self.values[it, il]
        v01 = self.values[it, il + 1]
        v10 = self.values[it + 1, il]
        v11 = self.values[it + 1, il + 1]
        lo = v00 * (1 - wl) + v01 * wl
        hi = v10 * (1 - wl) + v11 * wl
        return lo * (1 - wt) + hi * wt

    def column_extended(self, t_index: int, extra: int) -> np.ndarray:
        """Time slice padded with the saturated value past the lattice end."""
        col = self.values[t_index]
        disc = np.exp(-self.rate * (self.maturity - self.t_grid[t_index]))
        return np.concatenate([col, np.full(extra, self.cap * disc)])

    def grid_rows(self):
        """Yield ``(t, l, value)`` rows for CSV export."""
        lat = self.lattice
        for i, t in enumerate(self.t_grid):
            for j, l in enumerate(lat):
                yield float(t), float(l), float(self.values[i, j])


def build_loss_value_table(
    params: ModelParams,
    regime_intensity: float,
    t_grid: Sequence[float],
    step: float = DEFAULT_LATTICE_STEP,
    tol: float = DEFAULT_MASS_TOL,
    max_points: int = DEFAULT_MAX_LATTICE_POINTS,
) -> LossValueTable:
    """Tabulate the discounted expected payoff under a frozen intensity.

    ``v(t, l) = exp(-r (T - t)) E[payoff(l + A)]`` with ``A`` the compound
    Poisson aggregate over ``T - t`` at ``regime_intensity``; the terminal
    slice is the payoff itself.
    """
    payoff = params.payoff
    t_grid = np.asarray(sorted(set(float(t) for t in t_grid)), dtype=float)
    if abs(t_grid[-1] - params.maturity) > 1e-12:
        t_grid = np.append(t_grid, params.maturity)
    law = effective_claim_law(params.claim, payoff)
    claims = discretize_claims(law, step, tol, max_points)

    n_l = int(np.ceil(payoff.saturation / step)) + 2
    values = np.empty((len(t_grid), n_l))
    for i, t in enumerate(t_grid):
        horizon = params.maturity - t
        agg = panjer_aggregate(claims, regime_intensity, horizon, max_points)
        n_a = len(agg.pmf)
        phi_ext = payoff.evaluate(step * np.arange(n_l + n_a - 1))
        disc = np.exp(-params.r * horizon)
        col = disc * signal.fftconvolve(phi_ext, agg.pmf[::-1], mode="valid")
        # Dropped tail mass is bounded by tol * cap; assign it the cap so the
        # column stays a convex combination reaching the saturated value.
        col += disc * agg.truncated_mass * payoff.cap
        values[i] = np.minimum(col, disc * payoff.cap)
    return LossValueTable(
        intensity=float(regime_intensity),
        t_grid=t_grid,
        step=float(step),
        values=values,
        rate=params.r,
        cap=payoff.cap,
        maturity=params.maturity,
    )


# ---------------------------------------------------------------------------
# Least-squares Monte Carlo surfaces
# ---------------------------------------------------------------------------


def _poly_exponents(n_features: int, degree: int) -> np.ndarray:
    """Multi-indices with total degree <= degree, intercept first."""
    exps = []

    def rec(prefix, remaining, budget):
        if remaining == 0:
            exps.append(tuple(prefix))
            return
        for p in range(budget + 1):
            rec(prefix + [p], remaining - 1, budget - p)

    rec([], n_features, degree)
    exps.sort(key=lambda e: (sum(e), e))
    return np.array(exps, dtype=int)


def _design(z: np.ndarray, exps: np.ndarray, mu: np.ndarray, sd: np.ndarray) -> np.ndarray:
    zs = (z - mu) / sd
    cols = [np.prod([zs[:, j] ** e[j] for j in range(z.shape[1])], axis=0) for e in exps]
    return np.column_stack(cols)


@dataclass
class RegressionSurface:
    """Per-date polynomial fit of a conditional expectation.

    Evaluation blends the two bracketing dates linearly in ``t``; the last
    grid time is the maturity where ``terminal_fn`` (exact payoff, or zero)
    replaces the fit.  Fitted values are clamped to ``[lower, upper(t)]``.
    """

    times: np.ndarray
    exps: np.ndarray
    coeffs: np.ndarray  # [n_dates, n_basis]
    mu: np.ndarray  # [n_dates, d]
    sd: np.ndarray
    pred_cov: np.ndarray  # [n_dates, n_basis, n_basis]
    terminal_fn: Callable[[np.ndarray], np.ndarray]
    upper_fn: Callable[[float], float]
    lower: float = 0.0

    @property
    def n_features(self) -> int:
        return self.exps.shape[1]

    def _date_eval(self, i: int, z: np.ndarray) -> np.ndarray:
        if i == len(self.times) - 1:
            return self.terminal_fn(z)
        x = _design(z, self.exps, self.mu[i], self.sd[i])
        return x @ self.coeffs[i]

    def _date_grad(self, i: int, z: np.ndarray, feature: int) -> np.ndarray:
        if i == len(self.times) - 1:
            return np.zeros(z.shape[0])
        zs = (z - self.mu[i]) / self.sd[i]
        grad = np.zeros(z.shape[0])
        for b, e in enumerate(self.exps):
            if e[feature] == 0:
                continue
            term = np.full(z.shape[0], float(e[feature]))
            for j in range(z.shape[1]):
                p = e[j] - 1 if j == feature else e[j]
                if p:
                    term = term * zs[:, j] ** p
            grad += self.coeffs[i][b] * term
        return grad / self.sd[i][feature]

    def _brackets(self, t: float) -> tuple[int, int, float]:
        t = float(np.clip(t, self.times[0], self.times[-1]))
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0,
                        len(self.times) - 2))
        span = self.times[i + 1] - self.times[i]
        w = (t - self.times[i]) / span if span > 0 else 0.0
        return i, i + 1, w

    def value(self, t: float, *features) -> np.ndarray:
        z = np.column_stack([np.asarray(f, dtype=float).ravel() for f in features])
        i, j, w = self._brackets(t)
        out = (1 - w) * self._date_eval(i, z) + w * self._date_eval(j, z)
        return np.clip(out, self.lower, self.upper_fn(t))

    def gradient(self, t: float, feature: int, *features) -> np.ndarray:
        z = np.column_stack([np.asarray(f, dtype=float).ravel() for f in features])
        i, j, w = self._brackets(t)
        return (1 - w) * self._date_grad(i, z, feature) + w * self._date_grad(j, z, feature)

    def prediction_stderr(self, t: float, *features) -> np.ndarray:
        """Approximate standard error of the fitted value at a state."""
        z = np.column_stack([np.asarray(f, dtype=float).ravel() for f in features])
        i, j, w = self._brackets(t)
        idx = i if w < 0.5 else j
        if idx == len(self.times) - 1:
            return np.zeros(z.shape[0])
        x = _design(z, self.exps, self.mu[idx], self.sd[idx])
        var = np.einsum("nb,bc,nc->n", x, self.pred_cov[idx], x)
        return np.sqrt(np.maximum(var, 0.0))


def fit_dated_surface(
    times: Sequence[float],
    designs: Sequence[np.ndarray],
    responses: Sequence[np.ndarray],
    degree: int,
    terminal_fn: Callable[[np.ndarray], np.ndarray],
    upper_fn: Callable[[float], float],
) -> RegressionSurface:
    """Least-squares fit per date; times must end at the maturity.

    Rank-deficient designs with enough observations fall back to a ridge
    solve with shrinkage ``1e-8``; fewer observations than basis functions
    raise ``RankDeficientError``.
    """
    times = np.asarray(times, dtype=float)
    d = designs[0].shape[1]
    exps = _poly_exponents(d, degree)
    n_basis = len(exps)
    n_dates = len(times)
    coeffs = np.zeros((n_dates, n_basis))
    mus = np.zeros((n_dates, d))
    sds = np.ones((n_dates, d))
    covs = np.zeros((n_dates, n_basis, n_basis))

    for i in range(n_dates - 1):
        z = np.asarray(designs[i], dtype=float)
        y = np.asarray(responses[i], dtype=float)
        n = z.shape[0]
        if n < n_basis:
            raise RankDeficientError(
                f"date {times[i]:.4f}: {n} observations for {n_basis} basis functions"
            )
        mu = z.mean(axis=0)
        sd = z.std(axis=0)
        # Degenerate regressors (constant up to rounding) drop out of the fit.
        floor = 1e-9 * np.maximum(1.0, np.abs(mu))
        sd = np.where(sd > floor, sd, 1.0)
        x = _design(z, exps, mu, sd)
        beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
        xtx = x.T @ x
        if rank < n_basis:
            beta = np.linalg.solve(xtx + RIDGE_SHRINKAGE * np.eye(n_basis), x.T @ y)
        resid = y - x @ beta
        dof = max(n - rank, 1)
        sigma2 = float(resid @ resid) / dof
        covs[i] = sigma2 * np.linalg.pinv(xtx)
        coeffs[i] = beta
        mus[i] = mu
        sds[i] = sd

    return RegressionSurface(
        times=times,
        exps=exps,
        coeffs=coeffs,
        mu=mus,
        sd=sds,
        pred_cov=covs,
        terminal_fn=terminal_fn,
        upper_fn=upper_fn,
    )


def regression_value(params: ModelParams, batch, degree: int = 3) -> RegressionSurface:
    """Fit the contract value surface ``v(t, l, x)`` from a contagion-free batch.

    The response at each rebalancing date is the discounted terminal payoff;
    the regressors are the aggregate loss and the intensity factor observed
    at that date.
    """
    dates_idx = batch.grid.rebalance_node_indices
    times = batch.times[dates_idx]
    terminal_payoff = params.payoff.evaluate(batch.loss[:, -1])
    designs = []
    responses = []
    for i, node in enumerate(dates_idx[:-1]):
        designs.append(np.column_stack([batch.loss[:, node], batch.x[:, node]]))
        disc = np.exp(-params.r * (params.maturity - times[i]))
        responses.append(disc * terminal_payoff)
    designs.append(np.empty((0, 2)))
    responses.append(np.empty(0))

    def terminal(z: np.ndarray) -> np.ndarray:
        return params.payoff.evaluate(z[:, 0])

    def upper(t: float) -> float:
        return params.payoff.cap * np.exp(-params.r * (params.maturity - t))

    return fit_dated_surface(times, designs, responses, degree, terminal, upper)
