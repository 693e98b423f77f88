"""CDS valuation on the reinsurer under the square-root default factor.

The survival transform ``E[exp(-int_t^u lam(Y_s) ds) | Y_t = y]`` is
exponential-affine, ``A(u-t) exp(-B(u-t) y)``, with the usual closed-form
Riccati coefficients.  The CDS book value ``g(t, y)`` and its y-derivative
follow by quadrature of closed-form integrands, which keeps the hedge ratio
free of finite-difference noise.  Degenerate parameter limits (zero vol,
zero mean reversion, flat hazard maps) are handled exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import ModelParams


class QuadratureError(RuntimeError):
    """Integral failed to reach the requested absolute tolerance."""


QUAD_TOL = 1e-8


@lru_cache(maxsize=None)
def _gl_nodes(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _integrate(horizon: float, f, tol: float = QUAD_TOL):
    """Gauss-Legendre integral of ``f(tau)`` over [0, horizon], refined until
    two successive node counts agree within ``tol`` absolutely."""
    if horizon <= 0.0:
        probe = f(np.zeros((1, 1)))
        return np.zeros(np.shape(probe)[1:])
    prev = None
    for n in (32, 64, 128, 256):
        x, w = _gl_nodes(n)
        tau = 0.5 * horizon * (x + 1.0)
        vals = f(tau[:, None])
        out = 0.5 * horizon * np.tensordot(w, vals, axes=(0, 0))
        if prev is not None and np.max(np.abs(out - prev)) < tol:
            return out
        prev = out
    raise QuadratureError("CDS quadrature did not converge to tolerance")


# ---------------------------------------------------------------------------
# Hazard transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CirAffineHazard:
    """Affine survival transform for an identity intensity map over a CIR
    (or degenerate mean-reverting / constant) default factor."""

    kappa: float
    mean: float
    sigma: float

    def lam(self, y) -> np.ndarray:
        return np.maximum(np.asarray(y, dtype=float), 0.0)

    def _coeffs(self, tau: np.ndarray):
        tau = np.asarray(tau, dtype=float)
        k, th, s = self.kappa, self.mean, self.sigma
        # The closed form carries exponent 2*k*th/s^2; for negligible s^2 the
        # log terms cancel below machine precision and the exponent amplifies
        # the rounding, so switch to the exact deterministic limit there.
        s2 = s * s
        if s2 > 0.0 and (k * th == 0.0 or s2 > 1e-9 * k * th):
            h = np.sqrt(k * k + 2.0 * s2)
            e = np.exp(h * tau)
            d = 2.0 * h + (k + h) * (e - 1.0)
            b = 2.0 * (e - 1.0) / d
            bp = 4.0 * h * h * e / (d * d)
            w = 2.0 * k * th / s2 if k * th > 0.0 else 0.0
            log_a = w * (np.log(2.0 * h) + 0.5 * (k + h) * tau - np.log(d))
            a = np.exp(log_a)
            ap = a * w * (k + h) * (0.5 - h * e / d)
        elif k > 0.0:
            bp = np.exp(-k * tau)
            b = (1.0 - bp) / k
            a = np.exp(-th * (tau - b))
            ap = -th * (1.0 - bp) * a
        else:
            b = tau
            bp = np.ones_like(tau)
            a = np.ones_like(tau)
            ap = np.zeros_like(tau)
        return a, b, ap, bp

    def survival(self, tau, y) -> np.ndarray:
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        a, b, _, _ = self._coeffs(tau)
        return a * np.exp(-b * y)

    def density(self, tau, y) -> np.ndarray:
        """Sub-density of the default time: -d/du of the survival transform."""
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        a, b, ap, bp = self._coeffs(tau)
        return (a * bp * y - ap) * np.exp(-b * y)

    def dsurvival_dy(self, tau, y) -> np.ndarray:
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        a, b, _, _ = self._coeffs(tau)
        return -b * a * np.exp(-b * y)

    def ddensity_dy(self, tau, y) -> np.ndarray:
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        a, b, ap, bp = self._coeffs(tau)
        return (a * bp - b * (a * bp * y - ap)) * np.exp(-b * y)

    def d2survival_dy2(self, tau, y) -> np.ndarray:
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        a, b, _, _ = self._coeffs(tau)
        return b * b * a * np.exp(-b * y)

    def d2density_dy2(self, tau, y) -> np.ndarray:
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        a, b, ap, bp = self._coeffs(tau)
        return (b * b * (a * bp * y - ap) - 2.0 * b * a * bp) * np.exp(-b * y)


@dataclass(frozen=True)
class FlatHazard:
    """Constant default intensity, independent of the factor level."""

    level: float

    def lam(self, y) -> np.ndarray:
        return np.full_like(np.asarray(y, dtype=float), self.level)

    def survival(self, tau, y) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        return np.exp(-self.level * tau) * np.ones_like(np.asarray(y, dtype=float))

    def density(self, tau, y) -> np.ndarray:
        return self.level * self.survival(tau, y)

    def dsurvival_dy(self, tau, y) -> np.ndarray:
        return np.zeros(np.broadcast(np.asarray(tau), np.asarray(y)).shape)

    ddensity_dy = dsurvival_dy
    d2survival_dy2 = dsurvival_dy
    d2density_dy2 = dsurvival_dy


def hazard_model(params: ModelParams):
    """Survival-transform model implied by the default intensity map."""
    fn = params.intensity.default
    if fn.kind == "constant":
        return FlatHazard(level=fn.level)
    return CirAffineHazard(kappa=params.kappa_y, mean=params.mean_y, sigma=params.sigma_y)


def affine_survival(params: ModelParams, t: float, u: float, y) -> np.ndarray:
    """Closed-form conditional survival ``E[e^{-int_t^u lam(Y) ds} | Y_t=y]``."""
    if u < t:
        raise ValueError("requires t <= u")
    return hazard_model(params).survival(u - t, y)


# ---------------------------------------------------------------------------
# CDS curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CdsCurve:
    """Pre-default CDS book value ``g(t, y)`` and its derivatives.

    ``g`` solves the backward equation with source ``delta_cds*lam(y) - zeta``
    and killing rate ``lam(y) + r``; terminal value zero.  All evaluators are
    pure, vectorized over ``y``, and reentrant.
    """

    hazard: CirAffineHazard | FlatHazard
    rate: float
    delta_cds: float
    zeta: float
    maturity: float

    def _quad(self, t: float, fn_tau_y) -> np.ndarray:
        return _integrate(self.maturity - t, fn_tau_y)

    def value(self, t: float, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = self._quad(
            t,
            lambda tau: np.exp(-self.rate * tau)
            * (self.delta_cds * self.hazard.density(tau, y) - self.zeta * self.hazard.survival(tau, y)),
        )
        return out

    def dvalue_dy(self, t: float, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self._quad(
            t,
            lambda tau: np.exp(-self.rate * tau)
            * (
                self.delta_cds * self.hazard.ddensity_dy(tau, y)
                - self.zeta * self.hazard.dsurvival_dy(tau, y)
            ),
        )

    def d2value_dy2(self, t: float, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self._quad(
            t,
            lambda tau: np.exp(-self.rate * tau)
            * (
                self.delta_cds * self.hazard.d2density_dy2(tau, y)
                - self.zeta * self.hazard.d2survival_dy2(tau, y)
            ),
        )

    def dvalue_dt(self, t: float, y) -> np.ndarray:
        """Exact time derivative: the value depends on t through T - t only."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        h = self.maturity - t
        psi = self.delta_cds * self.hazard.density(h, y) - self.zeta * self.hazard.survival(h, y)
        return -np.exp(-self.rate * h) * psi

    def protection_and_annuity(self, t: float, y) -> tuple[np.ndarray, np.ndarray]:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        prot = self._quad(
            t, lambda tau: np.exp(-self.rate * tau) * self.delta_cds * self.hazard.density(tau, y)
        )
        ann = self._quad(
            t, lambda tau: np.exp(-self.rate * tau) * self.hazard.survival(tau, y)
        )
        return prot, ann


def make_curve(params: ModelParams, zeta: float | None = None) -> CdsCurve:
    """Build the CDS curve; an unset spread resolves to the fair spread."""
    z = zeta if zeta is not None else params.zeta
    if z is None:
        z = fair_spread(params)
    return CdsCurve(
        hazard=hazard_model(params),
        rate=params.r,
        delta_cds=params.delta_cds,
        zeta=float(z),
        maturity=params.maturity,
    )


def fair_spread(params: ModelParams) -> float:
    """Running spread making the CDS worthless at inception."""
    probe = CdsCurve(
        hazard=hazard_model(params),
        rate=params.r,
        delta_cds=params.delta_cds,
        zeta=0.0,
        maturity=params.maturity,
    )
    prot, ann = probe.protection_and_annuity(0.0, params.y0)
    annuity = float(ann[0])
    if annuity <= 0.0:
        raise ValueError("premium annuity is not positive")
    return float(prot[0]) / annuity


def pde_residual(params: ModelParams, curve: CdsCurve, t: float, y) -> np.ndarray:
    """Backward-equation residual of g at interior points (should be ~0)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lam = curve.hazard.lam(y)
    g = curve.value(t, y)
    return (
        curve.dvalue_dt(t, y)
        + params.drift_y(y) * curve.dvalue_dy(t, y)
        + 0.5 * params.sigma_y_fn(y) ** 2 * curve.d2value_dy2(t, y)
        + (curve.delta_cds * lam - curve.zeta)
        - (lam + curve.rate) * g
    )


# ---------------------------------------------------------------------------
# Discounted gains process along simulated paths
# ---------------------------------------------------------------------------


def _discount_integral(r: float, a, b):
    """Exact ``int_a^b e^{-r u} du``, vectorized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if r == 0.0:
        return b - a
    return (np.exp(-r * a) - np.exp(-r * b)) / r


def premium_leg_integral(times: np.ndarray, tau, r: float) -> np.ndarray:
    """Cumulative ``int_0^{t_k} (1 - H_u) e^{-r u} du`` at every grid node.

    Steps fully before the default time use the trapezoid rule; the step
    containing it integrates analytically up to the interpolated crossing.
    Accepts ``tau`` as a scalar or per-path array; returns ``[..., n_nodes]``.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))[:, None]
    disc = np.exp(-r * times)
    t0, t1 = times[:-1], times[1:]
    trap = 0.5 * (disc[:-1] + disc[1:]) * (t1 - t0)
    alive = tau > t1
    crossing = (tau > t0) & (tau <= t1)
    partial = _discount_integral(r, t0, np.minimum(tau, t1))
    contrib = np.where(alive, trap, 0.0) + np.where(crossing, partial, 0.0)
    out = np.zeros(contrib.shape[:-1] + (len(times),))
    np.cumsum(contrib, axis=-1, out=out[..., 1:])
    return out


def gains_at_nodes(
    curve: CdsCurve, times: np.ndarray, y: np.ndarray, tau, node_indices=None
) -> np.ndarray:
    """Discounted gains process S of one CDS unit at the requested nodes.

    ``y`` is ``[n_paths, n_nodes]`` (or 1-D for a single path), ``tau`` the
    per-path default time (inf when none).  S combines the discounted
    pre-default book value, the default payment and the premium outflow.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if node_indices is None:
        node_indices = np.arange(len(times))
    node_indices = np.asarray(node_indices, dtype=int)

    prem = premium_leg_integral(times, tau, curve.rate)[:, node_indices]
    t_sel = times[node_indices]
    alive = tau[:, None] > t_sel[None, :]
    g_vals = np.empty((y.shape[0], len(node_indices)))
    for j, node in enumerate(node_indices):
        g_vals[:, j] = curve.value(float(times[node]), y[:, node])
    disc_nodes = np.exp(-curve.rate * t_sel)[None, :]
    default_paid = np.where(
        tau[:, None] <= t_sel[None, :],
        curve.delta_cds * np.exp(-curve.rate * np.minimum(tau, times[-1]))[:, None],
        0.0,
    )
    return disc_nodes * np.where(alive, g_vals, 0.0) + default_paid - curve.zeta * prem


def gains_increment(curve: CdsCurve, path, start: int, stop: int) -> float:
    """Increment of the discounted gains process over grid nodes (start, stop]."""
    if not start < stop:
        raise ValueError("requires start < stop")
    s = gains_at_nodes(
        curve, path.times, path.y[None, :], np.array([path.tau_r]), [start, stop]
    )
    return float(s[0, 1] - s[0, 0])
