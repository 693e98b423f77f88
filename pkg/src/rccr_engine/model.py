"""Model primitives: claim-size laws, contract payoffs, intensity maps and
the parameter set shared by every pricing and simulation component.

The loss side of the model is a doubly stochastic compound Poisson process
whose arrival intensity is a function of a jump-diffusion factor ``X``; the
default side is a point process with intensity driven by a square-root
diffusion factor ``Y``.  ``ModelParams`` collects every coefficient plus the
contract terms; ``validate`` renders the regularity checks the valuation
theory relies on as a pass/warn/fail report.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import scipy.integrate as integrate
import scipy.special as sc

DEFAULT_INTENSITY_CEILING = 1.0e4


# ---------------------------------------------------------------------------
# Claim-size laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClaimLaw:
    """Distribution of individual claim sizes (gamma or finite discrete).

    ``beta`` is a rate, so Gamma(alpha, beta) has mean ``alpha / beta``.
    Discrete laws carry explicit atoms ``(size, probability)``.
    """

    kind: Literal["gamma", "discrete"]
    alpha: float = 0.0
    beta: float = 0.0
    atoms: tuple[tuple[float, float], ...] = ()

    @staticmethod
    def gamma(alpha: float, beta: float) -> "ClaimLaw":
        if alpha <= 0 or beta <= 0:
            raise ValueError("gamma claim law requires alpha > 0 and beta > 0")
        return ClaimLaw(kind="gamma", alpha=float(alpha), beta=float(beta))

    @staticmethod
    def discrete(atoms) -> "ClaimLaw":
        pts = tuple((float(z), float(p)) for z, p in atoms)
        if not pts:
            raise ValueError("discrete claim law needs at least one atom")
        probs = np.array([p for _, p in pts])
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("atom probabilities must be nonnegative and sum to 1")
        if any(z < 0 for z, _ in pts):
            raise ValueError("claim sizes must be nonnegative")
        return ClaimLaw(kind="discrete", atoms=pts)

    @property
    def m1(self) -> float:
        if self.kind == "gamma":
            return self.alpha / self.beta
        return sum(z * p for z, p in self.atoms)

    @property
    def m2(self) -> float:
        if self.kind == "gamma":
            return self.alpha * (self.alpha + 1.0) / self.beta**2
        return sum(z * z * p for z, p in self.atoms)

    def cdf(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "gamma":
            return sc.gammainc(self.alpha, np.maximum(z, 0.0) * self.beta)
        sizes = np.array([a for a, _ in self.atoms])
        probs = np.array([p for _, p in self.atoms])
        order = np.argsort(sizes)
        cum = np.cumsum(probs[order])
        idx = np.searchsorted(sizes[order], z, side="right")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return out

    def ppf(self, u) -> np.ndarray:
        """Inverse CDF, vectorized; u in (0, 1)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "gamma":
            if self.alpha == 1.0:
                return -np.log1p(-u) / self.beta
            return sc.gammaincinv(self.alpha, u) / self.beta
        sizes = np.array([a for a, _ in self.atoms])
        probs = np.array([p for _, p in self.atoms])
        order = np.argsort(sizes)
        cum = np.cumsum(probs[order])
        idx = np.minimum(np.searchsorted(cum, u, side="left"), len(cum) - 1)
        return sizes[order][idx]

    def quantile(self, q: float) -> float:
        return float(self.ppf(np.asarray(q)))


@dataclass(frozen=True)
class ExcessClaimLaw:
    """Law of the per-claim excess ``(Z - retention)+`` of a base law."""

    base: ClaimLaw
    retention: float

    @property
    def m1(self) -> float:
        val, _ = integrate.quad(
            lambda z: 1.0 - float(self.base.cdf(z + self.retention)), 0.0, np.inf
        )
        return val

    @property
    def m2(self) -> float:
        val, _ = integrate.quad(
            lambda z: 2.0 * z * (1.0 - float(self.base.cdf(z + self.retention))), 0.0, np.inf
        )
        return val

    def cdf(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.where(z < 0.0, 0.0, self.base.cdf(z + self.retention))

    def quantile(self, q: float) -> float:
        return max(self.base.quantile(q) - self.retention, 0.0)


# ---------------------------------------------------------------------------
# Contract payoffs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PayoffSpec:
    """Bounded, nondecreasing, 1-Lipschitz indemnity function.

    ``stop_loss`` pays ``min(cap, (L_T - priority)+)`` on the raw aggregate.
    ``capped_xl`` pays ``min(cap, sum_n (Z_n - retention)+)``; the engine
    aggregates per-claim excesses so the payoff reduces to a stop-loss with
    zero priority on the transformed aggregate.
    """

    kind: Literal["stop_loss", "capped_xl"]
    priority: float
    cap: float

    @staticmethod
    def stop_loss(priority: float, cap: float) -> "PayoffSpec":
        if cap <= 0 or priority < 0:
            raise ValueError("stop-loss needs cap > 0 and priority >= 0")
        return PayoffSpec(kind="stop_loss", priority=float(priority), cap=float(cap))

    @staticmethod
    def capped_xl(retention: float, cap: float) -> "PayoffSpec":
        if cap <= 0 or retention < 0:
            raise ValueError("capped XL needs cap > 0 and retention >= 0")
        return PayoffSpec(kind="capped_xl", priority=float(retention), cap=float(cap))

    @property
    def attachment(self) -> float:
        """Aggregate level where the payoff starts paying."""
        return self.priority if self.kind == "stop_loss" else 0.0

    @property
    def saturation(self) -> float:
        """Aggregate level beyond which the payoff equals the cap."""
        return self.attachment + self.cap

    def evaluate(self, aggregate) -> np.ndarray:
        l = np.asarray(aggregate, dtype=float)
        return np.minimum(self.cap, np.maximum(l - self.attachment, 0.0))

    def transform_claims(self, sizes: np.ndarray) -> np.ndarray:
        """Map raw claim sizes to the aggregate the payoff acts on."""
        if self.kind == "capped_xl":
            return np.maximum(sizes - self.priority, 0.0)
        return sizes


def payoff_eval(spec: PayoffSpec, terminal_loss) -> np.ndarray:
    """Indemnity payment for a terminal aggregate loss value."""
    return spec.evaluate(terminal_loss)


def effective_claim_law(claim: ClaimLaw, payoff: PayoffSpec):
    """Claim law of the aggregate the payoff acts on (excess law for XL)."""
    if payoff.kind == "capped_xl":
        return ExcessClaimLaw(base=claim, retention=payoff.priority)
    return claim


# ---------------------------------------------------------------------------
# Intensity maps and the contagion jump
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntensityFn:
    """Nonnegative, nondecreasing map from a factor value to an intensity.

    The raw map is clipped to ``[0, ceiling]`` so the boundedness assumption
    holds literally; ``raw`` exposes the unclipped value for bound checks.
    """

    kind: Literal["identity", "constant"]
    level: float = 0.0
    ceiling: float = DEFAULT_INTENSITY_CEILING

    @staticmethod
    def identity(ceiling: float = DEFAULT_INTENSITY_CEILING) -> "IntensityFn":
        return IntensityFn(kind="identity", ceiling=float(ceiling))

    @staticmethod
    def constant(level: float, ceiling: float = DEFAULT_INTENSITY_CEILING) -> "IntensityFn":
        if level < 0:
            raise ValueError("constant intensity must be nonnegative")
        return IntensityFn(kind="constant", level=float(level), ceiling=float(ceiling))

    def raw(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return np.maximum(v, 0.0)
        return np.full_like(v, self.level)

    def __call__(self, v) -> np.ndarray:
        return np.minimum(self.raw(v), self.ceiling)


@dataclass(frozen=True)
class IntensityMap:
    """Pair of intensity maps: loss arrivals from ``X``, default from ``Y``."""

    loss: IntensityFn = field(default_factory=IntensityFn.identity)
    default: IntensityFn = field(default_factory=IntensityFn.identity)

    @property
    def ceiling(self) -> float:
        return max(self.loss.ceiling, self.default.ceiling)


@dataclass(frozen=True)
class JumpSpec:
    """Upward jump of the loss factor at the default time.

    ``relative`` scales the pre-jump factor (size gamma * x); ``absolute``
    adds a fixed amount.
    """

    kind: Literal["relative", "absolute"]
    size: float

    @staticmethod
    def relative(gamma: float) -> "JumpSpec":
        if gamma < 0:
            raise ValueError("relative jump size must be nonnegative")
        return JumpSpec(kind="relative", size=float(gamma))

    @staticmethod
    def absolute(size: float) -> "JumpSpec":
        if size < 0:
            raise ValueError("absolute jump size must be nonnegative")
        return JumpSpec(kind="absolute", size=float(size))

    def jump(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "relative":
            return self.size * x
        return np.full_like(x, self.size)


# ---------------------------------------------------------------------------
# Full parameter set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """All model and contract parameters; immutable and shareable.

    Factor dynamics (risk-neutral):
      dX = jump(X-) dH + kappa_x (mean_x - X) dt + sigma_x X dW1
      dY = kappa_y (mean_y - Y) dt + sigma_y sqrt(Y) (rho dW1 + sqrt(1-rho^2) dW2)

    ``zeta`` may be left ``None``; it then resolves to the fair spread of the
    hedging CDS at time zero.
    """

    x0: float
    y0: float
    jump: JumpSpec
    kappa_x: float
    mean_x: float
    sigma_x: float
    kappa_y: float
    mean_y: float
    sigma_y: float
    rho: float
    r: float
    maturity: float
    delta_r: float
    delta_cds: float
    claim: ClaimLaw
    payoff: PayoffSpec
    zeta: float | None = None
    intensity: IntensityMap = field(default_factory=IntensityMap)

    def with_zeta(self, zeta: float) -> "ModelParams":
        return replace(self, zeta=float(zeta))

    @property
    def loss_intensity_pre(self) -> float:
        """Loss intensity at the initial factor level."""
        return float(self.intensity.loss(self.x0))

    @property
    def loss_intensity_post(self) -> float:
        """Loss intensity at the post-jump initial factor level."""
        return float(self.intensity.loss(self.x0 + float(self.jump.jump(self.x0))))

    @property
    def feller_lhs(self) -> float:
        return 2.0 * self.kappa_y * self.mean_y

    @property
    def feller_ok(self) -> bool:
        return self.feller_lhs >= self.sigma_y**2

    def sigma_x_fn(self, x) -> np.ndarray:
        return self.sigma_x * np.asarray(x, dtype=float)

    def sigma_y_fn(self, y) -> np.ndarray:
        return self.sigma_y * np.sqrt(np.maximum(np.asarray(y, dtype=float), 0.0))

    def drift_x(self, x) -> np.ndarray:
        return self.kappa_x * (self.mean_x - np.asarray(x, dtype=float))

    def drift_y(self, y) -> np.ndarray:
        return self.kappa_y * (self.mean_y - np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

Status = Literal["pass", "warn", "fail"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: Status
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    @property
    def failures(self) -> tuple[CheckResult, ...]:
        return tuple(c for c in self.checks if c.status == "fail")

    @property
    def warnings(self) -> tuple[CheckResult, ...]:
        return tuple(c for c in self.checks if c.status == "warn")

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _eigmin_2x2(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    half_tr = 0.5 * (a + b)
    rad = np.sqrt(0.25 * (a - b) ** 2 + c**2)
    return half_tr - rad


def validate(params: ModelParams) -> ValidationReport:
    """Check positivity constraints and the regularity conditions.

    Hard constraint violations (nonpositive horizon/spread/initial factors,
    loss-given-default outside (0,1], correlation outside [0,1]) are ``fail``;
    regularity conditions that the model family only satisfies in a weakened
    sense are ``warn`` with a numeric bound in the detail string.
    """
    checks: list[CheckResult] = []
    p = params

    def add(name: str, status: Status, detail: str) -> None:
        checks.append(CheckResult(name=name, status=status, detail=detail))

    # Hard parameter constraints.
    for name, value in (("maturity", p.maturity), ("x0", p.x0), ("y0", p.y0)):
        if not np.isfinite(value) or value <= 0:
            add(name, "fail", f"{name} must be positive, got {value}")
        else:
            add(name, "pass", f"{name}={value}")
    if p.zeta is not None:
        if not np.isfinite(p.zeta) or p.zeta <= 0:
            add("zeta", "fail", f"CDS spread must be positive, got {p.zeta}")
        else:
            add("zeta", "pass", f"zeta={p.zeta}")
    else:
        add("zeta", "pass", "zeta unset; resolves to the fair spread at t=0")
    for name, value in (("delta_r", p.delta_r), ("delta_cds", p.delta_cds)):
        if not (0.0 < value <= 1.0):
            add(name, "fail", f"{name} must lie in (0, 1], got {value}")
        else:
            add(name, "pass", f"{name}={value}")
    if not (0.0 <= p.rho <= 1.0):
        add("rho", "fail", f"rho must lie in [0, 1], got {p.rho}")
    else:
        add("rho", "pass", f"rho={p.rho}")

    # Lipschitz coefficients.  Drifts and the loss-factor volatility are
    # affine; the square-root default-factor volatility is Hoelder-1/2 at the
    # origin, which is acceptable when the boundary is unattainable.
    if p.sigma_y == 0.0:
        add("A1_lipschitz", "pass", "all coefficient maps affine")
    elif p.feller_ok:
        add(
            "A1_lipschitz",
            "pass",
            "square-root volatility; boundary unattainable "
            f"(2*kappa_y*mean_y={p.feller_lhs:.6g} >= sigma_y^2={p.sigma_y**2:.6g})",
        )
    else:
        add(
            "A1_lipschitz",
            "warn",
            "square-root volatility with attainable boundary "
            f"(2*kappa_y*mean_y={p.feller_lhs:.6g} < sigma_y^2={p.sigma_y**2:.6g})",
        )

    # Ellipticity of the instantaneous covariance.  With a frozen loss factor
    # the condition reduces to the default-factor volatility being bounded
    # away from zero on the state region.
    y_hi = 4.0 * max(p.y0, p.mean_y, 1e-3)
    y_grid = np.linspace(max(1e-6, 0.01 * max(p.y0, p.mean_y)), y_hi, 65)
    sig_y = p.sigma_y_fn(y_grid)
    if p.kappa_x == 0.0 and p.sigma_x == 0.0:
        bound = float(sig_y.min())
        if bound > 0:
            add("A2_ellipticity", "pass",
                f"frozen loss factor; sigma_y bounded below by {bound:.6g} on the y-grid")
        else:
            add("A2_ellipticity", "warn",
                "degenerate diffusion (sigma_y vanishes on the state region)")
    else:
        x_hi = 2.0 * (p.x0 + float(p.jump.jump(p.x0))) + 1.0
        x_grid = np.linspace(max(1e-6, 0.25 * p.x0), x_hi, 65)
        xx, yy = np.meshgrid(x_grid, y_grid, indexing="ij")
        sx = p.sigma_x_fn(xx)
        sy = p.sigma_y_fn(yy)
        eig = _eigmin_2x2(sx**2, sy**2, p.rho * sx * sy)
        bound = float(eig.min())
        add(
            "A2_ellipticity",
            "warn",
            "linear loss-factor volatility degenerates as x -> 0; "
            f"eigenvalue lower bound {bound:.6g} on the sampled box",
        )

    # Intensity maps: clipped to the ceiling, hence bounded; both supported
    # kinds are nondecreasing and nonnegative by construction.
    add(
        "A3_intensity_bounds",
        "pass",
        f"loss/default intensities clipped to [0, {p.intensity.loss.ceiling:.6g}] "
        f"/ [0, {p.intensity.default.ceiling:.6g}]",
    )

    # Claim-size second moment.
    m1, m2 = p.claim.m1, p.claim.m2
    if np.isfinite(m2):
        add("A4_claim_moments", "pass", f"m1={m1:.6g}, m2={m2:.6g}")
    else:
        add("A4_claim_moments", "fail", "claim second moment is not finite")

    if p.sigma_y == 0.0:
        add("feller", "pass", "deterministic default factor (sigma_y=0)")
    elif p.feller_ok:
        add("feller", "pass",
            f"2*kappa_y*mean_y={p.feller_lhs:.6g} >= sigma_y^2={p.sigma_y**2:.6g}")
    else:
        add("feller", "warn",
            f"2*kappa_y*mean_y={p.feller_lhs:.6g} < sigma_y^2={p.sigma_y**2:.6g}")

    return ValidationReport(checks=tuple(checks))
