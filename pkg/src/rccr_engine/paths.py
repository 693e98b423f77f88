"""Joint simulation of the loss factor, default factor, claims and default.

Construction per path, on a uniform grid:

* the default factor advances by a positivity-preserving (full-truncation)
  Euler step; the default time is the first crossing of the running
  trapezoidal hazard integral against an independent unit-exponential
  threshold, located inside the step by linear interpolation;
* the loss factor advances by an Euler step; in ``full`` mode the contagion
  jump is added at the first grid node past the default time;
* claim arrivals per step are conditionally Poisson at the left-endpoint
  intensity (drawn by exact inverse-CDF from counter-based uniforms), with
  i.i.d. sizes indexed by claim number, so the ``full`` and ``tilde``
  (contagion-suppressed) variants of a path coincide bitwise before default.

Batches are generated block-wise with a fixed internal block size; results
depend only on ``(seed, n_paths, grid, params, mode)`` and initial state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import rng
from .model import ModelParams

ENGINE_BLOCK = 16384
_MAX_STORED_BYTES = 1_500_000_000


class SimulationError(RuntimeError):
    """Raised when the loss intensity exceeds its configured ceiling."""


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    n_samples: int

    def halfwidth(self, k: float = 3.0) -> float:
        return k * self.stderr


def mc_estimate(samples: np.ndarray) -> MonteCarloEstimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return MonteCarloEstimate(value=float(samples.mean()), stderr=se, n_samples=n)


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimGrid:
    """Uniform time grid with a rebalancing stride that divides the steps."""

    n_steps: int
    dt: float
    rebalance_stride: int = 1

    def __post_init__(self):
        if self.n_steps < 1 or self.dt <= 0:
            raise ValueError("need n_steps >= 1 and dt > 0")
        if self.rebalance_stride < 1 or self.n_steps % self.rebalance_stride:
            raise ValueError("rebalance stride must divide n_steps")

    @staticmethod
    def for_horizon(horizon: float, n_steps: int, n_rebalance: int = 1) -> "SimGrid":
        if n_steps % n_rebalance:
            raise ValueError("n_rebalance must divide n_steps")
        return SimGrid(n_steps=n_steps, dt=horizon / n_steps,
                       rebalance_stride=n_steps // n_rebalance)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    @property
    def rebalance_node_indices(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.rebalance_stride)

    @property
    def rebalance_times(self) -> np.ndarray:
        return self.times[self.rebalance_node_indices]


def default_grid(params: ModelParams, n_steps: int = 520, n_rebalance: int = 26) -> SimGrid:
    """Half-week substeps under biweekly rebalancing on a one-year horizon."""
    return SimGrid.for_horizon(params.maturity, n_steps, n_rebalance)


# ---------------------------------------------------------------------------
# Scenario containers
# ---------------------------------------------------------------------------


@dataclass
class ScenarioPath:
    """One simulated trajectory with its marked claim arrivals."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    loss: np.ndarray
    claim_times: np.ndarray
    claim_sizes: np.ndarray
    tau_r: float
    tilde: bool

    @property
    def hr(self) -> np.ndarray:
        return (self.times >= self.tau_r).astype(np.int8)

    @property
    def counts(self) -> np.ndarray:
        return np.searchsorted(self.claim_times, self.times, side="right")


@dataclass
class PathChunk:
    """Block of simulated paths with node arrays and per-path functionals."""

    offset: int
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    loss: np.ndarray
    tau: np.ndarray
    l_at_default: np.ndarray
    x_at_default: np.ndarray
    lam_l_int: np.ndarray
    lam_r_stopped_int: np.ndarray
    lam_r_full_int: np.ndarray
    n_claims: np.ndarray
    claim_times: list | None = None
    claim_sizes: list | None = None

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def defaulted(self) -> np.ndarray:
        return np.isfinite(self.tau)


@dataclass
class PathBatch:
    """Stored batch of trajectories; indexable into ``ScenarioPath`` views."""

    grid: SimGrid
    params: ModelParams
    mode: str
    seed: int
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    loss: np.ndarray
    tau: np.ndarray
    l_at_default: np.ndarray
    x_at_default: np.ndarray
    lam_l_int: np.ndarray
    lam_r_stopped_int: np.ndarray
    lam_r_full_int: np.ndarray
    n_claims: np.ndarray
    claim_times: list = field(default_factory=list)
    claim_sizes: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def hr(self) -> np.ndarray:
        return self.times[None, :] >= self.tau[:, None]

    @property
    def defaulted(self) -> np.ndarray:
        return np.isfinite(self.tau)

    def path(self, i: int) -> ScenarioPath:
        return ScenarioPath(
            times=self.times,
            x=self.x[i],
            y=self.y[i],
            loss=self.loss[i],
            claim_times=self.claim_times[i],
            claim_sizes=self.claim_sizes[i],
            tau_r=float(self.tau[i]),
            tilde=self.mode == "tilde",
        )

    def __getitem__(self, i: int) -> ScenarioPath:
        return self.path(i)

    def write_csv(self, fileobj, header_comment: str | None = None) -> None:
        """Dump node values as ``path,time,x,y,loss,hr`` rows."""
        if header_comment:
            fileobj.write(f"# {header_comment}\n")
        fileobj.write("path,time,x,y,loss,hr\n")
        hr = self.hr
        for i in range(len(self)):
            for k, t in enumerate(self.times):
                fileobj.write(
                    f"{i},{t:.10g},{self.x[i, k]:.10g},{self.y[i, k]:.10g},"
                    f"{self.loss[i, k]:.10g},{int(hr[i, k])}\n"
                )


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


def _simulate_block(
    params: ModelParams,
    grid: SimGrid,
    seed: int,
    offset: int,
    n: int,
    mode: str,
    start_time: float,
    initial_loss: float,
    x_init,
    y_init,
    store_claims: bool,
) -> PathChunk:
    k_steps = grid.n_steps
    dt = grid.dt
    sqrt_dt = math.sqrt(dt)
    times = start_time + grid.times
    p = params
    loss_map = p.intensity.loss
    default_map = p.intensity.default
    rho2 = math.sqrt(max(1.0 - p.rho**2, 0.0))
    apply_jump = mode == "full"

    gen = rng.philox_generator(seed, offset // ENGINE_BLOCK, rng.STREAM_DIFFUSION)
    thresholds = gen.standard_exponential(n)

    pid = np.arange(offset, offset + n, dtype=np.int64)
    x = np.full(n, p.x0 if x_init is None else 0.0)
    if x_init is not None:
        x[:] = np.asarray(x_init, dtype=float)
    y = np.full(n, p.y0 if y_init is None else float(y_init))
    loss = np.full(n, float(initial_loss))

    x_nodes = np.empty((n, k_steps + 1))
    y_nodes = np.empty((n, k_steps + 1))
    loss_nodes = np.empty((n, k_steps + 1))
    x_nodes[:, 0], y_nodes[:, 0], loss_nodes[:, 0] = x, y, loss

    tau = np.full(n, np.inf)
    defaulted = np.zeros(n, dtype=bool)
    hazard_int = np.zeros(n)
    lam_r_stopped = np.zeros(n)
    lam_l_int = np.zeros(n)
    claim_counter = np.zeros(n, dtype=np.int64)
    l_at_default = np.zeros(n)
    x_at_default = np.zeros(n)

    claim_records: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    lam_r_left = default_map(y)
    for k in range(k_steps):
        lam_l_raw = loss_map.raw(x)
        if (lam_l_raw > loss_map.ceiling).any():
            raise SimulationError(
                f"loss intensity {lam_l_raw.max():.6g} exceeds ceiling "
                f"{loss_map.ceiling:.6g} at step {k}"
            )
        lam_l = np.minimum(lam_l_raw, loss_map.ceiling)
        lam_l_int += lam_l * dt

        # Claim arrivals at the left-endpoint intensity.
        mu = lam_l * dt
        if mu.any():
            u_cnt = rng.counter_uniform(seed, rng.STREAM_CLAIM_COUNTS, pid, k)
            counts = rng.poisson_from_uniform(u_cnt, mu)
        else:
            counts = np.zeros(n, dtype=np.int64)
        total = int(counts.sum())
        if total:
            rep = np.repeat(np.arange(n), counts)
            starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
            within = np.arange(total) - np.repeat(starts, counts)
            claim_idx = claim_counter[rep] + within
            u_size = rng.counter_uniform(seed, rng.STREAM_CLAIM_SIZES, pid[rep], claim_idx)
            sizes = p.payoff.transform_claims(p.claim.ppf(u_size))
            step_loss = np.bincount(rep, weights=sizes, minlength=n)
            claim_counter += counts
        else:
            rep = np.empty(0, dtype=np.int64)
            claim_idx = sizes = np.empty(0)
            step_loss = np.zeros(n)

        # Diffusion advance; the default factor uses full-truncation Euler.
        z1 = gen.standard_normal(n)
        z2 = gen.standard_normal(n)
        y_pos = np.maximum(y, 0.0)
        y_new = (
            y
            + p.kappa_y * (p.mean_y - y_pos) * dt
            + p.sigma_y * np.sqrt(y_pos) * sqrt_dt * (p.rho * z1 + rho2 * z2)
        )
        x_new = x + p.kappa_x * (p.mean_x - x) * dt + p.sigma_x * x * sqrt_dt * z1

        # Default-time crossing against the exponential threshold.
        lam_r_right = default_map(y_new)
        inc = 0.5 * (lam_r_left + lam_r_right) * dt
        alive = ~defaulted
        cross = alive & (hazard_int + inc >= thresholds)
        if cross.any():
            frac = np.zeros(n)
            np.divide(thresholds - hazard_int, inc, out=frac, where=cross & (inc > 0))
            frac = np.clip(frac, 0.0, 1.0)
            tau[cross] = times[k] + frac[cross] * dt
            lam_r_stopped[cross] += thresholds[cross] - hazard_int[cross]
            x_at_default[cross] = x[cross] + frac[cross] * (x_new[cross] - x[cross])
            # Claims inside the crossing step that arrive before the default.
            l_at_default[cross] = loss[cross]
            if total:
                in_cross = cross[rep]
                if in_cross.any():
                    u_t = rng.counter_uniform(
                        seed, rng.STREAM_CLAIM_TIMES, pid[rep[in_cross]], claim_idx[in_cross]
                    )
                    before = u_t < frac[rep[in_cross]]
                    adds = np.bincount(
                        rep[in_cross][before],
                        weights=np.asarray(sizes)[in_cross][before],
                        minlength=n,
                    )
                    l_at_default += np.where(cross, adds, 0.0)
            if apply_jump:
                x_new[cross] += p.jump.jump(x_new[cross])
        lam_r_stopped += np.where(alive & ~cross, inc, 0.0)
        hazard_int += inc
        defaulted |= cross

        if store_claims and total:
            u_t_all = rng.counter_uniform(seed, rng.STREAM_CLAIM_TIMES, pid[rep], claim_idx)
            claim_records.append((rep, times[k] + u_t_all * dt, np.asarray(sizes)))

        x, y, loss = x_new, y_new, loss + step_loss
        lam_r_left = lam_r_right
        x_nodes[:, k + 1], y_nodes[:, k + 1], loss_nodes[:, k + 1] = x, y, loss

    claim_times_list = claim_sizes_list = None
    if store_claims:
        if claim_records:
            rep_all = np.concatenate([r for r, _, _ in claim_records])
            t_all = np.concatenate([t for _, t, _ in claim_records])
            z_all = np.concatenate([z for _, _, z in claim_records])
            order = np.lexsort((t_all, rep_all))
            rep_all, t_all, z_all = rep_all[order], t_all[order], z_all[order]
            bounds = np.searchsorted(rep_all, np.arange(n + 1))
            claim_times_list = [t_all[bounds[i]:bounds[i + 1]] for i in range(n)]
            claim_sizes_list = [z_all[bounds[i]:bounds[i + 1]] for i in range(n)]
        else:
            claim_times_list = [np.empty(0) for _ in range(n)]
            claim_sizes_list = [np.empty(0) for _ in range(n)]

    return PathChunk(
        offset=offset,
        times=times,
        x=x_nodes,
        y=y_nodes,
        loss=loss_nodes,
        tau=tau,
        l_at_default=np.where(defaulted, l_at_default, 0.0),
        x_at_default=np.where(defaulted, x_at_default, 0.0),
        lam_l_int=lam_l_int,
        lam_r_stopped_int=lam_r_stopped,
        lam_r_full_int=hazard_int,
        n_claims=claim_counter,
        claim_times=claim_times_list,
        claim_sizes=claim_sizes_list,
    )


def iter_path_chunks(
    params: ModelParams,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    mode: str = "full",
    *,
    start_time: float = 0.0,
    initial_loss: float = 0.0,
    x_init=None,
    y_init=None,
    store_claims: bool = False,
) -> Iterator[PathChunk]:
    """Stream the batch in blocks of at most ``ENGINE_BLOCK`` paths."""
    if mode not in ("full", "tilde"):
        raise ValueError("mode must be 'full' or 'tilde'")
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    offset = 0
    while offset < n_paths:
        n = min(ENGINE_BLOCK, n_paths - offset)
        xi = None
        if x_init is not None:
            xi = np.asarray(x_init, dtype=float)
            xi = xi[offset : offset + n] if xi.ndim else np.full(n, float(xi))
        yield _simulate_block(
            params, grid, seed, offset, n, mode, start_time, initial_loss,
            xi, y_init, store_claims,
        )
        offset += n


def simulate_paths(
    params: ModelParams,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    mode: str = "full",
    *,
    store_claims: bool = True,
) -> PathBatch:
    """Simulate and store a full batch of trajectories.

    Deterministic: the same ``(seed, n_paths, grid, params, mode)`` produce a
    bit-identical batch.  Large batches should be consumed through
    ``iter_path_chunks`` instead of being stored.
    """
    est_bytes = 3 * n_paths * (grid.n_steps + 1) * 8
    if est_bytes > _MAX_STORED_BYTES:
        raise ValueError(
            "stored batch would exceed the memory guard; use iter_path_chunks"
        )
    chunks = list(
        iter_path_chunks(params, grid, n_paths, seed, mode, store_claims=store_claims)
    )
    first = chunks[0]
    batch = PathBatch(
        grid=grid,
        params=params,
        mode=mode,
        seed=seed,
        times=first.times,
        x=np.concatenate([c.x for c in chunks]),
        y=np.concatenate([c.y for c in chunks]),
        loss=np.concatenate([c.loss for c in chunks]),
        tau=np.concatenate([c.tau for c in chunks]),
        l_at_default=np.concatenate([c.l_at_default for c in chunks]),
        x_at_default=np.concatenate([c.x_at_default for c in chunks]),
        lam_l_int=np.concatenate([c.lam_l_int for c in chunks]),
        lam_r_stopped_int=np.concatenate([c.lam_r_stopped_int for c in chunks]),
        lam_r_full_int=np.concatenate([c.lam_r_full_int for c in chunks]),
        n_claims=np.concatenate([c.n_claims for c in chunks]),
    )
    if store_claims:
        for c in chunks:
            batch.claim_times.extend(c.claim_times)
            batch.claim_sizes.extend(c.claim_sizes)
    return batch


def default_probability_mc(
    params: ModelParams, grid: SimGrid, n_paths: int, seed: int, t: float
) -> MonteCarloEstimate:
    """Monte Carlo default probability ``Q(tau <= t)`` with standard error."""
    if not 0.0 <= t <= grid.horizon + 1e-12:
        raise ValueError("t must lie in [0, horizon]")
    hits = 0
    total = 0
    for chunk in iter_path_chunks(params, grid, n_paths, seed, mode="tilde"):
        hits += int((chunk.tau <= t).sum())
        total += chunk.n_paths
    p_hat = hits / total
    se = math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / total)
    return MonteCarloEstimate(value=p_hat, stderr=se, n_samples=total)
