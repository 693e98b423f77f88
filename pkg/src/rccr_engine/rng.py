"""Reproducible random number streams for the Monte Carlo engine.

Two kinds of randomness feed a simulation batch:

* diffusion draws (Brownian increments, default thresholds) come from
  counter-based Philox streams keyed on ``(seed, block index, stream tag)``;
  every block draws a fixed number of variates per time step, so two runs
  that share a seed consume the streams identically regardless of how the
  batch is scheduled;
* claim-level draws (per-step counts, per-claim sizes and arrival offsets)
  are pure functions of ``(seed, stream tag, path index, counter)`` built
  from a splitmix-style integer hash.  Path indices are global, so the same
  path sees the same claims no matter which block it lands in, and the
  contagion-free variant of a path replays the identical claim randomness.
"""

from __future__ import annotations

import numpy as np

# Stream tags; arbitrary but fixed constants.
STREAM_DIFFUSION = 0x1
STREAM_CLAIM_COUNTS = 0x2
STREAM_CLAIM_SIZES = 0x3
STREAM_CLAIM_TIMES = 0x4

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TAG_STEP = np.uint64(0xD6E8FEB86659FD93)

_U64 = np.uint64
_INV_2_53 = float(2.0**-53)


def _mix(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """splitmix64 finalizer: full-avalanche 64-bit mix."""
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def _seed64(seed: int) -> np.uint64:
    return _mix(_U64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)


def counter_uniform(seed: int, stream: int, index_a, index_b) -> np.ndarray:
    """Uniform(0, 1) variates addressed by ``(seed, stream, index_a, index_b)``.

    ``index_a`` and ``index_b`` are integer arrays (or scalars) that broadcast
    against each other; each address yields the same variate on every call.
    """
    with np.errstate(over="ignore"):
        base = _mix(_seed64(seed) ^ (_U64(stream) * _TAG_STEP))
        z = _mix(base ^ (np.asarray(index_a, dtype=np.uint64) * _GOLDEN))
        z = _mix(z ^ (np.asarray(index_b, dtype=np.uint64) * _MIX1))
    # 53-bit mantissa shifted into (0, 1); +0.5 keeps endpoints open.
    return ((z >> _U64(11)).astype(np.float64) + 0.5) * _INV_2_53


def philox_generator(seed: int, block: int, stream: int) -> np.random.Generator:
    """Philox generator keyed on (seed, block, stream); independent per key."""
    with np.errstate(over="ignore"):
        k0 = _mix(_seed64(seed) ^ (_U64(stream) * _TAG_STEP))
        k1 = _mix(k0 ^ (_U64(block) * _GOLDEN))
    key = np.array([k0, k1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def poisson_from_uniform(u: np.ndarray, mu: np.ndarray, max_count: int | None = None) -> np.ndarray:
    """Exact Poisson inverse-CDF sampling from one uniform per entry.

    Consumes no stream state beyond ``u`` itself, so counts stay aligned
    across runs that share the uniforms but differ in ``mu`` later on.
    """
    u = np.asarray(u, dtype=np.float64)
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), u.shape)
    if max_count is None:
        mu_max = float(mu.max()) if mu.size else 0.0
        max_count = int(mu_max + 12.0 * np.sqrt(mu_max + 1.0) + 60.0)
    pmf = np.exp(-mu)
    cdf = pmf.copy()
    counts = np.zeros(u.shape, dtype=np.int64)
    for k in range(1, max_count + 1):
        active = u > cdf
        if not active.any():
            break
        counts[active] += 1
        pmf = pmf * (mu / k)
        cdf = cdf + pmf
    return counts
