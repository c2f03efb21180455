from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from src.domain.models import (
    Integrator,
    InvalidArgumentError,
    OuParams,
    SamplePath,
    Scheme,
    SimGrid,
    UnsupportedSchemeError,
)
from src.ou import kernels

logger = logging.getLogger(__name__)


def _check_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise InvalidArgumentError(f"{name} must be finite, got {value!r}")


def transition_scale(theta: float, dt: float) -> float:
    """Conditional standard deviation of one exact step for sigma = 1."""
    if theta == 0:
        return math.sqrt(dt)
    return math.sqrt(-math.expm1(2.0 * theta * dt) / (2.0 * abs(theta)))


def exact_transition(x: float, params: OuParams, dt: float, z: float) -> float:
    _check_finite(x=x, dt=dt, z=z)
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be > 0, got {dt}")
    return math.exp(params.theta * dt) * x + params.sigma * transition_scale(params.theta, dt) * z


def marginal_variance(params: OuParams, t: float) -> float:
    """Var(X_t) for X_0 = 0."""
    if params.theta == 0:
        return params.sigma**2 * t
    return params.sigma**2 * -math.expm1(2.0 * params.theta * t) / (2.0 * abs(params.theta))


def coupled_coefficients(theta: float, dt: float) -> tuple[float, float, float]:
    """(decay, gain, resid) so that noise = gain * dB + resid * z2 has the exact step law.

    The step noise int_0^dt exp(theta (dt - u)) dB_u has variance v and
    covariance c = (exp(theta dt) - 1) / theta with dB.
    """
    if theta == 0:
        return 1.0, 1.0, 0.0
    c = math.expm1(theta * dt) / theta
    v = math.expm1(2.0 * theta * dt) / (2.0 * theta)
    return math.exp(theta * dt), c / dt, math.sqrt(max(v - c * c / dt, 0.0))


@dataclass(slots=True)
class PathChunk:
    """Values X_start..X_{start+m} and the m steps that join them."""

    start: int
    values: np.ndarray
    draws: np.ndarray
    brownian: np.ndarray | None

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1


def iter_path_chunks(
    params: OuParams,
    grid: SimGrid,
    seed: int,
    scheme: Scheme = Scheme.EXACT,
    chunk_steps: int = kernels.CHUNK_STEPS,
) -> Iterator[PathChunk]:
    """Generate a path piecewise from one generator.

    Draws are consumed in step order, so the concatenated chunks do not depend
    on ``chunk_steps``.
    """
    scheme = Scheme(scheme)
    if scheme is Scheme.OBSERVED:
        raise UnsupportedSchemeError("observed paths are ingested, not simulated")
    if chunk_steps < 1:
        raise InvalidArgumentError("chunk_steps must be >= 1")
    rng = np.random.default_rng(seed)
    theta, sigma, dt = params.theta, params.sigma, grid.dt
    decay = math.exp(theta * dt)
    scale = sigma * transition_scale(theta, dt)
    _, gain, resid = coupled_coefficients(theta, dt)
    n = grid.n_steps
    x0 = 0.0
    start = 0
    while start < n:
        m = min(chunk_steps, n - start)
        values = np.empty(m + 1)
        brownian = None
        if scheme is Scheme.COUPLED:
            draws = rng.standard_normal((m, 2))
            brownian = np.empty(m)
            kernels.coupled_fill(x0, draws, decay, gain, resid, sigma, dt, values, brownian)
        elif scheme is Scheme.EULER:
            draws = rng.standard_normal(m)
            brownian = np.empty(m)
            kernels.euler_fill(x0, draws, theta, sigma, dt, values, brownian)
        else:
            draws = rng.standard_normal(m)
            kernels.exact_fill(x0, draws, decay, scale, values)
        yield PathChunk(start=start, values=values, draws=draws, brownian=brownian)
        x0 = float(values[-1])
        start += m


def simulate_path(
    params: OuParams,
    grid: SimGrid,
    seed: int,
    scheme: Scheme = Scheme.EXACT,
    chunk_steps: int = kernels.CHUNK_STEPS,
) -> SamplePath:
    scheme = Scheme(scheme)
    values = [np.zeros(1)]
    draws = []
    for chunk in iter_path_chunks(params, grid, seed, scheme, chunk_steps):
        values.append(chunk.values[1:])
        draws.append(chunk.draws)
    if draws:
        all_draws = np.concatenate(draws)
    else:
        all_draws = np.empty((0, 2)) if scheme is Scheme.COUPLED else np.empty(0)
    logger.debug("simulated %d steps (scheme=%s, seed=%d)", grid.n_steps, scheme.value, seed)
    return SamplePath(
        grid=grid,
        values=np.concatenate(values),
        driving_increments=all_draws,
        scheme=scheme,
        seed=seed,
    )


def ito_sum(path: SamplePath, integrand: np.ndarray, against: Integrator | str) -> float:
    """Left-point sum of f_i against dX, dB or dt."""
    against = Integrator(against)
    f = np.ascontiguousarray(integrand, dtype=np.float64)
    if f.shape != (path.n_steps,):
        raise InvalidArgumentError(f"integrand must have length {path.n_steps}, got {f.shape}")
    if against is Integrator.DX:
        g = path.increments
    elif against is Integrator.DB:
        g = np.ascontiguousarray(path.brownian_increments)
    else:
        g = np.full(path.n_steps, path.dt)
    return float(kernels.compensated_dot(f, g))
