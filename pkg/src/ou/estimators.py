"""Running least-squares, weighted and averaged drift estimators on a dense path."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from src.domain.models import (
    BarSource,
    DegeneratePathError,
    DerivedEstimates,
    EstimatorTrace,
    InvalidArgumentError,
    OuParams,
    SamplePath,
    WeightFamily,
)
from src.ou import kernels
from src.ou.weights import u_over_omega

logger = logging.getLogger(__name__)

DEFAULT_BURN_IN = 1.0


def burn_in_index(dt: float, n_steps: int, burn_in: float) -> int:
    ib = int(round(burn_in / dt))
    if ib < 1:
        raise InvalidArgumentError(f"burn_in must cover at least one step, got {burn_in}")
    if ib >= n_steps:
        raise InvalidArgumentError(f"burn_in {burn_in} is not before the horizon {n_steps * dt}")
    return ib


def _checkpoint_index(checkpoints: Iterable[float] | None, dt: float, ib: int, n: int) -> np.ndarray:
    if checkpoints is None:
        return np.array([0, n - ib], dtype=np.int64)
    steps = np.unique(np.round(np.asarray(list(checkpoints), dtype=np.float64) / dt).astype(np.int64))
    if steps.size == 0:
        raise InvalidArgumentError("no checkpoints requested")
    if steps[0] < ib or steps[-1] > n:
        raise InvalidArgumentError(f"checkpoints must lie in [{ib * dt}, {n * dt}]")
    return steps - ib


def theta_hat_trace(
    path: SamplePath,
    burn_in: float = DEFAULT_BURN_IN,
    checkpoints: Iterable[float] | None = None,
) -> EstimatorTrace:
    """theta_hat_t = int X dX / int X^2 ds at every grid time from burn-in on."""
    n, dt = path.n_steps, path.dt
    ib = burn_in_index(dt, n, burn_in)
    cp = _checkpoint_index(checkpoints, dt, ib, n)
    size = n - ib + 1
    theta_hat = np.empty(size)
    zeta = np.empty(size)
    kernels.ls_sweep(path.values, dt, ib, theta_hat, zeta)
    if zeta[0] <= 0:
        raise DegeneratePathError(f"int_0^{ib * dt:g} X^2 ds vanishes; the path carries no signal")
    return EstimatorTrace(
        dt=dt,
        burn_in_index=ib,
        times=path.times[ib:],
        x=path.values[ib:],
        checkpoint_index=cp,
        theta_hat=theta_hat,
        zeta=zeta,
    )


def theta_tilde_trace(
    path: SamplePath,
    alpha: float,
    burn_in: float = DEFAULT_BURN_IN,
    checkpoints: Iterable[float] | None = None,
    base: EstimatorTrace | None = None,
) -> EstimatorTrace:
    """Weighted estimator P_t^-1 int omega X dX via omega-normalised recursions.

    Passing ``base`` adds the weighted columns to an existing trace on the same
    grid.
    """
    family = WeightFamily(alpha)
    n, dt = path.n_steps, path.dt
    ib = burn_in_index(dt, n, burn_in)
    size = n - ib + 1
    arrays = {name: np.empty(size) for name in ("theta_tilde", "a_norm", "b_norm", "q_norm", "u_norm")}
    u0 = u_over_omega(ib * dt, family)
    kernels.weighted_sweep(
        path.values, dt, family.alpha, ib, u0,
        arrays["theta_tilde"], arrays["a_norm"], arrays["b_norm"], arrays["q_norm"], arrays["u_norm"],
    )
    if arrays["b_norm"][0] <= 0:
        raise DegeneratePathError("P_t vanishes at burn-in; the path carries no signal")
    if base is None:
        base = EstimatorTrace(
            dt=dt,
            burn_in_index=ib,
            times=path.times[ib:],
            x=path.values[ib:],
            checkpoint_index=_checkpoint_index(checkpoints, dt, ib, n),
        )
    elif base.burn_in_index != ib or base.times.size != size:
        raise InvalidArgumentError("base trace does not share the path grid and burn-in")
    qv_norm = arrays.pop("q_norm")
    return dataclasses.replace(base, alpha=family.alpha, qv_norm=qv_norm, **arrays)


def theta_bar_trace(trace: EstimatorTrace, source: BarSource | str = BarSource.TILDE) -> EstimatorTrace:
    source = BarSource(source)
    values = trace.require("theta_tilde" if source is BarSource.TILDE else "theta_hat")
    out = np.empty_like(values)
    kernels.bar_sweep(np.ascontiguousarray(values), trace.dt, trace.burn_in_index, out)
    return dataclasses.replace(trace, theta_bar=out, bar_source=source)


def estimate_trace(
    path: SamplePath,
    alpha: float,
    burn_in: float = DEFAULT_BURN_IN,
    checkpoints: Iterable[float] | None = None,
    bar_source: BarSource | str = BarSource.TILDE,
) -> EstimatorTrace:
    trace = theta_hat_trace(path, burn_in, checkpoints)
    trace = theta_tilde_trace(path, alpha, burn_in, base=trace)
    return theta_bar_trace(trace, bar_source)


def _centred_square(s2: float, s1: float, s0: float, shift: float) -> float:
    # sum (v - c - shift)^2 w from the moments of v - c
    return max(s2 - 2.0 * shift * s1 + shift * shift * s0, 0.0)


def _normalisers(horizon: float, alpha: float) -> tuple[float, float]:
    beta = 1.0 - alpha
    return math.log(horizon), horizon**beta / beta


def derived_estimates(
    trace: EstimatorTrace,
    bar_value: float | None = None,
    horizon: float | None = None,
) -> DerivedEstimates:
    """Two-pass log-averaged statistics at ``horizon`` (default: the trace end)."""
    theta_hat = trace.require("theta_hat")
    theta_tilde = trace.require("theta_tilde")
    alpha = trace.alpha
    horizon = trace.horizon if horizon is None else horizon
    if horizon <= trace.burn_in:
        raise InvalidArgumentError(f"horizon {horizon} must exceed burn-in {trace.burn_in}")
    k = trace.index_at(horizon)
    if bar_value is None:
        bar_value = float(trace.require("theta_bar")[k])
    dt = trace.dt
    x2dt = trace.x[:k] ** 2 * dt
    ones = np.full(k, dt)
    d_hat = theta_hat[:k] - bar_value
    d_tilde = theta_tilde[:k] - bar_value
    sq_hat = d_hat * d_hat
    sq_tilde = d_tilde * d_tilde
    log_t, power = _normalisers(horizon, alpha)
    return DerivedEstimates(
        sigma_hat2=kernels.compensated_dot(sq_hat, x2dt) / log_t,
        theta_check=kernels.compensated_dot(sq_hat, ones) / (2.0 * log_t),
        sigma_tilde2=4.0 * kernels.compensated_dot(sq_tilde, x2dt) / power,
        theta_breve=kernels.compensated_dot(sq_tilde, ones) / (2.0 * power),
        horizon=horizon,
        alpha=alpha,
        theta_bar=bar_value,
        bar_source=trace.bar_source or BarSource.TILDE,
    )


@dataclass(frozen=True, slots=True)
class MomentSums:
    """Moments of theta_hat - center_ls and theta_tilde - center_w from burn-in to t.

    ``h*`` refer to theta_hat and ``g*`` to theta_tilde; the ``x`` variants
    carry the extra X^2 factor, ``x2`` is int X^2 ds and ``duration`` is
    t - burn_in.
    """

    h2x: float
    h1x: float
    h2: float
    h1: float
    g2x: float
    g1x: float
    g2: float
    g1: float
    x2: float
    duration: float
    center_ls: float
    center_w: float


def derived_from_moments(
    moments: MomentSums,
    bar_value: float,
    horizon: float,
    alpha: float,
    bar_source: BarSource = BarSource.TILDE,
) -> DerivedEstimates:
    """Streaming counterpart of ``derived_estimates`` for any bar value chosen afterwards."""
    log_t, power = _normalisers(horizon, alpha)
    shift_ls = bar_value - moments.center_ls
    shift_w = bar_value - moments.center_w
    return DerivedEstimates(
        sigma_hat2=_centred_square(moments.h2x, moments.h1x, moments.x2, shift_ls) / log_t,
        theta_check=_centred_square(moments.h2, moments.h1, moments.duration, shift_ls) / (2.0 * log_t),
        sigma_tilde2=4.0 * _centred_square(moments.g2x, moments.g1x, moments.x2, shift_w) / power,
        theta_breve=_centred_square(moments.g2, moments.g1, moments.duration, shift_w) / (2.0 * power),
        horizon=horizon,
        alpha=alpha,
        theta_bar=bar_value,
        bar_source=bar_source,
    )


@dataclass(frozen=True, slots=True)
class MartingaleResidual:
    """|M_t - zeta_t (theta_hat_t - theta) / sigma| and its omega-normalised weighted analogue."""

    times: np.ndarray
    ls: np.ndarray
    weighted: np.ndarray

    @property
    def sup_ls(self) -> float:
        return float(np.max(self.ls))

    @property
    def sup_weighted(self) -> float:
        return float(np.max(self.weighted))


def martingale_identity_residual(path: SamplePath, trace: EstimatorTrace, params: OuParams) -> MartingaleResidual:
    if params.sigma <= 0:
        raise InvalidArgumentError("martingale identities divide by sigma > 0")
    db = np.ascontiguousarray(path.brownian_increments)
    theta_hat = trace.require("theta_hat")
    n, dt, ib = path.n_steps, path.dt, trace.burn_in_index
    x = path.values
    integrand = x[:-1] * db
    m_all = np.empty(n + 1)
    kernels.compensated_cumsum(integrand, m_all)
    cp = trace.checkpoint_index
    m_t = m_all[ib:][cp]
    rhs = trace.zeta[cp] * (theta_hat[cp] - params.theta) / params.sigma
    ls = np.abs(m_t - rhs)
    if trace.theta_tilde is None:
        weighted = np.full(cp.size, np.nan)
    else:
        mw = np.empty(n - ib + 1)
        kernels.weighted_cumsum(integrand, dt, trace.alpha, ib, mw)
        rhs_w = (trace.a_norm[cp] - params.theta * trace.b_norm[cp]) / params.sigma
        weighted = np.abs(mw[cp] - rhs_w)
    return MartingaleResidual(times=trace.checkpoints, ls=ls, weighted=weighted)
