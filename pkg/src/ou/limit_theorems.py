"""Verification statistics for the almost-sure limit theorems.

Everything here consumes the true (theta, sigma) and therefore belongs to
verification mode only. Limit constants use |theta|; references at a finite
horizon are built in ``src.ou.finite_horizon``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from src.domain.models import (
    DerivedEstimates,
    DomainError,
    EstimatorKind,
    EstimatorTrace,
    HypothesisForm,
    InvalidArgumentError,
    LogAveragedMeasure,
    NormalizerKind,
    OuParams,
    RateKind,
    SamplePath,
    WeightFamily,
)
from src.ou import estimators
from src.ou.weights import log_omega_array, log_v_squared_array

logger = logging.getLogger(__name__)

@dataclass(frozen=True, slots=True)
class Reference:
    value: float
    stated: float


def reference_constants(params: OuParams, alpha: float) -> dict[str, Reference]:
    """Limit of each verified statistic.

    ``value`` follows from the asymptotics U_t ~ 2 t^alpha omega_t and
    V_t^2 ~ t^alpha omega_t^2; ``stated`` is the constant as announced for the
    weighted statistics, which omits the resulting factor 1/4.
    """
    th = abs(params.theta)
    s2 = params.sigma**2
    beta = 1.0 - alpha
    same = lambda v: Reference(v, v)  # noqa: E731
    return {
        "stationary_variance": same(s2 / (2.0 * th)),
        "asclt_variance_ls": same(2.0 * th),
        "asclt_variance_w": Reference(th / 2.0, 2.0 * th),
        "qsl1_ls": same(s2 * s2 / (2.0 * th)),
        "qsl2_ls": same(s2),
        "qsl1_w": Reference(s2 * s2 / (8.0 * th), s2 * s2 / (2.0 * th)),
        "qsl2_w": same(s2),
        "sigma_hat2": same(s2),
        "theta_check": same(th),
        "sigma_tilde2": same(s2),
        "theta_breve": Reference(th / 4.0, th),
        "tlcl_variance_ls": same(4.0 * th * th),
        "tlcl_variance_w": Reference(th * th * beta / 4.0, 4.0 * th * th * beta),
        "llil_ls": same(2.0 * math.sqrt(2.0) * th),
        "llil_w": Reference(math.sqrt(2.0 * beta) * th / 2.0, math.sqrt(2.0 * beta) * 2.0 * th),
    }


def asclt_measure(
    trace: EstimatorTrace, theta: float, kind: EstimatorKind | str, standardise: bool = False
) -> LogAveragedMeasure:
    """Log-averaged occupation measure of the rescaled estimator error.

    Cell [s_k, s_k + dt) carries the exact mass of ds/s (ls) or ds/s^alpha
    (weighted), so the total equals the normaliser up to rounding.
    Atoms are sqrt(s)(theta_hat - theta) and s^(alpha/2)(theta_tilde - theta);
    with ``standardise`` they are divided by their exact Gaussian standard
    deviation, sqrt(2|theta|) and sqrt(2|theta| s^alpha V_s^2 / U_s^2), and
    should be compared with N(0, 1).
    """
    kind = EstimatorKind(kind)
    if trace.times.size < 2:
        raise InvalidArgumentError("log-averaged measure needs at least one cell")
    s = trace.times[:-1]
    dt = trace.dt
    lr = np.log1p(dt / s)
    t0, t1 = trace.burn_in, trace.horizon
    if kind is EstimatorKind.LS:
        values = np.sqrt(s) * (trace.require("theta_hat")[:-1] - theta)
        if standardise:
            values = values / math.sqrt(2.0 * abs(theta))
        weights = lr
        normalizer = math.log(t1 / t0)
        normalizer_kind = NormalizerKind.LOG_T
    else:
        beta = 1.0 - trace.alpha
        errors = trace.require("theta_tilde")[:-1] - theta
        if standardise:
            family = WeightFamily(trace.alpha)
            v2_norm = np.exp(log_v_squared_array(s, family) - 2.0 * log_omega_array(s, family))
            values = errors * trace.require("u_norm")[:-1] / np.sqrt(2.0 * abs(theta) * v2_norm)
        else:
            values = s ** (0.5 * trace.alpha) * errors
        weights = s**beta * np.expm1(beta * lr) / beta
        normalizer = (t1**beta - t0**beta) / beta
        normalizer_kind = NormalizerKind.T_POW_1_MINUS_ALPHA
    return LogAveragedMeasure(
        values=values,
        weights=weights,
        total_mass=math.fsum(weights),
        normalizer=normalizer,
        normalizer_kind=normalizer_kind,
    )


def ks_distance(measure: LogAveragedMeasure, variance: float) -> float:
    """sup_x |F(x) - Phi(x / sqrt(variance))| evaluated on both sides of every atom."""
    if not variance > 0:
        raise DomainError(f"variance must be > 0, got {variance}")
    if len(measure) == 0 or measure.total_mass <= 0:
        raise InvalidArgumentError("measure is empty")
    order = np.argsort(measure.values, kind="stable")
    values = measure.values[order]
    cum = np.cumsum(measure.weights[order]) / measure.total_mass
    below = np.concatenate(([0.0], cum[:-1]))
    phi = ndtr(values / math.sqrt(variance))
    return float(min(max(np.max(np.abs(cum - phi)), np.max(np.abs(below - phi))), 1.0))


@dataclass(frozen=True, slots=True)
class QslStatistics:
    qsl1_ls: float
    qsl2_ls: float
    qsl1_w: float
    qsl2_w: float

    def as_record(self) -> dict[str, float]:
        return {"qsl1_ls": self.qsl1_ls, "qsl2_ls": self.qsl2_ls, "qsl1_w": self.qsl1_w, "qsl2_w": self.qsl2_w}


def qsl_from_sums(sum1_ls: float, sum2_ls: float, sum1_w: float, sum2_w: float, horizon: float, alpha: float) -> QslStatistics:
    beta = 1.0 - alpha
    log_t = math.log(horizon)
    power = horizon**beta / beta
    return QslStatistics(
        qsl1_ls=sum1_ls / log_t,
        qsl2_ls=sum2_ls / log_t,
        qsl1_w=sum1_w / power,
        qsl2_w=4.0 * sum2_w / power,
    )


def qsl_statistics(trace: EstimatorTrace, theta: float, horizon: float | None = None) -> QslStatistics:
    horizon = trace.horizon if horizon is None else horizon
    k = trace.index_at(horizon)
    dt = trace.dt
    s = trace.times[:k]
    x2dt = trace.x[:k] ** 2 * dt
    eh = trace.require("theta_hat")[:k] - theta
    et = trace.require("theta_tilde")[:k] - theta
    zeta = trace.zeta[:k]
    pu = trace.b_norm[:k] / trace.u_norm[:k]
    return qsl_from_sums(
        math.fsum(zeta * zeta * eh * eh * dt / (s * s)),
        math.fsum(eh * eh * x2dt),
        math.fsum(pu * pu * et * et * dt),
        math.fsum(et * et * x2dt),
        horizon,
        trace.alpha,
    )


def tlcl_scale(kind: EstimatorKind | str, t: np.ndarray | float, alpha: float | None = None) -> np.ndarray:
    """sqrt(log t) (ls) or t^((1-alpha)/2) (weighted)."""
    kind = EstimatorKind(kind)
    t = np.asarray(t, dtype=np.float64)
    if kind is EstimatorKind.LS:
        return np.sqrt(np.log(t))
    if alpha is None:
        raise InvalidArgumentError("weighted scale needs alpha")
    return t ** (0.5 * (1.0 - alpha))


def iterated_log(kind: EstimatorKind | str, t: np.ndarray | float, alpha: float | None = None) -> np.ndarray:
    """log log log t (ls) or log log t^(1-alpha) (weighted); NaN where undefined."""
    kind = EstimatorKind(kind)
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind is EstimatorKind.LS:
            return np.log(np.log(np.log(t)))
        if alpha is None:
            raise InvalidArgumentError("weighted LLIL needs alpha")
        return np.log(np.log(t ** (1.0 - alpha)))


def tlcl_statistic(
    derived: DerivedEstimates,
    theta: float,
    kind: EstimatorKind | str,
    centre: float | None = None,
) -> float:
    """sqrt(log T)(theta_check - |theta|) or T^((1-alpha)/2)(theta_breve - |theta|/4).

    Reference variances are ``tlcl_variance_*`` in ``reference_constants``.
    """
    kind = EstimatorKind(kind)
    scale = float(tlcl_scale(kind, derived.horizon, derived.alpha))
    if kind is EstimatorKind.LS:
        centre = abs(theta) if centre is None else centre
        return scale * (derived.theta_check - centre)
    centre = abs(theta) / 4.0 if centre is None else centre
    return scale * (derived.theta_breve - centre)


def rate_function(rate: RateKind | str, t: np.ndarray, alpha: float | None = None) -> np.ndarray:
    rate = RateKind(rate)
    t = np.asarray(t, dtype=np.float64)
    if rate is RateKind.WLS_RATE:
        if alpha is None:
            raise InvalidArgumentError("wls_rate needs alpha")
        return np.sqrt(np.log(t) / t**alpha)
    if np.any(t <= math.e):
        raise InvalidArgumentError("log log t rates need t > e")
    return np.sqrt(np.log(np.log(t)) / t)


def rate_exponent(rate: RateKind | str, alpha: float | None = None) -> float:
    rate = RateKind(rate)
    if rate is RateKind.WLS_RATE:
        return -0.5 * alpha
    return -0.5


@dataclass(frozen=True, slots=True)
class RateCheck:
    sup_ratio: float
    slope: float
    expected_slope: float


def rate_check(times: np.ndarray, errors: np.ndarray, rate: RateKind | str, alpha: float | None = None) -> RateCheck:
    """Sup of err/rate and the least-squares slope of log err against log t.

    ``errors`` are |estimate - theta| at ``times``, already averaged over
    replicas when there are several.
    """
    times = np.asarray(times, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if times.size < 3 or times.shape != errors.shape:
        raise InvalidArgumentError("rate check needs at least three aligned checkpoints")
    if np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        raise InvalidArgumentError("errors must be positive and finite")
    ratio = errors / rate_function(rate, times, alpha)
    slope = np.polyfit(np.log(times), np.log(errors), 1)[0]
    return RateCheck(sup_ratio=float(np.max(ratio)), slope=float(slope), expected_slope=rate_exponent(rate, alpha))


@dataclass(frozen=True, slots=True)
class LlilTrace:
    times: np.ndarray
    values: np.ndarray

    def running_max(self) -> float:
        return float(np.max(self.values)) if self.values.size else math.nan


def llil_statistic(
    times: np.ndarray,
    estimates: np.ndarray,
    theta: float,
    kind: EstimatorKind | str,
    alpha: float | None = None,
    centre: np.ndarray | float | None = None,
) -> LlilTrace:
    """Normalised deviations of theta_check (ls) or theta_breve (weighted) from a centre.

    ls: sqrt(log t / log log log t) |theta_check - centre|;
    weighted: t^((1-alpha)/2) / sqrt(log log t^(1-alpha)) |theta_breve - centre|.
    The centre defaults to the limit, |theta| or |theta|/4, and may vary per time.
    Times where the iterated logarithm is not positive are skipped.
    """
    kind = EstimatorKind(kind)
    times = np.asarray(times, dtype=np.float64)
    estimates = np.asarray(estimates, dtype=np.float64)
    if centre is None:
        centre = abs(theta) if kind is EstimatorKind.LS else abs(theta) / 4.0
    centre = np.broadcast_to(np.asarray(centre, dtype=np.float64), times.shape)
    iterated = iterated_log(kind, times, alpha)
    keep = iterated > 0
    skipped = int(np.count_nonzero(~keep))
    if skipped:
        logger.warning("LLIL statistic skips %d checkpoint(s) where the iterated log is not positive", skipped)
    t = times[keep]
    scale = tlcl_scale(kind, t, alpha) / np.sqrt(iterated[keep])
    return LlilTrace(times=t, values=scale * np.abs(estimates[keep] - centre[keep]))


def check_alpha_prime(alpha: float, alpha_prime: float, form: HypothesisForm | str = HypothesisForm.H3) -> None:
    form = HypothesisForm(form)
    WeightFamily(alpha)
    if form is HypothesisForm.H3:
        if not 0.5 <= alpha_prime < alpha:
            raise InvalidArgumentError(f"H3 needs 1/2 <= alpha' < alpha, got alpha'={alpha_prime}, alpha={alpha}")
        return
    if alpha <= 5.0 / 6.0:
        raise InvalidArgumentError(f"H4 needs alpha > 5/6, got {alpha}")
    if not 0.5 <= alpha_prime < 3.0 * alpha - 2.0:
        raise InvalidArgumentError(
            f"H4 needs 1/2 <= alpha' < 3 alpha - 2 = {3.0 * alpha - 2.0:g}, got {alpha_prime}"
        )


@dataclass(frozen=True, slots=True)
class HypothesisResiduals:
    times: np.ndarray
    r_h: np.ndarray
    r_l3i: np.ndarray
    r_l3ii: np.ndarray

    def sup_abs(self) -> dict[str, float]:
        return {
            "r_h": float(np.max(np.abs(self.r_h))),
            "r_l3i": float(np.max(np.abs(self.r_l3i))),
            "r_l3ii": float(np.max(np.abs(self.r_l3ii))),
        }


def hypothesis_residuals(
    times: np.ndarray,
    x2_mean: np.ndarray,
    qv_norm: np.ndarray,
    p_over_u: np.ndarray,
    stationary_variance: float,
    alpha: float,
    alpha_prime: float,
) -> HypothesisResiduals:
    """Scaled residuals of the time average of X^2, of <M~>/V^2 and of P/U.

    ``qv_norm`` is <M~>_t / omega_t^2; it is compared with V_t^2 / omega_t^2
    (the V^2 form of the quadratic-variation ratio).
    """
    family = WeightFamily(alpha)
    times = np.asarray(times, dtype=np.float64)
    c = stationary_variance
    v2_norm = np.exp(log_v_squared_array(times, family) - 2.0 * log_omega_array(times, family))
    r_h = times ** (1.0 - alpha_prime) * (np.asarray(x2_mean) - c)
    lift = times ** (alpha - alpha_prime)
    r_l3i = lift * (np.asarray(qv_norm) / v2_norm - c)
    r_l3ii = lift * (np.asarray(p_over_u) - c)
    return HypothesisResiduals(times=times, r_h=r_h, r_l3i=r_l3i, r_l3ii=r_l3ii)


def hypothesis_diagnostics(
    path: SamplePath,
    alpha: float,
    alpha_prime: float,
    params: OuParams,
    form: HypothesisForm | str = HypothesisForm.H3,
    burn_in: float = estimators.DEFAULT_BURN_IN,
    checkpoints: np.ndarray | None = None,
    trace: EstimatorTrace | None = None,
) -> HypothesisResiduals:
    params.require_stable()
    check_alpha_prime(alpha, alpha_prime, form)
    if trace is None:
        trace = estimators.theta_tilde_trace(
            path, alpha, burn_in, checkpoints, base=estimators.theta_hat_trace(path, burn_in, checkpoints)
        )
    cp = trace.checkpoint_index
    times = trace.checkpoints
    return hypothesis_residuals(
        times,
        trace.zeta[cp] / times,
        trace.qv_norm[cp],
        trace.b_norm[cp] / trace.u_norm[cp],
        params.stationary_variance,
        alpha,
        alpha_prime,
    )
