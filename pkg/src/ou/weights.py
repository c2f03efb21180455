"""The weight omega_s = s^(-alpha/2) exp(s^(1-alpha) / (2(1-alpha))) and its integrals.

Everything is evaluated in log space; omega overflows a double long before
the horizons the experiments use.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.special import hyp1f1, logsumexp

from src.domain.models import DomainError, WeightCompanions, WeightFamily
from src.ou import kernels

logger = logging.getLogger(__name__)

FIRST_PANEL = 1e-6
GAUSS_NODES = 24
DEFAULT_RESOLUTION = 0.25
MAX_RESOLUTION = 1.0

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_NODES)
_LOG_WEIGHTS = np.log(_WEIGHTS)


@dataclass(frozen=True, slots=True)
class QuadratureResult:
    log_value: float
    n_panels: int
    warning: str | None = None

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


@dataclass(frozen=True, slots=True)
class Lemma2Residuals:
    """Deviations of the weight companions from their asymptotic forms.

    ``vu_residual`` is 4 t^alpha V_t^2 / U_t^2 - 1.
    """

    t: float
    alpha: float
    r1: float
    r2: float
    r3: float
    r4: float
    vu_residual: float
    warning: str | None = None

    def as_record(self) -> dict[str, float]:
        return {"t": self.t, "alpha": self.alpha, "r1": self.r1, "r2": self.r2, "r3": self.r3, "r4": self.r4}


def _family(alpha: float) -> WeightFamily:
    return alpha if isinstance(alpha, WeightFamily) else WeightFamily(float(alpha))


def log_omega(s: float, alpha: float) -> float:
    family = _family(alpha)
    if not s > 0:
        raise DomainError(f"log_omega needs s > 0, got {s}")
    beta = family.beta
    return family.log_scale - 0.5 * family.alpha * math.log(s) + s**beta / (2.0 * beta)


def log_omega_array(s: np.ndarray, alpha: float) -> np.ndarray:
    family = _family(alpha)
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise DomainError("log_omega needs s > 0")
    beta = family.beta
    return family.log_scale - 0.5 * family.alpha * np.log(s) + s**beta / (2.0 * beta)


def log_omega_increment(s: float, ds: float, alpha: float) -> float:
    family = _family(alpha)
    if not s > 0 or ds < 0:
        raise DomainError(f"log_omega_increment needs s > 0 and ds >= 0, got s={s}, ds={ds}")
    return float(kernels.log_omega_increment(float(s), float(ds), family.alpha))


def v_squared_closed(t: float, alpha: float) -> float:
    """V_t^2 = exp(t^(1-alpha)/(1-alpha)) - 1; inf once it leaves double range."""
    family = _family(alpha)
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    exponent = family.exponent(t)
    if exponent + 2.0 * family.log_scale > 709.0:
        return math.inf
    return math.expm1(exponent) * math.exp(2.0 * family.log_scale)


def log_v_squared_closed(t: float, alpha: float) -> float:
    family = _family(alpha)
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    if t == 0:
        return -math.inf
    exponent = family.exponent(t)
    if exponent < 1.0:
        return 2.0 * family.log_scale + math.log(math.expm1(exponent))
    return 2.0 * family.log_scale + exponent + math.log1p(-math.exp(-exponent))


def log_v_squared_array(t: np.ndarray, family: WeightFamily) -> np.ndarray:
    exponent = t**family.beta / family.beta
    small = exponent < 1.0
    out = np.empty_like(exponent)
    out[small] = np.log(np.expm1(exponent[small]))
    big = ~small
    out[big] = exponent[big] + np.log1p(-np.exp(-exponent[big]))
    return out + 2.0 * family.log_scale


def _log_first_panel(s0: float, family: WeightFamily, power: int) -> float:
    # int_0^s0 s^(-p a/2) exp(p s^b / (2b)) ds in closed form via 1F1
    b = family.beta
    lead = 1.0 - 0.5 * power * family.alpha
    gamma = lead / b
    u0 = power * s0**b / (2.0 * b)
    return power * family.log_scale + lead * math.log(s0) - math.log(lead) + math.log(hyp1f1(gamma, gamma + 1.0, u0))


def _panel_edges(
    t: float, family: WeightFamily, power: int, resolution: float, breakpoints: np.ndarray | None = None
) -> np.ndarray:
    s = min(FIRST_PANEL, t)
    edges = [s]
    while s < t:
        if s < 1.0:
            s = min(s * (1.0 + resolution), 1.0, t)
        else:
            s = min(s + resolution * 2.0 * s**family.alpha / power, t)
        edges.append(s)
    if breakpoints is None:
        return np.asarray(edges)
    inside = breakpoints[(breakpoints > edges[0]) & (breakpoints <= t)]
    return np.union1d(edges, inside)


def _cumulative_log_integral(
    t: float, family: WeightFamily, power: int, resolution: float, breakpoints: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Edges s_0 < ... < s_K = t and log int_0^{s_k} omega^power ds at each edge.

    ``breakpoints`` in (s_0, t] are added to the edges.
    """
    edges = _panel_edges(t, family, power, resolution, breakpoints)
    head = _log_first_panel(edges[0], family, power)
    if edges.size == 1:
        return edges, np.array([head])
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[:, None] + half[:, None] * _NODES[None, :]
    log_f = power * log_omega_array(nodes, family)
    panels = logsumexp(log_f + _LOG_WEIGHTS[None, :], axis=1) + np.log(half)
    cumulative = np.logaddexp.accumulate(np.concatenate(([head], panels)))
    return edges, cumulative


def _resolution_warning(resolution: float) -> str | None:
    if resolution <= 0:
        raise DomainError(f"resolution must be > 0, got {resolution}")
    if resolution > MAX_RESOLUTION:
        message = (
            f"quadrature resolution {resolution} exceeds {MAX_RESOLUTION} e-folds of the "
            "integrand per panel; accuracy is not guaranteed"
        )
        logger.warning(message)
        return message
    return None


def log_weight_integral(
    t: float, alpha: float, power: int = 1, resolution: float = DEFAULT_RESOLUTION
) -> QuadratureResult:
    """log int_0^t omega_s^power ds by Gauss-Legendre panels combined with log-sum-exp.

    Panels are geometric below s = 1 and about ``resolution`` e-folds of the
    integrand wide above it; the first panel (0, 1e-6] is integrated in closed
    form.
    """
    family = _family(alpha)
    if power not in (1, 2):
        raise DomainError(f"power must be 1 or 2, got {power}")
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    warning = _resolution_warning(resolution)
    if t == 0:
        return QuadratureResult(-math.inf, 0, warning)
    edges, cumulative = _cumulative_log_integral(t, family, power, resolution)
    return QuadratureResult(float(cumulative[-1]), int(edges.size), warning)


def u_quadrature(t: float, alpha: float, resolution: float = DEFAULT_RESOLUTION) -> QuadratureResult:
    if not t > 0:
        raise DomainError(f"U_t needs t > 0, got {t}")
    return log_weight_integral(t, alpha, power=1, resolution=resolution)


def log_u_array(times: np.ndarray, alpha: float, resolution: float = DEFAULT_RESOLUTION) -> np.ndarray:
    """log U at every entry of ``times``, from one cumulative sweep to the largest."""
    family = _family(alpha)
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        return np.empty(0)
    if np.any(times < FIRST_PANEL):
        raise DomainError(f"log_u_array needs times >= {FIRST_PANEL:g}")
    _resolution_warning(resolution)
    edges, cumulative = _cumulative_log_integral(float(times.max()), family, 1, resolution, breakpoints=times)
    return cumulative[np.searchsorted(edges, times)]


def u_over_omega(t: float, alpha: float, resolution: float = DEFAULT_RESOLUTION) -> float:
    """U_t / omega_t, the starting value of the normalised U recursion."""
    return math.exp(u_quadrature(t, alpha, resolution).log_value - log_omega(t, alpha))


def weight_companions(t: float, alpha: float, resolution: float = DEFAULT_RESOLUTION) -> WeightCompanions:
    return WeightCompanions(
        t=t,
        log_omega=log_omega(t, alpha),
        log_u=u_quadrature(t, alpha, resolution).log_value,
        log_v_squared=log_v_squared_closed(t, alpha),
    )


def lemma2_residuals(t: float, alpha: float, resolution: float = DEFAULT_RESOLUTION) -> Lemma2Residuals:
    family = _family(alpha)
    if t < 1:
        raise DomainError(f"lemma residuals need t >= 1, got {t}")
    warning = _resolution_warning(resolution)
    exponent = family.exponent(t)
    edges, log_u = _cumulative_log_integral(t, family, 1, resolution)
    log_u_t = float(log_u[-1])
    log_w_t = log_omega(t, family)
    r1 = math.exp(log_u_t - family.alpha * math.log(t) - log_w_t) - 2.0
    r2 = -math.exp(-exponent)
    r3 = -math.log1p(-math.exp(-exponent))
    tail = edges >= 1.0
    s = edges[tail]
    if s.size >= 2:
        ratio = np.exp(log_v_squared_array(s, family) - 2.0 * log_u[tail])
        integral = float(simpson(ratio, x=s))
    else:
        integral = 0.0
    r4 = integral - exponent
    vu = math.exp(math.log(4.0) + family.alpha * math.log(t) + log_v_squared_closed(t, family) - 2.0 * log_u_t) - 1.0
    return Lemma2Residuals(t=t, alpha=family.alpha, r1=r1, r2=r2, r3=r3, r4=r4, vu_residual=vu, warning=warning)
