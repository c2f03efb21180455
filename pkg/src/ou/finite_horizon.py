"""References for the verified statistics at the horizon actually simulated.

The limit constants rest on U_t ~ 2 t^alpha omega_t, which is far from exact
at experiment horizons when alpha is close to 1, and they ignore the burn-in
start and the random centre theta_bar. Here U_t, V_t^2, the burn-in and the
centring are kept exact while the path is replaced by its Gaussian limit:
averages of X^2 equal the stationary variance c and the estimator errors are
jointly Gaussian with

    Cov(e_s, f_r) = 2 |theta| W_ef(min(s, r)) / (W_e(s) W_f(r)),

where W is s for theta_hat and U for theta_tilde, and W_ef is s, U or V^2 for
the hat-hat, mixed and tilde-tilde pairs. Integrals of squared errors are then
quadratic forms in a Gaussian vector; their means and variances are exact on
a quadrature grid and their medians come from the gamma law with the same two
moments.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.domain.models import BarSource, EstimatorKind, InvalidArgumentError, OuParams, WeightFamily
from src.ou.limit_theorems import tlcl_scale
from src.ou.weights import log_u_array, log_v_squared_array, log_v_squared_closed

logger = logging.getLogger(__name__)

NODES_PER_DECADE = 160


@dataclass(frozen=True, slots=True)
class SquareMoments:
    """Mean and variance of an integral of squared errors, one entry per checkpoint."""

    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    def median(self) -> np.ndarray:
        """Wilson-Hilferty median of the gamma law with these moments."""
        with np.errstate(divide="ignore", invalid="ignore"):
            inverse_shape = self.variance / (self.mean * self.mean)
        return self.mean * np.clip(1.0 - inverse_shape / 9.0, 0.0, None) ** 3

    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def scaled(self, factor: float | np.ndarray) -> SquareMoments:
        factor = np.asarray(factor, dtype=np.float64)
        return SquareMoments(self.times, factor * self.mean, factor * factor * self.variance)


def _bar_kind(source: BarSource) -> EstimatorKind:
    return EstimatorKind.WEIGHTED if BarSource(source) is BarSource.TILDE else EstimatorKind.LS


def quadrature_nodes(start: float, times: np.ndarray) -> np.ndarray:
    """Geometric nodes on [start, max(times)] with every checkpoint beyond start added."""
    times = np.asarray(times, dtype=np.float64)
    horizon = float(times.max())
    if not 0 < start < horizon:
        raise InvalidArgumentError(f"need 0 < start < horizon, got start={start}, horizon={horizon}")
    count = max(int(math.ceil(math.log10(horizon / start) * NODES_PER_DECADE)), 1) + 1
    nodes = np.union1d(np.geomspace(start, horizon, count), times[times > start])
    distinct = np.concatenate(([True], np.diff(nodes) > 1e-12 * nodes[1:]))
    return nodes[distinct]


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    q = np.zeros_like(nodes)
    h = np.diff(nodes)
    q[:-1] += 0.5 * h
    q[1:] += 0.5 * h
    return q


class ErrorModel:
    """Gaussian model of the theta_hat and theta_tilde errors on a quadrature grid."""

    def __init__(self, params: OuParams, alpha: float, start: float, times: np.ndarray) -> None:
        params.require_stable()
        family = WeightFamily(alpha)
        self.two_theta = 2.0 * abs(params.theta)
        self.start = float(start)
        self.times = np.asarray(times, dtype=np.float64)
        self.nodes = quadrature_nodes(self.start, self.times)
        log_s = np.log(self.nodes)
        log_u = log_u_array(self.nodes, family)
        log_v2 = log_v_squared_array(self.nodes, family)
        ls, w = EstimatorKind.LS, EstimatorKind.WEIGHTED
        self._log_norm = {ls: log_s, w: log_u}
        self._log_pair = {(ls, ls): log_s, (ls, w): log_u, (w, ls): log_u, (w, w): log_v2}
        self._blocks: dict[tuple[EstimatorKind, EstimatorKind], np.ndarray] = {}
        self._earlier = np.minimum.outer(np.arange(self.nodes.size), np.arange(self.nodes.size))

    def covariance(self, e: EstimatorKind, f: EstimatorKind) -> np.ndarray:
        key = (EstimatorKind(e), EstimatorKind(f))
        if key not in self._blocks:
            log_cov = (
                self._log_pair[key][self._earlier]
                - self._log_norm[key[0]][:, None]
                - self._log_norm[key[1]][None, :]
            )
            self._blocks[key] = self.two_theta * np.exp(log_cov)
        return self._blocks[key]

    def squared_error(self, kind: EstimatorKind | str, centre: BarSource | str | None = None) -> SquareMoments:
        """Moments of int_start^t (e_s - m_t)^2 ds at every checkpoint t.

        m_t is the error of theta_bar_t built from ``centre``, or 0 when no
        centre is given. Checkpoints not beyond the start get NaN.
        """
        kind = EstimatorKind(kind)
        own = self.covariance(kind, kind)
        if centre is not None:
            bar = _bar_kind(BarSource(centre))
            cross = self.covariance(kind, bar)
            bar_cov = self.covariance(bar, bar)
        mean = np.full(self.times.size, np.nan)
        variance = np.full(self.times.size, np.nan)
        for k, t in enumerate(self.times):
            if not t > self.start:
                continue
            m = int(np.searchsorted(self.nodes, t * (1.0 + 1e-10), side="right"))
            q = trapezoid_weights(self.nodes[:m])
            r = own[:m, :m]
            if centre is not None:
                # theta_bar_t = (start theta_start + int_start^t theta ds) / t
                a = q.copy()
                a[0] += self.start
                a /= t
                c = cross[:m, :m] @ a
                v = float(a @ bar_cov[:m, :m] @ a)
                r = r - c[:, None] - c[None, :] + v
            mean[k] = float(q @ np.diagonal(r))
            variance[k] = 2.0 * float(q @ (r * r) @ q)
        return SquareMoments(self.times, mean, variance)


@dataclass(slots=True)
class HorizonReferences:
    """Finite-horizon references for one (theta, sigma, alpha, burn-in, checkpoint grid)."""

    params: OuParams
    alpha: float
    start: float
    times: np.ndarray
    bar_source: BarSource
    _derived: dict[str, SquareMoments] = field(default_factory=dict)
    _qsl: dict[str, SquareMoments] = field(default_factory=dict)

    @classmethod
    def build(
        cls, params: OuParams, alpha: float, start: float, times: np.ndarray, bar_source: BarSource | str
    ) -> HorizonReferences:
        refs = cls(params, alpha, float(start), np.asarray(times, dtype=np.float64), BarSource(bar_source))
        model = ErrorModel(params, alpha, start, refs.times)
        th = abs(params.theta)
        s2 = params.sigma**2
        c = params.stationary_variance
        beta = 1.0 - alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            log_t = np.log(refs.times)
            power = refs.times**beta / beta
        check = model.squared_error(EstimatorKind.LS, refs.bar_source).scaled(1.0 / (2.0 * log_t))
        breve = model.squared_error(EstimatorKind.WEIGHTED, refs.bar_source).scaled(1.0 / (2.0 * power))
        refs._derived.update(
            theta_check=check,
            sigma_hat2=check.scaled(s2 / th),
            theta_breve=breve,
            sigma_tilde2=breve.scaled(4.0 * s2 / th),
        )
        hat = model.squared_error(EstimatorKind.LS)
        tilde = model.squared_error(EstimatorKind.WEIGHTED)
        refs._qsl.update(
            qsl1_ls=hat.scaled(c * c / log_t),
            qsl2_ls=hat.scaled(c / log_t),
            qsl1_w=tilde.scaled(c * c / power),
            qsl2_w=tilde.scaled(4.0 * c / power),
        )
        logger.debug("finite-horizon references on %d quadrature nodes", model.nodes.size)
        return refs

    def derived(self, name: str) -> SquareMoments:
        return self._derived[name]

    def qsl(self, name: str) -> SquareMoments:
        return self._qsl[name]

    def tlcl_variance(self, kind: EstimatorKind | str) -> float:
        """Variance of the TLCL statistic at the last checkpoint."""
        kind = EstimatorKind(kind)
        name = "theta_check" if kind is EstimatorKind.LS else "theta_breve"
        horizon = self.times[-1]
        scale = float(tlcl_scale(kind, horizon, self.alpha))
        return scale * scale * float(self.derived(name).variance[-1])

    def llil_constant(self, kind: EstimatorKind | str) -> np.ndarray:
        """sqrt(2) times the standard deviation of the TLCL statistic, per checkpoint."""
        kind = EstimatorKind(kind)
        name = "theta_check" if kind is EstimatorKind.LS else "theta_breve"
        with np.errstate(invalid="ignore"):
            return math.sqrt(2.0) * tlcl_scale(kind, self.times, self.alpha) * self.derived(name).sd()


def log_length(kind: EstimatorKind | str, alpha: float, start: float, horizon: float) -> float:
    """Length of [start, horizon] in the time change under which the rescaled error decorrelates at unit rate.

    log(horizon / start) for theta_hat, log V_horizon^2 - log V_start^2 for theta_tilde.
    """
    if EstimatorKind(kind) is EstimatorKind.LS:
        return math.log(horizon / start)
    return log_v_squared_closed(horizon, alpha) - log_v_squared_closed(start, alpha)
