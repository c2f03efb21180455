from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class OuDriftError(Exception):
    """Base class for all errors raised by the package."""


class InvalidArgumentError(OuDriftError, ValueError):
    pass


class DomainError(InvalidArgumentError):
    pass


class UnsupportedSchemeError(OuDriftError):
    pass


class DegeneratePathError(OuDriftError):
    pass


class ConfigError(OuDriftError):
    pass


class Scheme(enum.StrEnum):
    EXACT = "exact"
    EULER = "euler"
    COUPLED = "coupled"
    OBSERVED = "observed"


class Integrator(enum.StrEnum):
    DX = "dX"
    DB = "dB"
    DT = "dt"


class BarSource(enum.StrEnum):
    TILDE = "tilde"
    HAT = "hat"


class EstimatorKind(enum.StrEnum):
    LS = "ls"
    WEIGHTED = "weighted"

    @property
    def suffix(self) -> str:
        """Suffix of the statistic and reference names: ls or w."""
        return "w" if self is EstimatorKind.WEIGHTED else "ls"


class NormalizerKind(enum.StrEnum):
    LOG_T = "log_t"
    T_POW_1_MINUS_ALPHA = "t_pow_1_minus_alpha"


class RateKind(enum.StrEnum):
    LIL_HAT = "lil_hat"
    WLS_RATE = "wls_rate"
    BAR_RATE = "bar_rate"


class AggregateStatistic(enum.StrEnum):
    MEAN = "mean"
    MEDIAN = "median"
    QUANTILE = "quantile"
    VARIANCE = "variance"


class HypothesisForm(enum.StrEnum):
    H3 = "H3"
    H4 = "H4"


class TheoremId(enum.StrEnum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"
    T5 = "T5"
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"
    H = "H"
    MI = "MI"


def _require_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise InvalidArgumentError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True, slots=True)
class OuParams:
    """Drift and diffusion of dX = theta X dt + sigma dB.

    sigma = 0 is accepted so that noiseless paths can be simulated; experiments
    require sigma > 0 and theta < 0 (see ``require_stable``).
    """

    theta: float
    sigma: float

    def __post_init__(self) -> None:
        _require_finite(theta=self.theta, sigma=self.sigma)
        if self.theta > 0:
            raise InvalidArgumentError(f"theta must be <= 0, got {self.theta}")
        if self.sigma < 0:
            raise InvalidArgumentError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def stationary_variance(self) -> float:
        # limit constants use |theta|
        if self.theta == 0:
            return math.inf
        return self.sigma**2 / (2.0 * abs(self.theta))

    def require_stable(self) -> None:
        if self.theta >= 0:
            raise InvalidArgumentError("limit theorems need theta < 0")
        if self.sigma <= 0:
            raise InvalidArgumentError("limit theorems need sigma > 0")


@dataclass(frozen=True, slots=True)
class SimGrid:
    t_max: float
    dt: float

    def __post_init__(self) -> None:
        _require_finite(t_max=self.t_max, dt=self.dt)
        if self.dt <= 0:
            raise InvalidArgumentError(f"dt must be > 0, got {self.dt}")
        if self.t_max < 1:
            raise InvalidArgumentError(f"t_max must be >= 1 (burn-in boundary), got {self.t_max}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1, dtype=np.float64) * self.dt

    def index_of(self, t: float) -> int:
        return int(round(t / self.dt))


def geometric_checkpoints(t_min: float, t_max: float, points_per_decade: int, dt: float) -> np.ndarray:
    """Geometric times from t_min to t_max snapped to the dt grid; t_max always included."""
    if not 0 < t_min <= t_max:
        raise InvalidArgumentError(f"need 0 < t_min <= t_max, got {t_min}, {t_max}")
    if points_per_decade < 1:
        raise InvalidArgumentError("points_per_decade must be >= 1")
    count = int(math.floor(math.log10(t_max / t_min) * points_per_decade + 1e-9)) + 1
    raw = t_min * 10.0 ** (np.arange(count) / points_per_decade)
    steps = np.unique(np.round(np.append(raw, t_max) / dt).astype(np.int64))
    return steps * dt


@dataclass(slots=True)
class SamplePath:
    """A discretised trajectory X_0..X_n with the draws that produced it.

    ``driving_increments`` holds the standard normal draws per step: shape (n,)
    for the exact and euler schemes, (n, 2) for the coupled scheme (Brownian
    draw first). Observed paths store dB itself, or an empty array.
    """

    grid: SimGrid
    values: np.ndarray
    driving_increments: np.ndarray
    scheme: Scheme
    seed: int | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.driving_increments = np.asarray(self.driving_increments, dtype=np.float64)
        n = self.grid.n_steps
        if self.values.shape != (n + 1,):
            raise InvalidArgumentError(f"expected {n + 1} values, got {self.values.shape}")
        draws = self.driving_increments
        if self.scheme is Scheme.OBSERVED:
            if draws.size not in (0, n) or draws.ndim != 1:
                raise InvalidArgumentError(f"observed dB must have length 0 or {n}")
        elif self.scheme is Scheme.COUPLED:
            if draws.shape != (n, 2):
                raise InvalidArgumentError(f"coupled draws must have shape ({n}, 2)")
        elif draws.shape != (n,):
            raise InvalidArgumentError(f"expected {n} driving increments, got {draws.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("path values must be finite")

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.grid.times()

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    @property
    def has_brownian_increments(self) -> bool:
        if self.scheme is Scheme.OBSERVED:
            return self.driving_increments.size == self.n_steps
        return self.scheme in (Scheme.EULER, Scheme.COUPLED)

    @property
    def brownian_increments(self) -> np.ndarray:
        if not self.has_brownian_increments:
            raise UnsupportedSchemeError(
                f"scheme {self.scheme.value!r} carries no Brownian increments; "
                "exact-scheme draws are integrated noise, not dB"
            )
        if self.scheme is Scheme.OBSERVED:
            return self.driving_increments
        root = math.sqrt(self.dt)
        if self.scheme is Scheme.COUPLED:
            return root * self.driving_increments[:, 0]
        return root * self.driving_increments


@dataclass(frozen=True, slots=True)
class WeightFamily:
    """omega_s = s^(-alpha/2) exp(s^(1-alpha) / (2(1-alpha))), times exp(log_scale).

    Every statistic built on the weights is invariant under the constant
    factor; ``log_scale`` exists so that invariance can be exercised.
    """

    alpha: float
    log_scale: float = 0.0

    def __post_init__(self) -> None:
        _require_finite(alpha=self.alpha, log_scale=self.log_scale)
        if not 0.5 < self.alpha < 1.0:
            raise InvalidArgumentError(f"alpha must lie in (1/2, 1), got {self.alpha}")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    def exponent(self, t: float) -> float:
        """t^(1-alpha) / (1-alpha), the exponent of the closed form of V_t^2."""
        return t**self.beta / self.beta


@dataclass(frozen=True, slots=True)
class WeightCompanions:
    t: float
    log_omega: float
    log_u: float
    log_v_squared: float

    @property
    def u(self) -> float:
        return math.exp(self.log_u)

    @property
    def v_squared(self) -> float:
        return math.exp(self.log_v_squared)


@dataclass(slots=True)
class EstimatorTrace:
    """Running estimators on the simulation grid from the burn-in index on.

    Position k of every dense array refers to time ``times[k]`` =
    (burn_in_index + k) * dt. Weighted accumulators are divided by the current
    omega (``a_norm`` = int omega X dX / omega_t, ``b_norm`` = P_t / omega_t,
    ``u_norm`` = U_t / omega_t) and ``qv_norm`` = <M~>_t / omega_t^2.
    """

    dt: float
    burn_in_index: int
    times: np.ndarray
    x: np.ndarray
    checkpoint_index: np.ndarray
    theta_hat: np.ndarray | None = None
    zeta: np.ndarray | None = None
    alpha: float | None = None
    theta_tilde: np.ndarray | None = None
    a_norm: np.ndarray | None = None
    b_norm: np.ndarray | None = None
    qv_norm: np.ndarray | None = None
    u_norm: np.ndarray | None = None
    theta_bar: np.ndarray | None = None
    bar_source: BarSource | None = None

    @property
    def burn_in(self) -> float:
        return float(self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def checkpoints(self) -> np.ndarray:
        return self.times[self.checkpoint_index]

    def require(self, name: str) -> np.ndarray:
        values = getattr(self, name)
        if values is None:
            raise InvalidArgumentError(f"trace has no {name!r} column; compute it first")
        return values

    def at_checkpoints(self, name: str) -> np.ndarray:
        return self.require(name)[self.checkpoint_index]

    def index_at(self, t: float) -> int:
        k = int(round(t / self.dt)) - self.burn_in_index
        if not 0 <= k < self.times.size:
            raise InvalidArgumentError(f"t={t} is outside the trace [{self.burn_in}, {self.horizon}]")
        return k


@dataclass(frozen=True, slots=True)
class DerivedEstimates:
    """Log-averaged second-order statistics at horizon T.

    theta_check and theta_breve estimate |theta| (sign convention).
    """

    sigma_hat2: float
    theta_check: float
    sigma_tilde2: float
    theta_breve: float
    horizon: float
    alpha: float
    theta_bar: float
    bar_source: BarSource = BarSource.TILDE

    def as_record(self) -> dict[str, float]:
        return {
            "sigma_hat2": self.sigma_hat2,
            "theta_check": self.theta_check,
            "sigma_tilde2": self.sigma_tilde2,
            "theta_breve": self.theta_breve,
        }


@dataclass(slots=True)
class LogAveragedMeasure:
    values: np.ndarray
    weights: np.ndarray
    total_mass: float
    normalizer: float
    normalizer_kind: NormalizerKind

    def __post_init__(self) -> None:
        if self.values.shape != self.weights.shape:
            raise InvalidArgumentError("values and weights must align")
        if np.any(self.weights < 0):
            raise InvalidArgumentError("weights must be nonnegative")

    def __len__(self) -> int:
        return int(self.values.size)

    def with_point_mass(self, value: float, weight: float) -> LogAveragedMeasure:
        return LogAveragedMeasure(
            values=np.append(self.values, value),
            weights=np.append(self.weights, weight),
            total_mass=self.total_mass + weight,
            normalizer=self.normalizer,
            normalizer_kind=self.normalizer_kind,
        )


@dataclass(frozen=True, slots=True)
class TheoremReport:
    """One verified statistic.

    ``criterion`` is one of ``abs`` (|value - reference| <= tolerance),
    ``upper`` (value <= reference + tolerance), ``band`` (reference/tolerance
    <= value <= reference*tolerance), ``fraction`` (value >= reference) or
    ``decreasing`` (value < reference).
    """

    theorem_id: TheoremId | str
    statistic: str
    value: float
    reference: float
    tolerance: float
    passed: bool
    criterion: str = "abs"
    metadata: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def judge(
        cls,
        theorem_id: TheoremId | str,
        statistic: str,
        value: float,
        reference: float,
        tolerance: float,
        criterion: str = "abs",
        **metadata: Any,
    ) -> TheoremReport:
        if not math.isfinite(value):
            passed = False
        elif criterion == "abs":
            passed = abs(value - reference) <= tolerance
        elif criterion == "upper":
            passed = value <= reference + tolerance
        elif criterion == "band":
            passed = reference / tolerance <= value <= reference * tolerance
        elif criterion == "fraction":
            passed = value >= reference
        elif criterion == "decreasing":
            passed = value < reference
        else:
            raise InvalidArgumentError(f"unknown criterion {criterion!r}")
        return cls(theorem_id, statistic, float(value), float(reference), float(tolerance), bool(passed), criterion, metadata)
