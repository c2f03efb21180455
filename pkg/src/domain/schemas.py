from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.domain.models import (
    BarSource,
    OuParams,
    Scheme,
    SimGrid,
    TheoremId,
    geometric_checkpoints,
)


def _kebab(name: str) -> str:
    return name.replace("_", "-")


# theorems whose statistics are spread over replicas
NEEDS_REPLICAS = frozenset({TheoremId.T2, TheoremId.T5})
NEEDS_H3 = frozenset({TheoremId.T4, TheoremId.L3, TheoremId.H})


class ExperimentConfig(BaseModel):
    """Flat experiment configuration; keys are the kebab-case field names."""

    model_config = ConfigDict(
        extra="forbid",
        alias_generator=_kebab,
        populate_by_name=True,
        frozen=True,
    )

    theta: float = -1.0
    sigma: float = 1.0
    t_max: float = Field(default=1e4, ge=1.0)
    dt: float = Field(default=0.01, gt=0.0)
    alpha: float = Field(default=0.8, gt=0.5, lt=1.0)
    alpha_prime: float = 0.5
    replicas: int = Field(default=1, ge=1)
    t_min: float = Field(default=100.0, gt=0.0)
    points_per_decade: int = Field(default=10, ge=1)
    seed_root: int = Field(default=0, ge=0, lt=2**64)
    theorems: tuple[TheoremId, ...] = ()
    bar_source: BarSource = BarSource.TILDE
    scheme: Scheme = Scheme.EXACT
    burn_in: float = Field(default=1.0, gt=0.0)

    @field_validator("theorems", mode="before")
    @classmethod
    def split_theorems(cls, value: Any) -> Any:
        if value is None:
            return ()
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return value

    @field_validator("theorems")
    @classmethod
    def sort_theorems(cls, value: tuple[TheoremId, ...]) -> tuple[TheoremId, ...]:
        order = list(TheoremId)
        return tuple(sorted(set(value), key=order.index))

    @model_validator(mode="after")
    def check_compatibility(self) -> "ExperimentConfig":
        OuParams(self.theta, self.sigma)
        SimGrid(self.t_max, self.dt)
        if self.burn_in >= self.t_max:
            raise ValueError(f"burn-in {self.burn_in} must be below t-max {self.t_max}")
        if round(self.burn_in / self.dt) < 1:
            raise ValueError("burn-in must span at least one step")
        if not self.burn_in <= self.t_min <= self.t_max:
            raise ValueError(f"t-min must lie in [burn-in, t-max], got {self.t_min}")
        if not self.theorems:
            return self
        if self.theta >= 0 or self.sigma <= 0:
            raise ValueError("limit theorems need theta < 0 and sigma > 0")
        if self.scheme is Scheme.OBSERVED:
            raise ValueError("verification simulates its own paths; scheme=observed is not allowed")
        chosen = set(self.theorems)
        if chosen & NEEDS_H3 and not 0.5 <= self.alpha_prime < self.alpha:
            raise ValueError(
                f"{', '.join(sorted(chosen & NEEDS_H3))} need 1/2 <= alpha-prime < alpha, "
                f"got alpha-prime={self.alpha_prime}, alpha={self.alpha}"
            )
        if TheoremId.T5 in chosen:
            if self.alpha <= 5.0 / 6.0:
                raise ValueError(f"T5 needs alpha > 5/6, got {self.alpha}")
            if not 0.5 <= self.alpha_prime < 3.0 * self.alpha - 2.0:
                raise ValueError(f"T5 needs 1/2 <= alpha-prime < 3 alpha - 2, got {self.alpha_prime}")
        if TheoremId.T3 in chosen and self.checkpoints().size < 3:
            raise ValueError("T3 fits a slope and needs at least three checkpoints between t-min and t-max")
        short = chosen & NEEDS_REPLICAS
        if short and self.replicas < 2:
            raise ValueError(f"{', '.join(sorted(short))} need replicas >= 2")
        return self

    def params(self) -> OuParams:
        return OuParams(self.theta, self.sigma)

    def grid(self) -> SimGrid:
        return SimGrid(self.t_max, self.dt)

    def checkpoints(self) -> np.ndarray:
        return geometric_checkpoints(self.t_min, self.grid().horizon, self.points_per_decade, self.dt)

    def canonical(self) -> dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)

    def config_hash(self) -> str:
        payload = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()
