"""Model parameters shared by every module."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

from .errors import DomainError


@dataclass(frozen=True)
class ModelParams:
    """Physical and plasma parameters.

    ``N`` particles, vortex degree ``m``, trap coefficients ``omega`` (r^2) and
    ``k`` (r^4), contact coupling ``g`` and plasma temperature ``T``. ``T``
    defaults to ``1/N``, the value for which the plasma Gibbs measure equals the
    modulus squared of the quasi-hole trial state.
    """

    N: int
    m: int = 0
    omega: float = 0.0
    k: float = 0.0
    g: float = 0.0
    T: float | None = field(default=None)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"N must be a positive integer, got {self.N!r}")
        if int(self.m) != self.m or self.m < 0:
            raise DomainError(f"m must be a nonnegative integer, got {self.m!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "m", int(self.m))
        if not math.isfinite(self.omega):
            raise DomainError("omega must be finite")
        if self.k < 0 or not math.isfinite(self.k):
            raise DomainError(f"k must be finite and >= 0, got {self.k!r}")
        if self.g < 0:
            raise DomainError(f"g must be >= 0, got {self.g!r}")
        T = 1.0 / self.N if self.T is None else float(self.T)
        if not (T > 0 and math.isfinite(T)):
            raise DomainError(f"T must be > 0, got {self.T!r}")
        object.__setattr__(self, "T", T)

    @property
    def r_opt(self) -> float:
        """Minimum point sqrt(m/N) of the plasma one-body potential."""
        return math.sqrt(self.m / self.N)

    @property
    def inner_radius(self) -> float:
        return math.sqrt(self.m / self.N)

    @property
    def outer_radius(self) -> float:
        return math.sqrt(2.0 + self.m / self.N)

    @property
    def is_thermal(self) -> bool:
        """True when m > N^2, where the entropy term dominates."""
        return self.m > self.N**2

    def replace(self, **changes) -> "ModelParams":
        d = asdict(self)
        if "N" in changes and "T" not in changes and self.T == 1.0 / self.N:
            d["T"] = None
        d.update(changes)
        return ModelParams(**d)

    def to_dict(self) -> dict:
        return asdict(self)
