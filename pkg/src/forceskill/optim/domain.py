"""Parameter domains and the unit-cube bijection every learner searches in."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class ParamDomain:
    """Ordered (name, lower, upper) triples.

    Entries with ``lower == upper`` are frozen: they keep their value and
    take no search dimension.
    """

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).copy()
        hi = np.asarray(self.upper, dtype=float).copy()
        names = tuple(self.names)
        if lo.shape != (len(names),) or hi.shape != lo.shape:
            raise ValueError("domain bounds must match the parameter names")
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("domain bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("lower bound above upper bound")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_bounds(cls, bounds: Mapping[str, Sequence[float]] | Sequence[tuple]) -> "ParamDomain":
        items = list(bounds.items()) if isinstance(bounds, Mapping) else [(n, (lo, hi)) for n, lo, hi in bounds]
        return cls(
            tuple(n for n, _ in items),
            np.array([float(b[0]) for _, b in items]),
            np.array([float(b[1]) for _, b in items]),
        )

    @property
    def free(self) -> np.ndarray:
        return self.lower < self.upper

    @property
    def dim(self) -> int:
        return int(np.count_nonzero(self.free))

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n, f in zip(self.names, self.free) if f)

    def to_physical(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} unit coordinates, got shape {u.shape}")
        if np.any(u < 0) or np.any(u > 1):
            raise ValueError("unit coordinates must lie in [0, 1]")
        out = self.lower.copy()
        f = self.free
        out[f] = self.lower[f] + u * (self.upper[f] - self.lower[f])
        return out

    def to_unit(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if v.shape != (len(self.names),):
            raise ValueError("expected one value per parameter")
        f = self.free
        return (v[f] - self.lower[f]) / (self.upper[f] - self.lower[f])

    def contains(self, values, tol: float = 1e-12) -> bool:
        v = np.asarray(values, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def candidate(self, u) -> "Candidate":
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        return Candidate(u, self.to_physical(u), self.names)


@dataclass(frozen=True, eq=False)
class Candidate:
    unit: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        u = np.asarray(self.unit, dtype=float).copy()
        if np.any(u < 0) or np.any(u > 1):
            raise ValueError("candidate coordinates must lie in the unit cube")
        v = np.asarray(self.values, dtype=float).copy()
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "unit", u)
        object.__setattr__(self, "values", v)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}


@dataclass(frozen=True)
class ObjectiveResult:
    cost: float
    success: int
    candidate: Candidate

    def __post_init__(self):
        if not np.isfinite(self.cost):
            raise ValueError("objective cost must be finite")
        if self.success not in (0, 1):
            raise ValueError("success indicator must be 0 or 1")
