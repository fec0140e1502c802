"""Hyperparameter search space: dimension scaling, unit-cube transforms, sampling.

All searchers operate on coordinates in the unit cube [0, 1]^d; the transforms
between native units and unit coordinates live here so no searcher duplicates
scale logic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

HpVector = tuple[float, ...]

SCALES = ("linear", "log", "reverse-log")


@dataclass(frozen=True)
class Dimension:
    """One continuous hyperparameter with native-unit bounds.

    scale:
      linear       affine map onto [0, 1]
      log          affine in log10(x); requires lower > 0
      reverse-log  affine in log10(1 - x); requires upper < 1. Intended for
                   ranges written as [1 - 10^a, 1 - 10^b] (e.g. Adam betas),
                   sampled uniformly in log10(1 - x).

    In every scale u=0 maps to `lower` and u=1 to `upper`.
    """

    name: str
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"dimension {self.name!r}: unknown scale {self.scale!r}")
        if not self.lower < self.upper:
            raise ValueError(
                f"dimension {self.name!r}: lower {self.lower} must be < upper {self.upper}"
            )
        if self.scale == "log" and self.lower <= 0:
            raise ValueError(f"dimension {self.name!r}: log scale requires lower > 0")
        if self.scale == "reverse-log" and self.upper >= 1:
            raise ValueError(f"dimension {self.name!r}: reverse-log scale requires upper < 1")

    def to_unit(self, x: float) -> float:
        if self.scale == "linear":
            return (x - self.lower) / (self.upper - self.lower)
        if self.scale == "log":
            lo, hi = math.log10(self.lower), math.log10(self.upper)
            return (math.log10(x) - lo) / (hi - lo)
        lo, hi = math.log10(1.0 - self.lower), math.log10(1.0 - self.upper)
        return (math.log10(1.0 - x) - lo) / (hi - lo)

    def from_unit(self, u: float) -> float:
        # Endpoints map exactly; interior values are clamped into the bounds
        # so a 1-ulp transform overshoot can never produce an invalid value.
        if u == 0.0:
            return self.lower
        if u == 1.0:
            return self.upper
        if self.scale == "linear":
            x = self.lower + u * (self.upper - self.lower)
        elif self.scale == "log":
            lo, hi = math.log10(self.lower), math.log10(self.upper)
            x = 10.0 ** (lo + u * (hi - lo))
        else:
            lo, hi = math.log10(1.0 - self.lower), math.log10(1.0 - self.upper)
            x = 1.0 - 10.0 ** (lo + u * (hi - lo))
        return min(max(x, self.lower), self.upper)

    def as_dict(self) -> dict:
        return {"name": self.name, "lower": self.lower, "upper": self.upper, "scale": self.scale}


class SearchSpace:
    """Ordered collection of dimensions with unique names."""

    def __init__(self, dims: Iterable[Dimension]):
        dims = tuple(dims)
        if not dims:
            raise ValueError("search space needs at least one dimension")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise ValueError("duplicate dimension names")
        self.dims = dims
        self.names = tuple(names)

    @property
    def dim(self) -> int:
        return len(self.dims)

    def to_unit(self, hp: Sequence[float]) -> np.ndarray:
        """Map a native-unit vector into the unit cube.

        Raises ValueError on arity mismatch or out-of-range coordinates.
        """
        violation = self.validate(hp)
        if violation is not None:
            raise ValueError(violation)
        return np.array([d.to_unit(x) for d, x in zip(self.dims, hp)])

    def from_unit(self, u: Sequence[float]) -> HpVector:
        """Map unit-cube coordinates back to native units (inverse of to_unit)."""
        if len(u) != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {len(u)}")
        for i, x in enumerate(u):
            if not 0.0 <= x <= 1.0:
                raise ValueError(
                    f"unit coordinate {i} ({self.names[i]!r}) outside [0, 1]: {x}"
                )
        return tuple(d.from_unit(float(x)) for d, x in zip(self.dims, u))

    def sample_uniform(self, rng: np.random.Generator) -> HpVector:
        """Draw uniformly in unit space, then map to native units.

        Log dims are therefore log-uniform in native units, reverse-log dims
        log-uniform in 1 - x.
        """
        return self.from_unit(rng.random(self.dim))

    def validate(self, hp: Sequence[float]) -> str | None:
        """Return None if `hp` is valid, else a message naming the first violation."""
        if len(hp) != self.dim:
            return f"expected {self.dim} values, got {len(hp)}"
        for d, x in zip(self.dims, hp):
            if not d.lower <= x <= d.upper:
                return f"dimension {d.name!r}: value {x} outside [{d.lower}, {d.upper}]"
        return None

    def to_dict(self, hp: Sequence[float]) -> dict[str, float]:
        """Name -> value mapping, the form trainers consume."""
        return dict(zip(self.names, hp))

    def as_config(self) -> list[dict]:
        return [d.as_dict() for d in self.dims]

    @classmethod
    def from_config(cls, entries: Sequence[dict]) -> "SearchSpace":
        """Build from the run-config declaration: [{name, lower, upper, scale}, ...]."""
        dims = []
        for e in entries:
            dims.append(
                Dimension(
                    name=e["name"],
                    lower=float(e["lower"]),
                    upper=float(e["upper"]),
                    scale=e.get("scale", "linear"),
                )
            )
        return cls(dims)

    def __repr__(self):
        parts = ", ".join(f"{d.name}[{d.lower}, {d.upper}]({d.scale})" for d in self.dims)
        return f"SearchSpace({parts})"
