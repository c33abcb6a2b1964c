"""Weighted vectors stored in moment form.

A weighted vector ``<v, c>`` is kept as ``(moment=c*v, weight=c)``. In that
form the weighted-average addition is plain componentwise addition, scaling
multiplies both parts, and the partial inverse is componentwise subtraction.
Division only happens when the value (``moment / weight``) is read.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

EPS_W = 1e-12
EPS_M = 1e-9


class WeightedVectorError(ArithmeticError):
    pass


class ZeroWeightValue(WeightedVectorError):
    """Raised when the value of a (near-)zero-weight vector is requested."""


class IllConditionedDifference(WeightedVectorError):
    """Weights cancel in a difference but moments do not."""


class DimensionMismatch(ValueError):
    pass


class WeightedVector:
    """Immutable ``<value, weight>`` pair in moment form.

    Operators: ``x + y`` is the weighted average, ``c * x`` rescales the
    weight, ``x - y`` is the partial inverse of ``+``.
    """

    __slots__ = ("moment", "weight")

    def __init__(self, moment: Sequence[float], weight: float):
        object.__setattr__(self, "moment", tuple(float(v) for v in moment))
        object.__setattr__(self, "weight", float(weight))

    @classmethod
    def from_value(cls, value: Sequence[float], weight: float = 1.0) -> "WeightedVector":
        return cls([weight * v for v in value], weight)

    @classmethod
    def zero(cls, dim: int) -> "WeightedVector":
        return _raw((0.0,) * dim, 0.0)

    def __setattr__(self, name, value):
        raise AttributeError("WeightedVector is immutable")

    @property
    def dim(self) -> int:
        return len(self.moment)

    @property
    def value(self) -> tuple[float, ...]:
        w = self.weight
        if -EPS_W <= w <= EPS_W:
            raise ZeroWeightValue(f"value undefined for weight {w!r}")
        return tuple(m / w for m in self.moment)

    def is_zero(self) -> bool:
        return -EPS_W <= self.weight <= EPS_W

    def __add__(self, other: "WeightedVector") -> "WeightedVector":
        a, b = self.moment, other.moment
        if len(a) != len(b):
            raise DimensionMismatch(f"{len(a)} != {len(b)}")
        return _raw(tuple(x + y for x, y in zip(a, b)), self.weight + other.weight)

    def __sub__(self, other: "WeightedVector") -> "WeightedVector":
        a, b = self.moment, other.moment
        if len(a) != len(b):
            raise DimensionMismatch(f"{len(a)} != {len(b)}")
        w = self.weight - other.weight
        m = tuple(x - y for x, y in zip(a, b))
        if -EPS_W <= w <= EPS_W:
            if math.sqrt(sum(v * v for v in m)) > EPS_M:
                raise IllConditionedDifference(
                    f"weights cancel ({w!r}) but moments differ by {m!r}"
                )
            return _raw((0.0,) * len(m), 0.0)
        return _raw(m, w)

    def __rmul__(self, c: float) -> "WeightedVector":
        return _raw(tuple(c * v for v in self.moment), c * self.weight)

    __mul__ = __rmul__

    def __eq__(self, other):
        if not isinstance(other, WeightedVector):
            return NotImplemented
        return self.moment == other.moment and self.weight == other.weight

    def __hash__(self):
        return hash((self.moment, self.weight))

    def isclose(self, other: "WeightedVector", rel: float = 1e-12, abs_: float = 0.0) -> bool:
        """Componentwise closeness in moment form."""
        if len(self.moment) != len(other.moment):
            return False
        pairs = list(zip(self.moment, other.moment)) + [(self.weight, other.weight)]
        return all(math.isclose(a, b, rel_tol=rel, abs_tol=abs_) for a, b in pairs)

    def __repr__(self) -> str:
        if self.is_zero():
            return f"WeightedVector(zero, dim={self.dim})"
        return f"WeightedVector(value={self.value}, weight={self.weight})"


def _raw(moment: tuple, weight: float) -> WeightedVector:
    # skips float coercion; callers guarantee a tuple of floats
    x = object.__new__(WeightedVector)
    object.__setattr__(x, "moment", moment)
    object.__setattr__(x, "weight", weight)
    return x


def wv_add(x: WeightedVector, y: WeightedVector) -> WeightedVector:
    return x + y


def wv_scale(c: float, x: WeightedVector) -> WeightedVector:
    return c * x


def wv_sub(x: WeightedVector, y: WeightedVector) -> WeightedVector:
    return x - y


def wv_fold(xs: Iterable[WeightedVector], dim: int | None = None) -> WeightedVector:
    """Big-sum of a collection. ``dim`` is needed only for an empty input."""
    it = iter(xs)
    try:
        acc = next(it)
    except StopIteration:
        if dim is None:
            raise ValueError("dim is required to fold an empty collection")
        return WeightedVector.zero(dim)
    for x in it:
        acc = acc + x
    return acc


def wv_value(x: WeightedVector) -> tuple[float, ...]:
    return x.value


def wv_weight(x: WeightedVector) -> float:
    return x.weight


def wv_is_zero(x: WeightedVector) -> bool:
    return x.is_zero()
