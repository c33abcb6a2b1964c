"""Convex decision regions: the nearest-source (Voronoi) classifier."""

from __future__ import annotations

import math
from typing import Optional, Protocol, Sequence

from .wvector import WeightedVector


class Classifier(Protocol):
    """Anything mapping a value vector to a region index (or ``None``).

    The protocol only needs ``classify``; regions must be convex and
    non-overlapping for the stopping rule to be sound.
    """

    dim: int

    def classify(self, x: Sequence[float]) -> Optional[int]: ...


class SourceSet:
    """k distinct candidate sources; ``classify`` returns the L2-nearest.

    Ties go to the smallest index, which makes every cell a convex set
    (a Voronoi cell with some boundary faces assigned deterministically).
    """

    def __init__(self, sources: Sequence[Sequence[float]]):
        srcs = tuple(tuple(float(v) for v in s) for s in sources)
        if len(srcs) < 2:
            raise ValueError("need at least two sources")
        dims = {len(s) for s in srcs}
        if len(dims) != 1:
            raise ValueError("sources must share a dimension")
        if len(set(srcs)) != len(srcs):
            raise ValueError("sources must be pairwise distinct")
        self.sources = srcs
        self.k = len(srcs)
        self.dim = dims.pop()
        if self.dim == 2:
            self.classify = self._classify_2d

    def classify(self, x: Sequence[float]) -> int:
        best = 0
        best_d = math.inf
        for idx, c in enumerate(self.sources):
            d = 0.0
            for a, b in zip(c, x):
                t = a - b
                d += t * t
            if d < best_d:
                best, best_d = idx, d
        return best

    def _classify_2d(self, x: Sequence[float]) -> int:
        # hot path of the simulator
        x0, x1 = x
        best = 0
        best_d = math.inf
        for idx, (a, b) in enumerate(self.sources):
            t = a - x0
            u = b - x1
            d = t * t + u * u
            if d < best_d:
                best, best_d = idx, d
        return best

    def nearest_other(self, idx: int) -> int:
        """Index of the source nearest to ``sources[idx]``, excluding itself."""
        c = self.sources[idx]
        best, best_d = -1, None
        for j, s in enumerate(self.sources):
            if j == idx:
                continue
            d = sum((a - b) ** 2 for a, b in zip(c, s))
            if best_d is None or d < best_d:
                best, best_d = j, d
        return best

    def __repr__(self) -> str:
        return f"SourceSet({list(self.sources)!r})"


def classify(c: SourceSet, x: Sequence[float]) -> int:
    return c.classify(x)


def same_region(c: Classifier, x: WeightedVector, y: WeightedVector) -> bool:
    """True if either argument has zero weight or both values share a cell."""
    if x.is_zero() or y.is_zero():
        return True
    return c.classify(x.value) == c.classify(y.value)
