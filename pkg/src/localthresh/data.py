"""Synthetic input data: Gaussian clouds placed between two sources."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .regions import SourceSet


@dataclass(frozen=True)
class DataModel:
    """Inputs are i.i.d. normal around a point between two sources.

    ``bias`` is the fraction of the way from the desired source towards its
    nearest competitor (the contender); the per-dimension standard deviation
    is ``std_multiplier`` times the distance between the two.
    """

    sources: SourceSet
    desired: int
    bias: float = 0.1
    std_multiplier: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.bias < 0.5:
            raise ValueError("bias must be in [0, 0.5)")
        if self.std_multiplier < 0:
            raise ValueError("std multiplier must be non-negative")
        if not 0 <= self.desired < self.sources.k:
            raise ValueError("desired source out of range")

    @classmethod
    def random(
        cls,
        k: int = 3,
        d: int = 2,
        bias: float = 0.1,
        std_multiplier: float = 1.0,
        seed: int = 0,
        sources: Optional[Sequence[Sequence[float]]] = None,
    ) -> "DataModel":
        """Draw sources uniformly in the unit cube (unless given) and a desired one."""
        rng = np.random.default_rng([seed, 0xDA7A])
        if sources is None:
            sources = rng.random((k, d)).tolist()
        src = SourceSet(sources)
        desired = int(rng.integers(src.k))
        return cls(src, desired, bias, std_multiplier, seed)

    @property
    def contender(self) -> int:
        return self.sources.nearest_other(self.desired)

    @property
    def mean(self) -> np.ndarray:
        cd = np.asarray(self.sources.sources[self.desired])
        cc = np.asarray(self.sources.sources[self.contender])
        return (1 - self.bias) * cd + self.bias * cc

    @property
    def sigma(self) -> float:
        cd = np.asarray(self.sources.sources[self.desired])
        cc = np.asarray(self.sources.sources[self.contender])
        return self.std_multiplier * float(np.linalg.norm(cd - cc))

    @property
    def dim(self) -> int:
        return self.sources.dim

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + self.sigma * rng.standard_normal((n, self.dim))


def gen_inputs(model: DataModel, n: int) -> np.ndarray:
    """``n`` initial inputs, one row per peer."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return model.draw(np.random.default_rng([model.seed, 1]), n)


def resample_one(model: DataModel, peer: int, draw: int) -> np.ndarray:
    """Fresh input for ``peer``; deterministic in ``(model.seed, peer, draw)``."""
    rng = np.random.default_rng([model.seed, 2, peer, draw])
    return model.draw(rng, 1)[0]


class ResampleStream:
    """Fast sequential source of fresh inputs for the noise process."""

    def __init__(self, model: DataModel, seed: int, block: int = 4096):
        self.model = model
        self._rng = np.random.default_rng([seed, 3])
        self._block = block
        self._buf = np.empty((0, model.dim))
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= len(self._buf):
            self._buf = self.model.draw(self._rng, self._block)
            self._pos = 0
        row = self._buf[self._pos]
        self._pos += 1
        return row
