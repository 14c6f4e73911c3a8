"""Streaming duration statistics with a fixed-size reservoir for quantiles."""

from __future__ import annotations

import math
import random

import numpy as np

DEFAULT_RESERVOIR = 65_536


class Reservoir:
    """Uniform sample of a stream (Algorithm R).

    Holds every value while ``count <= capacity``, so quantiles are exact up
    to that point and estimates afterwards.
    """

    def __init__(self, capacity: int = DEFAULT_RESERVOIR, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.count = 0
        self.samples: list = []
        self._rng = random.Random(seed)

    def add(self, value) -> None:
        self.count += 1
        if len(self.samples) < self.capacity:
            self.samples.append(value)
            return
        j = self._rng.randrange(self.count)
        if j < self.capacity:
            self.samples[j] = value

    @property
    def exact(self) -> bool:
        return self.count <= self.capacity

    def quantile(self, q: float) -> float | None:
        if not self.samples:
            return None
        return float(np.quantile(np.asarray(self.samples, dtype=np.float64), q))

    def quantiles(self, qs) -> list[float] | None:
        if not self.samples:
            return None
        return [float(x) for x in np.quantile(np.asarray(self.samples, dtype=np.float64), list(qs))]


class StreamingStats:
    def __init__(self, capacity: int = DEFAULT_RESERVOIR, seed: int = 0):
        self.count = 0
        self.total = 0
        self.min = math.inf
        self.max = -math.inf
        self.reservoir = Reservoir(capacity, seed)

    def add(self, value) -> None:
        self.count += 1
        self.total += value
        if value < self.min:
            self.min = value
        if value > self.max:
            self.max = value
        self.reservoir.add(value)

    @property
    def mean(self) -> float | None:
        return self.total / self.count if self.count else None

    @property
    def median(self) -> float | None:
        return self.reservoir.quantile(0.5)

    def summary(self, cdf_points: int = 0) -> dict:
        if not self.count:
            out = {"count": 0, "mean": None, "median": None, "min": None, "max": None,
                   "p90": None, "p99": None, "median_exact": True}
            if cdf_points:
                out["cdf"] = []
            return out
        q50, q90, q99 = self.reservoir.quantiles((0.5, 0.9, 0.99))
        out = {
            "count": self.count,
            "mean": self.total / self.count,
            "median": q50,
            "min": self.min,
            "max": self.max,
            "p90": q90,
            "p99": q99,
            "median_exact": self.reservoir.exact,
        }
        if cdf_points:
            qs = [i / (cdf_points - 1) for i in range(cdf_points)]
            out["cdf"] = self.reservoir.quantiles(qs)
        return out
