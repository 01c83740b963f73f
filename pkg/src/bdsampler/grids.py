"""Probability densities sampled on a uniform periodic 1D grid."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative values on the grid x_j = j * period / n, j = 0..n-1.

    Integrals are rectangle-rule sums ``h * sum(values)`` with
    ``h = period / n``; the same quadrature is used everywhere so that
    energies, distances, and dynamics stay mutually consistent.
    """

    values: np.ndarray
    period: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] < 4:
            raise ValueError("grid needs at least 4 points in one dimension")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        if v.min() < 0:
            raise ValueError("grid density values must be nonnegative")
        if not (self.period > 0):
            raise ValueError("period must be positive")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def h(self):
        return self.period / self.n

    @property
    def x(self):
        return np.arange(self.n) * self.h

    def mass(self):
        return self.h * float(self.values.sum())

    def normalized(self):
        m = self.mass()
        if m <= 0:
            raise ValueError("cannot normalize a zero-mass grid")
        return GridDensity(self.values / m, self.period)

    @staticmethod
    def uniform(n, period=2.0 * np.pi):
        return GridDensity(np.full(n, 1.0 / period), period)


def check_same_grid(a, b):
    if a.n != b.n or a.period != b.period:
        raise ValueError(
            f"grid mismatch: ({a.n}, {a.period}) vs ({b.n}, {b.period})"
        )
