"""Hierarchic 1D integrated Legendre shape functions and Gauss rules."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre


class BasisDomainError(ValueError):
    pass


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [-1, 1]."""
    x, w = legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _legendre_table(xi: np.ndarray, degree: int) -> np.ndarray:
    # P_0 .. P_degree at xi, shape (degree + 1, *xi.shape)
    out = np.empty((degree + 1,) + xi.shape)
    out[0] = 1.0
    if degree >= 1:
        out[1] = xi
    for n in range(1, degree):
        out[n + 1] = ((2 * n + 1) * xi * out[n] - n * out[n - 1]) / (n + 1)
    return out


class ShapeBasis:
    """Integrated Legendre basis of degree ``p`` on the reference interval.

    Mode 0 and 1 are the linear end modes (left, right); modes 2..p are the
    internal modes ``(P_j - P_{j-2}) / sqrt(2(2j - 1))`` for ``j = 2..p``,
    which vanish at both ends.
    """

    def __init__(self, degree: int):
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        self.degree = int(degree)

    @property
    def n_modes(self) -> int:
        return self.degree + 1

    def lattice_offsets(self) -> np.ndarray:
        """Position of each local mode on the global 1D mode lattice of one cell."""
        p = self.degree
        return np.array([0, p] + list(range(1, p)), dtype=np.int64)

    def eval(self, xi, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Values and d/dxi of all modes; result shapes ``(*xi.shape, p + 1)``."""
        xi = np.asarray(xi, dtype=float)
        if check and np.any(np.abs(xi) > 1.0 + 1e-14):
            raise BasisDomainError("reference coordinate outside [-1, 1]")
        p = self.degree
        P = _legendre_table(xi, p)
        vals = np.empty(xi.shape + (p + 1,))
        ders = np.empty(xi.shape + (p + 1,))
        vals[..., 0] = 0.5 * (1.0 - xi)
        vals[..., 1] = 0.5 * (1.0 + xi)
        ders[..., 0] = -0.5
        ders[..., 1] = 0.5
        for j in range(2, p + 1):
            vals[..., j] = (P[j] - P[j - 2]) / np.sqrt(2.0 * (2 * j - 1))
            ders[..., j] = np.sqrt((2 * j - 1) / 2.0) * P[j - 1]
        return vals, ders
