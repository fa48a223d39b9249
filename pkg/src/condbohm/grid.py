"""Uniform 1D/2D grids."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

HBAR = 1.0

PERIODIC = "periodic"
BOX = "box"


class GridError(ValueError):
    """Invalid grid configuration."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform axis.

    Periodic axes sample ``[x_min, x_max)`` with ``n_points`` points; box axes
    include both end points.
    """

    x_min: float
    x_max: float
    n_points: int
    boundary: str = BOX

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise GridError("grid bounds must be finite")
        if self.x_max <= self.x_min:
            raise GridError(f"empty domain [{self.x_min}, {self.x_max}]")
        if self.n_points < 8:
            raise GridError(f"n_points must be >= 8, got {self.n_points}")
        if self.boundary not in (PERIODIC, BOX):
            raise GridError(f"unknown boundary {self.boundary!r}")
        if self.periodic and self.n_points % 2:
            raise GridError("periodic grids need an even number of points")

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        if self.periodic:
            return self.length / self.n_points
        return self.length / (self.n_points - 1)

    @cached_property
    def points(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights (plain ``dx`` on periodic axes)."""
        w = np.full(self.n_points, self.dx)
        if not self.periodic:
            w[0] = w[-1] = 0.5 * self.dx
        return w

    def refined(self) -> "Grid1D":
        """Same domain with the spacing halved."""
        n = 2 * self.n_points if self.periodic else 2 * self.n_points - 1
        return Grid1D(self.x_min, self.x_max, n, self.boundary)


def make_grid(x_min: float, x_max: float, n: int, boundary: str = BOX) -> Grid1D:
    return Grid1D(float(x_min), float(x_max), int(n), boundary)


@dataclass(frozen=True)
class Grid2D:
    axis1: Grid1D
    axis2: Grid1D

    @property
    def shape(self) -> tuple[int, int]:
        return (self.axis1.n_points, self.axis2.n_points)

    @property
    def size(self) -> int:
        return self.axis1.n_points * self.axis2.n_points

    @property
    def cell_area(self) -> float:
        return self.axis1.dx * self.axis2.dx

    def axis(self, a: int) -> Grid1D:
        if a == 1:
            return self.axis1
        if a == 2:
            return self.axis2
        raise ValueError(f"axis must be 1 or 2, got {a}")

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis1.points, self.axis2.points, indexing="ij")

    def quadrature_weights(self) -> np.ndarray:
        return np.outer(self.axis1.quadrature_weights(), self.axis2.quadrature_weights())

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.quadrature_weights() * values))

    def refined(self) -> "Grid2D":
        return Grid2D(self.axis1.refined(), self.axis2.refined())
