"""Complex fields on grids, finite-difference stencils and polar decomposition."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from condbohm.grid import HBAR, Grid1D, Grid2D

NODE_FRACTION = 1e-6


class FieldError(ValueError):
    pass


@dataclass(frozen=True)
class ComplexField2D:
    """Complex samples ``values[i1, i2]`` of a wave function on ``grid``.

    ``carrier`` is an optional pair of wavenumbers ``(k1, k2)`` describing a
    fast plane-wave factor on periodic axes; interpolation removes it before
    the cubic fit and restores it afterwards.
    """

    grid: Grid2D
    values: np.ndarray
    carrier: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            raise FieldError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise FieldError("field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def norm2(self) -> float:
        """L2 norm squared, trapezoid (box) / rectangle (periodic) rule."""
        return self.grid.integrate(np.abs(self.values) ** 2)

    def normalized(self) -> "ComplexField2D":
        return ComplexField2D(self.grid, self.values / np.sqrt(self.norm2()), self.carrier)

    def with_values(self, values: np.ndarray) -> "ComplexField2D":
        return ComplexField2D(self.grid, values, self.carrier)


@dataclass(frozen=True)
class PolarField:
    """``psi = R exp(i S / hbar)``; ``S`` is only trusted off ``node_mask``."""

    R: np.ndarray
    S: np.ndarray
    node_mask: np.ndarray
    tree_parent: np.ndarray = field(repr=False, default=None)

    def recompose(self) -> np.ndarray:
        return self.R * np.exp(1j * self.S / HBAR)


def _derivative(values: np.ndarray, axis_grid: Grid1D, array_axis: int, order: int) -> np.ndarray:
    f = np.moveaxis(np.asarray(values), array_axis, 0)
    h = axis_grid.dx
    if axis_grid.periodic:
        fp = np.roll(f, -1, axis=0)
        fm = np.roll(f, 1, axis=0)
        if order == 1:
            out = (fp - fm) / (2 * h)
        else:
            out = (fp - 2 * f + fm) / h**2
        return np.moveaxis(out, 0, array_axis)

    out = np.empty_like(f, dtype=np.result_type(f, float))
    if order == 1:
        out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
        out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
        out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    else:
        out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
        out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
        out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2
    return np.moveaxis(out, 0, array_axis)


def _resolve(grid, axis):
    if isinstance(grid, Grid1D):
        return grid, -1 if axis in (1, None) else axis
    return grid.axis(axis), axis - 1


def gradient(values, grid: Grid1D | Grid2D, axis: int = 1) -> np.ndarray:
    """Second-order central first derivative along ``axis`` (1 or 2).

    Periodic axes wrap; box axes use one-sided second-order formulas at the
    two edge points. With a :class:`Grid1D`, the last array axis is
    differentiated.
    """
    if isinstance(values, ComplexField2D):
        values = values.values
    g, a = _resolve(grid, axis)
    return _derivative(values, g, a, 1)


def laplacian(values, grid: Grid1D | Grid2D, axis: int = 1) -> np.ndarray:
    """Three-point second derivative along ``axis``; see :func:`gradient`."""
    if isinstance(values, ComplexField2D):
        values = values.values
    g, a = _resolve(grid, axis)
    return _derivative(values, g, a, 2)


def node_threshold(amplitude: np.ndarray, eps_node: float | None = None) -> float:
    if eps_node is None:
        return NODE_FRACTION * float(np.max(amplitude))
    return float(eps_node)


def _neighbours(i, j, n1, n2, per1, per2):
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        a, b = i + di, j + dj
        if per1:
            a %= n1
        elif not 0 <= a < n1:
            continue
        if per2:
            b %= n2
        elif not 0 <= b < n2:
            continue
        yield a, b


def polar_decompose(psi: ComplexField2D, eps_node: float | None = None) -> PolarField:
    """Split ``psi`` into amplitude and phase.

    The phase is unwrapped along a breadth-first spanning tree of the
    unmasked grid graph, rooted at the point of largest amplitude (one root
    per connected component). Masked points get the principal-value phase.
    """
    v = psi.values
    R = np.abs(v)
    thr = node_threshold(R, eps_node)
    mask = R < thr
    if mask.all() or not thr > 0:
        raise FieldError("every grid point is below the node threshold")

    n1, n2 = v.shape
    per1, per2 = psi.grid.axis1.periodic, psi.grid.axis2.periodic
    S = HBAR * np.angle(v)
    parent = np.full(v.shape, -1, dtype=np.int64)
    seen = mask.copy()
    order = np.argsort(R, axis=None)[::-1]
    for root in order:
        i, j = divmod(int(root), n2)
        if seen[i, j]:
            continue
        seen[i, j] = True
        queue = deque([(i, j)])
        while queue:
            ci, cj = queue.popleft()
            for a, b in _neighbours(ci, cj, n1, n2, per1, per2):
                if seen[a, b]:
                    continue
                seen[a, b] = True
                S[a, b] = S[ci, cj] + HBAR * np.angle(v[a, b] / v[ci, cj])
                parent[a, b] = ci * n2 + cj
                queue.append((a, b))
        if seen.all():
            break
    return PolarField(R=R, S=S, node_mask=mask, tree_parent=parent)


def circulation(S: np.ndarray, loop: list[tuple[int, int]]) -> float:
    """Sum of principal-value phase increments around a closed index loop."""
    total = 0.0
    two_pi = 2 * np.pi * HBAR
    for (a, b), (c, d) in zip(loop, loop[1:] + loop[:1]):
        dS = S[c, d] - S[a, b]
        total += dS - two_pi * np.round(dS / two_pi)
    return total


def square_loop(i0: int, j0: int, i1: int, j1: int) -> list[tuple[int, int]]:
    """Index loop around the rectangle with corners (i0, j0) and (i1, j1)."""
    loop = [(i, j0) for i in range(i0, i1)]
    loop += [(i1, j) for j in range(j0, j1)]
    loop += [(i, j1) for i in range(i1, i0, -1)]
    loop += [(i0, j) for j in range(j1, j0, -1)]
    return loop
