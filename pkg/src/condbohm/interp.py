"""Cubic-convolution (Catmull-Rom) interpolation of gridded fields.

Bicubic in the interior, linear along a box axis within one cell of its
edges, exact at grid points and on bilinear data.
"""

from __future__ import annotations

import numba
import numpy as np

from condbohm.fields import ComplexField2D
from condbohm.grid import Grid1D, Grid2D

_SNAP = 1e-10


class OutOfDomainError(ValueError):
    pass


def axis_weights(x: np.ndarray, g: Grid1D) -> tuple[np.ndarray, np.ndarray]:
    """Stencil indices and weights, both of shape ``(len(x), 4)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = (x - g.x_min) / g.dx
    s_near = np.round(s)
    s = np.where(np.abs(s - s_near) < _SNAP, s_near, s)
    n = g.n_points
    if g.periodic:
        i = np.floor(s).astype(np.int64)
        f = s - i
        idx = (i[:, None] + np.arange(-1, 3)) % n
        return idx, _keys(f)

    if np.any(s < -_SNAP) or np.any(s > n - 1 + _SNAP):
        bad = x[(s < -_SNAP) | (s > n - 1 + _SNAP)][0]
        raise OutOfDomainError(f"point {bad} outside box axis [{g.x_min}, {g.x_max}]")
    s = np.clip(s, 0.0, n - 1)
    i = np.minimum(np.floor(s).astype(np.int64), n - 2)
    f = s - i
    w = _keys(f)
    edge = (i < 1) | (i > n - 3)
    if np.any(edge):
        w[edge] = 0.0
        w[edge, 1] = 1.0 - f[edge]
        w[edge, 2] = f[edge]
    idx = np.clip(i[:, None] + np.arange(-1, 3), 0, n - 1)
    return idx, w


def _keys(f: np.ndarray) -> np.ndarray:
    f2 = f * f
    f3 = f2 * f
    return 0.5 * np.stack(
        [-f3 + 2 * f2 - f, 3 * f3 - 5 * f2 + 2, -3 * f3 + 4 * f2 + f, f3 - f2], axis=-1
    )


@numba.njit(cache=True)
def _axis_stencil(x, x_min, dx, n, periodic, idx, w):
    s = (x - x_min) / dx
    sr = np.round(s)
    if abs(s - sr) < _SNAP:
        s = sr
    if periodic:
        i = int(np.floor(s))
        f = s - i
        for a in range(4):
            idx[a] = (i - 1 + a) % n
    else:
        if s < -_SNAP or s > n - 1 + _SNAP:
            return False
        s = min(max(s, 0.0), n - 1.0)
        i = min(int(np.floor(s)), n - 2)
        f = s - i
        for a in range(4):
            idx[a] = min(max(i - 1 + a, 0), n - 1)
        if i < 1 or i > n - 3:
            w[0] = 0.0
            w[1] = 1.0 - f
            w[2] = f
            w[3] = 0.0
            return True
    f2 = f * f
    f3 = f2 * f
    w[0] = 0.5 * (-f3 + 2 * f2 - f)
    w[1] = 0.5 * (3 * f3 - 5 * f2 + 2)
    w[2] = 0.5 * (-3 * f3 + 4 * f2 + f)
    w[3] = 0.5 * (f3 - f2)
    return True


@numba.njit(cache=True)
def _interp_kernel(flat, x1, x2, ax1, ax2, n1, n2, per1, per2):
    nf = flat.shape[0]
    n = x1.shape[0]
    out = np.zeros((nf, n), dtype=flat.dtype)
    i1 = np.empty(4, np.int64)
    i2 = np.empty(4, np.int64)
    w1 = np.empty(4)
    w2 = np.empty(4)
    for p in range(n):
        ok1 = _axis_stencil(x1[p], ax1[0], ax1[1], n1, per1, i1, w1)
        ok2 = _axis_stencil(x2[p], ax2[0], ax2[1], n2, per2, i2, w2)
        if not (ok1 and ok2):
            return out, p
        for a in range(4):
            wa = w1[a]
            if wa == 0.0:
                continue
            base = i1[a] * n2
            for b in range(4):
                wb = wa * w2[b]
                if wb == 0.0:
                    continue
                k = base + i2[b]
                for f in range(nf):
                    out[f, p] += wb * flat[f, k]
    return out, -1


class FieldInterpolator:
    """Interpolates a stack of fields ``(F, n1, n2)`` sharing one grid."""

    def __init__(self, stack: np.ndarray, grid: Grid2D, carrier=(0.0, 0.0)):
        stack = np.asarray(stack)
        if stack.ndim == 2:
            stack = stack[None]
        if stack.shape[1:] != grid.shape:
            raise ValueError(f"stack shape {stack.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.carrier = (float(carrier[0]), float(carrier[1]))
        for k, g in zip(self.carrier, (grid.axis1, grid.axis2)):
            if k and not g.periodic:
                raise ValueError("carrier wavenumbers need a periodic axis")
            if k and abs(np.exp(1j * k * g.length) - 1) > 1e-9:
                raise ValueError(f"carrier {k} is not commensurate with axis length {g.length}")
        if any(self.carrier):
            x1, x2 = grid.mesh()
            stack = stack * np.exp(-1j * (self.carrier[0] * x1 + self.carrier[1] * x2))
        self._data = np.ascontiguousarray(stack)
        self._flat = self._data.reshape(self._data.shape[0], -1)

    def _remodulate(self, out, x1, x2):
        if any(self.carrier):
            out = out * np.exp(1j * (self.carrier[0] * x1 + self.carrier[1] * x2))
        return out

    def at(self, x1, x2) -> np.ndarray:
        """Values at points; shape ``(F, n)``."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        a1, a2 = self.grid.axis1, self.grid.axis2
        out, bad = _interp_kernel(
            self._flat, x1, x2,
            (a1.x_min, a1.dx), (a2.x_min, a2.dx),
            a1.n_points, a2.n_points, a1.periodic, a2.periodic,
        )
        if bad >= 0:
            raise OutOfDomainError(f"point ({x1[bad]}, {x2[bad]}) outside the box domain")
        return self._remodulate(out, x1, x2)

    def at_reference(self, x1, x2) -> np.ndarray:
        """Pure-numpy evaluation of :meth:`at` (used to cross-check the kernel)."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        i1, w1 = axis_weights(x1, self.grid.axis1)
        i2, w2 = axis_weights(x2, self.grid.axis2)
        n2 = self.grid.shape[1]
        flat_idx = (i1[:, :, None] * n2 + i2[:, None, :]).reshape(len(x1), 16)
        w = (w1[:, :, None] * w2[:, None, :]).reshape(len(x1), 16)
        out = np.einsum("fnk,nk->fn", self._flat[:, flat_idx], w)
        return self._remodulate(out, x1, x2)

    def row(self, x2: float) -> np.ndarray:
        """All axis-1 samples at ``x2``; shape ``(F, n1)``."""
        i2, w2 = axis_weights(np.array([x2]), self.grid.axis2)
        out = np.einsum("fik,k->fi", self._data[:, :, i2[0]], w2[0])
        return self._remodulate(out, self.grid.axis1.points, x2)


def interpolate(field, point, grid: Grid2D | None = None):
    """Interpolate a single field at ``point = (x1, x2)``.

    ``field`` is a :class:`ComplexField2D` or a bare array together with
    ``grid``.
    """
    if isinstance(field, ComplexField2D):
        interp = FieldInterpolator(field.values, field.grid, field.carrier)
    else:
        interp = FieldInterpolator(np.asarray(field), grid)
    out = interp.at([point[0]], [point[1]])[0, 0]
    if np.isrealobj(field if not isinstance(field, ComplexField2D) else field.values):
        return float(np.real(out))
    return complex(out)


@numba.njit(cache=True, fastmath=True)
def _velocity_kernel(re, im, x1, x2, ax1, ax2, n1, n2, per1, per2, c1, c2):
    """``c_a Im(f_a / f_0)`` and ``|f_0|`` for a stack ``(f_0, f_1, f_2)``.

    ``re``/``im`` hold the stack as ``(n1 * n2, 3)`` so the three fields of
    one grid point share cache lines.
    """
    n = x1.shape[0]
    vel = np.empty((n, 2))
    amp = np.empty(n)
    i1 = np.empty(4, np.int64)
    i2 = np.empty(4, np.int64)
    w1 = np.empty(4)
    w2 = np.empty(4)
    for p in range(n):
        ok1 = _axis_stencil(x1[p], ax1[0], ax1[1], n1, per1, i1, w1)
        ok2 = _axis_stencil(x2[p], ax2[0], ax2[1], n2, per2, i2, w2)
        if not (ok1 and ok2):
            return vel, amp, p
        a0r = a0i = a1r = a1i = a2r = a2i = 0.0
        for a in range(4):
            base = i1[a] * n2
            for b in range(4):
                wb = w1[a] * w2[b]
                k = base + i2[b]
                a0r += wb * re[k, 0]
                a0i += wb * im[k, 0]
                a1r += wb * re[k, 1]
                a1i += wb * im[k, 1]
                a2r += wb * re[k, 2]
                a2i += wb * im[k, 2]
        d = a0r * a0r + a0i * a0i
        amp[p] = np.sqrt(d)
        if d == 0.0:
            vel[p, 0] = np.nan
            vel[p, 1] = np.nan
        else:
            vel[p, 0] = c1 * (a1i * a0r - a1r * a0i) / d
            vel[p, 1] = c2 * (a2i * a0r - a2r * a0i) / d
    return vel, amp, -1


def phase_velocity(interp: FieldInterpolator, x1, x2, c1: float, c2: float):
    """``(c1 Im(f1/f0), c2 Im(f2/f0))`` and ``|f0|`` for a three-field interpolator.

    The carrier factor cancels in the ratios and the modulus, so the
    demodulated samples are used directly.
    """
    x1 = np.ascontiguousarray(np.atleast_1d(np.asarray(x1, dtype=float)))
    x2 = np.ascontiguousarray(np.atleast_1d(np.asarray(x2, dtype=float)))
    if interp._flat.shape[0] != 3:
        raise ValueError("phase_velocity needs a stack of exactly three fields")
    if getattr(interp, "_split", None) is None:
        flat = np.asarray(interp._flat, dtype=complex)
        interp._split = (np.ascontiguousarray(flat.real.T), np.ascontiguousarray(flat.imag.T))
    re, im = interp._split
    a1, a2 = interp.grid.axis1, interp.grid.axis2
    vel, amp, bad = _velocity_kernel(
        re, im, x1, x2, (a1.x_min, a1.dx), (a2.x_min, a2.dx),
        a1.n_points, a2.n_points, a1.periodic, a2.periodic, float(c1), float(c2),
    )
    if bad >= 0:
        raise OutOfDomainError(f"point ({x1[bad]}, {x2[bad]}) outside the box domain")
    return vel, amp
