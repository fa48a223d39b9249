"""Conditional wave function along an environment trajectory and its evolution equations.

Given a stationary two-particle state ``psi(x1, x2)`` and an environment
trajectory ``X2(t)``, the conditional wave function is ``psi_c(x1, t) =
psi(x1, X2(t))``. This module builds time series of such slices and checks

* the exact pseudo-Schrodinger equation obeyed by ``psi_c``,
* the approximate conditional Schrodinger equation obeyed by the rescaled,
  re-phased ``psi~_c = psi_c exp(i f / hbar) / sqrt(N)``,
* the continuity equations behind both.

Time derivatives of slices are central differences of ``log psi_c``
(unwrapped along time), which is exact for a locally exponential time
dependence and removes the error from fast global phase rotation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solve_banded

from condbohm.fields import laplacian, gradient
from condbohm.grid import HBAR, Grid1D
from condbohm.interp import FieldInterpolator
from condbohm.stationary import Eigenstate, PotentialSpec
from condbohm.dynamics import Trajectory

EDGE_CELLS = 2
TRUST_FRACTION = 1e-3
NODE_DOMINATED_FRACTION = 0.2
EPS_V_FRACTION = 1e-6
CLASSICAL_RATIO = 10.0


# ---------------------------------------------------------------------------
# slices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionalSlice:
    """Conditional quantities at one time; arrays live on axis 1 of the state grid."""

    t: float
    X2: float
    psi_c: np.ndarray
    R_c: np.ndarray
    S_c: np.ndarray
    V_c: np.ndarray
    Q1c: np.ndarray
    Q2c: np.ndarray
    v1c: np.ndarray
    v2c: np.ndarray
    v2t: float
    d2v2_c: np.ndarray
    mask: np.ndarray = field(repr=False)
    trusted: np.ndarray = field(repr=False)
    node_dominated: bool = False


def _safe_ratio(a, b, mask):
    return np.where(mask, np.nan, a / np.where(mask, 1.0, b))


def quantum_potential(R: np.ndarray, mass: float, axis_grid: Grid1D | None = None, *,
                      d2R: np.ndarray | None = None, eps_node: float | None = None) -> np.ndarray:
    """``Q = -(hbar^2 / 2m) R'' / R`` with ``nan`` where ``R < eps_node``.

    ``R''`` is the three-point stencil along the last axis of ``R`` on
    ``axis_grid`` unless given explicitly as ``d2R``.
    """
    R = np.asarray(R, dtype=float)
    if d2R is None:
        d2R = laplacian(R, axis_grid)
    thr = 1e-6 * np.max(R) if eps_node is None else eps_node
    mask = R < thr
    return -(HBAR**2) / (2 * mass) * _safe_ratio(d2R, R, mask)


class ConditionalAnalyzer:
    """Precomputed fields of a stationary state for fast slicing.

    The interpolated stack holds ``psi``, ``d2 psi`` and ``d2^2 psi``, from
    which ``v2 = (hbar/m2) Im(psi_2/psi)`` and
    ``d2 v2 = (hbar/m2) Im(psi_22/psi - (psi_2/psi)^2)`` follow pointwise.
    Amplitude derivatives ``d2 R`` and ``d2^2 R`` are stencils on ``R = |psi|``
    itself (interpolated separately), so they vanish exactly when ``R`` does
    not depend on ``x2``.
    """

    def __init__(self, pot: PotentialSpec, state: Eigenstate, eps_node: float | None = None):
        self.pot = pot
        self.state = state
        self.E = float(state.E)
        psi = state.psi
        self.grid = psi.grid
        self.axis1 = psi.grid.axis1
        self.x1 = self.axis1.points
        self.m1, self.m2 = pot.masses
        v = psi.values
        self.max_amplitude = float(np.max(np.abs(v)))
        self.eps_node = 1e-6 * self.max_amplitude if eps_node is None else float(eps_node)
        stack = np.stack([v, gradient(v, self.grid, 2), laplacian(v, self.grid, 2)])
        self._interp = FieldInterpolator(stack, self.grid, psi.carrier)
        R = np.abs(v)
        self._amp = FieldInterpolator(np.stack([gradient(R, self.grid, 2), laplacian(R, self.grid, 2)]),
                                      self.grid)
        self._edge = np.zeros(self.axis1.n_points, dtype=bool)
        if not self.axis1.periodic:
            self._edge[:EDGE_CELLS] = True
            self._edge[-EDGE_CELLS:] = True

    # -- rows ---------------------------------------------------------------
    def rows(self, X2: np.ndarray):
        """``psi, psi_2, psi_22`` rows at each ``X2``, shape ``(3, T, n1)``, and
        ``R_2, R_22`` rows, shape ``(2, T, n1)``."""
        X2 = np.atleast_1d(np.asarray(X2, dtype=float))
        out = np.empty((3, len(X2), self.axis1.n_points), dtype=complex)
        amp = np.empty((2, len(X2), self.axis1.n_points))
        for i, x2 in enumerate(X2):
            out[:, i, :] = self._interp.row(float(x2))
            amp[:, i, :] = np.real(self._amp.row(float(x2)))
        return out, amp

    def trusted_mask(self, psi_c: np.ndarray) -> np.ndarray:
        amp = np.abs(psi_c)
        peak = np.max(amp, axis=-1, keepdims=True)
        return (amp >= self.eps_node) & (amp > TRUST_FRACTION * peak) & ~self._edge

    def series(self, times, X2, v2t) -> "SliceSeries":
        times = np.asarray(times, dtype=float)
        X2 = np.asarray(X2, dtype=float)
        v2t = np.asarray(v2t, dtype=float)
        (psi, psi2, psi22), (R2, R22) = self.rows(X2)
        Vc = self.pot.value(self.x1[None, :], X2[:, None])
        return SliceSeries(self, times, X2, v2t, psi, psi2, psi22, np.asarray(Vc, dtype=float), R2, R22)

    def along(self, traj: Trajectory, times) -> "SliceSeries":
        """Slices at ``times`` (recorded samples when they coincide) of a trajectory."""
        times = np.asarray(times, dtype=float)
        X2, v2t = _sample_environment(traj, times)
        return self.series(times, X2, v2t)


def _sample_environment(traj: Trajectory, times):
    rec = traj.times
    if times[0] < rec[0] - 1e-12 or times[-1] > rec[-1] + 1e-12:
        raise ValueError("requested times exceed the trajectory")
    idx = np.searchsorted(rec, times)
    idx = np.clip(idx, 0, len(rec) - 1)
    left = np.clip(idx - 1, 0, len(rec) - 1)
    pick = np.where(np.abs(rec[left] - times) < np.abs(rec[idx] - times), left, idx)
    exact = np.abs(rec[pick] - times) <= 1e-9 * max(1.0, float(np.max(np.abs(times))))
    vel = traj.velocities
    X2 = np.empty(len(times))
    v2t = np.empty(len(times))
    X2[exact] = traj.positions[pick[exact], 1]
    if vel is not None:
        v2t[exact] = vel[pick[exact], 1]
    if not exact.all() or vel is None:
        spline = traj._spline()
        X2[~exact] = spline(times[~exact])[:, 1]
        if vel is None:
            v2t[:] = spline(times, 1)[:, 1]
        else:
            v2t[~exact] = spline(times[~exact], 1)[:, 1]
    return X2, v2t


def conditional_slice(analyzer: ConditionalAnalyzer, trajectory: Trajectory, t: float) -> ConditionalSlice:
    """The conditional quantities at a single time ``t`` of ``trajectory``."""
    return analyzer.along(trajectory, np.array([t]))[0]


class SliceSeries:
    """Conditional slices on a uniform time grid, stored as ``(T, n1)`` arrays."""

    def __init__(self, analyzer, times, X2, v2t, psi, psi2, psi22, Vc, R2, R22):
        self.analyzer = analyzer
        self.times = times
        self.X2 = X2
        self.v2t = v2t
        self.psi = psi
        self.psi2 = psi2
        self.psi22 = psi22
        self.V_c = Vc
        self.R2 = R2
        self.R22 = R22
        a = analyzer
        self.mask = np.abs(psi) < a.eps_node
        self.trusted = a.trusted_mask(psi)
        safe = np.where(self.mask, 1.0, psi)
        r2 = psi2 / safe
        r22 = psi22 / safe
        nan = np.where(self.mask, np.nan, 1.0)
        self.v2c = HBAR / a.m2 * np.imag(r2) * nan
        self.d2v2_c = HBAR / a.m2 * np.imag(r22 - r2**2) * nan
        R = np.where(self.mask, 1.0, np.abs(psi))
        self.Q2c = -(HBAR**2) / (2 * a.m2) * R22 / R * nan
        self.psi1 = gradient(psi, a.axis1)
        self.psi11 = laplacian(psi, a.axis1)
        r1 = self.psi1 / safe
        r11 = self.psi11 / safe
        self.v1c = HBAR / a.m1 * np.imag(r1) * nan
        self.Q1c = -(HBAR**2) / (2 * a.m1) * (np.real(r11) + np.imag(r1) ** 2) * nan

    def __len__(self):
        return len(self.times)

    @property
    def dt(self) -> float:
        d = np.diff(self.times)
        if len(d) == 0:
            raise ValueError("need at least two slices for time derivatives")
        if np.max(np.abs(d - d[0])) > 1e-9 * abs(d[0]):
            raise ValueError("slice times must be uniformly spaced")
        return float(d[0])

    def node_dominated(self) -> np.ndarray:
        """Slices where more than 20% of the points between the first and last
        unmasked sample are masked (exponential tails do not count)."""
        out = np.zeros(len(self), dtype=bool)
        for i, m in enumerate(self.mask):
            ok = np.flatnonzero(~m)
            if len(ok) == 0:
                out[i] = True
                continue
            inner = m[ok[0]:ok[-1] + 1]
            out[i] = inner.mean() > NODE_DOMINATED_FRACTION
        return out

    def __getitem__(self, i) -> ConditionalSlice:
        psi = self.psi[i]
        R = np.abs(psi)
        S = HBAR * np.unwrap(np.angle(psi))
        return ConditionalSlice(
            t=float(self.times[i]), X2=float(self.X2[i]), psi_c=psi, R_c=R, S_c=S,
            V_c=self.V_c[i], Q1c=self.Q1c[i], Q2c=self.Q2c[i], v1c=self.v1c[i],
            v2c=self.v2c[i], v2t=float(self.v2t[i]), d2v2_c=self.d2v2_c[i],
            mask=self.mask[i], trusted=self.trusted[i],
            node_dominated=bool(self.node_dominated()[i]),
        )

    # -- derived time series -----------------------------------------------
    def log_derivative(self) -> np.ndarray:
        """``d/dt log psi_c``; see :func:`log_time_derivative`."""
        return log_time_derivative(self.psi, self.dt)

    def trusted_dynamic(self) -> np.ndarray:
        """Trusted points that stay off the node mask at the neighbouring slices too."""
        ok = self.trusted.copy()
        ok[1:] &= ~self.mask[:-1]
        ok[:-1] &= ~self.mask[1:]
        return ok


def log_time_derivative(series: np.ndarray, dt: float) -> np.ndarray:
    """Time derivative of ``log psi`` for a ``(T, n)`` series sampled every ``dt``.

    ``log psi`` is unwrapped along time by accumulating principal-value logs
    of successive ratios; central differences inside, second-order one-sided
    at the ends. Points where the series vanishes give ``nan``.
    """
    series = np.asarray(series, dtype=complex)
    if series.shape[0] < 3:
        raise ValueError("need at least three slices")
    zero = series == 0
    safe = np.where(zero, 1.0, series)
    with np.errstate(invalid="ignore", divide="ignore"):
        steps = np.log(safe[1:] / safe[:-1])
    L = np.concatenate([np.log(safe[:1]), np.log(safe[:1]) + np.cumsum(steps, axis=0)])
    d = np.gradient(L, dt, axis=0, edge_order=2)
    d[np.broadcast_to(zero.any(axis=0), d.shape)] = np.nan
    return d


# ---------------------------------------------------------------------------
# Gamma, N, gauge, tilded wave function
# ---------------------------------------------------------------------------


def _wmean(values, weights, ok):
    w = np.where(ok, weights, 0.0)
    v = np.where(ok, values, 0.0)
    s = w.sum(axis=-1)
    with np.errstate(invalid="ignore"):
        return (w * v).sum(axis=-1) / s


def _spread(values, ok):
    hi = np.where(ok, values, -np.inf).max(axis=-1)
    lo = np.where(ok, values, np.inf).min(axis=-1)
    out = hi - lo
    return np.where(np.isfinite(out), out, np.nan)


def eps_velocity(length: float, total_time: float) -> float:
    """Velocity floor below which ``v2t`` counts as zero."""
    return EPS_V_FRACTION * length / total_time


@dataclass
class GammaProfile:
    times: np.ndarray
    Gamma_t: np.ndarray
    Gamma_flatness: np.ndarray
    N_t: np.ndarray
    Gamma_exact: np.ndarray | None = field(default=None, repr=False)
    singular: np.ndarray | None = None


def gamma_field(series: SliceSeries, eps_v: float | None = None):
    """Exact and approximate non-conservation rates along ``series``.

    Returns ``(Gamma_exact (T, n1), Gamma_t (T,), flatness (T,), singular (T,))``.

    ``Gamma_exact = (1 - v2c/v2t) d_t(R_c^2)/R_c^2 - (d2 v2)_c`` makes
    ``d_t R_c^2 + d_1(R_c^2 v1c) = R_c^2 Gamma_exact`` an identity; it is
    ``nan`` (and the slice flagged singular) where ``|v2t| < eps_v``.
    ``Gamma_t`` is minus the ``|psi_c|^2``-weighted trusted average of
    ``(d2 v2)_c`` and ``flatness`` the max-minus-min of ``(d2 v2)_c`` over
    trusted points.
    """
    a = series.analyzer
    if eps_v is None:
        span = series.times[-1] - series.times[0]
        eps_v = eps_velocity(a.grid.axis2.length, span if span > 0 else 1.0)
    ok = series.trusted
    rho = np.abs(series.psi) ** 2
    d2v2 = np.where(ok, series.d2v2_c, np.nan)
    Gamma_t = -_wmean(series.d2v2_c, rho, ok)
    flat = _spread(series.d2v2_c, ok)
    singular = np.abs(series.v2t) < eps_v
    if len(series) >= 3:
        dlnR2 = 2.0 * np.real(series.log_derivative())
    else:
        dlnR2 = np.full_like(d2v2, np.nan)
    v2t = np.where(singular, np.nan, series.v2t)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        G = (1.0 - series.v2c / v2t) * dlnR2 - d2v2
    return G, Gamma_t, flat, singular


def normalization_N(Gamma_t, N0: float, times) -> np.ndarray:
    """Solution of ``dN/dt + Gamma N = 0``: ``N0 exp(-int_0^t Gamma)`` (trapezoid)."""
    if not N0 > 0:
        raise ValueError("N0 must be positive")
    G = np.asarray(Gamma_t, dtype=float)
    integral = cumulative_trapezoid(G, np.asarray(times, dtype=float), initial=0.0)
    return N0 * np.exp(-integral)


def conserving_normalization(Gamma_t, N0: float, times) -> np.ndarray:
    """``N(t)`` keeping ``int R_c^2/N dx1`` constant when ``d_t R_c^2 + d_1(R_c^2 v1c) = Gamma R_c^2``.

    Integrating that balance over ``x1`` gives ``dN/dt = Gamma N``, i.e.
    :func:`normalization_N` with rate ``-Gamma``.
    """
    return normalization_N(-np.asarray(Gamma_t, dtype=float), N0, times)


@dataclass
class GaugeFit:
    times: np.ndarray
    fdot: np.ndarray
    f: np.ndarray
    spread: np.ndarray


def fit_gauge(series: SliceSeries) -> GaugeFit:
    """Estimate ``f(t)`` from the conditional Hamilton-Jacobi balance.

    Pointwise, ``fdot = -d_t S_c - (d_1 S_c)^2/2m1 - V_c - Q1c``, which equals
    ``Re[(i hbar d_t psi_c - H_c psi_c) / psi_c]`` with ``H_c`` the
    one-particle Hamiltonian under ``V_c``. The estimate is averaged over
    trusted points with weight ``|psi_c|^2``; ``f`` follows by the trapezoid
    rule with ``f(0) = 0``. ``spread`` is the max-minus-min of the pointwise
    estimate.
    """
    if len(series) < 3:
        raise ValueError("fit_gauge needs at least three slices")
    a = series.analyzer
    dlog = series.log_derivative()
    ok = series.trusted_dynamic() & np.isfinite(dlog)
    safe = np.where(series.mask, 1.0, series.psi)
    local = -HBAR * np.imag(dlog) + HBAR**2 / (2 * a.m1) * np.real(series.psi11 / safe) - series.V_c
    fdot = _wmean(local, np.abs(series.psi) ** 2, ok)
    spread = _spread(local, ok)
    f = cumulative_trapezoid(fdot, series.times, initial=0.0)
    return GaugeFit(series.times, fdot, f, spread)


def tilde_wavefunction(psi_c: np.ndarray, N, f) -> np.ndarray:
    """``psi_c exp(i f / hbar) / sqrt(N)`` for a ``(T, n1)`` series."""
    N = np.asarray(N, dtype=float)
    if np.any(N <= 0):
        raise ValueError("N must be positive")
    f = np.asarray(f, dtype=float)
    return psi_c * (np.exp(1j * f / HBAR) / np.sqrt(N))[:, None]


@dataclass
class TildeSeries:
    times: np.ndarray
    psi: np.ndarray
    N: np.ndarray
    gauge: GaugeFit
    gamma: GammaProfile


def build_tilde(series: SliceSeries, N0: float | None = None) -> TildeSeries:
    """The tilded conditional wave function with ``N0 = int R_c^2(x1, 0)`` by default."""
    axis = series.analyzer.axis1
    w = axis.quadrature_weights()
    if N0 is None:
        N0 = float(np.sum(w * np.abs(series.psi[0]) ** 2))
    G, Gt, flat, singular = gamma_field(series)
    N = conserving_normalization(Gt, N0, series.times)
    gauge = fit_gauge(series)
    psi_t = tilde_wavefunction(series.psi, N, gauge.f)
    prof = GammaProfile(series.times, Gt, flat, N, G, singular)
    return TildeSeries(series.times, psi_t, N, gauge, prof)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------


def _relative_norm(diff, scale, ok, w):
    num = np.sqrt(np.sum(np.where(ok, np.abs(diff) ** 2, 0.0) * w, axis=-1))
    den = np.sqrt(np.sum(np.where(ok, np.abs(scale) ** 2, 0.0) * w, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / den


def cond_schrodinger_residual(psi_series: np.ndarray, V_c: np.ndarray, axis1: Grid1D, m1: float,
                              dt: float, trusted: np.ndarray | None = None) -> np.ndarray:
    """Relative residual of ``[-(hbar^2/2m1) d1^2 + V_c] psi = i hbar d_t psi`` per slice.

    ``r = ||LHS - RHS|| / ||(hbar^2/2m1) d1^2 psi||`` over trusted points.
    """
    psi_series = np.asarray(psi_series, dtype=complex)
    kin = HBAR**2 / (2 * m1) * laplacian(psi_series, axis1)
    dlog = log_time_derivative(psi_series, dt)
    lhs = -kin + V_c * psi_series
    rhs = 1j * HBAR * psi_series * dlog
    ok = _default_trusted(psi_series, axis1) if trusted is None else trusted.copy()
    ok &= np.isfinite(dlog)
    return _relative_norm(lhs - rhs, kin, ok, axis1.quadrature_weights())


def _default_trusted(psi_series, axis1: Grid1D):
    amp = np.abs(psi_series)
    ok = amp > TRUST_FRACTION * amp.max(axis=-1, keepdims=True)
    if not axis1.periodic:
        ok[..., :EDGE_CELLS] = False
        ok[..., -EDGE_CELLS:] = False
    return ok


@dataclass
class PseudoResidual:
    times: np.ndarray
    r_pseudo: np.ndarray
    r_absorbed: np.ndarray
    r_no_gamma: np.ndarray
    singular: np.ndarray


def environment_gauge(series: SliceSeries, traj: Trajectory | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``h(t) = -E - m2 v2t^2 / 2`` at the slice times and ``f = int_0^t h``.

    With a trajectory the integral uses every recorded step; otherwise the
    slice cadence.
    """
    a = series.analyzer
    h = -a.E - 0.5 * a.m2 * series.v2t**2
    if traj is not None and traj.velocities is not None:
        ht = -a.E - 0.5 * a.m2 * traj.velocities[:, 1] ** 2
        F = cumulative_trapezoid(ht, traj.times, initial=0.0)
        f = np.interp(series.times, traj.times, F)
        return h, f - f[0]
    return h, cumulative_trapezoid(h, series.times, initial=0.0)


def pseudo_schrodinger_residual(series: SliceSeries, traj: Trajectory | None = None,
                                fdot: np.ndarray | None = None) -> PseudoResidual:
    """Relative residuals of the exact pseudo-Schrodinger equation for ``psi_c``.

    ``[-(hbar^2/2m1) d1^2 + U + fdot + i hbar Gamma/2] psi_c = i hbar d_t psi_c`` with
    ``U = V_c + Q2c + m2 (v2c - v2t)^2 / 2``, ``fdot = -E - m2 v2t^2 / 2`` and
    ``Gamma`` from :func:`gamma_field`. Also returns the residual of the
    variant with ``fdot`` absorbed into the phase (``psi_c exp(i f/hbar)``)
    and with ``Gamma`` dropped (ablation). Singular slices give ``nan``.
    """
    a = series.analyzer
    axis1 = a.axis1
    psi = series.psi
    G, _, _, singular = gamma_field(series)
    h, f = environment_gauge(series, traj)
    if fdot is not None:
        h = np.asarray(fdot, dtype=float)
    U = series.V_c + series.Q2c + 0.5 * a.m2 * (series.v2c - series.v2t[:, None]) ** 2
    kin = HBAR**2 / (2 * a.m1) * series.psi11
    dlog = series.log_derivative()
    ok = series.trusted_dynamic() & np.isfinite(dlog) & np.isfinite(G)
    w = axis1.quadrature_weights()

    base = -kin + U * psi
    rhs = 1j * HBAR * psi * dlog
    r = _relative_norm(base + (h[:, None] + 0.5j * HBAR * G) * psi - rhs, kin, ok, w)
    r_nog = _relative_norm(base + h[:, None] * psi - rhs, kin, ok, w)

    psi_abs = psi * np.exp(1j * f / HBAR)[:, None]
    dlog_abs = log_time_derivative(psi_abs, series.dt)
    kin_abs = HBAR**2 / (2 * a.m1) * laplacian(psi_abs, axis1)
    resid_abs = -kin_abs + (U + 0.5j * HBAR * G) * psi_abs - 1j * HBAR * psi_abs * dlog_abs
    r_abs = _relative_norm(resid_abs, kin_abs, ok, w)
    nan = np.where(singular, np.nan, 1.0)
    return PseudoResidual(series.times, r * nan, r_abs * nan, r_nog * nan, singular)


def convergence_order(h, r) -> float:
    """Least-squares slope of ``log r`` against ``log h``."""
    h = np.asarray(h, dtype=float)
    r = np.asarray(r, dtype=float)
    return float(np.polyfit(np.log(h), np.log(r), 1)[0])


@dataclass
class ContinuityReport:
    stationary: float
    stationary_relative: float
    non_conserving: np.ndarray
    gamma_term: np.ndarray
    equivariance: np.ndarray


def continuity_residuals(series: SliceSeries, N: np.ndarray | None = None) -> ContinuityReport:
    """Norms of the stationary continuity equation and its conditional forms.

    * ``d1(R^2 v1) + d2(R^2 v2)`` on the full grid (absolute and relative to
      ``||d1(R^2 v1)||``),
    * ``(v2c/v2t) d_t R_c^2 + d1(R_c^2 v1c) + R_c^2 (d2 v2)_c`` per slice,
    * the size of ``R_c^2 Gamma_t`` per slice,
    * ``d_t rho_c + d1(rho_c v1c)`` with ``rho_c = R_c^2 / N`` per slice.
    """
    a = series.analyzer
    grid = a.grid
    psi = a.state.psi.values
    j1 = HBAR / a.m1 * np.imag(np.conj(psi) * gradient(psi, grid, 1))
    j2 = HBAR / a.m2 * np.imag(np.conj(psi) * gradient(psi, grid, 2))
    d1j1 = gradient(j1, grid, 1)
    div = d1j1 + gradient(j2, grid, 2)
    stat = math.sqrt(grid.integrate(div**2))
    scale = math.sqrt(grid.integrate(d1j1**2))
    stat_rel = stat / scale if scale > 0 else stat

    w = a.axis1.quadrature_weights()
    rho = np.abs(series.psi) ** 2
    dlog = series.log_derivative()
    dt_rho = 2.0 * np.real(dlog) * rho
    flux = gradient(rho * np.nan_to_num(series.v1c), a.axis1)
    ok = series.trusted_dynamic() & np.isfinite(dlog)
    G, Gt, _, singular = gamma_field(series)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(singular[:, None], np.nan, series.v2c / series.v2t[:, None])
    nc = ratio * dt_rho + flux + rho * series.d2v2_c

    def norm(x):
        return np.sqrt(np.sum(np.where(ok, np.abs(x) ** 2, 0.0) * w, axis=-1))

    if N is None:
        N0 = float(np.sum(w * rho[0]))
        N = conserving_normalization(Gt, N0, series.times)
    N = np.asarray(N)[:, None]
    dN = np.gradient(N[:, 0], series.dt, edge_order=2)[:, None]
    eqv = (dt_rho - rho * dN / N + flux) / N
    return ContinuityReport(stat, stat_rel, norm(nc), norm(rho * Gt[:, None]), norm(eqv))


# ---------------------------------------------------------------------------
# reference propagator
# ---------------------------------------------------------------------------


def propagate_reference(psi0: np.ndarray, axis1: Grid1D, m1: float, V_of_t, t0: float,
                        out_times, dt: float) -> np.ndarray:
    """Implicit-midpoint (Crank-Nicolson) evolution of ``i hbar d_t psi = H(t) psi``.

    ``H(t) = -(hbar^2/2m1) d1^2 + V_of_t(t)`` with homogeneous Dirichlet
    ghost points on a box axis (periodic axes are not supported). ``out_times``
    must be ``t0 +`` multiples of ``dt``; returns ``(len(out_times), n1)``.
    """
    if axis1.periodic:
        raise ValueError("reference propagator supports box axes only")
    out_times = np.asarray(out_times, dtype=float)
    steps = np.rint((out_times - t0) / dt).astype(int)
    if np.any(steps < 0) or np.any(np.abs(steps * dt - (out_times - t0)) > 1e-8 * max(1.0, abs(out_times[-1]))):
        raise ValueError("output times must be t0 plus whole steps")
    n = axis1.n_points
    h = axis1.dx
    kin = HBAR**2 / (2 * m1 * h * h)
    psi = np.array(psi0, dtype=complex)
    out = np.empty((len(out_times), n), dtype=complex)
    c = 0.5j * dt / HBAR
    ab = np.empty((3, n), dtype=complex)
    ab[0, 1:] = -c * kin
    ab[2, :-1] = -c * kin
    ab[0, 0] = 0
    ab[2, -1] = 0
    order = np.argsort(steps, kind="stable")
    k = 0
    for idx in order:
        while k < steps[idx]:
            diag = 2 * kin + V_of_t(t0 + (k + 0.5) * dt)
            Hpsi = diag * psi
            Hpsi[1:] -= kin * psi[:-1]
            Hpsi[:-1] -= kin * psi[1:]
            rhs = psi - c * Hpsi
            ab[1] = 1 + c * diag
            psi = solve_banded((1, 1), ab, rhs)
            k += 1
        out[idx] = psi
    return out


def l2_norm(values: np.ndarray, axis1: Grid1D) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(values) ** 2 * axis1.quadrature_weights(), axis=-1))


# ---------------------------------------------------------------------------
# classicality
# ---------------------------------------------------------------------------


def environment_length(series: SliceSeries) -> np.ndarray:
    """Scale ``L2`` on which ``R`` changes with ``x2``, per slice.

    ``L2 = 1 / max(|R_2/R|, sqrt|R_22/R|)`` over trusted points, capped at
    the length of the environment axis.
    """
    a = series.analyzer
    R = np.where(series.mask, 1.0, np.abs(series.psi))
    g1 = np.abs(series.R2 / R)
    g2 = np.sqrt(np.abs(series.R22 / R))
    inv = np.where(series.trusted, np.maximum(g1, g2), 0.0).max(axis=-1)
    cap = a.grid.axis2.length
    with np.errstate(divide="ignore"):
        return np.minimum(np.where(inv > 0, 1.0 / inv, np.inf), cap)


@dataclass
class Classicality:
    ratio: float
    v2_spread: float
    gamma_flatness: float
    trajectory_gap: float = float("nan")

    @property
    def classical(self) -> bool:
        return bool(self.ratio >= CLASSICAL_RATIO)

    def as_dict(self) -> dict:
        return {"ratio": self.ratio, "v2_spread": self.v2_spread,
                "gamma_flatness": self.gamma_flatness, "trajectory_gap": self.trajectory_gap,
                "classical": self.classical}


def classicality_metrics(series: SliceSeries, gap: float = float("nan")) -> Classicality:
    """``median_t L2 P2 / hbar``, max relative ``v2c`` spread and max ``Gamma`` flatness."""
    a = series.analyzer
    L2 = environment_length(series)
    P2 = a.m2 * np.abs(series.v2t)
    ratio = float(np.median(L2 * P2 / HBAR))
    spread = _spread(series.v2c, series.trusted)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(np.abs(series.v2t) > 0, spread / np.abs(series.v2t), np.where(spread > 0, np.inf, 0.0))
    _, _, flat, _ = gamma_field(series)
    return Classicality(ratio, float(np.nanmax(rel)), float(np.nanmax(flat)), float(gap))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class ResidualReport:
    times: np.ndarray
    r_cond_schrod: np.ndarray
    r_pseudo: np.ndarray
    r_exact_order: float = float("nan")
    classicality: Classicality | None = None
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _clean({
            "times": self.times,
            "r_cond_schrod": self.r_cond_schrod,
            "r_pseudo": self.r_pseudo,
            "r_exact_order": self.r_exact_order,
            "classicality": self.classicality.as_dict() if self.classicality else {},
            "flags": list(self.flags),
        })

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
        return path

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "r_cond_schrod", "r_pseudo"])
            for t, a, b in zip(self.times, self.r_cond_schrod, self.r_pseudo):
                w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])
        return path
