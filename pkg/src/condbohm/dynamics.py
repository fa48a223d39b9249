"""Velocity laws, trajectory integration and quantum-equilibrium sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from condbohm.fields import ComplexField2D, gradient
from condbohm.grid import HBAR, Grid2D
from condbohm.interp import FieldInterpolator, OutOfDomainError, phase_velocity
from condbohm.stationary import Eigenstate, PotentialSpec

BOHMIAN = "bohmian"
STREAM = "stream"
SCALING = "scaling"
CLASSICAL = "classical"

NODE_GUARD = 1e-2


class NodeProximityError(ValueError):
    """Velocity requested where the wave function (almost) vanishes."""


class RecordingError(ValueError):
    pass


@dataclass(frozen=True)
class VelocityModel:
    """Bohmian velocity, ``v + lam * j / |psi|^2`` with ``j = (d2 g, -d1 g)``, or ``(1 + lam) v``."""

    kind: str = BOHMIAN
    lam: float = 0.0
    g: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (BOHMIAN, STREAM, SCALING):
            raise ValueError(f"unknown velocity model {self.kind!r}")
        if self.kind == STREAM and self.g is None:
            raise ValueError("stream model needs a tabulated stream function g")

    @property
    def label(self) -> str:
        if self.kind == BOHMIAN:
            return BOHMIAN
        return f"{self.kind}({self.lam:g})"

    @classmethod
    def bohmian(cls):
        return cls(BOHMIAN)

    @classmethod
    def scaling(cls, lam: float):
        return cls(SCALING, float(lam))

    @classmethod
    def stream(cls, g: np.ndarray, lam: float = 1.0):
        return cls(STREAM, float(lam), np.asarray(g, dtype=float))


class StateFields:
    """A stationary state with its derivative fields and an interpolator.

    ``eps_node`` defaults to ``1e-6 max|psi|``.
    """

    def __init__(self, psi: ComplexField2D | Eigenstate, masses=(1.0, 1.0), eps_node=None):
        if isinstance(psi, Eigenstate):
            self.E = psi.E
            psi = psi.psi
        else:
            self.E = float("nan")
        self.field = psi
        self.grid: Grid2D = psi.grid
        self.masses = (float(masses[0]), float(masses[1]))
        self.psi = psi.values
        self.d1psi = gradient(self.psi, self.grid, 1)
        self.d2psi = gradient(self.psi, self.grid, 2)
        self.max_amplitude = float(np.max(np.abs(self.psi)))
        self.eps_node = 1e-6 * self.max_amplitude if eps_node is None else float(eps_node)
        self.interp = FieldInterpolator(np.stack([self.psi, self.d1psi, self.d2psi]), self.grid,
                                        psi.carrier)

    def current(self) -> tuple[np.ndarray, np.ndarray]:
        """Probability current ``|psi|^2 v_a`` on the grid."""
        m1, m2 = self.masses
        return (HBAR / m1 * np.imag(np.conj(self.psi) * self.d1psi),
                HBAR / m2 * np.imag(np.conj(self.psi) * self.d2psi))

    def velocity_grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Bohmian velocity on the grid and the node mask (velocity 0 there)."""
        mask = np.abs(self.psi) < self.eps_node
        safe = np.where(mask, 1.0, self.psi)
        m1, m2 = self.masses
        v1 = np.where(mask, 0.0, HBAR / m1 * np.imag(self.d1psi / safe))
        v2 = np.where(mask, 0.0, HBAR / m2 * np.imag(self.d2psi / safe))
        return v1, v2, mask

    def evaluate(self, points: np.ndarray):
        """``(|psi|, v)`` at points ``(n, 2)``; ``v`` is Bohmian, ``nan`` below ``eps_node``."""
        points = np.atleast_2d(points)
        v, amp = phase_velocity(self.interp, points[:, 0], points[:, 1],
                                HBAR / self.masses[0], HBAR / self.masses[1])
        v[amp < self.eps_node] = np.nan
        return amp, v


class Flow:
    """Velocity field of a model on a stationary state, callable on ``(n, 2)`` points."""

    def __init__(self, fields: StateFields, model: VelocityModel = VelocityModel()):
        self.fields = fields
        self.model = model
        self._j = None
        if model.kind == STREAM:
            g = model.g
            if g.shape != fields.grid.shape:
                raise ValueError("stream function must live on the state's grid")
            j1 = gradient(g, fields.grid, 2)
            j2 = -gradient(g, fields.grid, 1)
            self._j = FieldInterpolator(np.stack([j1, j2]), fields.grid)

    def amplitude(self, points: np.ndarray) -> np.ndarray:
        return self.fields.evaluate(points)[0]

    def with_amplitude(self, points: np.ndarray):
        """``(u, |psi|)`` at ``(n, 2)`` points."""
        amp, v = self.fields.evaluate(points)
        m = self.model
        if m.kind == SCALING:
            return (1.0 + m.lam) * v, amp
        if m.kind == STREAM:
            points = np.atleast_2d(points)
            j = np.real(self._j.at(points[:, 0], points[:, 1])).T
            return v + m.lam * j / (amp**2)[:, None], amp
        return v, amp

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.with_amplitude(points)[0]


def bohmian_velocity(psi, masses, point) -> tuple[float, float]:
    """Bohmian velocity ``(hbar/m_a) Im(d_a psi / psi)`` at one point."""
    fields = psi if isinstance(psi, StateFields) else StateFields(psi, masses)
    amp, v = fields.evaluate(np.array([point], dtype=float))
    if amp[0] < fields.eps_node:
        raise NodeProximityError(f"|psi| = {amp[0]:.3e} below node threshold at {point}")
    return float(v[0, 0]), float(v[0, 1])


def modified_velocity(psi, model: VelocityModel, masses, point) -> tuple[float, float]:
    fields = psi if isinstance(psi, StateFields) else StateFields(psi, masses)
    p = np.array([point], dtype=float)
    u, amp = Flow(fields, model).with_amplitude(p)
    if amp[0] < fields.eps_node:
        raise NodeProximityError(f"point {point} lies at a node")
    u = u[0]
    return float(u[0]), float(u[1])


def check_divergence_free(model: VelocityModel, psi, masses=(1.0, 1.0)) -> float:
    """Grid L2 norm of ``d1 j1 + d2 j2`` for the model's extra current."""
    if model.kind == BOHMIAN:
        raise ValueError("the Bohmian model has no extra current to check")
    fields = psi if isinstance(psi, StateFields) else StateFields(psi, masses)
    grid = fields.grid
    if model.kind == STREAM:
        j1 = model.lam * gradient(model.g, grid, 2)
        j2 = -model.lam * gradient(model.g, grid, 1)
    else:
        c1, c2 = fields.current()
        j1, j2 = model.lam * c1, model.lam * c2
    div = gradient(j1, grid, 1) + gradient(j2, grid, 2)
    return float(np.sqrt(grid.integrate(div**2)))


def default_stream_function(fields: StateFields, width: float = 0.5, center=None,
                            floor: float = 1e-2) -> np.ndarray:
    """Gaussian stream function scaled so ``max|j/|psi|^2|`` matches ``max|v|``.

    Both maxima are taken where ``|psi|^2 >= floor * max|psi|^2``.
    """
    grid = fields.grid
    if center is None:
        center = (0.5 * (grid.axis1.x_min + grid.axis1.x_max), 0.5 * (grid.axis2.x_min + grid.axis2.x_max))
    x1, x2 = grid.mesh()
    g = np.exp(-((x1 - center[0]) ** 2 + (x2 - center[1]) ** 2) / (2 * width**2))
    rho = np.abs(fields.psi) ** 2
    trusted = rho >= floor * rho.max()
    v1, v2, _ = fields.velocity_grid()
    vmax = np.max(np.hypot(v1, v2)[trusted])
    j1 = gradient(g, grid, 2)
    j2 = -gradient(g, grid, 1)
    jmax = np.max((np.hypot(j1, j2) / np.where(trusted, rho, 1.0))[trusted])
    if vmax == 0.0:
        return g / jmax
    return g * (vmax / jmax)


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray | None = None
    velocities: np.ndarray | None = None
    model: str = BOHMIAN
    captured_at: float | None = None

    @property
    def captured(self) -> bool:
        return self.captured_at is not None

    def flags(self) -> np.ndarray:
        if self.captured_at is None:
            return np.zeros(len(self.times), dtype=int)
        return (self.times >= self.captured_at).astype(int)

    def position_at(self, t) -> np.ndarray:
        """Positions at arbitrary times by cubic Hermite interpolation."""
        return self._spline()(t)

    def _spline(self):
        if getattr(self, "_cached_spline", None) is None:
            if self.velocities is not None and np.all(np.isfinite(self.velocities)):
                self._cached_spline = CubicHermiteSpline(self.times, self.positions, self.velocities)
            else:
                self._cached_spline = CubicSpline(self.times, self.positions)
        return self._cached_spline

    def to_csv(self, path) -> Path:
        path = Path(path)
        header = ["t", "X1", "X2"] + (["P1", "P2"] if self.momenta is not None else []) + ["flags"]
        flags = self.flags()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, t in enumerate(self.times):
                row = [repr(float(t)), repr(float(self.positions[i, 0])), repr(float(self.positions[i, 1]))]
                if self.momenta is not None:
                    row += [repr(float(self.momenta[i, 0])), repr(float(self.momenta[i, 1]))]
                w.writerow(row + [int(flags[i])])
        return path


def rk4_step(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), k1


def _rk4_sub(f, y, dt, nsub):
    h = dt / nsub
    for _ in range(nsub):
        y = rk4_step(f, y, h)[0]
    return y


def _step_count(t_span, dt):
    """``(t0, n_steps, h)``: ``h <= dt`` is ``dt`` shortened to divide the span evenly."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t1 > t0:
        raise ValueError(f"empty time span {t_span}")
    n = max(1, math.ceil((t1 - t0) / dt - 1e-9))
    return t0, n, (t1 - t0) / n


def propagate(velocity, X0, t_span, dt, *, amplitude=None, eps_node: float = 0.0,
              guard: float = 0.0, tol_step: float = 1e-9, max_halvings: int = 10,
              record_every: int = 1):
    """Fixed-step RK4 for an ensemble ``X0`` of shape ``(n, 2)``.

    ``dt`` is the largest allowed step; it is shortened so that ``t_span`` is
    a whole number of steps.

    Particles with ``amplitude < guard`` are advanced with step doubling
    until two successive subdivisions agree to ``tol_step``. A particle whose
    amplitude falls below ``eps_node`` is frozen and flagged as captured.
    When ``velocity`` has a ``with_amplitude`` method (see :class:`Flow`), the
    first RK4 stage also supplies the amplitude for these checks.

    Returns ``(times, positions, velocities, captured_at)`` with positions
    and velocities recorded every ``record_every`` steps, shapes
    ``(T, n, 2)``; ``captured_at`` is ``nan`` for free particles.
    """
    t0, n_steps, dt = _step_count(t_span, dt)
    y = np.array(X0, dtype=float, copy=True)
    n = len(y)
    captured_at = np.full(n, np.nan)
    active = np.ones(n, dtype=bool)
    joint = getattr(velocity, "with_amplitude", None)
    if amplitude is None and joint is None:
        eps_node = guard = -np.inf
    times, pos, vel = [], [], []

    def first_stage(points):
        if joint is not None:
            return joint(points)
        v = velocity(points)
        return v, (amplitude(points) if amplitude is not None else np.full(len(points), np.inf))

    for step in range(n_steps + 1):
        t = t0 + step * dt
        idx = np.flatnonzero(active)
        v = np.full((n, 2), np.nan)
        k1, amp = first_stage(y[idx])
        hit = amp < eps_node
        captured_at[idx[hit]] = t
        active[idx[hit]] = False
        k1[hit] = np.nan
        v[idx] = k1
        if step % record_every == 0 or step == n_steps:
            times.append(t)
            pos.append(y.copy())
            vel.append(v)
        if step == n_steps:
            break
        near = ~hit & (amp < guard)
        far = ~hit & ~near
        fi = idx[far]
        if len(fi):
            yf = y[fi]
            a1 = k1[far]
            a2 = velocity(yf + 0.5 * dt * a1)
            a3 = velocity(yf + 0.5 * dt * a2)
            a4 = velocity(yf + dt * a3)
            y[fi] = yf + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        ni = idx[near]
        if len(ni):
            y[ni] = _doubling_step(velocity, y[ni], dt, tol_step, max_halvings)
        bad = idx[~hit][~np.all(np.isfinite(y[idx[~hit]]), axis=1)]
        if len(bad):
            captured_at[bad] = t + dt
            active[bad] = False
            y[bad] = pos[-1][bad] if len(pos) else np.asarray(X0, dtype=float)[bad]
    return np.array(times), np.array(pos), np.array(vel), captured_at


def _tolerant(velocity):
    """``velocity`` returning ``nan`` rows for points outside the domain instead of raising."""

    def f(points):
        try:
            return velocity(points)
        except OutOfDomainError:
            out = np.full((len(points), 2), np.nan)
            for i, p in enumerate(points):
                if np.all(np.isfinite(p)):
                    try:
                        out[i] = velocity(p[None])[0]
                    except OutOfDomainError:
                        pass
            return out

    return f


def _doubling_step(velocity, y, dt, tol_step, max_halvings):
    """One step of length ``dt``, subdividing until successive refinements agree.

    Coarse sub-steps that leave the domain yield ``nan`` and simply force
    further subdivision.
    """
    velocity = _tolerant(velocity)
    prev = _rk4_sub(velocity, y, dt, 1)
    out = prev.copy()
    todo = np.ones(len(y), dtype=bool)
    for level in range(1, max_halvings + 1):
        cur = _rk4_sub(velocity, y[todo], dt, 2**level)
        with np.errstate(invalid="ignore"):
            err = np.max(np.abs(cur - prev[todo]), axis=1)
        out[todo] = cur
        prev[todo] = cur
        done = err < tol_step
        sel = np.flatnonzero(todo)
        todo[sel[done]] = False
        if not todo.any():
            break
    return out


def integrate_trajectory(velocity, X0, t_span, dt, *, amplitude=None, eps_node: float = 0.0,
                         guard: float = 0.0, tol_step: float = 1e-9, model: str = BOHMIAN) -> Trajectory:
    """One trajectory of ``dX/dt = velocity(X)`` recorded at every step."""
    if isinstance(velocity, Flow):
        amplitude = velocity.amplitude if amplitude is None else amplitude
        if eps_node == 0.0:
            eps_node = velocity.fields.eps_node
        if guard == 0.0:
            guard = NODE_GUARD * velocity.fields.max_amplitude
        model = velocity.model.label
    X0 = np.asarray(X0, dtype=float).reshape(1, 2)
    times, pos, vel, cap = propagate(velocity, X0, t_span, dt, amplitude=amplitude,
                                     eps_node=eps_node, guard=guard, tol_step=tol_step)
    captured_at = None if np.isnan(cap[0]) else float(cap[0])
    positions = pos[:, 0, :]
    velocities = vel[:, 0, :]
    if captured_at is not None:
        keep = times < captured_at + 0.5 * dt
        times, positions, velocities = times[keep], positions[keep], velocities[keep]
    return Trajectory(times=times, positions=positions, velocities=velocities, model=model,
                      captured_at=captured_at)


def _hamilton_rhs(pot: PotentialSpec):
    m1, m2 = pot.masses

    def rhs(y):
        g1, g2 = pot.gradient(y[:, 0], y[:, 1])
        return np.stack([y[:, 2] / m1, y[:, 3] / m2, -g1, -g2], axis=1)

    return rhs


def classical_trajectory(pot: PotentialSpec, X0, P0, t_span, dt) -> Trajectory:
    """Hamilton's equations for ``p1^2/2m1 + p2^2/2m2 + V`` with RK4."""
    t0, n_steps, dt = _step_count(t_span, dt)
    y = np.concatenate([np.asarray(X0, float), np.asarray(P0, float)]).reshape(1, 4)
    rhs = _hamilton_rhs(pot)
    out = np.empty((n_steps + 1, 4))
    out[0] = y[0]
    for i in range(n_steps):
        y = rk4_step(rhs, y, dt)[0]
        out[i + 1] = y[0]
    times = t0 + dt * np.arange(n_steps + 1)
    m = np.array(pot.masses)
    return Trajectory(times=times, positions=out[:, :2], momenta=out[:, 2:],
                      velocities=out[:, 2:] / m, model=CLASSICAL)


def classical_energy(pot: PotentialSpec, traj: Trajectory) -> np.ndarray:
    m1, m2 = pot.masses
    P = traj.momenta
    X = traj.positions
    return P[:, 0] ** 2 / (2 * m1) + P[:, 1] ** 2 / (2 * m2) + pot.value(X[:, 0], X[:, 1])


def conditional_classical_trajectory(pot: PotentialSpec, X2_recorded: Trajectory, X1_0: float,
                                     P1_0: float, t_span, dt) -> Trajectory:
    """Particle 1 under ``p1^2/2m1 + V(x1, X2(t))`` with ``X2(t)`` from a recording."""
    t0, n_steps, dt = _step_count(t_span, dt)
    t1 = t0 + n_steps * dt
    rt = X2_recorded.times
    if t0 < rt[0] - 1e-12 or t1 > rt[-1] + 1e-12:
        raise RecordingError(f"t_span {t_span} exceeds the recording [{rt[0]}, {rt[-1]}]")
    if X2_recorded.momenta is not None:
        v2 = X2_recorded.momenta[:, 1] / pot.m2
        x2_of_t = CubicHermiteSpline(rt, X2_recorded.positions[:, 1], v2)
    elif X2_recorded.velocities is not None and np.all(np.isfinite(X2_recorded.velocities[:, 1])):
        x2_of_t = CubicHermiteSpline(rt, X2_recorded.positions[:, 1], X2_recorded.velocities[:, 1])
    else:
        x2_of_t = CubicSpline(rt, X2_recorded.positions[:, 1])
    m1 = pot.m1

    def rhs(t, y):
        g1, _ = pot.gradient(y[0], x2_of_t(t))
        return np.array([y[1] / m1, -float(g1)])

    y = np.array([X1_0, P1_0], dtype=float)
    out = np.empty((n_steps + 1, 2))
    out[0] = y
    for i in range(n_steps):
        t = t0 + i * dt
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = y
    times = t0 + dt * np.arange(n_steps + 1)
    x2 = x2_of_t(times)
    p2 = pot.m2 * x2_of_t(times, 1)
    positions = np.stack([out[:, 0], x2], axis=1)
    momenta = np.stack([out[:, 1], p2], axis=1)
    return Trajectory(times=times, positions=positions, momenta=momenta,
                      velocities=momenta / np.array(pot.masses), model=CLASSICAL)


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; ``stream`` selects an independent key."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)]))


def sample_ensemble(psi, n: int, seed: int, *, stream: int = 0, batch: int = 1 << 16) -> np.ndarray:
    """``n`` points distributed as the interpolated ``|psi|^2``, by rejection.

    Proposals are uniform over the grid domain; the envelope is ``1.1 max|psi|^2``
    on the grid, which bounds the cubic interpolant for the resolved states
    used here (checked on every batch).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    fields = psi if isinstance(psi, StateFields) else StateFields(psi)
    g = fields.grid
    envelope = 1.1 * fields.max_amplitude**2
    rng = rng_for(seed, stream)
    lo = np.array([g.axis1.x_min, g.axis2.x_min])
    hi = np.array([g.axis1.x_max, g.axis2.x_max])
    accepted = []
    count = 0
    while count < n:
        prop = lo + (hi - lo) * rng.random((batch, 2))
        u = rng.random(batch)
        dens = np.abs(fields.interp.at(prop[:, 0], prop[:, 1])[0]) ** 2
        if np.any(dens > envelope):
            raise RuntimeError("rejection envelope exceeded; grid too coarse for this state")
        keep = prop[u * envelope < dens]
        accepted.append(keep)
        count += len(keep)
    return np.concatenate(accepted)[:n]
