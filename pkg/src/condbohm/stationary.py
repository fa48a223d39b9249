"""Energy eigenstates of the two-particle Hamiltonian on a grid.

The scenario library builds its states from exact eigenvectors of the
discrete one-dimensional operators (products, complex superpositions of
degenerate pairs), so they are eigenvectors of the assembled 2D operator to
round-off while their energies converge to the continuum values at second
order in the spacing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from condbohm.fields import ComplexField2D
from condbohm.grid import BOX, HBAR, PERIODIC, Grid1D, Grid2D, make_grid

HARMONIC2D = "harmonic2d"
RING_FREE = "ring_free"
RING_PLUS_LOCAL = "ring_plus_local"
CUSTOM = "custom"
KINDS = (HARMONIC2D, RING_FREE, RING_PLUS_LOCAL, CUSTOM)

ANALYTIC_SCENARIOS = ("vortex_oscillator", "ring_planewave_env", "frozen_ground")
NUMERICAL_SCENARIOS = ("coupled_ring_env",)
SCENARIOS = ANALYTIC_SCENARIOS + NUMERICAL_SCENARIOS


class EigenSolveError(RuntimeError):
    pass


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class PotentialSpec:
    """Two-particle potential ``V(x1, x2)`` and the masses.

    ``harmonic2d``: ``m1 w1^2 x1^2 / 2 + m2 w2^2 x2^2 / 2 + coupling * x1 * x2``.
    ``ring_free``: ``V = 0``.
    ``ring_plus_local``: tabulated ``V1(x1)`` (``local_x``, ``local_v``) plus
    ``coupling * x1 * cos(x2)``.
    ``custom``: tabulated ``table`` on ``table_grid``.
    """

    kind: str
    m1: float = 1.0
    m2: float = 1.0
    omega1: float = 1.0
    omega2: float = 1.0
    coupling: float = 0.0
    local_x: np.ndarray | None = field(default=None, repr=False)
    local_v: np.ndarray | None = field(default=None, repr=False)
    table_grid: Grid2D | None = field(default=None, repr=False)
    table: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown potential kind {self.kind!r}")
        if self.m1 <= 0 or self.m2 <= 0:
            raise ScenarioError("masses must be positive")
        if self.kind == RING_PLUS_LOCAL:
            if self.local_x is None or self.local_v is None:
                raise ScenarioError("ring_plus_local needs a tabulated V1")
            if not np.all(np.isfinite(self.local_v)):
                raise ScenarioError("tabulated V1 is not finite")
            object.__setattr__(self, "_spline", CubicSpline(self.local_x, self.local_v))
        if self.kind == CUSTOM:
            if self.table is None or self.table_grid is None:
                raise ScenarioError("custom potential needs a table and its grid")
            if not np.all(np.isfinite(self.table)):
                raise ScenarioError("tabulated V is not finite")
            g = self.table_grid
            spline = RectBivariateSpline(g.axis1.points, g.axis2.points, self.table)
            object.__setattr__(self, "_spline", spline)

    @property
    def masses(self) -> tuple[float, float]:
        return (self.m1, self.m2)

    def value(self, x1, x2) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self.kind == HARMONIC2D:
            return (0.5 * self.m1 * self.omega1**2 * x1**2
                    + 0.5 * self.m2 * self.omega2**2 * x2**2
                    + self.coupling * x1 * x2)
        if self.kind == RING_FREE:
            return np.zeros(np.broadcast(x1, x2).shape)
        if self.kind == RING_PLUS_LOCAL:
            return self._spline(x1) + self.coupling * x1 * np.cos(x2)
        return self._spline.ev(x1, x2)

    def gradient(self, x1, x2) -> tuple[np.ndarray, np.ndarray]:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self.kind == HARMONIC2D:
            return (self.m1 * self.omega1**2 * x1 + self.coupling * x2,
                    self.m2 * self.omega2**2 * x2 + self.coupling * x1)
        if self.kind == RING_FREE:
            z = np.zeros(np.broadcast(x1, x2).shape)
            return z, z.copy()
        if self.kind == RING_PLUS_LOCAL:
            return (self._spline(x1, 1) + self.coupling * np.cos(x2),
                    -self.coupling * x1 * np.sin(x2))
        return self._spline.ev(x1, x2, dx=1), self._spline.ev(x1, x2, dy=1)

    def on_grid(self, grid: Grid2D) -> np.ndarray:
        if self.kind == CUSTOM and grid == self.table_grid:
            return np.array(self.table, dtype=float)
        if self.kind == RING_PLUS_LOCAL and np.array_equal(self.local_x, grid.axis1.points):
            x2 = grid.axis2.points
            return (np.asarray(self.local_v, dtype=float)[:, None]
                    + self.coupling * grid.axis1.points[:, None] * np.cos(x2)[None, :])
        x1, x2 = grid.mesh()
        return self.value(x1, x2)


def ring_plus_local(axis1: Grid1D, v1: np.ndarray, m1=1.0, m2=1.0, coupling=0.0) -> PotentialSpec:
    return PotentialSpec(RING_PLUS_LOCAL, m1=m1, m2=m2, coupling=coupling,
                         local_x=np.array(axis1.points), local_v=np.asarray(v1, dtype=float))


@dataclass(frozen=True)
class Eigenstate:
    E: float
    psi: ComplexField2D
    degeneracy_tag: str | None = None
    residual: float = float("nan")


@dataclass(frozen=True)
class Hamiltonian:
    """Sparse finite-difference Hamiltonian on a 2D grid (row-major flattening).

    Box axes use Dirichlet ghost points so the matrix stays symmetric.
    """

    grid: Grid2D
    potential: PotentialSpec
    matrix: sp.csr_matrix = field(repr=False)
    V: np.ndarray = field(repr=False)

    def apply(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values)
        return (self.matrix @ v.reshape(-1)).reshape(self.grid.shape)

    def residual(self, psi: np.ndarray, E: float) -> float:
        """``||H psi - E psi|| / ||psi||`` in the grid L2 norm."""
        psi = np.asarray(psi)
        w = self.grid.quadrature_weights()
        r = self.apply(psi) - E * psi
        return float(np.sqrt(np.sum(w * np.abs(r) ** 2) / np.sum(w * np.abs(psi) ** 2)))

    def expectation(self, psi: np.ndarray) -> float:
        psi = np.asarray(psi)
        num = np.vdot(psi.reshape(-1), self.matrix @ psi.reshape(-1)).real
        return float(num / np.vdot(psi, psi).real)


def second_difference(axis: Grid1D) -> sp.csr_matrix:
    """Three-point ``d^2/dx^2`` (periodic wrap, or Dirichlet ghost points)."""
    n = axis.n_points
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    D = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if axis.periodic:
        D[0, n - 1] = 1.0
        D[n - 1, 0] = 1.0
    return (D / axis.dx**2).tocsr()


def kinetic_1d(axis: Grid1D, mass: float) -> sp.csr_matrix:
    return (-(HBAR**2) / (2 * mass)) * second_difference(axis)


def assemble_hamiltonian(pot: PotentialSpec, grid: Grid2D) -> Hamiltonian:
    """``-(hbar^2/2m1) d1^2 - (hbar^2/2m2) d2^2 + V`` as a sparse symmetric matrix."""
    n1, n2 = grid.shape
    T1 = kinetic_1d(grid.axis1, pot.m1)
    T2 = kinetic_1d(grid.axis2, pot.m2)
    V = pot.on_grid(grid)
    H = sp.kron(T1, sp.identity(n2)) + sp.kron(sp.identity(n1), T2) + sp.diags(V.reshape(-1))
    return Hamiltonian(grid=grid, potential=pot, matrix=H.tocsr(), V=V)


def _normalize(grid: Grid2D, values: np.ndarray) -> np.ndarray:
    return values / np.sqrt(grid.integrate(np.abs(values) ** 2))


def _tag_degenerate(energies: np.ndarray, tol_degeneracy: float | None) -> list[str | None]:
    groups: list[list[int]] = []
    for i, e in enumerate(energies):
        tol = tol_degeneracy if tol_degeneracy is not None else 1e-6 * max(abs(e), 1e-12)
        if groups and abs(e - energies[groups[-1][-1]]) < tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    tags: list[str | None] = [None] * len(energies)
    for g, members in enumerate(groups):
        if len(members) > 1:
            for j, i in enumerate(members):
                tags[i] = f"deg{g}:{j}"
    return tags


def solve_eigenstate(H: Hamiltonian, target: float | None = None, k_subspace: int = 1, *,
                     tol_degeneracy: float | None = None, maxiter: int | None = None,
                     carrier=(0.0, 0.0)) -> list[Eigenstate]:
    """The ``k_subspace`` eigenstates closest to ``target`` (lowest if None).

    Shift-invert Lanczos (ARPACK) on the sparse matrix. Consecutive states
    closer than ``tol_degeneracy`` (default ``1e-6 |E|``) share a tag.
    """
    if target is not None and not np.isfinite(target):
        raise EigenSolveError("target energy must be finite")
    sigma = float(np.min(H.V)) - 1.0 if target is None else float(target)
    try:
        vals, vecs = eigsh(H.matrix, k=k_subspace, sigma=sigma, which="LM", maxiter=maxiter)
    except ArpackNoConvergence as exc:
        raise EigenSolveError(f"eigensolver did not converge near {sigma}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    tags = _tag_degenerate(vals, tol_degeneracy)
    states = []
    for E, v, tag in zip(vals, vecs.T, tags):
        values = _normalize(H.grid, v.reshape(H.grid.shape).astype(complex))
        E = H.expectation(values)
        states.append(Eigenstate(E=E, psi=ComplexField2D(H.grid, values, carrier), degeneracy_tag=tag,
                                 residual=H.residual(values, E)))
    return states


def local_eigenpairs(axis: Grid1D, mass: float, v: np.ndarray, n_states: int):
    """Lowest eigenpairs of the discrete 1D operator ``-(hbar^2/2m) d^2 + v`` on a box axis.

    Eigenvectors are trapezoid-normalized and signed so that the first
    significant sample with ``x > 0`` is positive (``phi_1 ~ x exp(-x^2/2)``).
    """
    if axis.periodic:
        raise ScenarioError("local eigenpairs need a box axis")
    c = HBAR**2 / (2 * mass * axis.dx**2)
    diag = 2 * c + np.asarray(v, dtype=float)
    off = np.full(axis.n_points - 1, -c)
    E, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, n_states - 1))
    out = []
    w = axis.quadrature_weights()
    for j in range(n_states):
        phi = vecs[:, j] / np.sqrt(np.sum(w * vecs[:, j] ** 2))
        right = phi[axis.points > 0]
        lead = right[np.argmax(np.abs(right) > 1e-3 * np.max(np.abs(phi)))]
        if lead < 0:
            phi = -phi
        out.append(phi)
    return E, out


def harmonic_potential(axis: Grid1D, mass: float, omega: float) -> np.ndarray:
    return 0.5 * mass * omega**2 * axis.points**2


def ring_kinetic(axis: Grid1D, mass: float, q) -> np.ndarray:
    """Eigenvalues of the periodic three-point kinetic operator on ``e^{i q x}``."""
    return (HBAR**2 / (mass * axis.dx**2)) * (1 - np.cos(np.asarray(q) * axis.dx))


def _finish(pot: PotentialSpec, grid: Grid2D, values: np.ndarray, E: float, carrier=(0.0, 0.0),
            tag=None) -> tuple[PotentialSpec, Eigenstate]:
    values = _normalize(grid, values)
    H = assemble_hamiltonian(pot, grid)
    return pot, Eigenstate(E=float(E), psi=ComplexField2D(grid, values, carrier),
                           degeneracy_tag=tag, residual=H.residual(values, E))


def vortex_oscillator(m: float = 1.0, omega: float = 1.0, half_width: float = 7.0, n: int = 256):
    """``|0,1> + i|1,0>``: stationary state with a vortex at the origin, E = 2 hbar omega."""
    axis = make_grid(-half_width, half_width, n, BOX)
    grid = Grid2D(axis, axis)
    E, (phi0, phi1) = local_eigenpairs(axis, m, harmonic_potential(axis, m, omega), 2)
    values = np.outer(phi0, phi1) + 1j * np.outer(phi1, phi0)
    pot = PotentialSpec(HARMONIC2D, m1=m, m2=m, omega1=omega, omega2=omega)
    return _finish(pot, grid, values, E[0] + E[1], tag="deg0:superposition")


def vortex_constituents(m: float = 1.0, omega: float = 1.0, half_width: float = 7.0, n: int = 256):
    """The two real members ``|0,1>`` and ``|1,0>`` of the vortex doublet."""
    axis = make_grid(-half_width, half_width, n, BOX)
    grid = Grid2D(axis, axis)
    E, (phi0, phi1) = local_eigenpairs(axis, m, harmonic_potential(axis, m, omega), 2)
    pot = PotentialSpec(HARMONIC2D, m1=m, m2=m, omega1=omega, omega2=omega)
    a = _finish(pot, grid, np.outer(phi0, phi1).astype(complex), E[0] + E[1], tag="deg0:0")[1]
    b = _finish(pot, grid, np.outer(phi1, phi0).astype(complex), E[0] + E[1], tag="deg0:1")[1]
    return pot, (a, b)


def ring_planewave_env(k: int = 8, m2: float = 10.0, m1: float = 1.0, omega1: float = 1.0,
                       half_width: float = 8.0, n1: int = 256, n2: int = 256,
                       ring_length: float = 2 * np.pi):
    """``phi0(x1) e^{i k x2}`` on box x ring; the environment moves uniformly."""
    axis1 = make_grid(-half_width, half_width, n1, BOX)
    axis2 = make_grid(0.0, ring_length, n2, PERIODIC)
    grid = Grid2D(axis1, axis2)
    v1 = harmonic_potential(axis1, m1, omega1)
    E1, (phi0,) = local_eigenpairs(axis1, m1, v1, 1)
    values = np.outer(phi0, np.exp(1j * k * axis2.points))
    pot = ring_plus_local(axis1, v1, m1=m1, m2=m2)
    E = E1[0] + ring_kinetic(axis2, m2, k)
    return _finish(pot, grid, values, E, carrier=(0.0, float(k)))


def frozen_ground(m1: float = 1.0, m2: float = 1.0, omega1: float = 1.0, omega2: float = 1.0,
                  coupling: float = 0.0, half_width: float = 6.0, n: int = 256):
    """Real ground state of ``harmonic2d``; every Bohmian velocity vanishes."""
    axis = make_grid(-half_width, half_width, n, BOX)
    grid = Grid2D(axis, axis)
    pot = PotentialSpec(HARMONIC2D, m1=m1, m2=m2, omega1=omega1, omega2=omega2, coupling=coupling)
    if coupling == 0.0:
        E1, (p1,) = local_eigenpairs(axis, m1, harmonic_potential(axis, m1, omega1), 1)
        E2, (p2,) = local_eigenpairs(axis, m2, harmonic_potential(axis, m2, omega2), 1)
        return _finish(pot, grid, np.outer(p1, p2).astype(complex), E1[0] + E2[0])
    (state,) = solve_eigenstate(assemble_hamiltonian(pot, grid), None, 1)
    values = state.psi.values
    values = values * np.sign(values.real[np.unravel_index(np.argmax(np.abs(values)), values.shape)])
    return pot, Eigenstate(state.E, state.psi.with_values(values.real.astype(complex)), None,
                           state.residual)


def coupled_ring_env(k: int = 20, m2: float = 50.0, epsilon: float = 0.1, m1: float = 1.0,
                     omega1: float = 1.0, half_width: float = 7.0, n1: int = 256, n2: int = 256,
                     window: int = 8, n_candidates: int = 6):
    """Eigenstate of ``m1 w^2 x1^2/2 + epsilon x1 cos x2`` continuing ``phi0(x1) e^{i k x2}``.

    The coupling only connects ring momenta ``q`` and ``q +- 1``, so the
    operator is block tridiagonal in ``q``. It is diagonalized (shift-invert)
    in the momentum window ``|q - k| <= window`` near ``E1 + K(k)``, and the
    candidate with the largest overlap on the unperturbed traveling state is
    kept. The truncation is checked through the full-grid residual.
    """
    axis1 = make_grid(-half_width, half_width, n1, BOX)
    axis2 = make_grid(0.0, 2 * np.pi, n2, PERIODIC)
    grid = Grid2D(axis1, axis2)
    v1 = harmonic_potential(axis1, m1, omega1)
    pot = ring_plus_local(axis1, v1, m1=m1, m2=m2, coupling=epsilon)

    qs = np.arange(k - window, k + window + 1)
    nq = len(qs)
    H1 = kinetic_1d(axis1, m1) + sp.diags(v1)
    blocks = [[None] * nq for _ in range(nq)]
    hop = sp.diags(0.5 * epsilon * axis1.points)
    for a, q in enumerate(qs):
        blocks[a][a] = H1 + ring_kinetic(axis2, m2, q) * sp.identity(n1)
        if a + 1 < nq:
            blocks[a][a + 1] = hop
            blocks[a + 1][a] = hop
    M = sp.bmat(blocks, format="csc")

    E1, (phi0,) = local_eigenpairs(axis1, m1, v1, 1)
    target = E1[0] + ring_kinetic(axis2, m2, k)
    try:
        vals, vecs = eigsh(M, k=n_candidates, sigma=float(target), which="LM")
    except ArpackNoConvergence as exc:
        raise EigenSolveError("coupled environment state did not converge") from exc
    w1 = axis1.quadrature_weights()
    centre = window
    overlaps = [abs(np.sum(w1 * phi0 * vecs[centre * n1:(centre + 1) * n1, j])) for j in range(len(vals))]
    j = int(np.argmax(overlaps))
    coeff = vecs[:, j].reshape(nq, n1)
    edge = max(np.abs(coeff[0]).max(), np.abs(coeff[-1]).max()) / np.abs(coeff).max()
    if edge > 1e-8:
        raise EigenSolveError(f"momentum window too narrow (edge weight {edge:.2e})")
    values = coeff.T @ np.exp(1j * np.outer(qs, axis2.points))
    values = values * np.exp(-1j * np.angle(values[np.argmax(np.abs(values[:, 0])), 0]))
    return _finish(pot, grid, values, vals[j], carrier=(0.0, float(k)))


def analytic_scenario(name: str, **params) -> tuple[PotentialSpec, Eigenstate]:
    if name not in ANALYTIC_SCENARIOS:
        raise ScenarioError(f"unknown analytic scenario {name!r}; choose from {ANALYTIC_SCENARIOS}")
    return build_scenario(name, **params)


def build_scenario(name: str, **params) -> tuple[PotentialSpec, Eigenstate]:
    builders = {
        "vortex_oscillator": vortex_oscillator,
        "ring_planewave_env": ring_planewave_env,
        "frozen_ground": frozen_ground,
        "coupled_ring_env": coupled_ring_env,
    }
    if name not in builders:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    return builders[name](**params)


SCENARIO_PARAMETERS = {
    "vortex_oscillator": dict(m=1.0, omega=1.0, half_width=7.0, n=256),
    "ring_planewave_env": dict(k=8, m2=10.0, m1=1.0, omega1=1.0, half_width=8.0, n1=256, n2=256),
    "frozen_ground": dict(m1=1.0, m2=1.0, omega1=1.0, omega2=1.0, coupling=0.0, half_width=6.0, n=256),
    "coupled_ring_env": dict(k=20, m2=50.0, epsilon=0.1, m1=1.0, omega1=1.0, half_width=7.0,
                             n1=256, n2=256, window=8),
}
