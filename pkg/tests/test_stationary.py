import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condbohm.fields import ComplexField2D, polar_decompose
from condbohm.grid import BOX, HBAR, PERIODIC, Grid2D, make_grid
from condbohm.stationary import (
    HARMONIC2D, RING_FREE, EigenSolveError, PotentialSpec, ScenarioError, analytic_scenario,
    assemble_hamiltonian, build_scenario, coupled_ring_env, frozen_ground, ring_kinetic,
    ring_planewave_env, solve_eigenstate, vortex_constituents, vortex_oscillator,
)


def _ring_grid(n1=32, n2=32):
    return Grid2D(make_grid(0, 2 * np.pi, n1, PERIODIC), make_grid(0, 2 * np.pi, n2, PERIODIC))


def _independent_residual(pot, state):
    """Residual recomputed from a freshly assembled operator."""
    H = assemble_hamiltonian(pot, state.psi.grid)
    return H.residual(state.psi.values, state.E)


# --- assemble_hamiltonian --------------------------------------------------------

def test_kinetic_annihilates_constant():
    grid = _ring_grid()
    H = assemble_hamiltonian(PotentialSpec(RING_FREE), grid)
    assert np.max(np.abs(H.apply(np.ones(grid.shape)))) < 1e-12


@pytest.mark.parametrize("k", [1, 2, 5])
def test_plane_wave_discrete_dispersion(k):
    grid = _ring_grid(64, 16)
    x1, _ = grid.mesh()
    psi = np.exp(1j * k * x1)
    H = assemble_hamiltonian(PotentialSpec(RING_FREE, m1=1.0), grid)
    dx = grid.axis1.dx
    lam = HBAR ** 2 * 2 * (1 - math.cos(k * dx)) / (2 * dx ** 2)
    np.testing.assert_allclose(H.apply(psi), lam * psi, atol=1e-10)
    assert lam == pytest.approx(HBAR ** 2 * k ** 2 / 2, rel=(k * dx) ** 2 / 12 * 1.01)


def test_harmonic_gaussian_residual_second_order():
    pot = PotentialSpec(HARMONIC2D)
    res = []
    for n in (65, 129, 257):
        axis = make_grid(-8, 8, n)
        grid = Grid2D(axis, axis)
        x1, x2 = grid.mesh()
        res.append(assemble_hamiltonian(pot, grid).residual(np.exp(-(x1 ** 2 + x2 ** 2) / 2), 1.0))
    for a, b in zip(res, res[1:]):
        assert math.log2(a / b) == pytest.approx(2.0, abs=0.1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.booleans())
def test_hamiltonian_is_hermitian(seed, periodic):
    r = np.random.default_rng(seed)
    if periodic:
        grid = _ring_grid(16, 12)
        pot = PotentialSpec(RING_FREE, m1=0.7, m2=3.0)
    else:
        axis = make_grid(-3, 3, 15)
        grid = Grid2D(axis, axis)
        pot = PotentialSpec(HARMONIC2D, m1=0.7, m2=3.0, omega1=1.3, coupling=0.4)
    phi, chi = (r.normal(size=grid.shape) + 1j * r.normal(size=grid.shape) for _ in range(2))
    if not periodic:
        for f in (phi, chi):
            f[[0, -1], :] = 0
            f[:, [0, -1]] = 0
    H = assemble_hamiltonian(pot, grid)
    lhs = np.vdot(phi, H.apply(chi))
    rhs = np.vdot(H.apply(phi), chi)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


# --- solve_eigenstate ----------------------------------------------------------------

def test_embedded_oscillator_ground_energy():
    axis = make_grid(-8, 8, 129)
    grid = Grid2D(axis, axis)
    (state,) = solve_eigenstate(assemble_hamiltonian(PotentialSpec(HARMONIC2D), grid))
    # E0 = (n1 + n2 + 1) hbar omega = 1, shifted by the stencil's dispersion:
    # each axis contributes -(dx^2/24) <p^4> = -(dx^2/24)(3/4).
    dx = axis.dx
    assert state.E == pytest.approx(1.0, abs=1e-3)
    assert state.E == pytest.approx(1.0 - 2 * (dx ** 2 / 24) * 0.75, abs=1e-5)
    assert state.degeneracy_tag is None
    assert state.residual < 1e-6
    assert state.psi.norm2() == pytest.approx(1.0, abs=1e-12)


def test_ring_doublet_degenerate():
    grid = _ring_grid(48, 48)
    states = solve_eigenstate(assemble_hamiltonian(PotentialSpec(RING_FREE), grid), k_subspace=5)
    E = np.array([s.E for s in states])
    assert E[0] == pytest.approx(0.0, abs=1e-10)
    assert states[0].degeneracy_tag is None
    exact = ring_kinetic(grid.axis1, 1.0, 1.0) / 2 * 2  # (1 - cos dx) / dx^2
    np.testing.assert_allclose(E[1:], exact, rtol=1e-9)
    assert exact == pytest.approx(0.5, rel=grid.axis1.dx ** 2 / 12 * 1.01)
    tags = [s.degeneracy_tag for s in states[1:]]
    assert all(t is not None for t in tags)
    assert len({t.split(":")[0] for t in tags}) == 1  # one subspace
    assert len(set(tags)) == 4  # four distinct members


def test_solver_rejects_non_finite_target():
    H = assemble_hamiltonian(PotentialSpec(RING_FREE), _ring_grid(16, 16))
    with pytest.raises(EigenSolveError):
        solve_eigenstate(H, target=float("nan"))


# --- analytic scenarios -----------------------------------------------------------------

@pytest.mark.parametrize("name", ["vortex_oscillator", "ring_planewave_env", "frozen_ground"])
def test_analytic_scenario_residual(name):
    pot, state = analytic_scenario(name)
    assert state.residual < 1e-8
    assert _independent_residual(pot, state) < 1e-8
    assert state.psi.norm2() == pytest.approx(1.0, abs=1e-12)


def test_vortex_energy_converges_to_two():
    errs = []
    for n in (64, 127, 253):
        _, state = vortex_oscillator(n=n)
        errs.append(abs(state.E - 2.0) / 2.0)
    _, state = vortex_oscillator()
    assert abs(state.E - 2.0) / 2.0 < 1e-3
    for a, b in zip(errs, errs[1:]):
        assert a / b == pytest.approx(4.0, rel=0.1)


def test_vortex_closed_form():
    _, state = vortex_oscillator(n=128)
    x1, x2 = state.psi.grid.mesh()
    exact = (x2 + 1j * x1) * np.exp(-(x1 ** 2 + x2 ** 2) / 2)
    exact /= np.sqrt(state.psi.grid.integrate(np.abs(exact) ** 2))
    assert np.max(np.abs(state.psi.values - exact)) < 5e-3


def test_vortex_constituents_share_energy():
    pot, (a, b) = vortex_constituents(n=128)
    assert a.E == b.E
    for s in (a, b):
        assert s.residual < 1e-8
        assert _independent_residual(pot, s) < 1e-8
        assert np.all(s.psi.values.imag == 0)


def test_ring_planewave_energy():
    k, m2, n2 = 8, 10.0, 128
    pot, state = ring_planewave_env(k=k, m2=m2, n1=128, n2=n2)
    ax2 = state.psi.grid.axis2
    env = float(ring_kinetic(ax2, m2, k))
    assert env == pytest.approx(HBAR ** 2 * k ** 2 / (2 * m2), rel=(k * ax2.dx) ** 2 / 12 * 1.01)
    # factorized: |psi| independent of x2
    R = np.abs(state.psi.values)
    assert np.max(np.abs(R - R[:, :1])) < 1e-14
    # E - env is the ground energy of the local oscillator (1/2 up to stencil error)
    assert state.E - env == pytest.approx(0.5, abs=1e-3)


def test_frozen_ground_has_zero_phase():
    _, state = frozen_ground(n=96)
    p = polar_decompose(state.psi)
    ok = ~p.node_mask
    assert np.max(np.abs(p.S[ok])) < 1e-12
    assert state.degeneracy_tag is None


def test_coupled_environment_state():
    pot, state = coupled_ring_env(n1=128, n2=128)
    assert _independent_residual(pot, state) < 1e-6
    assert pot.coupling == 0.1 and pot.m2 == 50.0
    # a traveling state: substantial overlap with the k = 20 plane wave
    ax2 = state.psi.grid.axis2
    proj = np.abs(np.sum(state.psi.values * np.exp(-20j * ax2.points)[None, :], axis=1)) * ax2.dx
    total = np.sqrt(np.sum(np.abs(state.psi.values) ** 2, axis=1) * ax2.dx * ax2.length)
    assert np.sum(proj ** 2) / np.sum(total ** 2) > 0.95


def test_unknown_scenario_rejected():
    with pytest.raises(ScenarioError):
        build_scenario("hydrogen")
    with pytest.raises(ScenarioError):
        analytic_scenario("coupled_ring_env")


def test_potential_rejects_bad_masses():
    with pytest.raises(ScenarioError):
        PotentialSpec(HARMONIC2D, m1=0.0)
