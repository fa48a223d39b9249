import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condbohm.fields import (
    ComplexField2D, FieldError, circulation, gradient, laplacian, polar_decompose, square_loop,
)
from condbohm.grid import BOX, HBAR, PERIODIC, Grid2D, GridError, make_grid
from condbohm.interp import FieldInterpolator, OutOfDomainError, interpolate


# --- grids -----------------------------------------------------------------

def test_periodic_spacing():
    assert make_grid(0, 2 * np.pi, 64, PERIODIC).dx == pytest.approx(2 * np.pi / 64, rel=1e-15)


def test_box_spacing():
    g = make_grid(-10, 10, 257, BOX)
    assert g.dx == pytest.approx(20 / 256, rel=1e-15)
    assert g.points[0] == -10 and g.points[-1] == pytest.approx(10)


@pytest.mark.parametrize("args", [(0, 0, 64, PERIODIC), (0, 1, 7, BOX), (0, math.inf, 64, BOX),
                                  (1, 0, 64, BOX), (0, 1, 63, PERIODIC), (0, 1, 64, "sphere")])
def test_bad_grids_rejected(args):
    with pytest.raises(GridError):
        make_grid(*args)


@given(st.floats(-50, 50), st.floats(0.1, 100), st.integers(8, 400), st.sampled_from([BOX, PERIODIC]))
def test_grid_invariants(x0, length, n, boundary):
    n += n % 2 if boundary == PERIODIC else 0
    g = make_grid(x0, x0 + length, n, boundary)
    assert g.dx > 0
    assert len(g.points) == n
    assert g.quadrature_weights().sum() == pytest.approx(length, rel=1e-12)
    r = g.refined()
    assert r.dx == pytest.approx(g.dx / 2, rel=1e-12)


# --- stencils ----------------------------------------------------------------

def _periodic(n):
    return make_grid(0, 2 * np.pi, n, PERIODIC)


def test_gradient_constant_and_linear():
    g = make_grid(-3, 5, 33)
    assert np.all(gradient(np.full(33, 2.5), g) == 0)
    np.testing.assert_allclose(gradient(2 * g.points - 1, g), 2.0, atol=1e-13)
    np.testing.assert_allclose(gradient(g.points ** 2, g), 2 * g.points, atol=1e-12)


def test_laplacian_constant_and_linear():
    g = make_grid(-3, 5, 33)
    assert np.allclose(laplacian(np.full(33, 2.5), g), 0)
    np.testing.assert_allclose(laplacian(3 * g.points + 1, g), 0, atol=1e-12)


@pytest.mark.parametrize("op,exact", [
    (gradient, lambda x, k: k * np.cos(k * x)),
    (laplacian, lambda x, k: -k ** 2 * np.sin(k * x)),
])
def test_stencil_second_order_periodic(op, exact):
    k = 3
    errs = []
    for n in (64, 128, 256):
        g = _periodic(n)
        errs.append(np.max(np.abs(op(np.sin(k * g.points), g) - exact(g.points, k))))
    for a, b in zip(errs, errs[1:]):
        assert 4 * 0.9 <= a / b <= 4 * 1.1


@pytest.mark.parametrize("op,exact", [
    (gradient, lambda x: np.cos(x) * np.exp(0.3 * x) + 0.3 * np.sin(x) * np.exp(0.3 * x)),
    (laplacian, lambda x: (0.09 - 1) * np.sin(x) * np.exp(0.3 * x) + 0.6 * np.cos(x) * np.exp(0.3 * x)),
])
def test_stencil_second_order_box_edges(op, exact):
    errs = []
    for n in (65, 129, 257):
        g = make_grid(-2, 3, n)
        f = np.sin(g.points) * np.exp(0.3 * g.points)
        errs.append(np.max(np.abs(op(f, g) - exact(g.points))))
    assert math.log2(errs[0] / errs[1]) > 1.8 and math.log2(errs[1] / errs[2]) > 1.8


def test_stencil_acts_along_requested_axis():
    grid = Grid2D(make_grid(-1, 1, 21), _periodic(32))
    x1, x2 = grid.mesh()
    f = x1 ** 2 * np.sin(x2)
    np.testing.assert_allclose(gradient(f, grid, 1), 2 * x1 * np.sin(x2), atol=1e-12)
    d2 = gradient(f, grid, 2)
    np.testing.assert_allclose(d2, x1 ** 2 * np.cos(x2), atol=0.01)


# --- polar decomposition -------------------------------------------------------

def _field(grid, values):
    return ComplexField2D(grid, values)


def test_polar_real_gaussian_has_zero_phase():
    grid = Grid2D(make_grid(-3, 3, 41), make_grid(-3, 3, 41))
    x1, x2 = grid.mesh()
    p = polar_decompose(_field(grid, np.exp(-(x1 ** 2 + x2 ** 2) / 2)))
    assert not p.node_mask.any()
    assert np.max(np.abs(p.S)) < 1e-14


def test_polar_plane_wave_ring_phase():
    k = 3
    grid = Grid2D(make_grid(-1, 1, 9), _periodic(64))
    x1, x2 = grid.mesh()
    p = polar_decompose(_field(grid, np.exp(1j * k * x2)))
    np.testing.assert_allclose(p.R, 1.0, atol=1e-15)
    # S = hbar*k*x2 + const modulo 2*pi*hbar (a winding ring phase has a seam somewhere)
    d = (p.S - HBAR * k * x2 - p.S[0, 0]) / (2 * np.pi * HBAR)
    np.testing.assert_allclose(d, np.round(d), atol=1e-12)
    _assert_tree_edges_local(p)


def _assert_tree_edges_local(p):
    """Along every spanning-tree edge the unwrapped phase step is below pi*hbar."""
    S = p.S.ravel()
    parent = p.tree_parent.ravel()
    has = parent >= 0
    assert has.any()
    assert np.max(np.abs(S[has] - S[parent[has]])) < np.pi * HBAR


def test_polar_vortex_circulation():
    grid = Grid2D(make_grid(-4, 4, 81), make_grid(-4, 4, 81))
    x1, x2 = grid.mesh()
    psi = (x2 + 1j * x1) * np.exp(-(x1 ** 2 + x2 ** 2) / 2)
    p = polar_decompose(_field(grid, psi))
    assert p.node_mask[40, 40]
    loop = square_loop(30, 30, 50, 50)
    assert abs(circulation(p.S, loop)) == pytest.approx(2 * np.pi * HBAR, abs=1e-10)
    # S = hbar*atan2(x1, x2) decreases when the loop runs counterclockwise in (x1, x2)
    assert circulation(p.S, loop) < 0
    assert circulation(p.S, loop[::-1]) > 0
    # loops not enclosing the node carry no circulation
    assert circulation(p.S, square_loop(50, 50, 70, 70)) == pytest.approx(0, abs=1e-10)


def test_polar_recomposition_and_local_unwrap(vortex):
    _, state = vortex
    p = polar_decompose(state.psi)
    ok = ~p.node_mask
    err = np.abs(p.recompose() - state.psi.values)[ok].max() / p.R.max()
    assert err < 1e-12
    _assert_tree_edges_local(p)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_polar_recomposition_random_fields(seed):
    r = np.random.default_rng(seed)
    grid = Grid2D(make_grid(0, 1, 12), _periodic(12))
    v = r.normal(size=grid.shape) + 1j * r.normal(size=grid.shape)
    p = polar_decompose(_field(grid, v))
    ok = ~p.node_mask
    assert np.max(np.abs(p.recompose() - v)[ok]) / p.R.max() < 1e-12
    # circulation around any small plaquette is an integer multiple of 2*pi*hbar
    for i, j in [(1, 1), (4, 7), (8, 2)]:
        c = circulation(p.S, square_loop(i, j, i + 1, j + 1))
        assert abs(c / (2 * np.pi * HBAR) - round(c / (2 * np.pi * HBAR))) < 1e-9


def test_polar_rejects_zero_field():
    grid = Grid2D(make_grid(0, 1, 8), make_grid(0, 1, 8))
    with pytest.raises(FieldError):
        polar_decompose(_field(grid, np.zeros(grid.shape)))


def test_complex_field_rejects_non_finite():
    grid = Grid2D(make_grid(0, 1, 8), make_grid(0, 1, 8))
    v = np.ones(grid.shape, complex)
    v[2, 3] = np.nan
    with pytest.raises(FieldError):
        ComplexField2D(grid, v)


# --- interpolation -------------------------------------------------------------

def _grid(n=33, periodic2=False):
    a2 = _periodic(n + n % 2) if periodic2 else make_grid(-2, 2.5, n)
    return Grid2D(make_grid(-1.5, 2, n), a2)


@pytest.mark.parametrize("periodic2", [False, True])
def test_interpolation_exact_at_grid_points(periodic2, rng):
    grid = _grid(periodic2=periodic2)
    f = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    x1, x2 = grid.mesh()
    it = FieldInterpolator(f, grid)
    vals = it.at(x1.ravel(), x2.ravel())
    assert np.array_equal(vals.reshape(grid.shape), f)


@settings(deadline=None)
@given(st.floats(-1.5, 2), st.floats(-2, 2.5))
def test_interpolation_exact_on_bilinear(x1, x2):
    grid = _grid()
    X1, X2 = grid.mesh()
    f = 0.3 - 1.2 * X1 + 2.1 * X2 + 0.7 * X1 * X2
    assert interpolate(f, (x1, x2), grid) == pytest.approx(0.3 - 1.2 * x1 + 2.1 * x2 + 0.7 * x1 * x2,
                                                           abs=1e-12)


def test_interpolation_third_order(rng):
    pts = rng.uniform([-1, -1.5], [1.5, 2.0], size=(400, 2))
    errs = []
    for n in (33, 65, 129):
        grid = _grid(n)
        X1, X2 = grid.mesh()
        it = FieldInterpolator(np.sin(X1) * np.cos(X2), grid)
        errs.append(np.max(np.abs(it.at(pts[:, 0], pts[:, 1]) - np.sin(pts[:, 0]) * np.cos(pts[:, 1]))))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) > 2.7


def test_interpolation_periodic_wrap():
    grid = _grid(32, periodic2=True)
    X1, X2 = grid.mesh()
    it = FieldInterpolator(np.cos(X2) + X1, grid)
    a = it.at(np.array([0.3]), np.array([1.0]))
    b = it.at(np.array([0.3]), np.array([1.0 + 2 * np.pi]))
    assert a[0] == pytest.approx(b[0], abs=1e-12)


def test_interpolation_out_of_domain():
    grid = _grid()
    with pytest.raises(OutOfDomainError):
        interpolate(np.zeros(grid.shape), (5.0, 0.0), grid)
