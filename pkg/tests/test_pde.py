import math

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from chaostemp.fields import FieldSpec, gauss_hermite
from chaostemp.measure import ParisiMeasure
from chaostemp.mixture import MixtureSpec
from chaostemp.pde import (
    GridError,
    PdeGrid,
    boundary_logch,
    psi,
    psi_distinctness,
    psi_fd,
    solve_from_boundary,
    solve_phi,
    solve_phi_coupled,
)

SK = MixtureSpec({2: 1.0})
ONE = ParisiMeasure.constant(1.0)
ZERO = ParisiMeasure.constant(0.0)
RSB = ParisiMeasure((0.5,), (0.3, 1.0))


def logch(y):
    y = np.abs(y)
    return y + np.log1p(np.exp(-2 * y)) - math.log(2)


def test_mu_one_closed_form():
    # E ch(beta(h + z sqrt(xi'(1)))) = ch(beta h) exp(beta^2 xi'(1) / 2)
    assert solve_phi(SK, ONE, 1.0, 0.0).phi0 == pytest.approx(1.0, abs=1e-6)
    h = 0.4
    assert solve_phi(SK, ONE, 1.0, h).phi0 == pytest.approx(1.0 + math.log(math.cosh(h)), abs=1e-6)


def test_mu_zero_matches_independent_quadrature():
    z, w = np.polynomial.hermite_e.hermegauss(61)
    w = w / w.sum()
    oracle = float(w @ logch(z * math.sqrt(2.0)))
    assert solve_phi(SK, ZERO, 1.0, 0.0).phi0 == pytest.approx(oracle, abs=1e-6)


def test_boundary_slice_is_log_cosh():
    sol = solve_phi(SK, RSB, 1.3, 0.2)
    np.testing.assert_allclose(sol.phi_at(1.0), logch(1.3 * (0.2 + sol.x)), atol=1e-13)
    np.testing.assert_allclose(psi(sol, 1.0, sol.x), np.tanh(1.3 * (0.2 + sol.x)), atol=1e-13)


def test_psi_bounds_and_odd_symmetry():
    sol = solve_phi(SK, RSB, 1.5, 0.0)
    assert np.abs(sol.dphi).max() <= 1.5 + 1e-9
    for q in sol.qs:
        row = sol.dphi_at(q)
        np.testing.assert_allclose(row, -row[::-1], atol=1e-10)
        assert abs(sol.dphi_at(q, 0.0)) < 1e-10


def test_phi_convex_in_x():
    sol = solve_phi(SK, RSB, 1.5, 0.1)
    for row in sol.phi:
        assert np.diff(row, 2).min() >= -1e-8 * np.abs(row).max()


def test_psi_matches_finite_difference_of_phi():
    sol = solve_phi(SK, RSB, 1.0, 0.0)
    inner = slice(10, -10)
    np.testing.assert_allclose(psi_fd(sol, 0.0)[inner], psi(sol, 0.0, sol.x)[inner], atol=1e-4)


def explicit_fd(spec, mu, beta, dx=0.02, dq=1e-4, half=8.0):
    """Independent oracle: explicit finite differences for the Parisi PDE backward in q."""
    x = np.arange(-half, half + dx / 2, dx)
    phi = logch(beta * x)
    steps = int(round(1.0 / dq))
    for k in range(steps, 0, -1):
        q = k * dq
        m = mu.cdf(q - dq)
        c = 0.5 * spec.xi2(q - 0.5 * dq)
        ext = np.concatenate([[2 * phi[0] - phi[1]], phi, [2 * phi[-1] - phi[-2]]])
        pxx = (ext[2:] - 2 * ext[1:-1] + ext[:-2]) / dx**2
        px = (ext[2:] - ext[:-2]) / (2 * dx)
        phi = phi + dq * c * (pxx + m * px**2)
    return float(phi[len(x) // 2])


def test_cole_hopf_agrees_with_explicit_scheme():
    oracle = explicit_fd(SK, RSB, 1.0)
    assert solve_phi(SK, RSB, 1.0, 0.0).phi0 == pytest.approx(oracle, abs=1e-4)


def test_grid_refinement_changes_phi0_little():
    spec = MixtureSpec({2: 1.0, 4: 0.5})
    grid = PdeGrid.default(spec, 1.3)
    a = solve_phi(spec, RSB, 1.3, 0.2, grid).phi0
    b = solve_phi(spec, RSB, 1.3, 0.2, grid.refined(2)).phi0
    assert abs(a - b) <= 1e-5


def test_monotone_in_boundary_data():
    grid = PdeGrid.default(SK, 1.0)
    base = boundary_logch(1.0, 0.0)

    def bumped(x):
        f, df = base(x)
        x = np.asarray(x, dtype=float)
        return f + 0.05 * np.exp(-x * x), df - 0.1 * x * np.exp(-x * x)

    lo = solve_from_boundary(SK, RSB, grid, 1.0, base, 1.0)
    hi = solve_from_boundary(SK, RSB, grid, 1.0, bumped, 1.0)
    assert np.all(hi.phi >= lo.phi - 1e-12)
    assert hi.phi0 > lo.phi0


def test_grid_validation():
    with pytest.raises(GridError):
        PdeGrid(1.0, -1.0)
    with pytest.raises(GridError):
        PdeGrid(0.5, 2.0)
    with pytest.raises(GridError):
        solve_phi(SK, ONE, 2.0, 0.0, PdeGrid(-1.0, 1.0, 0.01))


def test_coupled_v_zero_is_sum_of_single_systems():
    fields = FieldSpec.fixed(0.1, -0.2)
    cs = solve_phi_coupled(SK, ParisiMeasure.constant(0.0), 1.0, 1.3, 0.0, RSB, RSB, fields)
    a = solve_phi(SK, RSB, 1.0, 0.1, PdeGrid.default(SK, 2.3)).phi0
    b = solve_phi(SK, RSB, 1.3, -0.2, PdeGrid.default(SK, 2.3)).phi0
    assert cs.value == pytest.approx(a + b, abs=1e-10)
    assert cs.phi_sum0 == pytest.approx(a + b, abs=1e-10)


def test_coupled_mu_zero_is_heat_propagation():
    v = 0.4
    grid = PdeGrid.default(SK, 2.3)
    cs = solve_phi_coupled(SK, ParisiMeasure.constant(0.0), 1.0, 1.3, v, RSB, RSB, FieldSpec.fixed(0.0), grid)
    _, s1, s2 = cs.solutions[0]
    z, w = gauss_hermite(61)
    pts = z * math.sqrt(SK.xi1(v))
    spline = CubicSpline(s1.x, s1.phi_at(v) + s2.phi_at(v))
    oracle = float(w @ spline(pts))
    assert cs.value == pytest.approx(oracle, abs=1e-6)


def test_coupled_equal_systems_inequality():
    mu = ParisiMeasure((0.3, 0.6), (0.2, 0.6, 1.0))
    v = 0.5
    cs = solve_phi_coupled(SK, mu.restrict(v, 0.5), 1.2, 1.2, v, mu, mu, FieldSpec.fixed(0.2))
    assert cs.value <= cs.phi_sum0 + 1e-12
    assert np.abs(cs.solutions[0][0].dphi).max() <= 2.4 + 1e-9


def test_distinctness_identical_problems_is_zero():
    grid = PdeGrid.default(SK, 2.0)
    a = solve_phi(SK, RSB, 1.0, 0.0, grid)
    b = solve_phi(SK, RSB, 1.0, 0.0, grid)
    assert psi_distinctness(a, b).sup < 1e-8


def test_distinctness_far_field_dominates():
    grid = PdeGrid.default(SK, 3.0)
    a = solve_phi(SK, ParisiMeasure((0.12, 0.35), (0.0, 0.24, 1.0)), 1.0, 0.0, grid)
    b = solve_phi(SK, ParisiMeasure((0.29, 0.78), (0.0, 0.26, 1.0)), 2.0, 0.0, grid)
    d = psi_distinctness(a, b)
    assert d.sup > 1e-3
    assert d.sup_far >= d.sup_near
