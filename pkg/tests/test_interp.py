import math

import numpy as np
import pytest
from scipy.integrate import solve_bvp
from scipy.interpolate import CubicHermiteSpline

from gmschauder import (
    FlowCache,
    InputError,
    InterpolationProblem,
    NotDifferentiableError,
    ProcessModel,
    SchauderBasis,
    UnsupportedModelError,
    basis_via_bvp,
    bridge_moments,
    dirichlet_energy,
    optimal_interpolant,
    solve_mu_bvp,
)
from gmschauder.interp import interpolant_energy, lower_orthonormalizer
from gmschauder.transforms import CoefficientField, construct

from conftest import STANDARD_MODELS, basis_for, flow_for

GRID = np.linspace(0.0, 1.0, 257)


def coupled_model() -> ProcessModel:
    """Two-dimensional model with time-varying, non-commuting coefficients."""
    return ProcessModel.generic(
        lambda t: np.array([[0.3 * t, 1.0], [-0.5, 0.2 + 0.4 * t * t]]),
        lambda t: np.array([[1.0 + 0.2 * t, 0.1], [0.3 * math.sin(3 * t), 0.8]]),
        2, 2,
        alpha_derivative=lambda t: np.array([[0.3, 0.0], [0.0, 0.8 * t]]),
        gamma_root_derivative=lambda t: np.array([[0.2, 0.0], [0.9 * math.cos(3 * t), 0.0]]),
    )


# --- energy ----------------------------------------------------------------------

@pytest.mark.parametrize("name", ["wiener", "ou", "rotation"])
def test_element_columns_have_unit_energy(name):
    basis = basis_for(name)
    for el in basis.elements(4):
        for j in range(basis.d):
            energy = dirichlet_energy(basis.flow, lambda s: el.psi(s)[..., j], breakpoints=el.breakpoints())
            assert energy == pytest.approx(1.0, abs=1e-8)


def test_energy_of_zero_and_of_identity():
    flow = flow_for("wiener")
    assert dirichlet_energy(flow, lambda s: np.zeros(s.shape + (1,))) == 0.0
    assert dirichlet_energy(flow, lambda s: s[..., None]) == pytest.approx(1.0, abs=1e-9)


def test_energy_needs_square_diffusion():
    with pytest.raises(UnsupportedModelError):
        dirichlet_energy(flow_for("iw2"), lambda s: np.zeros(s.shape + (2,)))


# --- optimal interpolation ------------------------------------------------------

def test_wiener_interpolant_is_piecewise_linear(rng):
    basis = basis_for("wiener")
    grid = basis.grid(3)
    values = np.concatenate([[0.0], rng.standard_normal(len(grid) - 1)])
    path = optimal_interpolant(InterpolationProblem(basis, 3, dict(zip(grid, values[:, None]))))
    np.testing.assert_allclose(path(GRID)[:, 0], np.interp(GRID, grid, values), atol=1e-12)


def test_integrated_wiener_interpolant_is_cubic_hermite(rng):
    basis = basis_for("iw2")
    grid = basis.grid(4)
    data = np.vstack([[0.0, 0.0], rng.standard_normal((len(grid) - 1, 2))])
    path = optimal_interpolant(InterpolationProblem(basis, 4, dict(zip(grid, data))))
    spline = CubicHermiteSpline(grid, data[:, 0], data[:, 1])
    values = path(GRID)
    np.testing.assert_allclose(values[:, 0], spline(GRID), atol=1e-12)
    np.testing.assert_allclose(values[:, 1], spline.derivative()(GRID), atol=1e-11)


@pytest.mark.parametrize("name", STANDARD_MODELS)
def test_element_is_a_fixed_point(name):
    basis = basis_for(name)
    el = basis.element(2, 1)
    path = optimal_interpolant(InterpolationProblem.from_function(basis, 3, lambda t: el.psi(t)[:, 0]))
    np.testing.assert_allclose(path(GRID), el.psi(GRID)[:, :, 0], atol=1e-10)


def test_interpolation_data_validation():
    basis = basis_for("wiener")
    with pytest.raises(InputError):
        InterpolationProblem(basis, 3, {0.5: [1.0], 1.0: [0.0]})
    with pytest.raises(InputError):
        InterpolationProblem(basis, 2, {0.0: [1.0], 0.5: [1.0], 1.0: [0.0]})


@pytest.mark.parametrize("name", ["wiener", "ou", "rotation"])
def test_interpolant_minimises_energy(name, rng):
    basis = basis_for(name)
    d = basis.d
    depth = 4
    grid = basis.grid(depth)
    data = {float(t): rng.standard_normal(d) if t > 0 else np.zeros(d) for t in grid}
    best = optimal_interpolant(InterpolationProblem(basis, depth, data))
    best_energy = interpolant_energy(best)
    cells = np.diff(grid).min()
    for trial in range(50):
        if trial % 2:
            # finer Schauder levels vanish on the data grid
            extra = {(n, k): 0.3 * rng.standard_normal(d) for n in range(depth, depth + 2) for k in range(2 ** (n - 1))}
            field = CoefficientField(d, {**best.coefficients.values, **extra})
            kinks = basis.grid(depth + 2)
            energy = dirichlet_energy(basis.flow, lambda s: construct(basis, field, s), breakpoints=kinks)
        else:
            freq = rng.integers(1, 4)
            amp = 0.2 * rng.standard_normal(d)
            bump = lambda s: np.sin(np.pi * freq * s / cells)[..., None] * amp
            energy = dirichlet_energy(basis.flow, lambda s: best(s) + bump(s), breakpoints=grid)
            np.testing.assert_allclose(bump(grid), 0.0, atol=1e-12)
        assert energy > best_energy


# --- boundary-value route ---------------------------------------------------------

def test_wiener_profile_is_linear():
    profile = solve_mu_bvp(flow_for("wiener"), 0.25, 0.5, 1.0)
    t = np.linspace(0.25, 0.5, 9)
    np.testing.assert_allclose(profile.mu_l(t)[:, 0, 0], (t - 0.25) / 0.25, atol=1e-12)
    t = np.linspace(0.5, 1.0, 9)
    np.testing.assert_allclose(profile.mu_r(t)[:, 0, 0], (1.0 - t) / 0.5, atol=1e-12)


@pytest.mark.parametrize("name", ["ou", "rotation"])
def test_profile_matches_bridge_weights(name):
    flow = flow_for(name)
    l, m, r = 0.125, 0.3, 0.5
    profile = solve_mu_bvp(flow, l, m, r)
    for t in np.linspace(l, m, 7):
        np.testing.assert_allclose(profile.mu_l(t), bridge_moments(flow, t, l, m).mu_r, atol=1e-6)
    for t in np.linspace(m, r, 7):
        np.testing.assert_allclose(profile.mu_r(t), bridge_moments(flow, t, m, r).mu_l, atol=1e-6)
    np.testing.assert_allclose(profile.mu_l(m), np.eye(flow.d), atol=1e-12)
    np.testing.assert_allclose(profile.mu_r(m), np.eye(flow.d), atol=1e-12)


@pytest.mark.parametrize("form", ["first_order", "second_order"])
def test_both_profile_forms_match_bridge_on_coupled_model(form):
    flow = FlowCache(coupled_model())
    l, m, r = 0.125, 0.3, 0.5
    profile = solve_mu_bvp(flow, l, m, r, form=form)
    for t in np.linspace(l, m, 9):
        np.testing.assert_allclose(profile.mu_l(t), bridge_moments(flow, t, l, m).mu_r, atol=1e-9)
    for t in np.linspace(m, r, 9):
        np.testing.assert_allclose(profile.mu_r(t), bridge_moments(flow, t, m, r).mu_l, atol=1e-9)


def _second_order_profile(model, l, m, coefficient):
    """Left profile of u'' = (alpha + K) u' + (alpha' - K alpha) u solved with scipy."""
    d = model.d

    def rhs(t, y):
        out = np.empty_like(y)
        for q, s in enumerate(t):
            a = model.alpha_at(s)
            k = coefficient(s)
            u, du = y[:d, q], y[d:, q]
            out[:d, q] = du
            out[d:, q] = (a + k) @ du + (model.alpha_prime_at(s) - k @ a) @ u
        return out

    mesh = np.linspace(l, m, 41)
    columns = []
    for j in range(d):
        target = np.eye(d)[j]
        bc = lambda ya, yb: np.concatenate([ya[:d], yb[:d] - target])
        sol = solve_bvp(rhs, bc, mesh, np.zeros((2 * d, mesh.size)), tol=1e-10, max_nodes=100000)
        assert sol.success
        columns.append(sol.sol)
    return lambda t: np.stack([c(t)[:d] for c in columns], axis=-1)


def test_corrected_euler_lagrange_coefficient_against_transposed_variant():
    model = coupled_model()
    flow = FlowCache(model)
    l, m = 0.125, 0.3

    def corrected(s):
        gam = model.gamma_at(s)
        return (model.gamma_prime_at(s) - gam @ model.alpha_at(s).T) @ np.linalg.inv(gam)

    def transposed(s):
        gam = model.gamma_at(s)
        return np.linalg.solve(gam, model.alpha_at(s).T @ gam - model.gamma_prime_at(s))

    t = 0.2
    oracle = bridge_moments(flow, t, l, m).mu_r
    good = _second_order_profile(model, l, m, corrected)(t)
    bad = _second_order_profile(model, l, m, transposed)(t)
    assert np.abs(good - oracle).max() < 1e-6
    assert np.abs(bad - oracle).max() > 1e-3


def test_second_order_form_needs_derivatives_and_square_noise():
    tabulated = ProcessModel.tabulated([0.0, 1.0], [[[0.0]], [[1.0]]], [[[1.0]], [[1.0]]])
    with pytest.raises(NotDifferentiableError):
        solve_mu_bvp(FlowCache(tabulated), 0.0, 0.5, 1.0, form="second_order")
    with pytest.raises(UnsupportedModelError):
        solve_mu_bvp(flow_for("iw2"), 0.0, 0.5, 1.0, form="second_order")
    with pytest.raises(InputError):
        solve_mu_bvp(flow_for("wiener"), 0.5, 0.5, 1.0)


def test_lower_orthonormalizer(rng):
    a = rng.standard_normal((4, 4))
    gram = a @ a.T + 0.1 * np.eye(4)
    factor = lower_orthonormalizer(gram)
    np.testing.assert_allclose(factor.T @ gram @ factor, np.eye(4), atol=1e-12)
    assert np.allclose(np.triu(factor, 1), 0.0) and np.all(np.diag(factor) > 0)


@pytest.mark.parametrize("name", STANDARD_MODELS)
def test_two_routes_agree(name):
    basis = basis_for(name)
    worst = 0.0
    for el in basis.elements(5):
        other = basis_via_bvp(basis.flow, basis.tree, *el.index)
        worst = max(worst, np.abs(other.psi(GRID) - el.psi(GRID)).max(), np.abs(other.phi(GRID) - el.phi(GRID)).max())
        np.testing.assert_allclose(other.L, el.L, atol=1e-6)
        np.testing.assert_allclose(other.R, el.R, atol=1e-6)
    assert worst <= 1e-6


def test_wiener_first_level_routes_agree_closely():
    basis = basis_for("wiener")
    other = basis_via_bvp(basis.flow, basis.tree, 1, 0)
    assert np.abs(other.psi(GRID) - basis.element(1, 0).psi(GRID)).max() <= 1e-8


def test_rotation_bvp_element_is_rotated_hat():
    basis = basis_for("rotation")
    el = basis_via_bvp(basis.flow, basis.tree, 2, 0)
    for t in np.linspace(0, 0.5, 17):
        c, s = math.cos(t - 0.25), math.sin(t - 0.25)
        hat = math.sqrt(2) * (t if t <= 0.25 else 0.5 - t)
        np.testing.assert_allclose(el.psi(t), hat * np.array([[c, s], [-s, c]]), atol=1e-9)
