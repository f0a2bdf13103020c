import numpy as np
import pytest

from stokes_mg.basis import (child_injection, child_injection_1d, gauss_points, legendre_1d,
                             legendre_1d_deriv, multi_indices, reference_matrices,
                             scale_to_element, tensor_eval)


@pytest.mark.parametrize("q", [0, 1, 3, 5])
def test_legendre_modes_orthonormal_on_unit_interval(q):
    x, w = gauss_points(q + 2)
    phi = legendre_1d(q, x)
    np.testing.assert_allclose((phi * w) @ phi.T, np.eye(q + 1), atol=1e-13)


def test_legendre_derivative_matches_finite_difference():
    xi = np.linspace(0.05, 0.95, 7)
    eps = 1e-6
    fd = (legendre_1d(4, xi + eps) - legendre_1d(4, xi - eps)) / (2 * eps)
    np.testing.assert_allclose(legendre_1d_deriv(4, xi), fd, atol=1e-7)


def test_multi_indices_axis0_fastest():
    idx = multi_indices(1, 2)
    np.testing.assert_array_equal(idx, [[0, 0], [1, 0], [0, 1], [1, 1]])


@pytest.mark.parametrize("d", [2, 3])
def test_reference_mass_is_identity_and_pressure_space_nested(d):
    ref = reference_matrices(2, d)
    np.testing.assert_allclose(ref.M, np.eye(ref.nv), atol=1e-13)
    assert ref.Mbar.shape == (ref.np_, ref.np_)
    assert ref.n == d * 3 ** d + 2 ** d


def test_broken_gradient_differentiates_polynomials():
    # u = x^2 y on the reference square, du/dx = 2 x y
    ref = reference_matrices(2, 2)
    x, w = gauss_points(4)
    V = tensor_eval(2, 2, x)
    X, Y = np.meshgrid(x, x, indexing="xy")
    W = np.outer(w, w).reshape(-1)
    u = (X ** 2 * Y).reshape(-1)
    coef = V @ (W * u)
    dudx = V.T @ (ref.G_broken[0] @ coef)
    np.testing.assert_allclose(dudx, (2 * X * Y).reshape(-1), atol=1e-12)


def test_scaling_to_element():
    ref = reference_matrices(1, 2)
    el = scale_to_element(ref, 0.25, mu_e=3.0, rho_e=2.0)
    np.testing.assert_allclose(el.M_mu, 3.0 * 0.0625 * np.eye(4), atol=1e-15)
    np.testing.assert_allclose(el.G_broken[1], 4.0 * ref.G_broken[1])
    with pytest.raises(ValueError):
        scale_to_element(ref, -1.0)


@pytest.mark.parametrize("q,child", [(2, 0), (3, 1)])
def test_child_injection_reproduces_parent_polynomial(q, child):
    rng = np.random.default_rng(q)
    c = rng.standard_normal(q + 1)
    xi = np.linspace(0, 1, 9)
    parent_vals = c @ legendre_1d(q, 0.5 * (xi + child))
    child_vals = (child_injection_1d(q, child) @ c) @ legendre_1d(q, xi)
    np.testing.assert_allclose(child_vals, parent_vals, atol=1e-12)


def test_child_injection_is_orthogonal_up_to_scale():
    # the 2^d children together carry the parent's L2 norm: sum_c P_c^T P_c = 2^d I
    P = [child_injection(2, 2, (a, b)) for a in (0, 1) for b in (0, 1)]
    np.testing.assert_allclose(sum(p.T @ p for p in P), 4 * np.eye(9), atol=1e-12)


def test_invalid_degree_rejected():
    with pytest.raises(ValueError):
        reference_matrices(0, 2)
