import numpy as np
import pytest

from stokes_mg.assembly import (SourceData, assemble_rhs, assemble_stokes, ell_count,
                                field_coefficients, kernel_basis, upwind_lambda)
from stokes_mg.mesh import BoxPhase, build_mesh
from stokes_mg.smoother import least_squares_shape

CASES = [(d, bc, g) for d in (2, 3) for bc in ("periodic", "dirichlet", "stress") for g in (0, 1)]


def _op(d, bc, gamma, n=4, p=2, **kw):
    return assemble_stokes(build_mesh(d, n, bc, kw.pop("phase", None)), p, gamma, **kw)


def _nullity(A, rtol=1e-10):
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s < rtol * s[0]))


@pytest.mark.parametrize("d,bc,gamma", CASES)
def test_symmetric(d, bc, gamma):
    A = _op(d, bc, gamma, n=2 if d == 3 else 4, p=1).to_dense()
    assert np.linalg.norm(A - A.T) <= 1e-12 * np.linalg.norm(A)


@pytest.mark.parametrize("d,bc,gamma", CASES)
def test_kernel_matches_analytic_basis(d, bc, gamma):
    op = _op(d, bc, gamma, n=2 if d == 3 else 4, p=1)
    A = op.to_dense()
    K = kernel_basis(op)
    expected = {"periodic": d + 1, "dirichlet": 1,
                "stress": d + (d * (d - 1) // 2 if gamma else 0)}[bc]
    assert len(K) == expected
    assert _nullity(A) == expected
    if len(K):
        assert np.abs(A @ K.T).max() < 1e-10 * np.abs(A).max()


def test_unsteady_has_no_velocity_kernel():
    op = _op(2, "periodic", 0, delta=0.1, density=(1.0,))
    assert len(kernel_basis(op)) == 1
    assert _nullity(op.to_dense()) == 1


@pytest.mark.parametrize("d,gamma", [(2, 0), (2, 1), (3, 0), (3, 1)])
def test_stencil_size(d, gamma):
    op = _op(d, "periodic", gamma, n=4, p=1)
    m, n = least_squares_shape(op, 0)
    assert n == d * 2 ** d + 1
    assert m == n + d * ell_count(d, gamma)


def test_block_size():
    for d, p in [(2, 1), (2, 3), (3, 2)]:
        op = _op(d, "periodic", 0, n=2, p=p)
        assert op.n == d * (p + 1) ** d + p ** d


def test_viscous_part_scales_with_viscosity():
    a = _op(2, "dirichlet", 1, viscosity=(1.0,))
    b = _op(2, "dirichlet", 1, viscosity=(7.5,))
    np.testing.assert_allclose(b.viscous.to_dense(), 7.5 * a.viscous.to_dense(), rtol=1e-12,
                               atol=1e-12)
    # pressure coupling does not depend on viscosity
    Da, Db = a.to_dense(), b.to_dense()
    nv = a.nv
    vel = np.concatenate([np.arange(e * a.n, e * a.n + 2 * nv) for e in range(16)])
    pres = np.setdiff1d(np.arange(Da.shape[0]), vel)
    np.testing.assert_allclose(Db[np.ix_(vel, pres)], Da[np.ix_(vel, pres)], atol=1e-14)


def test_upwind_lambda():
    assert upwind_lambda(1.0, 2.0) == 0.0
    assert upwind_lambda(2.0, 1.0) == 1.0
    assert upwind_lambda(3.0, 3.0) == 0.5
    with pytest.raises(ValueError):
        upwind_lambda(0.0, 1.0)


def _solve(op, b):
    A = op.to_dense()
    K = kernel_basis(op)
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    return x if not len(K) else x - K.T @ (K @ x)


@pytest.mark.parametrize("gamma", [0, 1])
def test_linear_shear_flow_reproduced_with_dirichlet_data(gamma):
    # u = (y, 0), p = 0 solves Stokes with zero forcing in both forms
    op = _op(2, "dirichlet", gamma, n=4, p=2)
    src = SourceData(g_dirichlet=lambda x, nrm: np.stack([x[:, 1], 0 * x[:, 0]], axis=1))
    x = _solve(op, assemble_rhs(op, src)).reshape(16, op.n)
    nv = op.nv
    exact = field_coefficients(op.level, op.degree, (0.0, (0.0, 1.0)))
    np.testing.assert_allclose(x[:, :nv], exact, atol=1e-10)
    np.testing.assert_allclose(x[:, nv:], 0.0, atol=1e-10)


def test_hydrostatic_pressure_balances_uniform_force():
    # f = grad p with p = x - 1/2 gives u = 0 under Dirichlet walls
    op = _op(2, "dirichlet", 1, n=4, p=2)
    src = SourceData(f_vec=lambda x: np.stack([np.ones(len(x)), np.zeros(len(x))], axis=1))
    x = _solve(op, assemble_rhs(op, src)).reshape(16, op.n)
    dnv = 2 * op.nv
    np.testing.assert_allclose(x[:, :dnv], 0.0, atol=1e-10)
    np.testing.assert_allclose(x[:, dnv], op.level.centers[:, 0] - 0.5, atol=1e-10)


def test_multiphase_operator_symmetric_and_scaled():
    op = _op(2, "stress", 1, n=4, p=2, phase=BoxPhase(), viscosity=(1e4, 1.0))
    A = op.to_dense()
    assert np.linalg.norm(A - A.T) <= 1e-12 * np.linalg.norm(A)
    np.testing.assert_array_equal(np.unique(op.viscosity), [1.0, 1e4])


def test_rejects_bad_coefficients():
    lv = build_mesh(2, 2, "periodic")
    with pytest.raises(ValueError):
        assemble_stokes(lv, 1, gamma=2)
    with pytest.raises(ValueError):
        assemble_stokes(lv, 1, delta=-1.0)
