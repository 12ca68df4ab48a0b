import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import optdesign as od
from optdesign.kernels import (
    hess_E_matvec,
    hess_E_quadratic_form,
    hess_F_matvec,
    kernel_matrices,
    orthonormality_residual,
)

from conftest import fd_gradient, fd_jacobian, random_instance, rel_err


def test_onb_degree_one_optimum(three_point):
    z = np.sqrt([0.5, 0.0, 0.5])
    onb = od.weighted_onb(three_point, z)
    V = three_point.values
    assert np.allclose(onb.Vtilde @ onb.Vtilde.T, V @ V.T, atol=1e-14)
    assert np.allclose(np.abs(onb.Vtilde), np.abs(V), atol=1e-14)
    assert np.allclose(od.bergman(onb), [2.0, 1.0, 2.0], atol=1e-14)
    assert np.allclose(od.grad_E(onb), [0.0, 0.5, 0.0], atol=1e-15)
    assert np.allclose(od.grad_F(z, onb), 0.0, atol=1e-15)


def test_onb_uniform_against_gram_inverse(three_point):
    w = np.full(3, 1 / 3)
    onb = od.weighted_onb(three_point, np.sqrt(w))
    V = three_point.values
    Ginv = np.linalg.inv(V.T @ (w[:, None] * V))
    oracle = np.einsum("ij,jk,ik->i", V, Ginv, V)
    assert np.allclose(oracle, [2.5, 1.0, 2.5])
    assert np.allclose(od.bergman(onb), oracle, atol=1e-14)
    # second basis function is x * sqrt(3/2) up to sign
    assert np.allclose(np.abs(onb.Vtilde[:, 1]), np.sqrt(1.5) * np.abs(V[:, 1]), atol=1e-14)


def test_square_vandermonde_bergman():
    rng = np.random.default_rng(3)
    V = rng.standard_normal((5, 5))
    z = rng.uniform(0.2, 2.0, 5)
    # G^{-1} = V^{-1} W^{-1} V^{-T}, so B_i = 1 / w_i
    assert np.allclose(od.bergman(od.weighted_onb(V, z)), 1 / z**2, rtol=1e-10)
    onb = od.weighted_onb(V, np.full(5, np.sqrt(0.2)))
    assert np.allclose(od.bergman(onb), 5.0, atol=1e-12)
    assert np.allclose(od.grad_E(onb), 0.0, atol=1e-12)


def test_support_rank_deficient(three_point):
    with pytest.raises(od.SupportRankDeficient):
        od.weighted_onb(three_point, np.array([0.0, 1.0, 0.0]))


def test_logdet_from_factors_matches_gram(three_point):
    w = np.array([0.2, 0.3, 0.5])
    onb = od.weighted_onb(three_point, np.sqrt(w))
    assert onb.logdet == pytest.approx(od.gram_matrix(three_point, w).logdet, rel=1e-12)


@pytest.mark.parametrize("cond", [1e4, 1e8, 1e12])
def test_orthonormality_for_ill_conditioned_input(cond):
    rng = np.random.default_rng(int(np.log10(cond)))
    M, N = 60, 8
    U, _ = np.linalg.qr(rng.standard_normal((M, N)))
    W, _ = np.linalg.qr(rng.standard_normal((N, N)))
    A = U @ np.diag(np.logspace(0, -np.log10(cond), N)) @ W.T
    z = rng.uniform(0.5, 1.5, M)
    V = A / z[:, None]                       # diag(|z|) V = A has the requested condition
    onb = od.weighted_onb(V, z)
    assert orthonormality_residual(onb, z) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_trace_identity(seed):
    rng = np.random.default_rng(seed)
    V = random_instance(rng)
    w = rng.uniform(0.01, 3.0, V.M)
    onb = od.weighted_onb(V, np.sqrt(w))
    B = od.bergman(onb)
    assert abs(w @ B - V.N) <= 1e-10
    assert abs(w @ od.grad_E(onb, B) - (w.sum() - 1.0)) <= 1e-10


def test_hessian_structure():
    rng = np.random.default_rng(5)
    V = random_instance(rng, n=2, M=20, degree=2)
    z = rng.uniform(0.1, 1.0, V.M)
    z[3] = 0.0
    z[[0, 1, 2, 4]] = rng.uniform(0.5, 1.0, 4)
    onb = od.weighted_onb(V, z)
    H = od.hess_E(onb)
    B = od.bergman(onb)
    assert np.allclose(np.diag(H), B**2 / V.N, rtol=1e-12)
    ev = np.linalg.eigvalsh(H)
    assert ev[0] >= -1e-10 * ev[-1]
    HF = od.hess_F(z, onb)
    assert np.all(HF[3, np.arange(V.M) != 3] == 0)
    assert HF[3, 3] == pytest.approx(2 * (1 - B[3] / V.N), rel=1e-14)
    KM = kernel_matrices(onb)
    assert np.allclose(np.sqrt(np.diag(KM.K2)), KM.B, rtol=1e-12)


def test_dense_cap():
    rng = np.random.default_rng(6)
    V = rng.standard_normal((30, 3))
    onb = od.weighted_onb(V, np.ones(30))
    with pytest.raises(od.DenseCapExceeded):
        od.hess_E(onb, dense_cap=10)


def test_matvecs_and_quadratic_form():
    rng = np.random.default_rng(7)
    V = random_instance(rng, n=2, M=25, degree=2)
    z = rng.uniform(0.2, 1.0, V.M)
    onb = od.weighted_onb(V, z)
    v = rng.standard_normal(V.M)
    H = od.hess_E(onb)
    assert np.allclose(hess_E_matvec(onb, v), H @ v, rtol=1e-12, atol=1e-14)
    assert np.allclose(hess_F_matvec(z, onb, v), od.hess_F(z, onb) @ v, rtol=1e-12, atol=1e-14)
    assert hess_E_quadratic_form(onb, v) == pytest.approx(v @ H @ v, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_finite_differences_small(seed):
    rng = np.random.default_rng(seed)
    V = random_instance(rng)
    z = rng.uniform(0.3, 1.2, V.M)
    onb = od.weighted_onb(V, z)
    w = z * z
    gE = fd_gradient(lambda x: od.energy_E(V, x), w)
    assert rel_err(od.grad_E(onb), gE) <= 1e-6
    HE = fd_jacobian(lambda x: od.grad_E(od.weighted_onb(V, np.sqrt(x))), w)
    assert rel_err(od.hess_E(onb), HE) <= 1e-6
    gF = fd_gradient(lambda x: od.energy_F(V, x), z)
    assert rel_err(od.grad_F(z, onb), gF) <= 1e-6
    HF = fd_jacobian(lambda x: od.grad_F(x, od.weighted_onb(V, x)), z)
    assert rel_err(od.hess_F(z, onb), HF) <= 1e-6


def test_grad_chain_is_bitwise():
    rng = np.random.default_rng(8)
    V = random_instance(rng)
    z = rng.standard_normal(V.M)
    onb = od.weighted_onb(V, z)
    B = od.bergman(onb)
    assert np.array_equal(od.grad_F(z, onb, B), 2.0 * z * od.grad_E(onb, B))
