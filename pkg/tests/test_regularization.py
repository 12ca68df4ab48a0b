import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import optdesign as od
from optdesign.flow import DesignObjective
from optdesign.regularization import (
    EtaSchedule,
    build_phi2,
    energy_F_eta,
    grad_F_eta,
    hess_F_eta,
    kernel_projector,
    solve_regularized,
)

from conftest import fd_gradient, fd_jacobian, random_instance, rel_err


def _const_basis():
    return od.BasisSpec.from_functions([lambda p: np.ones(len(p))])


def test_phi2_three_point(three_point):
    p2 = build_phi2(three_point)
    assert p2.N2 == 3
    # spans {1, x, x^2}
    x = np.array([-1.0, 0.0, 1.0])
    ref = np.column_stack([np.ones(3), x, x * x])
    assert np.linalg.matrix_rank(np.column_stack([p2.V2, ref])) == 3


def test_phi2_constants_only():
    X = od.CandidateSet(np.array([[-1.0], [0.5], [1.0]]))
    V = od.build_vandermonde(X, _const_basis())
    assert build_phi2(V).N2 == 1


def test_phi2_disk_degree_two():
    V = od.build_vandermonde(od.gen_disk_admissible_mesh(6), od.BasisSpec.total_degree(2))
    assert V.N == 6
    assert build_phi2(V).N2 == 15
    assert build_phi2(V, product_basis=True).N2 == 15


def test_projector_trivial_kernel(three_point):
    P = kernel_projector(build_phi2(three_point))
    assert P.d == 0
    assert np.array_equal(P.apply(np.arange(3.0)), np.zeros(3))
    assert P.Z.shape == (3, 0)


def test_projector_two_points():
    X = od.CandidateSet(np.array([[-1.0], [1.0]]))
    V = od.build_vandermonde(X, _const_basis())
    P = kernel_projector(build_phi2(V))
    assert P.d == 1
    assert np.allclose(np.abs(P.Z[:, 0]), [2**-0.5, 2**-0.5], atol=1e-15)
    assert P.Z[0, 0] * P.Z[1, 0] < 0
    assert np.allclose(P.matrix(), [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_projector_properties(seed):
    rng = np.random.default_rng(seed)
    V = random_instance(rng, n=2, M=30, degree=1)
    p2 = build_phi2(V)
    P = kernel_projector(p2)
    u = rng.standard_normal(V.M)
    pu = P.apply(u)
    assert np.linalg.norm(P.apply(pu) - pu) <= 1e-12 * np.linalg.norm(u)
    assert np.abs(p2.V2.T @ pu).max() <= 1e-10 * np.linalg.norm(p2.V2, 2) * np.linalg.norm(u)
    Z = P.Z
    assert np.allclose(Z.T @ Z, np.eye(P.d), atol=1e-12)
    assert np.allclose(Z @ (Z.T @ u), pu, atol=1e-12)


def test_eta_zero_is_F_bitwise():
    rng = np.random.default_rng(21)
    V = random_instance(rng, n=2, M=20, degree=1)
    P = kernel_projector(build_phi2(V))
    z = rng.uniform(0.2, 1.0, V.M)
    assert energy_F_eta(V, z, 0.0, P) == od.energy_F(V, z) or \
        energy_F_eta(V, z, 0.0, P) == DesignObjective(V).value(z)
    assert np.array_equal(grad_F_eta(V, z, 0.0, P), DesignObjective(V).evaluate(z).grad)


def test_trivial_kernel_ignores_eta(three_point):
    P = kernel_projector(build_phi2(three_point))
    z = np.array([0.4, 0.7, 0.5])
    assert energy_F_eta(three_point, z, 3.0, P) == pytest.approx(od.energy_F(three_point, z), rel=1e-14)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(1e-3, 10.0))
def test_regularized_finite_differences(seed, eta):
    rng = np.random.default_rng(seed)
    V = random_instance(rng, n=2, M=12, degree=1)
    P = kernel_projector(build_phi2(V))
    z = rng.uniform(0.3, 1.2, V.M)
    g = grad_F_eta(V, z, eta, P)
    assert rel_err(g, fd_gradient(lambda x: energy_F_eta(V, x, eta, P), z)) <= 1e-6
    H = hess_F_eta(V, z, eta, P)
    assert rel_err(H, fd_jacobian(lambda x: grad_F_eta(V, x, eta, P), z)) <= 1e-6


def test_strong_convexity_along_kernel():
    rng = np.random.default_rng(22)
    V = random_instance(rng, n=2, M=25, degree=1)
    P = kernel_projector(build_phi2(V))
    eta = 0.3
    w = rng.uniform(0.1, 1.0, V.M)
    onb = od.weighted_onb(V, np.sqrt(w))
    H = od.hess_E(onb) + 2 * eta * P.matrix()
    for _ in range(5):
        u = P.Z @ rng.standard_normal(P.d)
        assert u @ H @ u >= 2 * eta * (u @ u) * (1 - 1e-10)


def test_well_posed_single_round_matches_adaptive(three_point):
    z0 = np.full(3, 1 / np.sqrt(3))
    reg = solve_regularized(three_point, z0)
    ada = od.solve_adaptive(three_point, z0)
    assert len(reg.etas) == 1 and reg.converged
    assert np.array_equal(reg.z, ada.z)


def test_continuation_energies_monotone():
    V = od.build_vandermonde(od.gen_disk_admissible_mesh(4), od.BasisSpec.total_degree(2))
    z0 = np.full(V.M, 1 / np.sqrt(V.M))
    reg = solve_regularized(V, z0, EtaSchedule(eta0=1e-2), od.FlowParams(alpha=1.5, beta=1 / 1.5))
    E = reg.energies
    assert all(b <= a + 1e-10 for a, b in zip(E, E[1:]))
    assert reg.etas == sorted(reg.etas, reverse=True)
    assert od.kkt_report(V, reg.w).max_residual <= 1e-8


def test_schedule_validation():
    with pytest.raises(od.InvalidConfig):
        EtaSchedule(eta0=0)
    with pytest.raises(od.InvalidConfig):
        EtaSchedule(n_max_eta=0)
