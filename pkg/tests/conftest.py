import numpy as np
import pytest

import optdesign as od

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_instance(rng, n=None, M=None, degree=None):
    """Random candidate set with a full-rank total-degree basis."""
    while True:
        n_ = n if n is not None else int(rng.integers(1, 3))
        d = degree if degree is not None else int(rng.integers(1, 3 if n_ == 2 else 6))
        N = od.BasisSpec.total_degree(d).dimension(n_)
        if N > 6:
            continue
        M_ = M if M is not None else int(rng.integers(N + 2, 31))
        X = od.CandidateSet(rng.uniform(-1, 1, size=(M_, n_)))
        try:
            V = od.build_vandermonde(X, od.BasisSpec.total_degree(d))
        except od.RankDeficient:
            continue
        return V


def fd_gradient(f, x, h_rel=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = h_rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(grad, x, h_rel=1e-5):
    x = np.asarray(x, dtype=float)
    J = np.empty((x.size, x.size))
    for i in range(x.size):
        h = h_rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (grad(x + e) - grad(x - e)) / (2 * h)
    return J


def rel_err(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


@pytest.fixture
def three_point():
    """X = {-1, 0, 1} with the monomials {1, x}."""
    X = od.CandidateSet(np.array([[-1.0], [0.0], [1.0]]))
    basis = od.BasisSpec.from_functions([lambda p: np.ones(len(p)), lambda p: p[:, 0]])
    return od.build_vandermonde(X, basis)


def simplex_grid_argmax(logdet_fn, M, step):
    """Brute-force maximizer of ``logdet_fn`` over the probability simplex (M = 3)."""
    assert M == 3
    n = int(round(1 / step))
    best, arg = -np.inf, None
    for i in range(n + 1):
        w1 = i * step
        j = np.arange(n - i + 1)
        w2 = j * step
        w3 = 1.0 - w1 - w2
        vals = logdet_fn(np.full_like(w2, w1), w2, np.maximum(w3, 0.0))
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, arg = vals[k], np.array([w1, w2[k], max(w3[k], 0.0)])
    return arg
