"""Regularization of ill-posed design problems through the kernel of the Phi^2 moments.

Designs with identical moments on ``Phi^2 = span{phi_i phi_j}`` share the same
information matrix, so every direction in ``K = ker V2^T`` is flat for ``E``.
Adding ``eta * |pi_K w|^2`` makes the energy strongly convex along ``K`` and
selects, as ``eta -> 0``, the optimal design of minimal kernel norm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .core import UNIT_ROUNDOFF, BasisSpec, VandermondeMatrix, as_matrix
from .errors import InvalidConfig, ZeroGradientStart
from .flow import DesignObjective, FlowParams, FlowResult, solve_adaptive
from .kernels import DENSE_CAP

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Phi2Space:
    """Vandermonde matrix ``V2`` of a basis of ``Phi^2`` on the candidate set."""

    V2: np.ndarray

    @property
    def N2(self) -> int:
        return self.V2.shape[1]

    @property
    def M(self) -> int:
        return self.V2.shape[0]


def _independent_columns(A: np.ndarray) -> np.ndarray:
    _, R, piv = sla.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return np.array([], dtype=int)
    rank = int(np.sum(d > A.shape[0] * d[0] * UNIT_ROUNDOFF))
    return np.sort(piv[:rank])


def build_phi2(V, product_basis: bool = False) -> Phi2Space:
    """Basis of ``Phi^2`` evaluated on the candidate set.

    Total-degree polynomial models use the Chebyshev basis of twice the degree
    on the same bounding box, unless ``product_basis`` is set.  Otherwise the
    columns are the products ``V[:, i] * V[:, j]`` (``i <= j``) reduced to an
    independent subset by column-pivoted QR.
    """
    if (isinstance(V, VandermondeMatrix) and V.basis.kind == "total_degree"
            and V.points is not None and not product_basis):
        W = BasisSpec.total_degree(2 * V.basis.degree).evaluate(V.points, V.box)
    else:
        A = as_matrix(V)
        iu, ju = np.triu_indices(A.shape[1])
        W = A[:, iu] * A[:, ju]
    return Phi2Space(W[:, _independent_columns(W)])


@dataclass
class KernelProjector:
    """Orthogonal projection onto ``K = ker V2^T``.

    ``range_basis`` is an orthonormal basis of ``range V2`` (the orthogonal
    complement of ``K``); ``pi_K v = v - Q Q^T v``.  The kernel basis ``Z`` is
    formed on first access only, as it has ``M x (M - N2)`` entries.
    """

    range_basis: np.ndarray
    _Z: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.range_basis.shape[0]

    @property
    def d(self) -> int:
        return self.M - self.range_basis.shape[1]

    @property
    def Z(self) -> np.ndarray:
        if self._Z is None:
            if self.d == 0:
                self._Z = np.zeros((self.M, 0))
            else:
                Qfull, _ = np.linalg.qr(self.range_basis, mode="complete")
                self._Z = Qfull[:, self.range_basis.shape[1]:]
        return self._Z

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.d == 0:
            return np.zeros_like(v)
        Q = self.range_basis
        return v - Q @ (Q.T @ v)

    def matrix(self) -> np.ndarray:
        Q = self.range_basis
        return np.eye(self.M) - Q @ Q.T


def kernel_projector(p2: Phi2Space) -> KernelProjector:
    """Projector from the SVD of ``V2`` (threshold ``max(M, N2) * s_max * u``)."""
    U, s, _ = np.linalg.svd(p2.V2, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return KernelProjector(np.zeros((p2.M, 0)))
    r = int(np.sum(s > max(p2.V2.shape) * s[0] * UNIT_ROUNDOFF))
    return KernelProjector(U[:, :r])


# ---------------------------------------------------------------------------
# regularized energy
# ---------------------------------------------------------------------------


def energy_F_eta(V, z, eta: float, P: KernelProjector) -> float:
    return DesignObjective(V, eta, P).value(z)


def grad_F_eta(V, z, eta: float, P: KernelProjector) -> np.ndarray:
    return DesignObjective(V, eta, P).evaluate(z).grad


def hess_F_eta(V, z, eta: float, P: KernelProjector, dense_cap: int = DENSE_CAP) -> np.ndarray:
    return DesignObjective(V, eta, P, dense_cap).evaluate(z).hessian().copy()


# ---------------------------------------------------------------------------
# eta continuation
# ---------------------------------------------------------------------------


def _square(eta):
    return eta * eta


@dataclass(frozen=True)
class EtaSchedule:
    """``eta_{n+1} = sigma(eta_n)``; stop once consecutive minimizers differ by ``toll_eta``."""

    eta0: float = 1e-2
    sigma: Callable[[float], float] = _square
    n_max_eta: int = 8
    toll_eta: float = 1e-8

    def __post_init__(self):
        if not self.eta0 > 0:
            raise InvalidConfig("eta0 must be positive")
        if self.n_max_eta < 1 or not self.toll_eta > 0:
            raise InvalidConfig("n_max_eta >= 1 and toll_eta > 0 required")


@dataclass
class RegularizedResult:
    z: np.ndarray
    eta_final: float
    etas: list
    rounds: list          # FlowResult per eta
    increments: list      # |z_{n+1} - z_n| per round
    converged: bool
    energies: list = field(default_factory=list)   # E(w) (unregularized) per round

    @property
    def w(self) -> np.ndarray:
        return self.z * self.z


def solve_regularized(V, z0, sched: EtaSchedule = EtaSchedule(), p: FlowParams = FlowParams(),
                      projector: Optional[KernelProjector] = None) -> RegularizedResult:
    """Warm-started continuation in ``eta``, each round minimizing ``F_eta`` adaptively."""
    if projector is None:
        projector = kernel_projector(build_phi2(V))
    base = DesignObjective(V, 0.0, projector, p.dense_cap, p.linear_solver)
    z = np.array(z0, dtype=float)
    eta = sched.eta0
    etas, rounds, increments, energies = [], [], [], []
    toll = p.tolerance(base.M)
    converged = False
    for n in range(sched.n_max_eta):
        objective = base.with_eta(eta)
        # an empty kernel makes the penalty inactive: one full-accuracy round
        p_n = _replace_toll(p, toll if projector.d == 0 else max(toll, 1e-2 * eta))
        try:
            res = solve_adaptive(objective, z, p_n)
        except ZeroGradientStart:
            if n == 0:
                raise
            res = FlowResult(z.copy(), None, True, p.tau0)
        inc = float(np.linalg.norm(res.z - z))
        log.info("eta round %d: eta = %.3e, |dz| = %.3e", n, eta, inc)
        etas.append(eta)
        rounds.append(res)
        increments.append(inc)
        energies.append(base.value(res.z))
        z = res.z
        if projector.d == 0 or (n > 0 and inc <= sched.toll_eta):
            converged = True
            break
        eta = sched.sigma(eta)
    return RegularizedResult(z, etas[-1], etas, rounds, increments, converged, energies)


def _replace_toll(p: FlowParams, toll: float) -> FlowParams:
    from dataclasses import replace

    return replace(p, toll=toll)
