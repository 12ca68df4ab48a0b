"""Weighted orthonormal bases, reproducing kernels and derivatives of the energies.

Everything here is built from ``Vt``, the Vandermonde matrix of the basis
that is orthonormal for ``<f, g>_w = sum_i w_i f(x_i) g(x_i)``.  With it,

* the reproducing kernel is ``K = Vt Vt^T``, the Bergman function ``B = diag(K)``;
* ``grad E = 1 - B/N`` and ``Hess E = K**2 / N`` (elementwise square);
* ``grad F = 2 z (1 - B/N)``, ``Hess F = 4 diag(z) Hess E diag(z) + 2 diag(1 - B/N)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .core import UNIT_ROUNDOFF, as_matrix
from .errors import DenseCapExceeded, SupportRankDeficient

DENSE_CAP = 4000


@dataclass(frozen=True)
class WeightedONB:
    """``Vt[i, j] = phi_j(x_i; w)`` for the ``w``-orthonormal basis, ``w = z**2``.

    ``logdet`` is ``log det G(w)``, read off the triangular factors.
    """

    Vtilde: np.ndarray
    condition_estimate: float
    logdet: float

    @property
    def M(self) -> int:
        return self.Vtilde.shape[0]

    @property
    def N(self) -> int:
        return self.Vtilde.shape[1]


@dataclass(frozen=True)
class KernelMatrices:
    B: np.ndarray
    _vt: np.ndarray

    @property
    def K2(self) -> np.ndarray:
        K = self._vt @ self._vt.T
        return K * K


def _orthonormalize(V, a):
    A = a[:, None] * V
    R = np.linalg.qr(A, mode="r")
    d = np.abs(np.diag(R))
    if R.shape[0] < V.shape[1] or d.min() <= A.shape[0] * np.linalg.norm(A, 2) * UNIT_ROUNDOFF:
        raise SupportRankDeficient(
            "weighted Vandermonde matrix is numerically rank deficient: "
            "the design cannot identify the model"
        )
    Q = sla.solve_triangular(R, V.T, trans="T", lower=False).T
    return Q, R, d


def weighted_onb(V, z) -> WeightedONB:
    """Orthonormalize ``V`` for the ``z**2``-weighted product by two QR passes.

    ``|z|`` is used as the row scaling, so the sign of ``z`` plays no role.
    """
    V = as_matrix(V)
    a = np.abs(np.asarray(z, dtype=float))
    V1, R1, d1 = _orthonormalize(V, a)
    Vt, R2, d2 = _orthonormalize(V1, a)
    logdet = 2.0 * float(np.sum(np.log(d1)) + np.sum(np.log(d2)))
    cond = float(d1.max() / d1.min())
    return WeightedONB(Vt, cond, logdet)


def orthonormality_residual(onb: WeightedONB, z) -> float:
    w = np.asarray(z, dtype=float) ** 2
    Vt = onb.Vtilde
    return float(np.abs(Vt.T @ (w[:, None] * Vt) - np.eye(onb.N)).max())


def bergman(onb: WeightedONB) -> np.ndarray:
    """``B(x_i; w) = sum_j Vt[i, j]**2``."""
    Vt = onb.Vtilde
    return np.einsum("ij,ij->i", Vt, Vt)


def kernel_matrices(onb: WeightedONB) -> KernelMatrices:
    return KernelMatrices(bergman(onb), onb.Vtilde)


def grad_E(onb: WeightedONB, B: Optional[np.ndarray] = None) -> np.ndarray:
    if B is None:
        B = bergman(onb)
    return 1.0 - B / onb.N


def hess_E(onb: WeightedONB, dense_cap: int = DENSE_CAP) -> np.ndarray:
    """Dense ``K**2 / N``; refuses when ``M`` exceeds ``dense_cap``."""
    if onb.M > dense_cap:
        raise DenseCapExceeded(f"M = {onb.M} exceeds the dense Hessian cap {dense_cap}")
    K = onb.Vtilde @ onb.Vtilde.T
    K *= K
    K /= onb.N
    return K


def hess_E_matvec(onb: WeightedONB, v) -> np.ndarray:
    """``Hess E @ v`` without forming ``K**2``: row ``i`` is ``Vt_i C Vt_i^T / N``."""
    Vt = onb.Vtilde
    C = Vt.T @ (np.asarray(v, dtype=float)[:, None] * Vt)
    return np.einsum("ij,ij->i", Vt @ C, Vt) / onb.N


def hess_E_quadratic_form(onb: WeightedONB, u) -> float:
    """``u^T Hess E u = |Vt^T diag(u) Vt|_F^2 / N``, a sum of squares.

    Evaluated this way the form is nonnegative and vanishes to roundoff
    squared along the kernel of the ``Phi^2`` moments.
    """
    Vt = onb.Vtilde
    C = Vt.T @ (np.asarray(u, dtype=float)[:, None] * Vt)
    return float(np.sum(C * C) / onb.N)


def grad_F(z, onb: WeightedONB, B: Optional[np.ndarray] = None) -> np.ndarray:
    return 2.0 * np.asarray(z, dtype=float) * grad_E(onb, B)


def hess_F(z, onb: WeightedONB, dense_cap: int = DENSE_CAP) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    H = hess_E(onb, dense_cap)
    H *= 4.0 * np.outer(z, z)
    H[np.diag_indices_from(H)] += 2.0 * grad_E(onb)
    return H


def hess_F_matvec(z, onb: WeightedONB, v, B: Optional[np.ndarray] = None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    return 4.0 * z * hess_E_matvec(onb, z * v) + 2.0 * grad_E(onb, B) * v
