"""Caratheodory-Tchakaloff compression of designs.

A design is replaced by one supported on at most ``dim Phi^2`` of its own
points with the same moments on ``Phi^2``.  Since the information matrix is a
linear image of those moments, ``G`` (hence optimality) is preserved exactly.
The sparse weights come from an active-set nonnegative least-squares solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import UNIT_ROUNDOFF
from .errors import MomentMismatch, NegativeWeight


def nnls(A, b, tol=None, max_iter=None):
    """Lawson-Hanson active-set solution of ``min |A x - b|_2`` subject to ``x >= 0``.

    Parameters
    ----------
    A : ndarray, shape (m, n)
    b : ndarray, shape (m,)
    tol : float, optional
        Dual feasibility tolerance; defaults to ``10 * max(m, n) * eps * |A|_1 * |b|``.
    max_iter : int, optional
        Cap on outer (index-adding) iterations, default ``3 * n``.

    Returns
    -------
    x : ndarray, shape (n,)
    rnorm : float

    Notes
    -----
    Among columns with maximal dual value the smallest index enters first, so
    the result is deterministic.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if tol is None:
        tol = 10 * max(m, n) * np.finfo(float).eps * np.abs(A).sum(axis=0).max() * \
            max(np.linalg.norm(b), 1e-300)
    if max_iter is None:
        max_iter = 3 * n
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    resid = b.copy()
    dual = A.T @ resid
    for _ in range(max_iter):
        cand = np.where(passive, -np.inf, dual)
        j = int(np.argmax(cand))
        if cand[j] <= tol:
            break
        passive[j] = True
        while True:
            idx = np.flatnonzero(passive)
            s = np.zeros(n)
            s[idx] = np.linalg.lstsq(A[:, idx], b, rcond=None)[0]
            if np.all(s[idx] > 0):
                x = s
                break
            neg = idx[s[idx] <= 0]
            alpha = np.min(x[neg] / (x[neg] - s[neg]))
            x = x + alpha * (s - x)
            drop = passive & (x <= UNIT_ROUNDOFF * max(np.abs(x).max(), 1e-300))
            x[drop] = 0.0
            passive &= ~drop
            if not passive.any():
                break
        resid = b - A @ x
        dual = A.T @ resid
    return x, float(np.linalg.norm(b - A @ x))


@dataclass(frozen=True)
class CompressedDesign:
    indices: np.ndarray
    weights: np.ndarray
    moment_residual: float
    M: int

    @property
    def w(self) -> np.ndarray:
        """Weights expanded back to all ``M`` candidate points."""
        out = np.zeros(self.M)
        out[self.indices] = self.weights
        return out

    @property
    def cardinality(self) -> int:
        return int(self.indices.size)


def compress(w, p2, support_rtol: float = 0.0, mismatch_rtol: float = 1e-8) -> CompressedDesign:
    """Compress ``w`` onto at most ``N2`` of its support points, keeping ``V2^T w``.

    Designs whose support is already smaller than ``N2`` are returned unchanged.

    Raises
    ------
    MomentMismatch
        If the final moment residual exceeds ``mismatch_rtol * |m|_inf``.
    """
    w = np.asarray(w, dtype=float)
    neg = np.flatnonzero(w < 0)
    if neg.size:
        raise NegativeWeight(int(neg[0]))
    V2 = p2.V2 if hasattr(p2, "V2") else np.asarray(p2, dtype=float)
    M, N2 = V2.shape
    m = V2.T @ w
    scale = np.abs(m).max()
    sup = np.flatnonzero(w > support_rtol * w.max()) if support_rtol > 0 else np.flatnonzero(w > 0)
    if sup.size < N2:
        return CompressedDesign(sup, w[sup].copy(), float(np.abs(V2[sup].T @ w[sup] - m).max()), M)

    A = V2[sup].T
    colnorm = np.linalg.norm(A, axis=0)
    colnorm[colnorm == 0] = 1.0
    u, _ = nnls(A / colnorm, m)
    u /= colnorm
    keep = u > UNIT_ROUNDOFF * u.max()
    idx = np.flatnonzero(keep)
    weights = u[idx]
    # equality refinement on the retained columns
    refined = np.linalg.lstsq(A[:, idx], m, rcond=None)[0]
    if np.all(refined > 0):
        r_old = np.abs(A[:, idx] @ weights - m).max()
        r_new = np.abs(A[:, idx] @ refined - m).max()
        if r_new <= r_old:
            weights = refined
    residual = float(np.abs(A[:, idx] @ weights - m).max())
    if residual > mismatch_rtol * scale:
        raise MomentMismatch(residual, scale)
    return CompressedDesign(sup[idx], weights, residual, M)
