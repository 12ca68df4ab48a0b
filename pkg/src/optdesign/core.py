"""Candidate sets, model bases, Vandermonde and information matrices, design energies.

A design lives on a finite candidate set ``X`` of ``M`` points.  The model
space is spanned by ``N`` functions; the ``M x N`` Vandermonde matrix ``V``
holds their values on ``X``.  Designs are nonnegative weight vectors ``w``;
their signed square roots ``z`` (``w = z**2``) are what the flow solver moves.

Energies
--------
``E(w) = -log det G(w) / N + ||w||_1`` with ``G(w) = V^T diag(w) V``, and
``F(z) = E(z**2)``.  Both return ``+inf`` when the information matrix is
singular.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import chebyshev

from .errors import InvalidConfig, NegativeWeight, RankDeficient

UNIT_ROUNDOFF = np.finfo(float).eps / 2
SUPPORT_RTOL = 1e-12


# ---------------------------------------------------------------------------
# candidate sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateSet:
    """Finite point set ``X`` in ``R^n``, stored as an ``(M, n)`` array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InvalidConfig("a candidate set needs at least one point of dimension >= 1")
        if not np.all(np.isfinite(pts)):
            raise InvalidConfig("candidate points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def duplicates(self) -> list[list[int]]:
        """Groups of indices that share identical coordinates (groups of size >= 2)."""
        groups: dict[tuple, list[int]] = {}
        for i, row in enumerate(self.points):
            groups.setdefault(tuple(row), []).append(i)
        return [g for g in groups.values() if len(g) > 1]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)


def load_candidates_csv(path) -> CandidateSet:
    """Read one point per row. A non-numeric first row is treated as a header."""
    rows = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            row = [c.strip() for c in row if c.strip() != ""]
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if k == 0:
                    continue
                raise InvalidConfig(f"{path}: non-numeric entry in row {k + 1}")
    if not rows:
        raise InvalidConfig(f"{path}: no points found")
    if len({len(r) for r in rows}) != 1:
        raise InvalidConfig(f"{path}: rows have different lengths")
    return CandidateSet(np.array(rows))


# ---------------------------------------------------------------------------
# bases and Vandermonde matrices
# ---------------------------------------------------------------------------


def total_degree_exponents(n: int, degree: int) -> np.ndarray:
    """Multi-indices of total degree <= ``degree`` in ``n`` variables, graded order."""
    out = []
    for total in range(degree + 1):
        for combo in itertools.product(range(total + 1), repeat=n):
            if sum(combo) == total:
                out.append(combo[::-1])
    return np.array(sorted(out, key=lambda a: (sum(a), tuple(-c for c in a))), dtype=int)


@dataclass(frozen=True)
class BasisSpec:
    """Model space: either a total-degree Chebyshev product basis or explicit functions.

    Explicit functions take an ``(M, n)`` point array and return an ``(M,)`` array.
    """

    kind: str
    degree: Optional[int] = None
    functions: Optional[tuple] = None

    @classmethod
    def total_degree(cls, degree: int) -> "BasisSpec":
        if degree < 0:
            raise InvalidConfig("polynomial degree must be nonnegative")
        return cls("total_degree", degree=int(degree))

    @classmethod
    def from_functions(cls, functions: Sequence[Callable]) -> "BasisSpec":
        if len(functions) == 0:
            raise InvalidConfig("empty function list")
        return cls("functions", functions=tuple(functions))

    def dimension(self, n: int) -> int:
        if self.kind == "total_degree":
            return math.comb(n + self.degree, n)
        return len(self.functions)

    def evaluate(self, points: np.ndarray, box=None) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "functions":
            cols = [np.broadcast_to(np.asarray(f(points), dtype=float), points.shape[:1])
                    for f in self.functions]
            return np.column_stack(cols)
        if box is None:
            box = (points.min(axis=0), points.max(axis=0))
        t = _to_unit_box(points, *box)
        n = points.shape[1]
        # per-axis Chebyshev values T_0..T_d, then products over the multi-indices
        T = [chebyshev.chebvander(t[:, a], self.degree) for a in range(n)]
        exps = total_degree_exponents(n, self.degree)
        V = np.ones((points.shape[0], len(exps)))
        for a in range(n):
            V *= T[a][:, exps[:, a]]
        return V


def _to_unit_box(points, lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = hi - lo
    mid = (hi + lo) / 2
    safe = np.where(width > 0, width, 1.0)
    t = 2 * (points - mid) / safe
    return np.where(width > 0, t, 0.0)


@dataclass(frozen=True)
class VandermondeMatrix:
    values: np.ndarray
    rank: int
    basis: BasisSpec
    box: Optional[tuple] = None
    points: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def numerical_rank(A: np.ndarray) -> int:
    """Rank with singular-value threshold ``M * ||A||_2 * u``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > A.shape[0] * s[0] * UNIT_ROUNDOFF))


def build_vandermonde(X: CandidateSet, basis: BasisSpec) -> VandermondeMatrix:
    """Evaluate ``basis`` at every point of ``X``.

    Raises
    ------
    RankDeficient
        If the numerical rank of the ``M x N`` matrix is below ``N``.
    """
    if not isinstance(X, CandidateSet):
        X = CandidateSet(X)
    box = X.bounding_box() if basis.kind == "total_degree" else None
    V = basis.evaluate(X.points, box)
    N = V.shape[1]
    rank = numerical_rank(V) if N <= X.M else min(numerical_rank(V), X.M)
    if rank < N:
        raise RankDeficient(N, rank)
    V.setflags(write=False)
    return VandermondeMatrix(V, rank, basis, box, X.points)


def as_matrix(V) -> np.ndarray:
    return V.values if isinstance(V, VandermondeMatrix) else np.asarray(V, dtype=float)


# ---------------------------------------------------------------------------
# designs
# ---------------------------------------------------------------------------


def square(z) -> np.ndarray:
    """Coordinate square map ``z -> (z_1**2, ..., z_M**2)``."""
    z = np.asarray(z, dtype=float)
    return z * z


def support_indices(w, rtol: float = SUPPORT_RTOL) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.size == 0 or w.max() <= 0:
        return np.array([], dtype=int)
    return np.flatnonzero(w > rtol * w.max())


@dataclass(frozen=True)
class Design:
    """Nonnegative weights on the candidate set."""

    w: np.ndarray
    support_rtol: float = SUPPORT_RTOL

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        neg = np.flatnonzero(w < 0)
        if neg.size:
            raise NegativeWeight(int(neg[0]))
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_sqrt(cls, z) -> "Design":
        return cls(square(z))

    @property
    def support(self) -> np.ndarray:
        return support_indices(self.w, self.support_rtol)

    @property
    def mass(self) -> float:
        return float(self.w.sum())

    def normalized(self) -> "Design":
        return Design(self.w / self.w.sum(), self.support_rtol)


def uniform_sqrt_design(M: int) -> np.ndarray:
    """Square root of the uniform design ``w = 1/M``."""
    return np.full(M, 1.0 / math.sqrt(M))


def write_design_csv(path, points, w):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 1 and len(w) != 1:
        points = points.T
    header = [f"x{k}" for k in range(points.shape[1])] + ["weight"]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for p, wi in zip(points, w):
            out.writerow([repr(float(c)) for c in p] + [repr(float(wi))])


def read_design_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_design_csv`: returns ``(points, weights)``."""
    X = load_candidates_csv(path).points
    return X[:, :-1], X[:, -1]


# ---------------------------------------------------------------------------
# information matrix and energies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InformationMatrix:
    G: np.ndarray
    logdet: float
    singular: bool = field(default=False)


def gram_matrix(V, w) -> InformationMatrix:
    """``G = V^T diag(w) V`` formed as ``A^T A`` with ``A = diag(sqrt(w)) V``."""
    V = as_matrix(V)
    w = np.asarray(w, dtype=float)
    if w.shape != (V.shape[0],):
        raise ValueError(f"weight vector has shape {w.shape}, expected ({V.shape[0]},)")
    A = np.sqrt(np.maximum(w, 0.0))[:, None] * V
    G = A.T @ A
    logdet, singular = _logdet_psd(G)
    return InformationMatrix(G, logdet, singular)


def _logdet_psd(G):
    if not np.any(G):
        return -np.inf, True
    try:
        L = np.linalg.cholesky(G)
        return 2.0 * float(np.sum(np.log(np.diag(L)))), False
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(G)
        if ev[0] <= 0:
            return -np.inf, True
        return float(np.sum(np.log(ev))), False


def logdet_qr(V, w) -> float:
    """``log det G(w)`` as ``2 sum log|r_kk|`` from the QR of ``diag(sqrt(w)) V``."""
    V = as_matrix(V)
    A = np.sqrt(np.asarray(w, dtype=float))[:, None] * V
    r = np.abs(np.diag(np.linalg.qr(A, mode="r")))
    if r.size < V.shape[1] or np.any(r == 0):
        return -np.inf
    return 2.0 * float(np.sum(np.log(r)))


def energy_E(V, w) -> float:
    """Design energy ``-log det G(w) / N + ||w||_1``; ``+inf`` when ``G`` is singular."""
    w = np.asarray(w, dtype=float)
    neg = np.flatnonzero(w < 0)
    if neg.size:
        raise NegativeWeight(int(neg[0]))
    info = gram_matrix(V, w)
    if info.singular:
        return np.inf
    return -info.logdet / as_matrix(V).shape[1] + float(w.sum())


def energy_F(V, z) -> float:
    """``F(z) = E(z**2)``."""
    return energy_E(V, square(z))
