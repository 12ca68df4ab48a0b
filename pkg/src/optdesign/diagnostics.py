"""Optimality checks, the multiplicative baseline and a-posteriori estimates.

KKT residual
------------
For ``min E(w)`` over ``w >= 0`` the optimality system is ``d_i E(w) = 0`` on
the support and ``d_i E(w) >= 0`` off it.  The residual vector is
``|1 - B_i/N|`` on the support and ``max(0, B_i/N - 1)`` elsewhere, with the
support cut at ``SUPPORT_RTOL * max(w)``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .core import SUPPORT_RTOL, UNIT_ROUNDOFF, as_matrix, energy_E, square, support_indices
from .errors import NegativeWeight, NonConvergence, SupportRankDeficient
from .kernels import DENSE_CAP, WeightedONB, bergman, grad_E, weighted_onb

SPECTRAL_FLOOR = 1e-8
DIAGNOSTICS_SCHEMA = "optdesign.diagnostics/1"


# ---------------------------------------------------------------------------
# KKT residual and G-optimality
# ---------------------------------------------------------------------------


def kkt_vector(w, grad_w, rtol: float = SUPPORT_RTOL) -> np.ndarray:
    """Componentwise KKT residual from the weights and the gradient of the energy in ``w``."""
    w = np.asarray(w, dtype=float)
    grad_w = np.asarray(grad_w, dtype=float)
    res = np.maximum(-grad_w, 0.0)
    sup = support_indices(w, rtol)
    res[sup] = np.abs(grad_w[sup])
    return res


@dataclass
class KKTReport:
    residual_vector: np.ndarray
    max_residual: float
    support: np.ndarray
    mass_error: float
    max_bergman: float
    N: int

    @property
    def g_optimality_gap(self) -> float:
        """``max_i B_i - N``; zero at a D-optimal design."""
        return self.max_bergman - self.N

    def to_dict(self, include_vector: bool = False) -> dict:
        out = {
            "max_residual": self.max_residual,
            "support_size": int(self.support.size),
            "mass_error": self.mass_error,
            "max_bergman": self.max_bergman,
            "N": self.N,
        }
        if include_vector:
            out["residual_vector"] = self.residual_vector.tolist()
        return out


def kkt_residual(w, onb: WeightedONB, rtol: float = SUPPORT_RTOL) -> KKTReport:
    w = np.asarray(w, dtype=float)
    B = bergman(onb)
    res = kkt_vector(w, grad_E(onb, B), rtol)
    return KKTReport(res, float(res.max()), support_indices(w, rtol),
                     abs(float(w.sum()) - 1.0), float(B.max()), onb.N)


def kkt_report(V, w, rtol: float = SUPPORT_RTOL) -> KKTReport:
    """:func:`kkt_residual` with the weighted basis built from ``sqrt(w)``."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise NegativeWeight(int(np.flatnonzero(w < 0)[0]))
    return kkt_residual(w, weighted_onb(V, np.sqrt(w)), rtol)


# ---------------------------------------------------------------------------
# Titterington multiplicative algorithm
# ---------------------------------------------------------------------------


def titterington_step(w, onb: WeightedONB) -> np.ndarray:
    """``w_i <- w_i B_i / N``, renormalized to unit mass."""
    w = np.asarray(w, dtype=float)
    w_new = w * bergman(onb) / onb.N
    return w_new / w_new.sum()


def _bergman_cholesky(V, w):
    # B_i = V_i G^{-1} V_i^T through a Cholesky factor of G; cheaper than two QRs
    G = V.T @ (w[:, None] * V)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise SupportRankDeficient("information matrix lost positive definiteness")
    U = sla.solve_triangular(L, V.T, lower=True, check_finite=False)
    return np.einsum("ji,ji->i", U, U), 2.0 * float(np.sum(np.log(np.diag(L))))


@dataclass
class TitteringtonResult:
    w: np.ndarray
    report: KKTReport
    converged: bool
    iterations: int
    elapsed: list = field(default_factory=list)      # seconds since start, per sample
    kkt_residual: list = field(default_factory=list)
    logdet: list = field(default_factory=list)
    sample_iters: list = field(default_factory=list)


def titterington_solve(V, w0=None, toll: float = 1e-8, n_max: int = 100_000,
                       record_every: int = 1, raise_on_budget: bool = True,
                       rtol: float = SUPPORT_RTOL, time_budget: Optional[float] = None
                       ) -> TitteringtonResult:
    """Run the multiplicative algorithm until the KKT residual is ``<= toll``.

    Parameters
    ----------
    V : array_like, shape (M, N)
    w0 : array_like, optional
        Starting design (default uniform).  Normalized before the first step.
    toll, n_max : stopping rule.
    record_every : int
        Sampling period of the residual/time trace.
    time_budget : float, optional
        Wall-clock limit in seconds; reaching it counts as running out of budget.

    Raises
    ------
    NonConvergence
        If the budget is exhausted and ``raise_on_budget`` is set.
    """
    V = as_matrix(V)
    M, N = V.shape
    w = np.full(M, 1.0 / M) if w0 is None else np.array(w0, dtype=float)
    if np.any(w < 0):
        raise NegativeWeight(int(np.flatnonzero(w < 0)[0]))
    w = w / w.sum()
    out = TitteringtonResult(w, None, False, 0)
    t0 = time.perf_counter()
    k = 0
    while True:
        B, logdet = _bergman_cholesky(V, w)
        res = float(kkt_vector(w, 1.0 - B / N, rtol).max())
        if k % record_every == 0 or res <= toll:
            out.elapsed.append(time.perf_counter() - t0)
            out.kkt_residual.append(res)
            out.logdet.append(logdet)
            out.sample_iters.append(k)
        if res <= toll:
            out.converged = True
            break
        if k >= n_max or (time_budget is not None and time.perf_counter() - t0 > time_budget):
            break
        w = w * B / N
        w /= w.sum()
        k += 1
    out.w = w
    out.iterations = k
    out.report = kkt_report(V, w, rtol)
    if not out.converged and raise_on_budget:
        raise NonConvergence(f"multiplicative algorithm: residual {res:.3e} after {k} "
                             "iterations", None, np.sqrt(w))
    return out


# ---------------------------------------------------------------------------
# well-posedness probe
# ---------------------------------------------------------------------------


@dataclass
class WellPosednessCertificate:
    verdict: str                      # well_posed_evidence | ill_posed_certified | inconclusive
    witness: Optional[np.ndarray] = None
    t: float = 0.0
    distance: float = 0.0
    energy_gap: Optional[float] = None
    directions_tried: int = 0

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "witness_distance": self.distance,
                "energy_gap": self.energy_gap, "directions_tried": self.directions_tried}


def _feasible_interval(w, u):
    """``[t_min, t_max]`` such that ``w + t u >= 0``."""
    pos, neg = u > 0, u < 0
    t_min = -np.min(w[pos] / u[pos]) if pos.any() else -math.inf
    t_max = np.min(w[neg] / -u[neg]) if neg.any() else math.inf
    return float(t_min), float(t_max)


def _support_kernel_basis(V2, sup):
    """Orthonormal basis of kernel directions of ``V2^T`` living on ``sup``."""
    A = V2[sup]
    if A.size == 0:
        return np.zeros((V2.shape[0], 0))
    _, s, Vh = np.linalg.svd(A.T, full_matrices=True)
    r = int(np.sum(s > max(A.shape) * (s[0] if s.size else 0.0) * UNIT_ROUNDOFF))
    Zs = Vh[r:].T
    Z = np.zeros((V2.shape[0], Zs.shape[1]))
    Z[sup] = Zs
    return Z


def wellposedness_probe(w_out, P, V2=None, V=None, n_random: int = 16, seed: int = 0,
                        rtol: float = SUPPORT_RTOL) -> WellPosednessCertificate:
    """Look for a feasible move ``w_out + t u`` along ``u`` in ``ker V2^T``.

    Along such moves every moment on ``Phi^2`` is unchanged, so any nonzero
    feasible ``t`` exhibits a second minimizer.  Directions are kernel basis
    vectors, first those supported on ``supp(w_out)`` (available when ``V2``
    is given), then columns of ``P.Z`` and random unit combinations.  The
    longest feasible move is returned as witness.  If ``V`` is given the
    energy at both ends is compared.
    """
    w = np.asarray(w_out, dtype=float).copy()
    if P.d == 0:
        return WellPosednessCertificate("well_posed_evidence")
    sup = support_indices(w, rtol)
    thr = 1e-8 * np.abs(w).max()
    dirs = []
    if V2 is not None:
        dirs.append(_support_kernel_basis(np.asarray(V2, dtype=float), sup))
    if P.d <= DENSE_CAP:
        Z = P.Z
        rng = np.random.default_rng(seed)
        Y = rng.standard_normal((P.d, n_random))
        R = Z @ Y
        R /= np.linalg.norm(R, axis=0)
        dirs.extend([Z, R])
    best = (0.0, None, 0.0)
    tried = 0
    for D in dirs:
        for u in D.T:
            nu = np.linalg.norm(u)
            if nu == 0:
                continue
            u = u / nu
            tried += 1
            t_min, t_max = _feasible_interval(w, u)
            for t in (t_min, t_max):
                if math.isfinite(t) and abs(t) > thr and abs(t) > best[0]:
                    best = (abs(t), u, t)
    if best[1] is None:
        return WellPosednessCertificate("inconclusive", directions_tried=tried)
    _, u, t = best
    witness = t * u
    gap = None
    if V is not None:
        w_alt = np.maximum(w + witness, 0.0)
        gap = abs(energy_E(V, w_alt) - energy_E(V, w))
    return WellPosednessCertificate("ill_posed_certified", witness, t, abs(t), gap, tried)


# ---------------------------------------------------------------------------
# Hessian spectrum and error estimate
# ---------------------------------------------------------------------------


def hessian_spectrum(V_or_objective, z) -> np.ndarray:
    """Ascending eigenvalues of ``Hess F(z)`` (or ``Hess F_eta`` for an objective)."""
    from .flow import DesignObjective

    obj = V_or_objective if isinstance(V_or_objective, DesignObjective) \
        else DesignObjective(V_or_objective)
    H = obj.evaluate(np.asarray(z, dtype=float)).hessian()
    return np.linalg.eigvalsh(H)


def spectrum_summary(ev) -> dict:
    ev = np.asarray(ev)
    lmax = float(np.abs(ev).max())
    floor = SPECTRAL_FLOOR * lmax
    return {
        "lambda_min": float(ev[0]),
        "lambda_max": float(ev[-1]),
        "n_below_floor": int(np.sum(ev < floor)),
        "theta_half": bool(ev[0] >= floor),
    }


@dataclass
class ErrorEstimate:
    """Residual-based distance estimate ``|z - z*| <~ |grad F(z)| / C_hat``.

    ``C_hat`` is an estimate, not a proven constant.
    """

    exponent_case: str                 # theta_half | unknown
    C_hat: Optional[float]
    bound: Optional[float]
    grad_norm: float
    restricted_min_eig: float
    offsupport_min_grad: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label"] = "estimate"
        return d


def error_estimate(V_or_objective, z, rtol: float = SUPPORT_RTOL) -> ErrorEstimate:
    from .flow import DesignObjective

    obj = V_or_objective if isinstance(V_or_objective, DesignObjective) \
        else DesignObjective(V_or_objective)
    z = np.asarray(z, dtype=float)
    model = obj.evaluate(z)
    w = square(z)
    sup = support_indices(w, rtol)
    off = np.setdiff1d(np.arange(w.size), sup)
    Vt = model.onb.Vtilde[sup]
    K = Vt @ Vt.T
    HE = K * K / model.onb.N
    ev_r = np.linalg.eigvalsh(HE)
    restricted_ok = ev_r[0] > SPECTRAL_FLOOR * ev_r[-1]
    g_off = model.grad_w[off]
    off_min = float(g_off.min()) if off.size else math.inf
    off_ok = off_min > SPECTRAL_FLOOR
    gnorm = float(np.linalg.norm(model.grad))
    if restricted_ok and off_ok:
        lam = float(np.linalg.eigvalsh(model.hessian())[0])
        C = lam / 2.0
        if C > 0:
            return ErrorEstimate("theta_half", C, gnorm / C, gnorm, float(ev_r[0]), off_min)
    return ErrorEstimate("unknown", None, None, gnorm, float(ev_r[0]), off_min)


# ---------------------------------------------------------------------------
# convergence-rate post-processing
# ---------------------------------------------------------------------------


def convergence_rate(residuals, tail: int = 10) -> dict:
    """Classify the tail of a residual history.

    Reports successive ratios ``r_{k+1} / r_k`` over the last ``tail`` steps,
    the least-squares slope of ``log r_k`` against ``k`` and two flags:
    ``linear`` (ratios in ``(c, 1)`` for some ``c > 0``) and ``superlinear``
    (ratios strictly decreasing).
    """
    r = np.asarray(residuals, dtype=float)
    r = r[r > 0][-(tail + 1):]
    if r.size < 3:
        return {"ratios": [], "slope": math.nan, "linear": False, "superlinear": False}
    ratios = r[1:] / r[:-1]
    k = np.arange(r.size)
    slope = float(np.polyfit(k, np.log(r), 1)[0])
    return {
        "ratios": ratios.tolist(),
        "slope": slope,
        "linear": bool(np.all(ratios < 1) and ratios.min() > 0),
        "superlinear": bool(np.all(np.diff(ratios) < 0)),
    }


def dump_json(obj, path):
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        raise TypeError(type(o).__name__)

    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=default)
