"""Backward-Euler integration of the gradient flow ``z' = -grad F(z)``.

Each time step solves the variational problem

    z_new = argmin_z  g(z) = F(z) + |z - z_old|^2 / (2 tau)

by Newton's method started at ``z_old``.  A Newton iterate is accepted when

* ``|d_i g(z_new)| <= eps * |z_new_i - z_old_i|`` for every ``i``, and
* ``sign(z_new) == sign(z_old)`` componentwise.

:func:`solve_fixed_step` keeps ``tau`` constant.  :func:`solve_adaptive` grows
``tau`` by ``alpha`` after every accepted step and shrinks it by ``beta``
(restarting from ``z_old``) whenever Newton fails within ``r_max`` iterations.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .core import UNIT_ROUNDOFF, as_matrix, support_indices
from .errors import (
    IndefiniteHessian,
    InvalidConfig,
    NonConvergence,
    RestartBudgetExhausted,
    SupportRankDeficient,
    ZeroGradientStart,
)
from .kernels import DENSE_CAP, WeightedONB, bergman, weighted_onb

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("k", "tau", "step_norm", "grad_inf", "kkt_residual", "newton_iters", "restarts")


@dataclass(frozen=True)
class FlowParams:
    """Parameters of the time stepping.

    ``beta`` is the factor applied to ``tau`` on a failed step, so it lies in
    ``(0, 1]``; ``alpha = beta = 1`` gives the fixed-step scheme.  ``toll=None``
    means ``1e-13 * sqrt(M)``.
    """

    tau0: float = 1.0
    alpha: float = 1.15
    beta: float = 1 / 1.15
    eps: float = 1e-4
    r_max: int = 5
    n_step: int = 500
    toll: Optional[float] = None
    max_restarts: int = 100
    dense_cap: int = DENSE_CAP
    linear_solver: str = "auto"

    def __post_init__(self):
        if not self.tau0 > 0:
            raise InvalidConfig("tau0 must be positive")
        if self.alpha < 1:
            raise InvalidConfig("alpha must be >= 1")
        if not 0 < self.beta <= 1:
            raise InvalidConfig("beta must lie in (0, 1]")
        if not self.eps > 0:
            raise InvalidConfig("eps must be positive")
        if self.toll is not None and not self.toll > 0:
            raise InvalidConfig("toll must be positive")
        if self.linear_solver not in ("auto", "dense", "lowrank"):
            raise InvalidConfig(f"unknown linear solver {self.linear_solver!r}")
        if self.r_max < 1 or self.n_step < 0 or self.max_restarts < 0:
            raise InvalidConfig("r_max >= 1, n_step >= 0 and max_restarts >= 0 required")

    def tolerance(self, M: int) -> float:
        return self.toll if self.toll is not None else 1e-13 * math.sqrt(M)


# ---------------------------------------------------------------------------
# objective and its local quadratic model
# ---------------------------------------------------------------------------


class DesignObjective:
    """``F_eta(z) = F(z) + eta * |pi_K(z**2)|^2`` on a fixed Vandermonde matrix.

    With ``projector=None`` (or ``eta=0``) this is plain ``F``.  ``projector``
    must provide ``apply(v)`` (projection onto the kernel of ``V2^T``) and
    ``range_basis`` (orthonormal basis of the range of ``V2``).
    """

    def __init__(self, V, eta: float = 0.0, projector=None, dense_cap: int = DENSE_CAP,
                 linear_solver: str = "auto"):
        if eta < 0:
            raise InvalidConfig("eta must be nonnegative")
        if linear_solver not in ("auto", "dense", "lowrank"):
            raise InvalidConfig(f"unknown linear solver {linear_solver!r}")
        self.linear_solver = linear_solver
        self.V = as_matrix(V)
        self.eta = float(eta) if projector is not None else 0.0
        self.projector = projector
        self.dense_cap = dense_cap

    @property
    def M(self) -> int:
        return self.V.shape[0]

    @property
    def N(self) -> int:
        return self.V.shape[1]

    def with_eta(self, eta: float) -> "DesignObjective":
        return DesignObjective(self.V, eta, self.projector, self.dense_cap, self.linear_solver)

    @property
    def use_dense(self) -> bool:
        """Whether Newton systems are solved with the dense ``M x M`` Hessian.

        ``auto`` picks the low-rank route when ``M`` exceeds the dense cap or
        the rank of the kernel part is below ``M / 8``.
        """
        if self.linear_solver != "auto":
            return self.linear_solver == "dense"
        if self.M > self.dense_cap:
            return False
        N = self.N
        r = N * (N + 1) // 2
        if self.eta > 0:
            r = min(r, self.projector.range_basis.shape[1])
        return 8 * r > self.M

    def evaluate(self, z) -> "LocalModel":
        """Raises :class:`SupportRankDeficient` if ``G(z**2)`` is singular."""
        z = np.asarray(z, dtype=float)
        onb = weighted_onb(self.V, z)
        return LocalModel(self, z, onb)

    def value(self, z) -> float:
        try:
            return self.evaluate(z).value
        except SupportRankDeficient:
            return math.inf


class LocalModel:
    """Value, gradient and Hessian solves of the objective at one point ``z``."""

    def __init__(self, objective: DesignObjective, z: np.ndarray, onb: WeightedONB):
        self.objective = objective
        self.z = z
        self.onb = onb
        self.B = bergman(onb)
        N = onb.N
        w = z * z
        self.w = w
        grad_w = 1.0 - self.B / N
        value = -onb.logdet / N + float(w.sum())
        eta = objective.eta
        if eta > 0:
            pw = objective.projector.apply(w)
            grad_w = grad_w + 2.0 * eta * pw
            value += eta * float(pw @ pw)
            self.projected_w = pw
        else:
            self.projected_w = None
        self.grad_w = grad_w
        self.value = value
        self.grad = 2.0 * z * grad_w
        self._dense = None

    @property
    def grad_inf(self) -> float:
        return float(np.abs(self.grad).max())

    def kkt_residual(self, rtol=None) -> float:
        from .diagnostics import kkt_vector

        kw = {} if rtol is None else {"rtol": rtol}
        return float(kkt_vector(self.w, self.grad_w, **kw).max())

    # Hessian of F_eta ------------------------------------------------------

    def hessian(self) -> np.ndarray:
        """Dense ``Hess F_eta(z)``; only for ``M <= dense_cap``."""
        if self._dense is None:
            obj = self.objective
            if obj.M > obj.dense_cap:
                from .errors import DenseCapExceeded

                raise DenseCapExceeded(f"M = {obj.M} exceeds the dense cap {obj.dense_cap}")
            z = self.z
            Vt = self.onb.Vtilde
            H = Vt @ Vt.T
            H *= H
            H *= (4.0 / self.onb.N) * np.outer(z, z)
            if obj.eta > 0:
                Q = obj.projector.range_basis
                Qz = z[:, None] * Q
                H -= 8.0 * obj.eta * (Qz @ Qz.T)
                H[np.diag_indices_from(H)] += 8.0 * obj.eta * z * z
            H[np.diag_indices_from(H)] += 2.0 * self.grad_w
            self._dense = H
        return self._dense

    def _low_rank_factors(self):
        """``Hess F_eta = diag(D) + Y C Y^T`` with ``Y = diag(z) Q``."""
        obj = self.objective
        Vt = self.onb.Vtilde
        N = self.onb.N
        iu, ju = np.triu_indices(N)
        P = Vt[:, iu] * Vt[:, ju]
        P[:, iu != ju] *= math.sqrt(2.0)
        D = 2.0 * self.grad_w
        if obj.eta > 0:
            Q = obj.projector.range_basis
            A = Q.T @ P
            C = (4.0 / N) * (A @ A.T) - 8.0 * obj.eta * np.eye(Q.shape[1])
            D = D + 8.0 * obj.eta * self.z * self.z
        else:
            Q = P
            C = (4.0 / N) * np.eye(P.shape[1])
        return D, self.z[:, None] * Q, C

    def newton_step(self, tau: float, rhs: np.ndarray, indefinite_ok: bool = False) -> np.ndarray:
        """Solve ``(Hess F_eta + I / tau) x = rhs``.

        Raises :class:`IndefiniteHessian` if the matrix is not positive definite,
        unless ``indefinite_ok``, in which case a symmetric indefinite (LDL^T)
        solve is used instead.
        """
        if self.objective.use_dense:
            Hg = self.hessian().copy()
            Hg[np.diag_indices_from(Hg)] += 1.0 / tau
            try:
                cf = sla.cho_factor(Hg, lower=True, check_finite=False)
                if np.all(np.diag(cf[0]) > 0) and np.all(np.isfinite(cf[0])):
                    return sla.cho_solve(cf, rhs, check_finite=False)
            except np.linalg.LinAlgError:
                pass
            if not indefinite_ok:
                raise IndefiniteHessian("Hessian of the step objective is not positive definite")
            try:
                return sla.solve(Hg, rhs, assume_a="sym", check_finite=False)
            except np.linalg.LinAlgError:
                raise IndefiniteHessian("Hessian of the step objective is singular")
        D, Y, C = self._low_rank_factors()
        try:
            return solve_diag_plus_low_rank(D + 1.0 / tau, Y, C, rhs)
        except IndefiniteHessian:
            if not indefinite_ok:
                raise
        return solve_diag_plus_low_rank(D + 1.0 / tau, Y, C, rhs, require_pd=False)


def solve_diag_plus_low_rank(D, Y, C, rhs, require_pd: bool = True, couple: float = 10.0):
    """Solve ``(diag(D) + Y C Y^T) x = rhs`` for symmetric ``C``.

    Indices whose diagonal ``D_i`` is small relative to their low-rank coupling
    form a dense block ``S``; the rest ``T`` is eliminated through the
    push-through identity ``(I + A C A^T)^{-1} = I - A C (I + A^T A C)^{-1} A^T``.
    With ``require_pd`` the matrix is certified positive definite on the ``T``
    block and on the Schur complement over ``S``; otherwise a symmetric
    indefinite solve is used for the Schur complement.
    """
    indefinite = IndefiniteHessian("Hessian of the step objective is not positive definite")
    couple_diag = np.einsum("ij,jk,ik->i", Y, C, Y)
    in_S = (D <= couple * np.abs(couple_diag)) | (D <= 0)
    if require_pd and np.any(D[~in_S] <= 0):
        raise indefinite
    S = np.flatnonzero(in_S)
    T = np.flatnonzero(~in_S)
    r = Y.shape[1]
    sq = np.sqrt(D[T])
    At = Y[T] / sq[:, None]
    G = At.T @ At
    if require_pd:
        # T block is D_T^{1/2} (I + At C At^T) D_T^{1/2}; PD iff I + G^{1/2} C G^{1/2} is PD
        evG, UG = np.linalg.eigh(G)
        Gh = (UG * np.sqrt(np.maximum(evG, 0.0))) @ UG.T
        if np.linalg.eigvalsh(np.eye(r) + Gh @ C @ Gh)[0] <= 0:
            raise indefinite
    IGC = np.eye(r) + G @ C

    def solve_T(b):
        scale = sq if b.ndim == 1 else sq[:, None]
        bt = b / scale
        corr = At @ (C @ np.linalg.solve(IGC, At.T @ bt))
        return (bt - corr) / scale

    x = np.empty(D.size)
    if S.size == 0:
        x[T] = solve_T(rhs[T])
        return x
    # Y_T^T H_TT^{-1} Y_T = G - G C (I + G C)^{-1} G
    Xi = G - G @ C @ np.linalg.solve(IGC, G)
    Ys = Y[S]
    Sc = Ys @ (C - C @ Xi @ C) @ Ys.T
    Sc[np.diag_indices_from(Sc)] += D[S]
    yt = solve_T(rhs[T])
    rhs_S = rhs[S] - Ys @ (C @ (Y[T].T @ yt))
    if require_pd:
        try:
            cf = sla.cho_factor(Sc, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise indefinite
        if not np.all(np.diag(cf[0]) > 0):
            raise indefinite
        xS = sla.cho_solve(cf, rhs_S, check_finite=False)
    else:
        try:
            xS = sla.solve(Sc, rhs_S, assume_a="sym", check_finite=False)
        except np.linalg.LinAlgError:
            raise IndefiniteHessian("Hessian of the step objective is singular")
    x[S] = xS
    x[T] = solve_T(rhs[T] - Y[T] @ (C @ (Ys.T @ xS)))
    return x


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


@dataclass
class FlowTrace:
    """Per accepted step: ``tau`` used, step size, residuals, Newton work, timing."""

    initial_grad_inf: float = math.nan
    initial_energy: float = math.nan
    tau: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    grad_inf: list = field(default_factory=list)
    kkt_residual: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    step_inf: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)

    def __len__(self):
        return len(self.tau)

    def record(self, **kw):
        for key, val in kw.items():
            getattr(self, key).append(val)

    def as_arrays(self) -> dict:
        return {k: np.asarray(v) for k, v in self.__dict__.items() if isinstance(v, list)}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(TRACE_COLUMNS)
            for k in range(len(self)):
                out.writerow([k + 1, repr(self.tau[k]), repr(self.step_norm[k]),
                              repr(self.grad_inf[k]), repr(self.kkt_residual[k]),
                              self.newton_iters[k], self.restarts[k]])


@dataclass
class FlowResult:
    z: np.ndarray
    trace: FlowTrace
    converged: bool
    tau_final: float

    @property
    def w(self) -> np.ndarray:
        return self.z * self.z


@dataclass
class NewtonResult:
    z_new: np.ndarray
    iters: int
    converged: bool
    model: Optional[LocalModel]


# ---------------------------------------------------------------------------
# Newton inner solve
# ---------------------------------------------------------------------------


def _stationarity_floor(model: LocalModel, z_old, tau):
    # roundoff level of d_i g; replaces eps*|dz_i| when the step is at roundoff
    z = model.z
    scale = 2.0 * np.abs(z) * (1.0 + model.B / model.onb.N)
    if model.projected_w is not None:
        scale += 4.0 * model.objective.eta * np.abs(z * model.projected_w)
    scale += (np.abs(z) + np.abs(z_old)) / tau
    return 64.0 * UNIT_ROUNDOFF * scale


def newton_converged(model: LocalModel, z_old, tau, eps) -> bool:
    z = model.z
    dz = z - z_old
    grad_g = model.grad + dz / tau
    bound = np.maximum(eps * np.abs(dz), _stationarity_floor(model, z_old, tau))
    if np.any(np.abs(grad_g) > bound):
        return False
    return bool(np.all(np.sign(z) == np.sign(z_old)))


def newton_inner(objective: DesignObjective, z_old, tau: float, p: FlowParams,
                 model_old: Optional[LocalModel] = None) -> NewtonResult:
    """One backward-Euler step by Newton's method on ``g(.; z_old, tau)``.

    Raises :class:`IndefiniteHessian` when ``Hess g`` is not positive definite
    and :class:`SupportRankDeficient` when an iterate loses support rank.
    """
    z_old = np.asarray(z_old, dtype=float)
    frozen = z_old == 0
    model = model_old if model_old is not None else objective.evaluate(z_old)
    z = z_old
    for r in range(p.r_max + 1):
        if newton_converged(model, z_old, tau, p.eps):
            return NewtonResult(z, r, True, model)
        if r == p.r_max:
            break
        grad_g = model.grad + (z - z_old) / tau
        z = z - model.newton_step(tau, grad_g, indefinite_ok=p.beta == 1)
        z[frozen] = 0.0
        model = objective.evaluate(z)
    return NewtonResult(z, p.r_max, False, model)


# ---------------------------------------------------------------------------
# outer loops
# ---------------------------------------------------------------------------


def _integrate(objective: DesignObjective, z0, p: FlowParams, adaptive: bool,
               raise_on_budget: bool = True) -> FlowResult:
    z = np.array(z0, dtype=float)
    if z.shape != (objective.M,):
        raise InvalidConfig(f"start vector has shape {z.shape}, expected ({objective.M},)")
    model = objective.evaluate(z)
    res = model.grad_inf
    if res == 0:
        raise ZeroGradientStart("gradient vanishes at the starting point")
    toll = p.tolerance(objective.M)
    trace = FlowTrace(initial_grad_inf=res, initial_energy=model.value)
    tau = p.tau0
    t0 = time.perf_counter()
    k = 0
    while k < p.n_step and res > toll:
        restarts = 0
        while True:
            failure = None
            try:
                step = newton_inner(objective, z, tau, p, model_old=model)
                if not step.converged:
                    failure = "newton iteration cap reached"
                elif step.model.value > model.value + 1e-12 * (1.0 + abs(model.value)):
                    failure = "energy increased"
            except (IndefiniteHessian, SupportRankDeficient) as exc:
                failure = str(exc)
            if failure is None:
                break
            if not adaptive or p.beta == 1:
                raise NonConvergence(f"step {k + 1} failed at tau = {tau:g}: {failure}",
                                     trace, z)
            if restarts >= p.max_restarts:
                raise RestartBudgetExhausted(
                    f"step {k + 1}: {restarts} restarts without an accepted step "
                    f"(last failure: {failure})", trace, z)
            restarts += 1
            tau *= p.beta
            log.debug("step %d: %s; tau -> %g", k + 1, failure, tau)
        dz = step.z_new - z
        z = step.z_new
        model = step.model
        res = model.grad_inf
        k += 1
        trace.record(tau=tau, step_norm=float(np.linalg.norm(dz)),
                     step_inf=float(np.abs(dz).max()), grad_inf=res,
                     kkt_residual=model.kkt_residual(), newton_iters=step.iters,
                     restarts=restarts, energy=model.value,
                     elapsed=time.perf_counter() - t0)
        tau *= p.alpha
    converged = res <= toll
    if not converged and raise_on_budget:
        raise NonConvergence(f"no convergence in {p.n_step} steps (residual {res:.3e})",
                             trace, z)
    return FlowResult(z, trace, converged, tau)


def solve_fixed_step(objective: DesignObjective, z0, p: FlowParams = FlowParams(),
                     **kw) -> FlowResult:
    """Constant time step ``p.tau0``; any Newton failure is fatal."""
    p = replace(p, alpha=1.0, beta=1.0, max_restarts=0)
    return _integrate(_as_objective(objective), z0, p, adaptive=False, **kw)


def solve_adaptive(objective: DesignObjective, z0, p: FlowParams = FlowParams(),
                   **kw) -> FlowResult:
    """Adaptive time step: ``tau *= alpha`` on success, ``tau *= beta`` and retry on failure."""
    return _integrate(_as_objective(objective), z0, p, adaptive=True, **kw)


def _as_objective(obj):
    return obj if isinstance(obj, DesignObjective) else DesignObjective(obj)
