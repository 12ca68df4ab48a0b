"""Candidate-set generators, experiment configurations and the run pipeline.

Random clouds use :func:`numpy.random.default_rng` (the PCG64 bit generator),
so a seed reproduces the same points on every platform numpy supports.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .compression import compress
from .core import (
    SUPPORT_RTOL,
    BasisSpec,
    CandidateSet,
    build_vandermonde,
    load_candidates_csv,
    support_indices,
    uniform_sqrt_design,
    write_design_csv,
)
from .diagnostics import (
    DIAGNOSTICS_SCHEMA,
    convergence_rate,
    dump_json,
    error_estimate,
    hessian_spectrum,
    kkt_report,
    spectrum_summary,
    titterington_solve,
    wellposedness_probe,
)
from .errors import InvalidConfig
from .flow import DesignObjective, FlowParams, FlowTrace, solve_adaptive, solve_fixed_step
from .kernels import DENSE_CAP
from .regularization import EtaSchedule, build_phi2, kernel_projector, solve_regularized

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def chebyshev_lobatto_points(deg: int) -> np.ndarray:
    """``cos(k pi / deg)``, ``k = 0..deg``."""
    if deg < 1:
        raise InvalidConfig("Chebyshev-Lobatto degree must be >= 1")
    return np.cos(np.arange(deg + 1) * np.pi / deg)


def gen_chebyshev_lobatto_grid(deg: int, n: int = 2) -> CandidateSet:
    """Tensor grid of Chebyshev-Lobatto points, ``(deg + 1)**n`` points."""
    if n < 1:
        raise InvalidConfig("dimension must be >= 1")
    x = chebyshev_lobatto_points(deg)
    mesh = np.meshgrid(*([x] * n), indexing="ij")
    return CandidateSet(np.column_stack([m.ravel() for m in mesh]))


def _check_count(M):
    if int(M) != M or M < 1:
        raise InvalidConfig(f"number of points must be a positive integer, got {M}")


def gen_uniform_cloud(M: int, seed: int, box=(-1.0, 1.0), n: int = 2) -> CandidateSet:
    _check_count(M)
    lo, hi = box
    rng = np.random.default_rng(seed)
    return CandidateSet(rng.uniform(lo, hi, size=(int(M), n)))


def gen_gaussian_cloud(M: int, seed: int, n: int = 2) -> CandidateSet:
    _check_count(M)
    rng = np.random.default_rng(seed)
    return CandidateSet(rng.standard_normal((int(M), n)))


def gen_disk_admissible_mesh(mesh_degree: int) -> CandidateSet:
    """Polar mesh of the closed unit disk with ``4 m**2 + 1`` points, ``m = mesh_degree``.

    ``2m`` equally spaced diameters (angles ``k pi / (2m)``), each carrying the
    ``2m + 1`` Chebyshev-Lobatto points of ``[-1, 1]``.  The center, shared by
    every diameter, is kept once.
    """
    m = int(mesh_degree)
    if m < 1:
        raise InvalidConfig("mesh degree must be >= 1")
    t = chebyshev_lobatto_points(2 * m)
    t = t[np.abs(np.arange(2 * m + 1) - m) > 0]          # drop the center (index m)
    theta = np.arange(2 * m) * np.pi / (2 * m)
    pts = [np.zeros((1, 2))]
    for th in theta:
        pts.append(np.column_stack([t * math.cos(th), t * math.sin(th)]))
    return CandidateSet(np.vstack(pts))


def gen_csv_file(path) -> CandidateSet:
    return load_candidates_csv(path)


GENERATORS = {
    "chebyshev_lobatto_grid": gen_chebyshev_lobatto_grid,
    "uniform_cloud": gen_uniform_cloud,
    "gaussian_cloud": gen_gaussian_cloud,
    "disk_admissible_mesh": gen_disk_admissible_mesh,
    "csv_file": gen_csv_file,
}
ALGORITHMS = ("fixed", "adaptive", "regularized", "titterington")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _sigma_from_name(name: str, factor: float):
    if name == "square":
        return lambda eta: eta * eta
    if name == "geometric":
        if not 0 < factor < 1:
            raise InvalidConfig("geometric sigma needs 0 < sigma_factor < 1")
        return lambda eta: factor * eta
    raise InvalidConfig(f"unknown sigma {name!r} (expected 'square' or 'geometric')")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``generator_args`` are passed to the generator named by ``generator``; a
    ``seed`` key is filled from ``seed`` for the random clouds.
    """

    name: str = "custom"
    generator: str = "chebyshev_lobatto_grid"
    generator_args: dict = field(default_factory=dict)
    model_degree: int = 2
    algorithm: str = "adaptive"
    flow: FlowParams = field(default_factory=FlowParams)
    eta0: float = 1e-2
    sigma: str = "square"
    sigma_factor: float = 0.1
    n_max_eta: int = 8
    toll_eta: float = 1e-8
    compress: bool = False
    probe: bool = False
    seed: int = 20240601
    compare_titterington: bool = False
    titterington_toll: float = 1e-8
    titterington_n_max: int = 1_000_000
    titterington_time_factor: float = 3.0
    out_dir: str = "out"

    def validate(self) -> "ExperimentConfig":
        if self.generator not in GENERATORS:
            raise InvalidConfig(f"unknown generator {self.generator!r}; "
                                f"choose from {sorted(GENERATORS)}")
        if self.algorithm not in ALGORITHMS:
            raise InvalidConfig(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.model_degree < 0:
            raise InvalidConfig("model_degree must be >= 0")
        self.schedule()
        return self

    def schedule(self) -> EtaSchedule:
        return EtaSchedule(self.eta0, _sigma_from_name(self.sigma, self.sigma_factor),
                           self.n_max_eta, self.toll_eta)

    def candidates(self) -> CandidateSet:
        args = dict(self.generator_args)
        if self.generator in ("uniform_cloud", "gaussian_cloud"):
            args.setdefault("seed", self.seed)
        try:
            return GENERATORS[self.generator](**args)
        except TypeError as exc:
            raise InvalidConfig(f"bad arguments for generator {self.generator}: {exc}")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        flow = data.pop("flow", {}) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown configuration keys: {sorted(unknown)}")
        try:
            fp = FlowParams(**flow)
        except TypeError as exc:
            raise InvalidConfig(f"bad flow parameters: {exc}")
        return cls(flow=fp, **data).validate()

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["flow"] = asdict(self.flow)
        return d


def load_config(path) -> ExperimentConfig:
    """Read a TOML or JSON experiment file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        import json

        data = json.loads(text)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:      # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(text)
    return ExperimentConfig.from_mapping(data)


_PAPER_FLOW = FlowParams(tau0=1.0, alpha=1.15, beta=1 / 1.15, eps=1e-4, r_max=5)

PRESETS: dict[str, ExperimentConfig] = {
    # fixed time step; tau = 1 makes Hess g indefinite at the uniform start
    "exp1a": ExperimentConfig(
        "exp1a", "chebyshev_lobatto_grid", {"deg": 40}, 4, "fixed",
        FlowParams(tau0=0.3, alpha=1.0, beta=1.0, eps=1e-4, r_max=50, n_step=3000)),
    "exp1b": ExperimentConfig(
        "exp1b", "chebyshev_lobatto_grid", {"deg": 40}, 4, "adaptive", _PAPER_FLOW),
    "exp2": ExperimentConfig(
        "exp2", "uniform_cloud", {"M": 1600}, 10, "adaptive", _PAPER_FLOW),
    "exp3": ExperimentConfig(
        "exp3", "disk_admissible_mesh", {"mesh_degree": 20}, 2, "adaptive",
        replace(_PAPER_FLOW, n_step=300), probe=True),
    "exp4": ExperimentConfig(
        "exp4", "disk_admissible_mesh", {"mesh_degree": 20}, 2, "regularized",
        replace(_PAPER_FLOW, alpha=1.5, beta=1 / 1.5), compress=True, probe=True),
    "exp4x2": ExperimentConfig(
        "exp4x2", "disk_admissible_mesh", {"mesh_degree": 40}, 4, "regularized",
        replace(_PAPER_FLOW, alpha=1.5, beta=1 / 1.5), compress=True),
    "exp5": ExperimentConfig(
        "exp5", "gaussian_cloud", {"M": 10000}, 3, "adaptive", _PAPER_FLOW,
        compare_titterington=True),
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise InvalidConfig(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[name]
    return replace(cfg, generator_args=dict(cfg.generator_args))


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    points: np.ndarray
    w: np.ndarray
    diagnostics: dict
    traces: list
    compressed: Any = None
    titterington: Any = None
    artifacts: dict = field(default_factory=dict)


def _write_kkt_check(path, points, w, grad_w):
    sup = np.zeros(w.size, dtype=bool)
    sup[support_indices(w)] = True
    header = ",".join([f"x{k}" for k in range(points.shape[1])] + ["on_support", "dE", "weight"])
    data = np.column_stack([points, sup.astype(float), grad_w, w])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Generate, solve, optionally compress, diagnose, and write the artifacts.

    Files written to ``cfg.out_dir``: ``design.csv``, ``trace.csv`` (one per
    eta round for the regularized solver), ``kkt_check.csv``,
    ``diagnostics.json`` and, when requested, ``compressed_design.csv`` and
    ``cpu_comparison.csv``.
    """
    cfg.validate()
    timings = {}
    t0 = time.perf_counter()
    X = cfg.candidates()
    V = build_vandermonde(X, BasisSpec.total_degree(cfg.model_degree))
    timings["setup"] = time.perf_counter() - t0
    M, N = V.M, V.N
    z0 = uniform_sqrt_design(M)
    p = cfg.flow
    p2 = build_phi2(V)
    need_projector = cfg.algorithm == "regularized" or cfg.probe
    P = kernel_projector(p2) if need_projector else None

    objective = DesignObjective(V, dense_cap=p.dense_cap, linear_solver=p.linear_solver)
    t1 = time.perf_counter()
    traces: list[FlowTrace] = []
    extra: dict = {}
    if cfg.algorithm == "fixed":
        res = solve_fixed_step(objective, z0, p, raise_on_budget=False)
        w, traces = res.w, [res.trace]
        converged = res.converged
    elif cfg.algorithm == "adaptive":
        res = solve_adaptive(objective, z0, p, raise_on_budget=False)
        w, traces = res.w, [res.trace]
        converged = res.converged
    elif cfg.algorithm == "regularized":
        rr = solve_regularized(V, z0, cfg.schedule(), p, projector=P)
        w = rr.w
        converged = rr.converged
        traces = [r.trace for r in rr.rounds if r.trace is not None]
        extra["eta"] = {"values": rr.etas, "increments": rr.increments,
                        "converged": rr.converged, "eta_final": rr.eta_final,
                        "energies": rr.energies,
                        "kernel_norm": float(np.linalg.norm(P.apply(w)))}
    else:
        tr = titterington_solve(V, None, cfg.titterington_toll, cfg.titterington_n_max,
                                record_every=100, raise_on_budget=False)
        w = tr.w
        converged = tr.converged
        extra["titterington_iterations"] = tr.iterations
    timings["solve"] = time.perf_counter() - t1

    diag: dict = {"schema": DIAGNOSTICS_SCHEMA, "config": cfg.to_mapping(),
                  "M": M, "N": N, "converged": bool(converged)}
    rep = kkt_report(V, w)
    diag["kkt"] = rep.to_dict()
    diag["g_optimality"] = {"max_bergman": rep.max_bergman, "N": N,
                            "ok": bool(N - 1e-6 <= rep.max_bergman <= N + 1e-8)}
    diag["mass_error"] = rep.mass_error
    diag["N2"] = p2.N2
    diag["support_bracket"] = {"lower": N, "upper": p2.N2,
                               "ok": bool(N <= rep.support.size <= p2.N2)}
    if cfg.algorithm == "regularized":
        obj_eta = DesignObjective(V, rr.eta_final, P, p.dense_cap)
        diag["kkt_regularized"] = obj_eta.evaluate(np.sqrt(w)).kkt_residual()
    diag.update(extra)
    if traces:
        diag["steps"] = [len(t) for t in traces]
        longest = [t for t in traces if len(t)] or traces
        diag["rate"] = convergence_rate(longest[-1].grad_inf)

    t2 = time.perf_counter()
    z = np.sqrt(w)
    if M <= p.dense_cap:
        diag["spectrum"] = spectrum_summary(hessian_spectrum(V, z))
        diag["error_estimate"] = error_estimate(V, z).to_dict()
    if cfg.probe:
        cert = wellposedness_probe(w, P, V2=p2.V2, V=V)
        diag["wellposedness"] = cert.to_dict()
    timings["diagnostics"] = time.perf_counter() - t2

    comp = None
    if cfg.compress:
        comp = compress(w, p2, support_rtol=SUPPORT_RTOL)
        wc = comp.w
        from .core import gram_matrix

        g0, g1 = gram_matrix(V, w), gram_matrix(V, wc)
        diag["compression"] = {
            "support_before": int(support_indices(w).size),
            "support_after": comp.cardinality,
            "moment_residual": comp.moment_residual,
            "logdet_change": abs(g1.logdet - g0.logdet),
            "kkt_after": kkt_report(V, wc).max_residual,
        }

    titt = None
    if cfg.compare_titterington:
        budget = cfg.titterington_time_factor * timings["solve"]
        titt = titterington_solve(V, None, cfg.titterington_toll, cfg.titterington_n_max,
                                  raise_on_budget=False, time_budget=budget)
        diag["titterington"] = {"iterations": titt.iterations,
                                "final_kkt": titt.kkt_residual[-1],
                                "elapsed": titt.elapsed[-1]}
    timings["total"] = time.perf_counter() - t0
    diag["timings"] = timings

    result = ExperimentResult(cfg, X.points, w, diag, traces, comp, titt)
    if write:
        _write_artifacts(result, V)
    return result


def _write_artifacts(result: ExperimentResult, V):
    cfg = result.config
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arts = result.artifacts
    arts["design"] = out / "design.csv"
    write_design_csv(arts["design"], result.points, result.w)
    for i, tr in enumerate(result.traces):
        name = "trace.csv" if len(result.traces) == 1 else f"trace_eta{i}.csv"
        tr.to_csv(out / name)
        arts[name] = out / name
    model = DesignObjective(V).evaluate(np.sqrt(result.w))
    arts["kkt_check"] = out / "kkt_check.csv"
    _write_kkt_check(arts["kkt_check"], result.points, result.w, model.grad_w)
    if result.compressed is not None:
        arts["compressed"] = out / "compressed_design.csv"
        c = result.compressed
        write_design_csv(arts["compressed"], result.points[c.indices], c.weights)
    if result.titterington is not None and result.traces:
        arts["cpu_comparison"] = out / "cpu_comparison.csv"
        tr = result.traces[-1]
        tt = result.titterington
        with open(arts["cpu_comparison"], "w") as fh:
            fh.write("method,seconds,kkt_residual\n")
            for s, r in zip(tr.elapsed, tr.kkt_residual):
                fh.write(f"flow,{s!r},{r!r}\n")
            for s, r in zip(tt.elapsed, tt.kkt_residual):
                fh.write(f"titterington,{s!r},{r!r}\n")
    arts["diagnostics"] = out / "diagnostics.json"
    dump_json(result.diagnostics, arts["diagnostics"])
