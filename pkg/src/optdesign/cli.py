"""Command-line front end: ``optdesign run | compress | check``.

Errors are reported as one JSON object on stderr with a nonzero exit status
(2 for invalid input, 1 for numerical failures, 3 when ``check`` finds the
design not optimal, 4 when ``run`` exhausts its iteration budget).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from .compression import compress
from .core import BasisSpec, CandidateSet, build_vandermonde, read_design_csv, write_design_csv
from .diagnostics import kkt_report
from .errors import InvalidConfig, OptDesignError
from .experiments import PRESETS, load_config, preset, run_experiment
from .regularization import build_phi2

FLOW_FLAGS = {"tau0": "tau0", "alpha": "alpha", "beta": "beta", "eps": "eps",
              "rmax": "r_max", "toll": "toll", "nstep": "n_step"}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optdesign", description="D-optimal designs on finite sets")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a preset or a config file")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--config", help="TOML or JSON experiment file")
    run.add_argument("--algo", choices=["fixed", "adaptive", "regularized", "titterington"])
    run.add_argument("--tau0", type=float)
    run.add_argument("--alpha", type=float)
    run.add_argument("--beta", type=float)
    run.add_argument("--eps", type=float)
    run.add_argument("--rmax", type=int)
    run.add_argument("--toll", type=float)
    run.add_argument("--nstep", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--model-degree", type=int)
    run.add_argument("--compress", action="store_true", default=None)
    run.add_argument("--out-dir")

    for name, hlp in (("compress", "compress a design onto at most dim Phi^2 points"),
                      ("check", "report KKT and G-optimality of a design")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--design", required=True,
                        help="CSV with coordinates and a final weight column")
        sp.add_argument("--points",
                        help="candidate CSV; then --design may hold weights only")
        sp.add_argument("--model-degree", type=int, required=True)
        if name == "compress":
            sp.add_argument("--out", default="compressed_design.csv")
        else:
            sp.add_argument("--tol", type=float, default=1e-8,
                            help="KKT tolerance deciding the exit status")
    return ap


def _apply_overrides(cfg, args):
    flow = {FLOW_FLAGS[k]: getattr(args, k) for k in FLOW_FLAGS if getattr(args, k) is not None}
    if args.algo == "fixed" or (args.algo is None and cfg.algorithm == "fixed"):
        flow.update(alpha=1.0, beta=1.0)
    try:
        fp = replace(cfg.flow, **flow)
    except TypeError as exc:
        raise InvalidConfig(str(exc))
    upd = {"flow": fp}
    for attr, key in (("algo", "algorithm"), ("seed", "seed"), ("model_degree", "model_degree"),
                      ("compress", "compress"), ("out_dir", "out_dir")):
        val = getattr(args, attr)
        if val is not None:
            upd[key] = val
    return replace(cfg, **upd).validate()


def _load_design(args):
    coords, w = read_design_csv(args.design)
    if args.points:
        from .core import load_candidates_csv

        X = load_candidates_csv(args.points)
        if X.M != w.size:
            raise InvalidConfig(f"{args.points} has {X.M} points but the design has {w.size} weights")
    else:
        if coords.shape[1] == 0:
            raise InvalidConfig("design CSV has no coordinates; pass --points")
        X = CandidateSet(coords)
    return X, w


def cmd_run(args) -> int:
    cfg = preset(args.preset) if args.preset else load_config(args.config)
    if args.preset and args.out_dir is None:
        args.out_dir = f"out/{args.preset}"
    cfg = _apply_overrides(cfg, args)
    res = run_experiment(cfg)
    d = res.diagnostics
    summary = {"name": cfg.name, "M": d["M"], "N": d["N"],
               "support_size": d["kkt"]["support_size"],
               "kkt_max_residual": d["kkt"]["max_residual"],
               "out_dir": str(cfg.out_dir)}
    if "compression" in d:
        summary["compressed_support"] = d["compression"]["support_after"]
    print(json.dumps(summary, indent=2))
    if not d["converged"]:
        print(json.dumps({"error": "non_convergence",
                          "message": "iteration budget exhausted; artifacts hold the last iterate"}),
              file=sys.stderr)
        return 4
    return 0


def cmd_compress(args) -> int:
    X, w = _load_design(args)
    V = build_vandermonde(X, BasisSpec.total_degree(args.model_degree))
    c = compress(w, build_phi2(V))
    write_design_csv(args.out, X.points[c.indices], c.weights)
    print(json.dumps({"support_before": int(np.count_nonzero(w)),
                      "support_after": c.cardinality,
                      "moment_residual": c.moment_residual, "out": args.out}, indent=2))
    return 0


def cmd_check(args) -> int:
    X, w = _load_design(args)
    V = build_vandermonde(X, BasisSpec.total_degree(args.model_degree))
    rep = kkt_report(V, w)
    out = rep.to_dict()
    out["optimal"] = bool(rep.max_residual <= args.tol)
    print(json.dumps(out, indent=2))
    return 0 if out["optimal"] else 3


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handler = {"run": cmd_run, "compress": cmd_compress, "check": cmd_check}[args.command]
    try:
        return handler(args)
    except OptDesignError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 2 if isinstance(exc, InvalidConfig) else 1
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": "invalid_input", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
