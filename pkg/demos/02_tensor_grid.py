"""Degree-4 fit on a 41 x 41 Chebyshev-Lobatto grid.

The adaptive solver grows the time step after each accepted step, so the
residual falls faster and faster.  A constant step shows a straight line in
a log plot instead.  Pass ``--fixed-steps 200`` to also see the fixed-step
profile (about 0.08 s per step).
"""

import argparse
from dataclasses import replace

import optdesign as od

ap = argparse.ArgumentParser()
ap.add_argument("--fixed-steps", type=int, default=0)
args = ap.parse_args()

cfg = od.preset("exp1b")
V = od.build_vandermonde(cfg.candidates(), od.BasisSpec.total_degree(cfg.model_degree))
z0 = od.uniform_sqrt_design(V.M)

ada = od.solve_adaptive(V, z0, cfg.flow)
rep = od.kkt_report(V, ada.w)
print(f"M = {V.M}, N = {V.N}, support = {rep.support.size}, KKT = {rep.max_residual:.1e}")
for k, (tau, g) in enumerate(zip(ada.trace.tau, ada.trace.grad_inf), 1):
    print(f"  step {k:3d}  tau = {tau:9.3e}  |grad F| = {g:.3e}")
print("tail shape:", od.convergence_rate(ada.trace.grad_inf, tail=5))

if args.fixed_steps:
    p = replace(od.preset("exp1a").flow, n_step=args.fixed_steps)
    fix = od.solve_fixed_step(V, z0, p, raise_on_budget=False)
    rate = od.convergence_rate(fix.trace.grad_inf, tail=20)
    print(f"fixed tau = {p.tau0}: |grad F| = {fix.trace.grad_inf[-1]:.2e} after "
          f"{len(fix.trace)} steps, tail ratios {min(rate['ratios']):.4f}..{max(rate['ratios']):.4f}")
