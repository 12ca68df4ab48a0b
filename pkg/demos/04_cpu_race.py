"""Gradient flow against the multiplicative algorithm on 10000 Gaussian points.

Both methods get the same wall-clock budget (three times what the flow
needs).  The output CSV has one row per sample with method, seconds and KKT
residual, ready for a log-scale plot.
"""

import sys

import optdesign as od

cfg = od.preset("exp5")
cfg.out_dir = sys.argv[1] if len(sys.argv) > 1 else "out/exp5"
res = od.run_experiment(cfg)
d = res.diagnostics
print(f"flow: KKT {d['kkt']['max_residual']:.1e} in {d['timings']['solve']:.1f} s")
print(f"multiplicative: KKT {d['titterington']['final_kkt']:.1e} in "
      f"{d['titterington']['elapsed']:.1f} s ({d['titterington']['iterations']} iterations)")
print("samples written to", res.artifacts["cpu_comparison"])
