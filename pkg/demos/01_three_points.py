"""Smallest possible D-optimal design: a line fitted on {-1, 0, 1}.

Intuition says the middle point is wasted when fitting a line, and the
solver agrees: all mass goes to the endpoints, half each.
"""

import numpy as np

import optdesign as od

X = od.CandidateSet(np.array([[-1.0], [0.0], [1.0]]))
V = od.build_vandermonde(X, od.BasisSpec.total_degree(1))
z0 = od.uniform_sqrt_design(X.M)

res = od.solve_adaptive(V, z0)
print("weights        ", np.round(res.w, 12))
print("steps          ", len(res.trace))

# Kiefer-Wolfowitz: the Bergman function peaks at N exactly on the support
rep = od.kkt_report(V, res.w)
print("max B / N      ", rep.max_bergman / V.N)
print("KKT residual   ", rep.max_residual)

# the classical multiplicative algorithm reaches the same point, more slowly
tit = od.titterington_solve(V, toll=1e-10)
print("Titterington   ", np.round(tit.w, 10), f"after {tit.iterations} iterations")
