"""Quadratic fit on a polar mesh of the unit disk: optimal designs are not unique.

Every design with the same degree-4 moments has the same information matrix.
The probe finds a second optimal design far from the computed one, and the
regularized continuation picks a canonical one, which then compresses to a
handful of points.
"""

import numpy as np

import optdesign as od
from optdesign.regularization import EtaSchedule, build_phi2, kernel_projector, solve_regularized

X = od.gen_disk_admissible_mesh(20)
V = od.build_vandermonde(X, od.BasisSpec.total_degree(2))
p2 = build_phi2(V)
P = kernel_projector(p2)
z0 = od.uniform_sqrt_design(X.M)
print(f"M = {X.M}, N = {V.N}, dim Phi^2 = {p2.N2}, kernel dimension = {P.d}")

plain = od.solve_adaptive(V, z0, od.FlowParams(n_step=300), raise_on_budget=False)
cert = od.wellposedness_probe(plain.w, P, V2=p2.V2, V=V)
print(f"probe: {cert.verdict}, second minimizer at distance {cert.distance:.3f}, "
      f"energy gap {cert.energy_gap:.1e}")

flow = od.FlowParams(alpha=1.5, beta=1 / 1.5)
reg = solve_regularized(V, z0, EtaSchedule(eta0=1e-2), flow, projector=P)
print("eta rounds:", [f"{e:.1e}" for e in reg.etas])
print("KKT after continuation:", od.kkt_report(V, reg.w).max_residual)

c = od.compress(reg.w, p2, support_rtol=od.SUPPORT_RTOL)
print(f"support {od.support_indices(reg.w).size} -> {c.cardinality} points, "
      f"moment residual {c.moment_residual:.1e}")
for x, wi in zip(X.points[c.indices], c.weights):
    print(f"  ({x[0]:+.4f}, {x[1]:+.4f})  r = {np.hypot(*x):.4f}  w = {wi:.6f}")
