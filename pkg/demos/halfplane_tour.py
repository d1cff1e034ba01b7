"""A walk through the half-plane with the density rho(t) = (t+2)^-2.

Run with `python3 demos/halfplane_tour.py`.  Takes a few seconds.
"""

import numpy as np

from sphericalization import PowLog, build_halfplane, classify, d_rho, d_rho_infinity, sphericalize
from sphericalization.sphere import check_condition_C, diameter_bound

# Classify the density first: the construction needs (A) and (B).
f = PowLog(-2, 0)
rep = classify(f)
print(f.name, "A:", rep.verdict_A, round(rep.C_A_hat, 3), "B:", rep.verdict_B, round(rep.C_B_hat, 3))
print("epsilon =", rep.epsilon_hat, " tau1 =", rep.tau1_hat)

# A log-polar graded mesh of the upper half-plane out to |x| = 1000.
m = build_halfplane(0.05, 1e3)
print(m.n_nodes, "nodes,", m.n_edges, "edges")

v = sphericalize(m, f, sigma=2.0)

# The radial segment from (0,1) to (0,3) is a geodesic, so d_rho is the integral of rho over [1,3].
a = int(m.nearest([[0, 1]])[0])
b = int(m.nearest([[0, 3]])[0])
print("d_rho((0,1),(0,3)) =", float(d_rho(v, a, [b])[0]), " exact 2/15 =", 2 / 15)

# Distance to the added point at infinity, bracketed by h(|x|) = (|x|+1) rho(|x|).
for y in (1.0, 10.0, 100.0):
    br = d_rho_infinity(v, int(m.nearest([[0, y]])[0]))
    print(f"|x|={y:6.1f}  d(x,inf)={br.point:.5f}  bracket=[{br.bracket_lo:.5f}, {br.bracket_hi:.3g}]")

print("sampled diameter", round(v.diam_rho_hat, 4), "<= bound", round(diameter_bound(v), 3))

# The measure side: Condition (C) holds for sigma = 2.
cc = check_condition_C(v)
print("Condition (C):", cc.verdict, "C_C_hat =", round(cc.C_C_hat, 3))

# The whole space has finite mu_rho mass once sphericalized.
print("mu_rho(X) =", v.mu_rho_total, " of which beyond the mesh:", v.tail_mass)
print("largest edge weight", np.max(v.edge_rho_weight), "smallest", np.min(v.edge_rho_weight))
