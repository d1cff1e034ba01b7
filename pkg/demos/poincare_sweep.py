"""Poincare ratios before and after sphericalization, over the versioned field suite.

Run with `python3 demos/poincare_sweep.py`.  Takes about half a minute.
"""

from sphericalization import PowLog, build_halfplane, sphericalize
from sphericalization import poincare as pc

m = build_halfplane(0.05, 1e4)
v = sphericalize(m, PowLog(-2, 0), 2.0)

fields = pc.field_suite(m)
print("suite", pc.SUITE_VERSION, ":", ", ".join(u.tag for u in fields))

for lam in (1.0, 2.0, 4.0):
    sw = pc.poincare_sweep(v, p=1, lam=lam, fields=fields, n_balls=100, rng=0)
    print(f"lambda={lam:g}  C_P_hat(d)={sw.C_P_hat['original']:.3f}  "
          f"C_P_hat(d_rho)={sw.C_P_hat['sphericalized']:.3f}  factor={sw.preservation_factor:.3f}  "
          f"skipped={sw.n_skipped}")

# The path-integral identity ties lengths in the two metrics together.
curves = pc.random_walk_curves(m, 500, rng=1)
res = pc.transform_identity_check(v, curves)
print("path identity worst relative error", res.worst_rel_error)
