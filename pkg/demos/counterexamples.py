"""What goes wrong when one of the three conditions is dropped.

Run with `python3 demos/counterexamples.py`.
"""

from sphericalization import Exponential, PowLog, build_halfplane, sphericalize
from sphericalization.sphere import check_condition_C
from sphericalization.verify import (certificate_fails_A, necessity_radii, necessity_trend, refute_fails_B,
                                     strictly_increasing_toward_zero)

# exp(-t) satisfies (B) but not (A).  For each candidate uniformity constant C the
# certificate finds a pair whose every joining curve breaks either the cone or
# the quasiconvexity bound.
for C in (1, 2, 4, 8, 16):
    c = certificate_fails_A(Exponential(1.0), C)
    print(f"C={C:2d}  r={c.r:9.3f}  cone margin={c.cone_margin:.3f}  qc margin={c.quasiconvexity_margin:.3f}")

# (t+2)^-1 log(t+2)^-2 satisfies (A) but not (B).  Pushing the middle radius out
# makes the twisted-cone term of any curve exceed any given C.
for C, c in zip((1, 2, 4, 8, 16), refute_fails_B(PowLog(-1, -2))):
    print(f"C={C:2d}  radii=({c.R1:.3g}, {c.r:.3g}, {c.R2:.3g})  lower bound {c.value:.3f}")

# (t+2)^-2 log(t+2)^-2 with sigma = 1 fails (C); doubling then breaks near infinity.
m = build_halfplane(0.05, 1e8)
v = sphericalize(m, PowLog(-2, -2), 1.0, with_diameter=False)
print("Condition (C):", check_condition_C(v).verdict)
pts = necessity_trend(v, necessity_radii(v, 8))
for p in pts:
    print(f"r={p.r:.2e}  annulus ratio={p.annulus_ratio:8.3f}  witness ratio={p.witness_ratio}")
print("annulus ratio grows as r -> 0:", strictly_increasing_toward_zero([(p.r, p.annulus_ratio) for p in pts]))
