"""Numerical checks of the geometric statements: uniformity, bracket estimates, doubling,
and certificate drivers for densities that break (A) or (B)."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize
from scipy.sparse import csgraph

from .constants import StructureConstants
from .density import DensityFn
from .errors import DegenerateError, PrereqError, UnreachableError
from .space import ANISOTROPY, RESOLVED_MIN_NODES, SpaceModel, graph_distance
from .sphere import SphereView, _cached_distance, _segment_rho_integral, _virtual_source_dijkstra

HOLDS, VIOLATED, RESOLUTION_LIMITED = "holds", "violated", "resolution-limited"
FAMILY_LIMIT = 2.0


def tolerance(mesh_rel: float) -> float:
    """Slack allowed before a bound counts as violated rather than resolution-limited."""
    rel = mesh_rel if math.isfinite(mesh_rel) else 0.0
    return ANISOTROPY * (1.0 + 5.0 * rel)


def _verdict_from(worst: float, tol: float) -> str:
    if worst <= 1.0:
        return HOLDS
    return RESOLUTION_LIMITED if worst <= tol else VIOLATED


@dataclass
class VerifierReport:
    check: str
    n_samples: int
    worst_ratio: float  # observed / allowed; above 1 means the bound is exceeded
    witness: dict
    verdict: str
    constants: dict = field(default_factory=dict)
    notes: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["worst_ratio"] = _finite_or_str(self.worst_ratio)
        return d


def _finite_or_str(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else "nan"
    return x


# ---------------------------------------------------------------------------
# curves


@dataclass
class CurveSample:
    nodes: np.ndarray
    leg_d: np.ndarray
    leg_rho: np.ndarray | None
    dX: np.ndarray
    dX_rho: np.ndarray | None
    family: str = ""

    @property
    def cum_d(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.leg_d)])

    @property
    def cum_rho(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.leg_rho)])

    def legs(self, metric_tag: str) -> np.ndarray:
        return self.leg_rho if metric_tag == "rho" else self.leg_d

    def boundary(self, metric_tag: str) -> np.ndarray:
        return self.dX_rho if metric_tag == "rho" else self.dX

    def sub(self, a: int, b: int) -> "CurveSample":
        """Subcurve between node positions a <= b."""
        return CurveSample(self.nodes[a:b + 1], self.leg_d[a:b], None if self.leg_rho is None else self.leg_rho[a:b],
                           self.dX[a:b + 1], None if self.dX_rho is None else self.dX_rho[a:b + 1], self.family)


def write_curves_csv(m: SpaceModel, curves, path) -> None:
    """Polylines as rows (curve, family, position, node, x, y, cum_d, cum_rho)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("curve", "family", "position", "node", "x", "y", "cum_d", "cum_rho"))
        for k, c in enumerate(curves):
            cr = c.cum_rho if c.leg_rho is not None else np.full(len(c.nodes), np.nan)
            for i, (node, cd) in enumerate(zip(c.nodes, c.cum_d)):
                xy = m.coords[node] if m.coords.shape[1] >= 2 else (np.nan, np.nan)
                w.writerow((k, c.family, i, int(node), float(xy[0]), float(xy[1]), float(cd), float(cr[i])))


def boundary_distance(m: SpaceModel) -> np.ndarray:
    """d_X per node: exact when the model stores it, else graph distance to boundary-adjacent nodes."""
    if m.dX is not None:
        return m.dX
    bnd = np.flatnonzero(m.boundary_adjacent)
    if bnd.size == 0:
        raise DegenerateError("model has no boundary-adjacent nodes")
    return _virtual_source_dijkstra(m.adjacency(), bnd, np.full(len(bnd), 1e-300))


def make_curve(v: SphereView | SpaceModel, nodes, family: str = "") -> CurveSample:
    m = v.base if isinstance(v, SphereView) else v
    nodes = np.asarray(nodes, dtype=int)
    p, q = m.coords[nodes[:-1]], m.coords[nodes[1:]]
    leg_d = np.linalg.norm(q - p, axis=1)
    leg_rho = dxr = None
    if isinstance(v, SphereView):
        leg_rho = _segment_rho_integral(v.density, p, q)
        dxr = v.boundary_distance_rho()[nodes]
    return CurveSample(nodes, leg_d, leg_rho, boundary_distance(m)[nodes], dxr, family)


def curve_functional(leg_lengths, endpoint_distance: float, boundary_distance) -> float:
    """max(l/dist(x,y), max over interior z of min(l(x,z), l(z,y)) / d_X(z))."""
    if not endpoint_distance > 0:
        raise DegenerateError("curve endpoints coincide")
    cum = np.concatenate([[0.0], np.cumsum(leg_lengths)])
    total = cum[-1]
    q = total / endpoint_distance
    if len(cum) <= 2:
        return float(q)
    inner = np.minimum(cum[1:-1], total - cum[1:-1]) / np.asarray(boundary_distance)[1:-1]
    return float(max(q, inner.max()))


def uniformity_functional(v: SphereView | SpaceModel, c: CurveSample, metric_tag: str = "rho",
                          endpoint_distance: float | None = None) -> float:
    if c.nodes[0] == c.nodes[-1]:
        raise DegenerateError("curve endpoints coincide")
    if endpoint_distance is None:
        if metric_tag == "rho":
            endpoint_distance = float(_cached_distance(v, int(c.nodes[0]), [int(c.nodes[-1])], np.inf)[0])
        else:
            m = v.base if isinstance(v, SphereView) else v
            endpoint_distance = float(graph_distance(m, int(c.nodes[0]), [int(c.nodes[-1])])[0])
    return curve_functional(c.legs(metric_tag), endpoint_distance, c.boundary(metric_tag))


# ---------------------------------------------------------------------------
# pairs and candidate families


def sample_pairs(m: SpaceModel, n: int, rng=0, r_lo: float = 0.05, r_hi: float | None = None) -> np.ndarray:
    """Stratified continuum pairs (x, y) as planar points, shape (n, 2, 2).

    Strata cycle through comparable radii, widely separated radii, pairs
    hugging the boundary and antipodal pairs |x| = |y|.  Points are sampled
    in the continuum, so the same seed gives the same pairs at every mesh.
    """
    rng = np.random.default_rng(rng)
    r_hi = m.R_max / 4 if r_hi is None else r_hi
    lr = (math.log(r_lo), math.log(r_hi))
    out = np.empty((n, 2, 2))
    for k in range(n):
        s = k % 4
        a = math.exp(rng.uniform(*lr))
        if s == 0:
            b = min(max(a * math.exp(rng.uniform(-math.log(2), math.log(2))), r_lo), r_hi)
            ta, tb = rng.uniform(0.02, math.pi - 0.02, 2)
        elif s == 1:
            a = math.exp(rng.uniform(lr[0], 0.5 * (lr[0] + lr[1])))
            b = min(a * math.exp(rng.uniform(math.log(8), math.log(1e3))), r_hi)
            ta, tb = rng.uniform(0.02, math.pi - 0.02, 2)
        elif s == 2:
            b = min(max(a * math.exp(rng.uniform(-1.0, 1.0)), r_lo), r_hi)
            ta, tb = rng.uniform(0.002, 0.06), math.pi - rng.uniform(0.002, 0.06)
        else:
            b = a
            half = rng.uniform(0.3, 1.5)
            ta, tb = math.pi / 2 - half, math.pi / 2 + half
        out[k, 0] = a * math.cos(ta), a * math.sin(ta)
        out[k, 1] = b * math.cos(tb), b * math.sin(tb)
    return out


def _path(pred: np.ndarray, src: int, dst: int) -> list[int]:
    out = [dst]
    k = dst
    while k != src:
        k = int(pred[k])
        if k < 0:
            raise UnreachableError(f"no path {src} -> {dst}")
        out.append(k)
    return out[::-1]


def detour_path(m: SpaceModel, a: int, b: int, ring: int) -> list[int]:
    """Radially from a to ring index `ring`, along that ring, radially to b."""
    g = m.grid
    if g is None:
        raise DegenerateError("detour curves need a polar-grid model")
    ia, ja = divmod(int(a), g.n_theta)
    ib, jb = divmod(int(b), g.n_theta)
    seq = [(i, ja) for i in _span(ia, ring)]
    seq += [(ring, j) for j in _span(ja, jb)][1:]
    seq += [(i, jb) for i in _span(ring, ib)][1:]
    return [int(g.node(i, j)) for i, j in seq]


def _span(a: int, b: int) -> range:
    return range(a, b + 1) if b >= a else range(a, b - 1, -1)


def _qh_weights(m: SpaceModel, w: np.ndarray, dX: np.ndarray) -> np.ndarray:
    e = m.edges
    return 2.0 * w / (dX[e[:, 0]] + dX[e[:, 1]])


@dataclass
class UniformityEstimate:
    pair: tuple[int, int]
    best_functional: float
    family: str
    witness: CurveSample
    family_best: dict
    family_limited: bool
    certificate_lb: float | None = None


@dataclass
class UniformityResult:
    C_hat: float
    metric_tag: str
    table: list
    worst: UniformityEstimate | None

    @property
    def n_family_limited(self) -> int:
        return sum(e.family_limited for e in self.table)

    def __iter__(self):
        return iter((self.C_hat, self.table))


DEFAULT_FAMILIES = ("rho_geodesic", "d_geodesic", "detour", "qh_rho", "qh_d")


def estimate_uniformity(v: SphereView, pairs, families=DEFAULT_FAMILIES, metric_tag: str = "rho",
                        n_detour: int = 16, batch: int = 64, certificate=None) -> UniformityResult:
    """Best uniformity functional per pair over candidate curve families.

    pairs: (n, 2, 2) planar points (snapped to nodes) or (n, 2) node ids.
    certificate: optional callable (x, y) -> proved lower bound or None.
    """
    m = v.base
    pairs = np.asarray(pairs)
    if pairs.ndim == 3:
        ids = np.stack([m.nearest(pairs[:, 0]), m.nearest(pairs[:, 1])], axis=1)
    else:
        ids = pairs.astype(int)
    ids = ids[ids[:, 0] != ids[:, 1]]
    dX = boundary_distance(m)
    dXr = v.boundary_distance_rho()
    weight_sets = {"rho_geodesic": v.edge_rho_weight, "d_geodesic": m.lengths}
    if "qh_rho" in families:
        weight_sets["qh_rho"] = _qh_weights(m, v.edge_rho_weight, dXr)
    if "qh_d" in families:
        weight_sets["qh_d"] = _qh_weights(m, m.lengths, dX)
    adjs = {k: m.adjacency(w) for k, w in weight_sets.items()}
    use_detour = "detour" in families and m.grid is not None

    table = []
    for start in range(0, len(ids), batch):
        chunk = ids[start:start + batch]
        src = chunk[:, 0]
        dist, pred = {}, {}
        for k, adj in adjs.items():
            dist[k], pred[k] = csgraph.dijkstra(adj, directed=False, indices=src, return_predecessors=True)
        for row, (a, b) in enumerate(chunk):
            a, b = int(a), int(b)
            d_rho_xy = float(dist["rho_geodesic"][row, b])
            d_xy = float(dist["d_geodesic"][row, b])
            endpoint = d_rho_xy if metric_tag == "rho" else d_xy
            cands = []
            for k in adjs:
                if k in families:
                    cands.append((k, _path(pred[k][row], a, b)))
            if use_detour:
                ia, ib = a // m.grid.n_theta, b // m.grid.n_theta
                rings = np.unique(np.concatenate([
                    np.rint(np.linspace(0, m.grid.n_r - 1, n_detour)).astype(int), [ia, ib, max(ia, ib)]]))
                for ring in rings:
                    cands.append(("detour", detour_path(m, a, b, int(ring))))
            fam_best: dict[str, tuple[float, CurveSample]] = {}
            for fam, nodes in cands:
                c = make_curve(v, nodes, fam)
                val = curve_functional(c.legs(metric_tag), endpoint, c.boundary(metric_tag))
                if fam not in fam_best or val < fam_best[fam][0]:
                    fam_best[fam] = (val, c)
            fam_name, (best, wit) = min(fam_best.items(), key=lambda kv: kv[1][0])
            core = [fam_best[k][0] for k in ("rho_geodesic", "d_geodesic", "detour") if k in fam_best]
            limited = len(core) > 1 and max(core) > FAMILY_LIMIT * min(core)
            lb = certificate(a, b) if certificate is not None else None
            table.append(UniformityEstimate((a, b), best, fam_name, wit, {k: x[0] for k, x in fam_best.items()},
                                            limited, lb))
    worst = max(table, key=lambda e: e.best_functional) if table else None
    return UniformityResult(worst.best_functional if worst else math.nan, metric_tag, table, worst)


# ---------------------------------------------------------------------------
# certificates for densities outside (A) / (B)


def _solve_tail(f: DensityFn, target: float, lo: float, hi: float | None = None) -> float:
    """x with T(x) = target on [lo, inf), T strictly decreasing."""
    return _solve_log_tail(f, math.log(target), lo, hi)


def _solve_log_tail(f: DensityFn, log_target: float, lo: float, hi: float | None = None) -> float:
    g = lambda x: float(f.log_tail(x)) - log_target  # noqa: E731
    if g(lo) < 0:
        raise DegenerateError(f"T({lo}) is already below the target")
    hi = max(2 * lo, 1.0) if hi is None else hi
    while g(hi) > 0:
        hi *= 4
        if hi > 1e300:
            raise DegenerateError("tail target not reached")
    return optimize.brentq(g, lo, hi, xtol=1e-14 * hi, rtol=1e-14, maxiter=500)


@dataclass
class FailsBCertificate:
    R1: float
    r: float
    R2: float
    value: float  # lower bound on the twisted-cone term of any curve from |x| = R1 to |y| = R2
    informative: bool


def certificate_fails_B(v: SphereView | DensityFn, R1: float, r: float, R2: float, C_U: float = math.pi / 2,
                        strict: bool = False) -> FailsBCertificate:
    """min(int_R1^r rho, int_r^R2 rho) / (C_U r rho(r)).

    Any curve from |x| = R1 to |y| = R2 meets |z| = r; the arc |z'| = r down
    to the boundary bounds d_{X,rho}(z) by C_U r rho(r), and the radial
    lower bound on d_rho bounds both subcurve lengths from below.
    """
    f, informative = _density_and_flag(v, "B")
    if strict and not informative:
        raise PrereqError("density satisfies (B); the certificate cannot refute uniformity")
    if not R1 <= r <= R2:
        raise DegenerateError("need R1 <= r <= R2")
    T1, Tr, T2 = (float(f.tail(x)) for x in (R1, r, R2))
    val = min(T1 - Tr, Tr - T2) / (C_U * r * float(f(r)))
    return FailsBCertificate(R1, r, R2, max(val, 0.0), informative)


def fails_B_radii(f: DensityFn, r: float) -> tuple[float, float, float]:
    """Tail-quartering radii: T(R1) = 2 T(r) = 4 T(R2)."""
    Tr = float(f.tail(r))
    if float(f.tail(f.domain_floor)) < 2 * Tr:
        raise DegenerateError(f"no R1 with T(R1) = 2 T({r})")
    R1 = _solve_tail(f, 2 * Tr, f.domain_floor, r)
    R2 = _solve_tail(f, Tr / 2, r)
    return R1, r, R2


def refute_fails_B(f: DensityFn, C_values=(1, 2, 4, 8, 16), C_U: float = math.pi / 2, r0: float = 1.0,
                   growth: float = 2.0, r_max: float = 1e300) -> list[FailsBCertificate | None]:
    """For each C, push r up geometrically until the certificate at tail-quartering radii exceeds C."""
    out = []
    for C in C_values:
        r, got = r0, None
        while r < r_max:
            try:
                cert = certificate_fails_B(f, *fails_B_radii(f, r), C_U=C_U)
            except DegenerateError:
                cert = None
            if cert is not None and cert.value > C:
                got = cert
                break
            r *= growth
        out.append(got)
    return out


@dataclass
class FailsACertificate:
    C: float
    M: float | None
    R: float | None
    R_prime: float | None
    r: float | None
    cone_margin: float | None
    quasiconvexity_margin: float | None
    informative: bool

    @property
    def refuted(self) -> bool:
        return (self.cone_margin is not None and self.cone_margin > 1.0
                and self.quasiconvexity_margin is not None and self.quasiconvexity_margin > 1.0)

    def pair(self) -> tuple[np.ndarray, np.ndarray] | None:
        """x, y with |x| = |y| = r and |x - y| = r + 1, symmetric about the vertical axis."""
        if self.r is None:
            return None
        r = self.r
        half = math.asin(min(1.0, (r + 1.0) / (2.0 * r)))
        return (np.array([r * math.cos(math.pi / 2 + half), r * math.sin(math.pi / 2 + half)]),
                np.array([r * math.cos(math.pi / 2 - half), r * math.sin(math.pi / 2 - half)]))


def _density_and_flag(v, which: str) -> tuple[DensityFn, bool]:
    if isinstance(v, SphereView):
        f, rep = v.density, v.report
        verdict = rep.verdict_A if which == "A" else rep.verdict_B
        return f, verdict != "pass"
    from .density import check_condition_A, check_condition_B

    chk = check_condition_A(v) if which == "A" else check_condition_B(v)
    return v, chk.verdict != "pass"


def certificate_fails_A(v: SphereView | DensityFn, C: float, C_qd: float | None = None, radii=None,
                        strict: bool = False) -> FailsACertificate:
    """Contradiction margins for a hypothesized uniformity constant C.

    Radii follow T(1) = (2C+1) T(M); R > M is the first radius with
    T(R) <= (R+1) rho(R) / (8 C C_qd (C+1)); then T(r) = (3C/2+1) T(R') =
    (2C+1) T(R).  The test pair has |x| = |y| = r, d(x,y) = r+1.  A curve
    reaching |z| >= R' breaks the cone condition when
    T(r) / ((C+1) T(R')) > 1; one staying inside breaks quasiconvexity when
    (r+1) rho(R) / (2 C C_qd T(r)) > 1.
    """
    f, informative = _density_and_flag(v, "A")
    if strict and not informative:
        raise PrereqError("density satisfies (A); no refutation is possible")
    if C_qd is None:
        if isinstance(v, SphereView):
            C_qd = v.report.C_qd_hat
        else:
            from .density import quasidecreasing_constant

            C_qd = quasidecreasing_constant(f)
    if radii is not None:
        r, Rp, R = radii
        M = None
    else:
        M = _solve_log_tail(f, float(f.log_tail(1.0)) - math.log(2 * C + 1), 1.0)
        R = _first_small_tail(f, M, 8 * C * C_qd * (C + 1))
        if R is None:
            return FailsACertificate(C, M, None, None, None, None, None, informative)
        lTR = float(f.log_tail(R))
        Rp = _solve_log_tail(f, lTR + math.log((2 * C + 1) / (1.5 * C + 1)), 1.0, R)
        r = _solve_log_tail(f, lTR + math.log(2 * C + 1), 1.0, Rp)
    lTr, lTRp = float(f.log_tail(r)), float(f.log_tail(Rp))
    cone = math.exp(lTr - lTRp) / (C + 1)
    qc = math.exp(math.log1p(r) + float(f.log_rho(R)) - lTr) / (2 * C * C_qd)
    return FailsACertificate(C, M, R, Rp, r, cone, qc, informative)


def _first_small_tail(f: DensityFn, M: float, K: float, r_max: float = 1e300) -> float | None:
    """Smallest R > M (found by doubling then bisection) with K T(R) <= (R+1) rho(R)."""
    g = lambda x: float(f.log_tail(x)) + math.log(K) - math.log1p(x) - float(f.log_rho(x))  # noqa: E731
    lo = M
    if g(lo) <= 0:
        return lo
    hi = 2 * M
    while g(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > r_max:
            return None
    return optimize.brentq(g, lo, hi, xtol=1e-13 * hi, maxiter=500)


# ---------------------------------------------------------------------------
# bracket checks


def _annulus_pairs(r: np.ndarray, ids: np.ndarray) -> np.ndarray:
    rx, ry = r[ids[:, 0]], r[ids[:, 1]]
    return (0.5 * (rx + 1) <= ry + 1) & (ry + 1 <= 2 * (rx + 1))


def verify_bracket_lemmas(v: SphereView, pairs, uniform_curves: UniformityResult | None = None,
                          C_U: float | None = None, n_infinity: int = 100, rng=0) -> list[VerifierReport]:
    """Bracket estimates between d_rho, d, rho and |.| on sampled pairs and witness curves.

    uniform_curves: estimate in the original metric; only witness curves whose
    functional is within C_U (times the mesh tolerance) are used as uniform curves.
    """
    m = v.base
    c = v.constants(C_U)
    tol = tolerance(m.mesh_rel)
    pairs = np.asarray(pairs)
    ids = np.stack([m.nearest(pairs[:, 0]), m.nearest(pairs[:, 1])], axis=1) if pairs.ndim == 3 else pairs
    ids = ids[ids[:, 0] != ids[:, 1]]
    # order so that |x| <= |y|
    swap = m.radial[ids[:, 0]] > m.radial[ids[:, 1]]
    ids[swap] = ids[swap][:, ::-1]
    reports = []

    src = np.unique(ids[:, 0])
    D = graph_distance(m, src)
    Dr = _cached_distance(v, src, None, np.inf)
    row = {s: k for k, s in enumerate(src)}
    dd = np.array([D[row[a], b] for a, b in ids])
    dr = np.array([Dr[row[a], b] for a, b in ids])
    rx, ry = m.radial[ids[:, 0]], m.radial[ids[:, 1]]
    rho_x = v.node_rho[ids[:, 0]]

    # comparable radii: near_lower rho(|x|) d <= d_rho <= C2 rho(|x|) d
    sel = _annulus_pairs(m.radial, ids)
    q = dr[sel] / (rho_x[sel] * dd[sel])
    if q.size:
        lo = c.near_lower / q
        hi = q / c.C2
        k_lo, k_hi = int(np.argmax(lo)), int(np.argmax(hi))
        w = max(lo[k_lo], hi[k_hi])
        wit = ids[sel][k_lo if lo[k_lo] >= hi[k_hi] else k_hi]
        reports.append(VerifierReport("near_pair_comparison", int(q.size), float(w),
                                      {"x": int(wit[0]), "y": int(wit[1]), "min_q": float(q.min()), "max_q": float(q.max())},
                                      _verdict_from(w, tol), {"near_lower": c.near_lower, "C2": c.C2}))

    # far pairs |y| >= 2|x|+1: h(|x|)/C_A <= d_rho <= C1 h(|x|)
    sel = ry >= 2 * rx + 1
    if sel.any():
        h = (rx[sel] + 1) * rho_x[sel]
        lo = (h / c.C_A) / dr[sel]
        hi = dr[sel] / (c.C1 * h)
        w = float(max(lo.max(), hi.max()))
        k = int(np.argmax(np.maximum(lo, hi)))
        reports.append(VerifierReport("far_pair_comparison", int(sel.sum()), w,
                                      {"x": int(ids[sel][k, 0]), "y": int(ids[sel][k, 1])}, _verdict_from(w, tol),
                                      {"C_A": c.C_A, "C1": c.C1}))

    # distance to infinity
    rng = np.random.default_rng(rng)
    nodes = _stratified_nodes(m, n_infinity, rng)
    h = v.h(m.radial[nodes])
    lo = (h / c.C_A) / v.inf_point[nodes]
    hi = v.inf_point[nodes] / (c.C1 * h)
    ratio = np.maximum(lo, hi)
    k = int(np.argmax(ratio))
    reports.append(VerifierReport("infinity_bracket", int(len(nodes)), float(ratio[k]),
                                  {"node": int(nodes[k]), "radial": float(m.radial[nodes[k]]),
                                   "point": float(v.inf_point[nodes[k]]), "h": float(h[k])},
                                  _verdict_from(float(ratio[k]), tol), {"C_A": c.C_A, "C1": c.C1},
                                  notes="strict: point estimate inside [h/C_A, C1 h] at every node"))

    if uniform_curves is not None:
        reports.extend(_curve_reports(v, c, uniform_curves, tol))
    return reports


def _stratified_nodes(m: SpaceModel, n: int, rng) -> np.ndarray:
    lr = np.log(m.radial)
    edges = np.linspace(lr.min(), lr.max() + 1e-12, 11)
    out = []
    for k in range(n):
        b = k % 10
        cand = np.flatnonzero((lr >= edges[b]) & (lr < edges[b + 1]))
        if cand.size:
            out.append(int(rng.choice(cand)))
    return np.array(out, dtype=int)


def _curve_reports(v: SphereView, c: StructureConstants, est: UniformityResult, tol: float) -> list[VerifierReport]:
    m = v.base
    uniform = [e for e in est.table if e.best_functional <= c.C_U * tol]
    rad_w, rho_w, mono_w, sub_w = [], [], [], []
    for e in uniform:
        cur = e.witness
        nodes = cur.nodes
        if m.radial[nodes[0]] > m.radial[nodes[-1]]:
            cur = CurveSample(nodes[::-1], cur.leg_d[::-1], None if cur.leg_rho is None else cur.leg_rho[::-1],
                              cur.dX[::-1], None if cur.dX_rho is None else cur.dX_rho[::-1], cur.family)
            nodes = cur.nodes
        rz = m.radial[nodes]
        x, y = rz[0], rz[-1]
        lo, hi = c.radial_bracket(x, y)
        rad_w.append((max(lo / rz.min(), rz.max() / hi), e.pair))
        if 0.5 * (x + 1) <= y + 1 <= 2 * (x + 1):
            lr = v.density.log_rho(rz) - v.density.log_rho(x)
            rho_w.append((math.exp(float(np.max(np.abs(lr)))) / c.ring_factor, e.pair))
        # quasi-monotone rho along the curve, constant ring_factor^2 C_qd
        lrz = v.density.log_rho(rz)
        gap = float(np.max(lrz - np.minimum.accumulate(lrz)))
        mono_w.append((math.exp(gap) / (c.ring_factor**2 * v.report.C_qd_hat), e.pair))
        # dyadic subcurves stay uniform with constant C(2C+3), C the curve's own constant
        Cg = max(e.best_functional, 1.0)
        k = int(math.floor(math.log2(y / x))) if x > 0 else 0
        if k >= 1:
            cuts = [0]
            for i in range(1, k):
                hit = np.flatnonzero(rz >= 2**i * x)
                if hit.size and hit[0] > cuts[-1]:
                    cuts.append(int(hit[0]))
            cuts.append(len(nodes) - 1)
            for a, b in zip(cuts, cuts[1:]):
                if b - a < 1:
                    continue
                s = cur.sub(a, b)
                dist = float(graph_distance(m, int(s.nodes[0]), [int(s.nodes[-1])])[0])
                val = curve_functional(s.leg_d, dist, s.dX)
                sub_w.append((val / (Cg * (2 * Cg + 3)), e.pair))
    notes = f"{len(uniform)} of {len(est.table)} witness curves within C_U tolerance"
    out = []
    for name, data, const in (("radial_bracket", rad_w, {"C_U": c.C_U}),
                              ("rho_comparable_on_curve", rho_w, {"ring_factor": c.ring_factor}),
                              ("rho_quasimonotone_on_curve", mono_w, {"bound": c.ring_factor**2 * v.report.C_qd_hat}),
                              ("dyadic_subcurve_uniformity", sub_w, {"C_U": c.C_U})):
        if not data:
            out.append(VerifierReport(name, 0, math.nan, {}, RESOLUTION_LIMITED, const, notes + "; no applicable curves"))
            continue
        w, pair = max(data, key=lambda t: t[0])
        out.append(VerifierReport(name, len(data), float(w), {"x": int(pair[0]), "y": int(pair[1])},
                                  _verdict_from(float(w), tol), const, notes))
    return out


# ---------------------------------------------------------------------------
# doubling of mu_rho


def _ball_mass(v: SphereView, dist_row: np.ndarray, r: float, x: int) -> tuple[float, bool]:
    """mu_rho(B_rho(x, r)) including the exterior mass when it lies wholly inside or outside.

    Returns (mass, ok); ok is False when the ball cuts through the region
    beyond the truncation radius.
    """
    inside = dist_row < r
    mass = float(v.node_mu_rho_weight[inside].sum())
    tail = v.tail_mass
    if tail is None or tail == 0:
        return mass, True
    T_R = float(v.density.tail(v.base.R_max))
    if r >= v.inf_upper[x] + T_R:
        return mass + tail, True
    if r <= v.inf_lower[x] - T_R:
        return mass, True
    return mass, False


def infinity_ball_mass(v: SphereView, r: float) -> tuple[float, bool]:
    """mu_rho(B_rho(inf, r)) using the point estimate; ok iff the exterior lies wholly inside."""
    inside = v.inf_point < r
    mass = float(v.node_mu_rho_weight[inside].sum())
    T_R = float(v.density.tail(v.base.R_max))
    ok = r > T_R
    return mass + (v.tail_mass or 0.0) * ok, ok


def halfplane_disk_area(R: float, height: float) -> float:
    """Area of the disk of radius R centred at height `height` above the line, intersected with y > 0."""
    if height >= R:
        return math.pi * R * R
    return R * R * (math.pi - math.acos(height / R)) + height * math.sqrt(R * R - height * height)


@dataclass
class BallSample:
    center: int | str
    radius: float
    stratum: str
    ratio: float
    n_inner: int
    resolved: bool
    third_case: float | None = None


@dataclass
class DoublingReport:
    C_murho_hat: float
    per_stratum: dict
    n_balls: int
    n_resolution_limited: int
    inclusions: VerifierReport
    third_case_range: tuple[float, float] | None
    infinity_trend: list
    samples: list = field(repr=False, default_factory=list)
    inclusions_extended: VerifierReport | None = None

    @property
    def n_resolved(self) -> int:
        return self.n_balls - self.n_resolution_limited

    def __iter__(self):
        return iter((self.C_murho_hat, self))


def _inclusion_violations(v: SphereView, c: StructureConstants, x: int, r: float, row: np.ndarray):
    """(set violations, rho spread / C_A, ball size) for B(x, a1 r/rho) < B_rho(x, r) < B(x, a2 r/rho)."""
    m = v.base
    ball = row < r
    dd = graph_distance(m, x, limit=c.a2 * r / v.node_rho[x] * 1.0001)
    inner = dd < c.a1 * r / v.node_rho[x]
    outer = dd < c.a2 * r / v.node_rho[x]
    viol = int(np.sum(inner & ~ball) + np.sum(ball & ~outer))
    rr = v.node_rho[ball] / v.node_rho[x]
    rho_bad = float(max(rr.max() / c.C_A, 1.0 / (rr.min() * c.C_A)))
    return viol, rho_bad, int(max(ball.sum(), inner.sum()))


def _inclusion_report(name: str, rows: list, c: StructureConstants, notes: str) -> VerifierReport:
    if not rows:
        return VerifierReport(name, 0, math.nan, {}, RESOLUTION_LIMITED, {"a1": c.a1, "a2": c.a2, "c0": c.c0},
                              notes + "; no balls in range")
    worst = max(rows, key=lambda t: max(t[2], 1.0 + t[1]))
    w = max(worst[2], 1.0 + worst[1])
    nontrivial = sum(1 for t in rows if t[3] > 1)
    return VerifierReport(name, len(rows), w, {"center": worst[0][0], "radius": worst[0][1],
                                               "set_violations": worst[1]},
                          HOLDS if w <= 1.0 else VIOLATED, {"a1": c.a1, "a2": c.a2, "c0": c.c0},
                          f"{notes}; {nontrivial} balls contain more than their centre")


def verify_doubling_rho(v: SphereView, samples: int = 1000, rng=0, n_infinity: int = 24,
                        min_nodes: int = RESOLVED_MIN_NODES, min_resolved: int = 0,
                        max_rounds: int = 8) -> DoublingReport:
    """Doubling ratios mu_rho(B_rho(x,2r)) / mu_rho(B_rho(x,r)) stratified by the proof cases.

    Strata: "inf" (balls about infinity with r <= tau1/C_A), "case1"
    (r <= c0 d_rho(x, inf)), "case3" (between), "case2" (r >= 2 d_rho(x, inf)).
    Balls with fewer than min_nodes nodes, or cutting the truncation
    boundary, are resolution-limited and excluded from C_murho_hat.
    Further rounds of `samples` centres are drawn until min_resolved
    balls are resolved or max_rounds is reached.
    """
    m = v.base
    c = v.constants()
    rng = np.random.default_rng(rng)
    out: list[BallSample] = []

    r_hi = v.report.tau1_hat / c.C_A
    T_R = float(v.density.tail(m.R_max))
    r_lo = max(4 * T_R, r_hi * 1e-8)
    trend = []
    if r_lo < r_hi:
        for r in np.geomspace(r_lo, r_hi, n_infinity):
            a, ok_a = infinity_ball_mass(v, r)
            b, ok_b = infinity_ball_mass(v, 2 * r)
            n_in = int((v.inf_point < r).sum())
            ok = ok_a and ok_b and a > 0
            s = BallSample("inf", float(r), "inf", b / a if a > 0 else math.inf, n_in, ok)
            out.append(s)
            trend.append((float(r), s.ratio))

    diam = max(v.diam_rho_hat, float(v.inf_point.max()))
    mu_halfplane = m.kind == "halfplane"
    proven, extended = [], []
    for _ in range(max_rounds):
        nodes = _stratified_nodes(m, samples, rng)
        nodes = nodes[m.radial[nodes] <= m.R_max / 2]
        for k, x in enumerate(nodes):
            x = int(x)
            dinf = float(v.inf_point[x])
            stratum = ("case1", "case3", "case2")[k % 3]
            if stratum == "case1":
                r = c.c0 * dinf * math.exp(rng.uniform(math.log(0.05), 0.0))
            elif stratum == "case3":
                r = math.exp(rng.uniform(math.log(c.c0 * dinf), math.log(2 * dinf)))
            else:
                r = math.exp(rng.uniform(math.log(2 * dinf), math.log(max(diam, 2.5 * dinf))))
            row = _cached_distance(v, x, None, 2 * r)
            a, ok_a = _ball_mass(v, row, r, x)
            b, ok_b = _ball_mass(v, row, 2 * r, x)
            n_in = int((row < r).sum())
            ok = ok_a and ok_b and n_in >= min_nodes
            s = BallSample(x, float(r), stratum, b / a, n_in, ok)
            if ok and c.c0 * dinf <= r <= 4 * dinf:
                denom = v.node_rho[x] ** v.sigma * (
                    halfplane_disk_area(m.radial[x] + 1, float(m.dX[x])) if mu_halfplane else
                    float(m.mu[graph_distance(m, x, limit=m.radial[x] + 1) < m.radial[x] + 1].sum()))
                s.third_case = a / denom
            out.append(s)
            if r <= 2 * c.c0 * dinf:
                proven.append(((x, r),) + _inclusion_violations(v, c, x, r, row))
            elif stratum == "case3" and r <= 0.25 * dinf and n_in >= min_nodes:
                extended.append(((x, r),) + _inclusion_violations(v, c, x, r, row))
        if sum(s.resolved for s in out if s.stratum != "inf") >= min_resolved:
            break

    inclusions = _inclusion_report("ball_inclusion_sandwich", proven, c, "radii r <= 2 c0 d_rho(x, inf)")
    inclusions_ext = _inclusion_report("ball_inclusion_sandwich_extended", extended, c,
                                       "informational, c0 d_rho(x,inf) < r <= d_rho(x,inf)/4")

    resolved = [s for s in out if s.resolved]
    per = {}
    for st in ("inf", "case1", "case3", "case2"):
        rs = [s.ratio for s in resolved if s.stratum == st]
        per[st] = {"n": len(rs), "max": max(rs) if rs else None,
                   "n_resolution_limited": sum(1 for s in out if s.stratum == st and not s.resolved)}
    tc = [s.third_case for s in resolved if s.third_case is not None]
    C = max((s.ratio for s in resolved), default=math.nan)
    return DoublingReport(C, per, len(out), len(out) - len(resolved), inclusions,
                          (min(tc), max(tc)) if tc else None, trend, out, inclusions_ext)


@dataclass
class NecessityPoint:
    r: float
    ball_ratio: float  # mu_rho(B(inf, 2r)) / mu_rho(B(inf, r))
    annulus_ratio: float  # mu_rho(B(inf, r)) / mu_rho(B(inf, 2r) \ B(inf, r))
    witness: int | None  # node with d_rho(x, inf) closest to 1.5 r
    witness_ratio: float | None  # mu_rho(B(x, 4r)) / mu_rho(B(x, r/2)), at most C_murho^3


def necessity_trend(v: SphereView, radii) -> list[NecessityPoint]:
    """The quantities behind the failure of doubling at infinity when Condition (C) fails.

    If mu_rho were doubling with constant C, then mu_rho(B(inf, r)) <=
    C^3 mu_rho(B(inf, 2r) \\ B(inf, r)) for small r; the annulus ratio and
    the triple-doubling ratio at a point with d_rho(x, inf) = 1.5 r both
    bound C^3 from below.
    """
    out = []
    col = np.arange(v.base.n_nodes)
    if v.base.grid is not None:
        g = v.base.grid
        col = g.node(np.arange(g.n_r), g.n_theta // 2)
    for r in np.asarray(radii, dtype=float):
        a, ok_a = infinity_ball_mass(v, r)
        b, ok_b = infinity_ball_mass(v, 2 * r)
        ann = b - a
        k = int(col[np.argmin(np.abs(v.inf_point[col] - 1.5 * r))])
        row = _cached_distance(v, k, None, 4 * r)
        big, ok1 = _ball_mass(v, row, 4 * r, k)
        small, ok2 = _ball_mass(v, row, r / 2, k)
        wr = big / small if (ok1 and ok2 and small > 0) else None
        out.append(NecessityPoint(float(r), b / a if ok_a and ok_b and a > 0 else math.nan,
                                  a / ann if ok_a and ok_b and ann > 0 else math.nan, k, wr))
    return out


def strictly_increasing_toward_zero(values_by_r: list[tuple[float, float]]) -> bool:
    """True when the value strictly increases as r decreases."""
    vals = [v for _, v in sorted(values_by_r, key=lambda t: -t[0])]
    return all(b > a for a, b in zip(vals, vals[1:]))


def necessity_radii(v: SphereView, n: int = 10) -> np.ndarray:
    """Radii about infinity from well above the truncation scale up to tau1 / C_A."""
    T_R = float(v.density.tail(v.base.R_max))
    hi = v.report.tau1_hat / v.report.C_A_hat
    lo = max(8 * T_R, 1e-12)
    if lo >= hi:
        raise DegenerateError("truncation too small to resolve balls about infinity; raise R_max")
    return np.geomspace(lo, hi, n)
