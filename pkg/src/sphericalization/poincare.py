"""Upper gradients, the path-integral and L^p transformation identities, and empirical
Poincare constants on balls in (X, d, mu) and (X, d_rho, mu_rho)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateError, SkippedBall
from .space import RESOLVED_MIN_NODES, BallQuery, SpaceModel, graph_distance
from .sphere import SphereView, _json_default

SUITE_VERSION = "1"
ANCHORS = ((0.0, 1.0), (3.0, 2.0), (-10.0, 5.0), (0.0, 30.0), (100.0, 50.0))
N_RANDOM_FIELDS = 8
SMOOTHING_STEPS = 3
METRICS = ("original", "sphericalized")


@dataclass
class ScalarField:
    values: np.ndarray
    tag: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.isfinite(self.values).all():
            raise DegenerateError(f"field {self.tag} has non-finite values")

    def scaled(self, c: float) -> "ScalarField":
        return ScalarField(c * self.values, f"{c:g}*{self.tag}")


@dataclass
class GradientField:
    values: np.ndarray
    metric_tag: str


def _split(obj) -> tuple[SpaceModel, SphereView | None]:
    if isinstance(obj, SphereView):
        return obj.base, obj
    return obj, None


def edge_lengths(obj, metric_tag: str) -> np.ndarray:
    m, v = _split(obj)
    if metric_tag == "original":
        return m.lengths
    if metric_tag == "sphericalized":
        if v is None:
            raise DegenerateError("the sphericalized metric needs a SphereView")
        return v.edge_rho_weight
    raise DegenerateError(f"unknown metric tag {metric_tag!r}")


def node_measure(obj, metric_tag: str) -> np.ndarray:
    m, v = _split(obj)
    return m.mu if metric_tag == "original" else v.node_mu_rho_weight


# ---------------------------------------------------------------------------
# test-function suite


def smooth(m: SpaceModel, values: np.ndarray, steps: int = SMOOTHING_STEPS) -> np.ndarray:
    """Replace each value by the mean over the node and its graph neighbours, `steps` times."""
    a, b = m.edges[:, 0], m.edges[:, 1]
    deg = np.bincount(a, minlength=m.n_nodes) + np.bincount(b, minlength=m.n_nodes) + 1.0
    u = np.asarray(values, dtype=float).copy()
    for _ in range(steps):
        acc = u.copy()
        np.add.at(acc, a, u[b])
        np.add.at(acc, b, u[a])
        u = acc / deg
    return u


def _random_smooth(m: SpaceModel, seed: int) -> np.ndarray:
    """A few low-frequency modes in (log(1+|x|), angle), then graph smoothing.

    The modes are functions of position, so the same seed gives the same
    field on every mesh of the same region.
    """
    rng = np.random.default_rng(seed)
    s = np.log1p(m.radial)
    th = np.arctan2(m.coords[:, 1], m.coords[:, 0]) if m.coords.shape[1] >= 2 else np.zeros(m.n_nodes)
    u = np.zeros(m.n_nodes)
    s_scale = max(float(s.max()), 1.0)
    for _ in range(4):
        k, l = rng.integers(1, 4), rng.integers(0, 3)
        u += rng.normal() * np.cos(math.pi * k * s / s_scale + rng.uniform(0, 2 * math.pi)) * np.cos(l * th)
    return smooth(m, u)


def field_suite(m: SpaceModel, seed: int = 0) -> list[ScalarField]:
    """The versioned test-function suite: 5 anchor distances, 2 coordinates, log-radial, 8 random smooth."""
    out = []
    if m.coords.shape[1] >= 2:
        anchors = m.nearest(np.array(ANCHORS))
        for k, a in enumerate(anchors):
            out.append(ScalarField(graph_distance(m, int(a)), f"dist{k}"))
        out.append(ScalarField(m.coords[:, 0], "coord_x"))
        out.append(ScalarField(m.coords[:, 1], "coord_y"))
    out.append(ScalarField(np.log1p(m.radial), "log_radial"))
    for k in range(N_RANDOM_FIELDS):
        out.append(ScalarField(_random_smooth(m, seed * 1000 + k), f"smooth{k}"))
    return out


# ---------------------------------------------------------------------------
# upper gradients


def local_upper_gradient(obj, u: ScalarField | np.ndarray, metric_tag: str = "original") -> GradientField:
    """g(x) = max over incident edges of |u(x) - u(y)| / edge length."""
    m, _ = _split(obj)
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    w = edge_lengths(obj, metric_tag)
    a, b = m.edges[:, 0], m.edges[:, 1]
    slope = np.abs(vals[a] - vals[b]) / w
    g = np.zeros(m.n_nodes)
    np.maximum.at(g, a, slope)
    np.maximum.at(g, b, slope)
    return GradientField(g, metric_tag)


def upper_gradient_excess(obj, u, g: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Per edge |u(a) - u(b)| / (max(g(a), g(b)) * length); at most 1 for an upper gradient."""
    m, _ = _split(obj)
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    a, b = m.edges[:, 0], m.edges[:, 1]
    du = np.abs(vals[a] - vals[b])
    bound = np.maximum(g[a], g[b]) * lengths
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(du == 0, 0.0, du / bound)


# ---------------------------------------------------------------------------
# transformation identities


def random_walk_curves(m: SpaceModel, n: int, rng=0, max_steps: int = 60) -> list[np.ndarray]:
    """n random non-backtracking walks along graph edges, 1 to max_steps legs each."""
    rng = np.random.default_rng(rng)
    adj = m.adjacency()
    indptr, ind = adj.indptr, adj.indices
    out = []
    for _ in range(n):
        k = int(rng.integers(1, max_steps + 1))
        path = [int(rng.integers(m.n_nodes))]
        prev = -1
        for _ in range(k):
            nb = ind[indptr[path[-1]]:indptr[path[-1] + 1]]
            nb = nb[nb != prev] if nb.size > 1 else nb
            prev = path[-1]
            path.append(int(rng.choice(nb)))
        out.append(np.array(path, dtype=int))
    return out


@dataclass
class TransformIdentityResult:
    worst_rel_error: float
    mean_rel_error: float
    n_curves: int
    witness: int | None
    errors: np.ndarray = field(repr=False)


def transform_identity_check(v: SphereView, curves, g: GradientField | np.ndarray | None = None
                             ) -> TransformIdentityResult:
    """Compare sum over legs of g * (d_rho leg length) with sum of rho(midpoint) * g * (d leg length).

    g is evaluated on each leg as the mean of its endpoint values; g = None
    means g = 1, the length identity.
    """
    m = v.base
    gv = np.ones(m.n_nodes) if g is None else (g.values if isinstance(g, GradientField) else np.asarray(g))
    A_rho = v.adjacency
    A_d = m.adjacency()
    errs = np.zeros(len(curves))
    for k, c in enumerate(curves):
        a, b = c[:-1], c[1:]
        w_rho = np.asarray(A_rho[a, b]).ravel()
        w_d = np.asarray(A_d[a, b]).ravel()
        if m.coords.shape[1] >= 2:
            r_mid = np.linalg.norm(0.5 * (m.coords[a] + m.coords[b]), axis=1)
        else:
            r_mid = 0.5 * (m.radial[a] + m.radial[b])
        g_leg = 0.5 * (gv[a] + gv[b])
        lhs = float(np.sum(g_leg * w_rho))
        rhs = float(np.sum(v.density(np.maximum(r_mid, v.density.domain_floor)) * g_leg * w_d))
        errs[k] = 0.0 if lhs == rhs else abs(lhs - rhs) / max(abs(rhs), abs(lhs))
    i = int(np.argmax(errs)) if len(errs) else None
    return TransformIdentityResult(float(errs.max()) if len(errs) else 0.0,
                                   float(errs.mean()) if len(errs) else 0.0, len(curves), i, errs)


@dataclass
class UGTransformReport:
    field_tag: str
    worst_excess_rho_to_d: float  # max over edges of the edge ratio for rho*g in d, divided by its bias bound
    worst_bias_rho_to_d: float  # largest per-edge quadrature bias factor
    worst_excess_d_to_rho: float
    worst_bias_d_to_rho: float
    lp_rel_errors: dict  # (p, sigma) -> relative error of the L^p norm identity

    @property
    def holds(self) -> bool:
        return self.worst_excess_rho_to_d <= 1.0 + 1e-12 and self.worst_excess_d_to_rho <= 1.0 + 1e-12


def lp_norm_identity(v: SphereView, g: np.ndarray, p: float) -> tuple[float, float]:
    """(||g||_{L^p(mu)}, ||rho^(-sigma/p) g||_{L^p(mu_rho)}) as node sums."""
    g = np.asarray(g, dtype=float)
    lhs = float(np.sum(v.base.mu * g**p)) ** (1.0 / p)
    h = v.node_rho ** (-v.sigma / p) * g
    rhs = float(np.sum(v.node_mu_rho_weight * h**p)) ** (1.0 / p)
    return lhs, rhs


def ug_transform_check(v: SphereView, u: ScalarField, ps=(1.0, 2.0, 3.0)) -> UGTransformReport:
    """Carry upper gradients between d_rho and d, and test the L^p norm identity.

    (i) g = local upper gradient of u in d_rho; rho*g must be an upper
    gradient in d up to the per-edge bias w_rho / (min rho * length).
    The converse direction uses g' in d and g'/rho in d_rho, with bias
    max rho * length / w_rho.
    (ii) ||g||_{L^p(mu)} = ||rho^(-sigma/p) g||_{L^p(mu_rho)} on node sums.
    """
    m = v.base
    a, b = m.edges[:, 0], m.edges[:, 1]
    rho = v.node_rho
    L, W = m.lengths, v.edge_rho_weight

    g_rho = local_upper_gradient(v, u, "sphericalized").values
    ex1 = upper_gradient_excess(v, u, rho * g_rho, L)
    bias1 = W / (np.minimum(rho[a], rho[b]) * L)
    g_d = local_upper_gradient(m, u, "original").values
    ex2 = upper_gradient_excess(v, u, g_d / rho, W)
    bias2 = np.maximum(rho[a], rho[b]) * L / W

    lp = {}
    for p in ps:
        l, r = lp_norm_identity(v, g_rho, p)
        lp[(float(p), v.sigma)] = 0.0 if l == r else abs(l - r) / max(l, r)
    return UGTransformReport(u.tag, float(np.max(ex1 / bias1)), float(bias1.max()),
                             float(np.max(ex2 / bias2)), float(bias2.max()), lp)


# ---------------------------------------------------------------------------
# Poincare sweep


@dataclass
class PoincareSample:
    center: int
    radius: float
    metric_tag: str
    field_tag: str
    p: float
    lam: float
    lhs: float  # mean over B of |u - u_B|
    rhs: float  # r * (mean over lam B of g^p)^(1/p)
    ratio: float
    n_ball: int
    n_dilated: int

    def __post_init__(self):
        if self.lhs < 0 or self.rhs < 0:
            raise DegenerateError("Poincare sides must be non-negative")


def poincare_terms(u: np.ndarray, g: np.ndarray, measure: np.ndarray, in_ball: np.ndarray,
                   in_dilated: np.ndarray, r: float, p: float) -> tuple[float, float]:
    """(mean oscillation of u on B, r * (lam-ball p-mean of g^p)^(1/p))."""
    wb = measure[in_ball]
    ub = u[in_ball]
    mean_u = float(wb @ ub) / float(wb.sum())
    lhs = float(wb @ np.abs(ub - mean_u)) / float(wb.sum())
    wl = measure[in_dilated]
    rhs = r * (float(wl @ g[in_dilated] ** p) / float(wl.sum())) ** (1.0 / p)
    return lhs, rhs


def _metric_scale(obj, metric_tag: str) -> tuple[np.ndarray, float]:
    """(local edge scale per node, largest useful radius) for radius sampling."""
    m, v = _split(obj)
    if metric_tag == "original":
        return m.local_mesh(), m.R_max / 4.0
    return m.local_mesh() * v.node_rho, max(v.diam_rho_hat, float(np.max(v.inf_point)))


def sample_balls(obj, n: int, metric_tag: str, rng=0, lam: float = 2.0, min_nodes: int = RESOLVED_MIN_NODES
                 ) -> list[BallQuery]:
    """Ball centres at mesh-independent planar points (log-uniform modulus, uniform angle), radii
    log-uniform between min_nodes-scale and the metric's largest useful radius over lam."""
    m, _ = _split(obj)
    rng = np.random.default_rng(rng)
    scale, r_top = _metric_scale(obj, metric_tag)
    lo, hi = math.log(max(float(m.radial.min()) * 4, 0.05)), math.log(m.R_max / 2)
    out = []
    for _ in range(n):
        t = math.exp(rng.uniform(lo, hi))
        th = rng.uniform(0.02, math.pi - 0.02)
        x = int(m.nearest([[t * math.cos(th), t * math.sin(th)]])[0])
        r_lo = 3.0 * math.sqrt(min_nodes) * scale[x]
        r_hi = r_top / lam
        if r_lo >= r_hi:
            continue
        out.append(BallQuery(x, math.exp(rng.uniform(math.log(r_lo), math.log(r_hi))), metric_tag))
    return out


def _ball_sets(obj, q: BallQuery, lam: float, min_nodes: int):
    m, _ = _split(obj)
    w = edge_lengths(obj, q.metric_tag)
    x = int(q.center)
    dist = graph_distance(m, x, limit=lam * q.radius, weights=w)
    in_ball = dist < q.radius
    in_dil = dist < lam * q.radius
    if m.outer_ring[in_dil].any():
        raise SkippedBall(f"dilated ball about {x} of radius {lam * q.radius:g} reaches the truncation")
    if in_ball.sum() < min_nodes:
        raise SkippedBall(f"ball about {x} has {int(in_ball.sum())} < {min_nodes} nodes")
    return in_ball, in_dil


@dataclass
class PoincareSweep:
    C_P_hat: dict  # metric_tag -> max ratio
    preservation_factor: float | None
    samples: list = field(repr=False)
    n_skipped: dict
    suite_version: str = SUITE_VERSION

    def __iter__(self):
        return iter((self.C_P_hat, self.samples))

    def to_dict(self) -> dict:
        return {"C_P_hat": self.C_P_hat, "preservation_factor": self.preservation_factor,
                "n_samples": len(self.samples), "n_skipped": self.n_skipped, "suite_version": self.suite_version}


def poincare_sweep(obj, p: float = 1.0, lam: float = 2.0, balls=None, fields=None, n_balls: int = 150,
                   rng=0, min_nodes: int = RESOLVED_MIN_NODES, metrics=None) -> PoincareSweep:
    """Max over (ball, field) of lhs/rhs, run identically in every available metric.

    With a SphereView both (d, mu) and (d_rho, mu_rho) are swept, and the
    preservation factor C_P_hat(rho) / C_P_hat(base) is reported.
    """
    if p < 1 or lam < 1:
        raise DegenerateError("need p >= 1 and lambda >= 1")
    m, v = _split(obj)
    if metrics is None:
        metrics = METRICS if v is not None else ("original",)
    if fields is None:
        fields = field_suite(m, seed=0 if rng is None else int(np.random.default_rng(rng).integers(2**31)))
    samples, skipped, C = [], {}, {}
    for k, tag in enumerate(metrics):
        qs = balls[tag] if isinstance(balls, dict) else balls
        if qs is None:
            qs = sample_balls(obj, n_balls, tag, rng=np.random.default_rng(rng).integers(2**31) + k,
                              lam=lam, min_nodes=min_nodes)
        qs = [q for q in qs if q.metric_tag == tag]
        mu = node_measure(obj, tag)
        grads = [local_upper_gradient(obj, u, tag).values for u in fields]
        skipped[tag] = 0
        best = 0.0
        for q in qs:
            try:
                in_ball, in_dil = _ball_sets(obj, q, lam, min_nodes)
            except SkippedBall:
                skipped[tag] += 1
                continue
            for u, g in zip(fields, grads):
                lhs, rhs = poincare_terms(u.values, g, mu, in_ball, in_dil, q.radius, p)
                ratio = lhs / rhs if rhs > 0 else 0.0
                best = max(best, ratio)
                samples.append(PoincareSample(int(q.center), q.radius, tag, u.tag, float(p), float(lam),
                                              lhs, rhs, ratio, int(in_ball.sum()), int(in_dil.sum())))
        C[tag] = best
    pf = None
    if "original" in C and "sphericalized" in C and C["original"] > 0:
        pf = C["sphericalized"] / C["original"]
    return PoincareSweep(C, pf, samples, skipped)


# ---------------------------------------------------------------------------
# interior points of sphericalized balls


@dataclass
class InteriorPointCheck:
    worst_ratio: float  # r / (16 C_hat) divided by the best d_{X,rho}(z0) in the ball; at most 1 expected
    n_balls: int
    witness: dict


def interior_point_check(v: SphereView, C_hat: float, n: int = 200, rng=0) -> InteriorPointCheck:
    """Every B_rho(z, r) with r <= 2 diam contains z0 with d_{X,rho}(z0) >= r / (16 C_hat)."""
    m = v.base
    rng = np.random.default_rng(rng)
    dX = v.boundary_distance_rho()
    diam = max(v.diam_rho_hat, float(v.inf_point.max()))
    worst, wit = 0.0, {}
    for _ in range(n):
        z = int(rng.integers(m.n_nodes))
        r = math.exp(rng.uniform(math.log(diam * 1e-4), math.log(2 * diam)))
        d = graph_distance(m, z, limit=r, weights=v.edge_rho_weight)
        best = float(dX[d < r].max())
        need = r / (16.0 * C_hat)
        if need / best > worst:
            worst, wit = need / best, {"z": z, "r": r, "best": best}
    return InteriorPointCheck(worst, n, wit)


# ---------------------------------------------------------------------------
# output


CSV_FIELDS = ("center", "radius", "metric_tag", "field_tag", "p", "lam", "lhs", "rhs", "ratio")


def write_sweep_csv(sweep: PoincareSweep, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for s in sweep.samples:
            d = asdict(s)
            w.writerow([d[k] for k in CSV_FIELDS])


def write_sweep_summary(sweep: PoincareSweep, path) -> None:
    Path(path).write_text(json.dumps(sweep.to_dict(), indent=2, default=_json_default), encoding="utf-8")
