"""The sphericalized overlay (d_rho, mu_rho) of a SpaceModel, with the added point at infinity."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, sparse
from scipy.sparse import csgraph

from .constants import StructureConstants
from .density import (FAIL, INCONCLUSIVE, PASS, DensityFn, DensityReport, HTable, _decade_maxima, _verdict,
                      classify, geometric_grid)
from .errors import DegenerateError, PrereqError
from .space import ANISOTROPY, SpaceModel, graph_distance

_GAUSS2 = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _segment_rho_integral(f: DensityFn, p: np.ndarray, q: np.ndarray, method: str = "gauss") -> np.ndarray:
    """int over the straight segment p->q of rho(|.|) ds, for rows of p and q."""
    d = q - p
    length = np.linalg.norm(d, axis=1)
    if method == "midpoint":
        r = np.linalg.norm(p + 0.5 * d, axis=1)
        return length * f(np.maximum(r, f.domain_floor))
    acc = np.zeros(len(length))
    for s in _GAUSS2:
        r = np.linalg.norm(p + s * d, axis=1)
        acc += 0.5 * f(np.maximum(r, f.domain_floor))
    return length * acc


def _descent_rho_integral(f: DensityFn, xy: np.ndarray) -> np.ndarray:
    """int of rho(|.|) along the vertical drop from each point to the boundary line y = 0."""
    x, y = xy[:, 0:1], xy[:, 1:2]
    s = 0.5 * (_GL_X[None, :] + 1.0) * y
    r = np.sqrt(x**2 + s**2)
    return 0.5 * y[:, 0] * (f(np.maximum(r, f.domain_floor)) @ _GL_W)


def polar_tail_converges(f: DensityFn, sigma: float) -> bool:
    """Whether int^inf t rho(t)^sigma dt is finite (planar growth t^1)."""
    if f.family == "exponential":
        return True
    if f.family == "powlog":
        a, b = f.params
        e = 1.0 + sigma * a
        return e < -1.0 or (e == -1.0 and sigma * b < -1.0)
    lt, lv, slopes = f._log_knots
    return 1.0 + sigma * float(slopes[-1]) < -1.0


def log_polar_tail(f: DensityFn, sigma: float, R: float) -> float:
    """log of pi * int_R^inf t rho(t)^sigma dt, the half-plane mass beyond |x| = R."""
    if not polar_tail_converges(f, sigma):
        raise DegenerateError(f"mu_rho(X) is infinite: int t rho(t)^{sigma} dt diverges for {f.name}")
    lR = math.log(R)
    l0 = 2 * lR + sigma * float(f.log_rho(R))

    def integrand(x):
        v = 2 * x + sigma * f.log_rho_at_log(x) - l0
        return math.exp(v) if v > -745 else 0.0

    # substitution x = log t; the remaining integrand is O(1) at x = lR
    val = 0.0
    for a, b in ((lR, lR + 5.0), (lR + 5.0, lR + 50.0)):
        val += integrate.quad(integrand, a, b, limit=400, epsabs=0.0, epsrel=1e-12)[0]
    val += integrate.quad(integrand, lR + 50.0, np.inf, limit=400, epsabs=1e-14 * val, epsrel=1e-10)[0]
    return math.log(math.pi) + l0 + math.log(val)


def polar_mass(f: DensityFn, sigma: float, a: float, b: float) -> float:
    """pi * int_a^b t rho(t)^sigma dt."""
    val, _ = integrate.quad(lambda t: t * float(f(t)) ** sigma, a, b, limit=400, epsabs=0.0, epsrel=1e-11,
                            points=[p for p in (1.0, 10.0, 100.0) if a < p < b] or None)
    return math.pi * val


@dataclass
class SphereView:
    base: SpaceModel
    density: DensityFn
    sigma: float
    report: DensityReport
    forced: bool
    edge_rho_weight: np.ndarray
    node_rho: np.ndarray
    node_mu_rho_weight: np.ndarray
    node_tail: np.ndarray  # T(|x|)
    inf_lower: np.ndarray
    inf_point: np.ndarray
    inf_upper: np.ndarray
    lower_clamp: float  # largest amount by which the raw lower estimate exceeded the point value
    tail_mass: float | None  # mu_rho beyond the truncation, None when unknown
    diam_rho_hat: float = math.nan
    _adj: sparse.csr_matrix | None = field(default=None, repr=False)
    _dX_rho: np.ndarray | None = field(default=None, repr=False)

    @property
    def adjacency(self) -> sparse.csr_matrix:
        if self._adj is None:
            self._adj = self.base.adjacency(self.edge_rho_weight)
        return self._adj

    @property
    def mu_rho_total(self) -> float:
        return float(self.node_mu_rho_weight.sum()) + (self.tail_mass or 0.0)

    def constants(self, C_U: float | None = None) -> StructureConstants:
        self.report.require_pass()
        return StructureConstants(self.report.C_A_hat, self.report.C_B_hat, C_U or self.base.C_U_hint)

    def h(self, t):
        t = np.asarray(t, dtype=float)
        return (t + 1.0) * self.density(t)

    def h_table(self) -> HTable:
        t = geometric_grid(self.density.domain_floor, max(self.base.R_max, 1e6), 40)
        return HTable(t, self.h(t))

    def boundary_distance_rho(self) -> np.ndarray:
        """d_{X,rho}: distance to the boundary line or to infinity, whichever is closer.

        One Dijkstra from a virtual source joined to boundary-adjacent nodes
        (weight = rho-length of the vertical drop) and to the outer ring
        (weight = T(|y|)).
        """
        if self._dX_rho is not None:
            return self._dX_rho
        m = self.base
        n = m.n_nodes
        bnd = np.flatnonzero(m.boundary_adjacent)
        ring = np.flatnonzero(m.outer_ring)
        if m.kind == "halfplane":
            w_b = _descent_rho_integral(self.density, m.coords[bnd])
        elif m.dX is not None:
            w_b = m.dX[bnd] * self.node_rho[bnd]
        else:
            w_b = np.zeros(len(bnd))
        src = np.concatenate([bnd, ring])
        w = np.concatenate([np.maximum(w_b, 1e-300), np.maximum(self.node_tail[ring], 1e-300)])
        d = _virtual_source_dijkstra(self.adjacency, src, w)
        self._dX_rho = d
        return d


def _virtual_source_dijkstra(adj: sparse.csr_matrix, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    extra = sparse.csr_matrix((weights, (np.full(len(nodes), n), nodes)), shape=(n + 1, n + 1))
    big = sparse.bmat([[adj, None], [None, sparse.csr_matrix((1, 1))]], format="csr") + extra + extra.T
    return csgraph.dijkstra(big, directed=False, indices=n)[:n]


def sphericalize(m: SpaceModel, f: DensityFn, sigma: float = 2.0, force: bool = False,
                 report: DensityReport | None = None, quadrature: str = "gauss", with_diameter: bool = True,
                 rng=0) -> SphereView:
    """Edge weights int rho(|.|) ds, node weights mu rho(|x|)^sigma, and the infinity bracket."""
    if not sigma > 0:
        raise DegenerateError("sigma must be positive")
    if report is None:
        report = classify(f)
    if not report.passes and not force:
        raise PrereqError(f"density {f.name} has verdicts (A, B) = ({report.verdict_A}, {report.verdict_B}); "
                          "pass force=True to sphericalize anyway")
    p = m.coords[m.edges[:, 0]]
    q = m.coords[m.edges[:, 1]]
    if m.coords.shape[1] == 0:
        # no coordinates: interpolate |x| linearly along the edge
        ra, rb = m.radial[m.edges[:, 0]], m.radial[m.edges[:, 1]]
        w = m.lengths * 0.5 * sum(f(ra + s * (rb - ra)) for s in _GAUSS2)
    else:
        w = _segment_rho_integral(f, p, q, quadrature)
    if not (w > 0).all():
        raise DegenerateError(f"rho underflows on the mesh (min edge weight {w.min()}); reduce R_max")
    rho = f(m.radial)
    mu_rho = m.mu * rho**sigma
    tail = f.tail(m.radial)
    adj = m.adjacency(w)

    ring = np.flatnonzero(m.outer_ring)
    point = _virtual_source_dijkstra(adj, ring, np.maximum(tail[ring], 1e-300))
    ring_dist = _virtual_source_dijkstra(adj, ring, np.full(len(ring), 1e-300))
    T_R = float(f.tail(m.R_max))
    raw_lower = np.maximum(tail, ring_dist / ANISOTROPY + T_R)
    clamp = float(np.max(raw_lower - point))
    lower = np.minimum(raw_lower, point)
    upper = point + T_R

    tail_mass = None
    if m.kind == "halfplane":
        tail_mass = math.exp(log_polar_tail(f, sigma, m.R_max)) if polar_tail_converges(f, sigma) else math.inf
    v = SphereView(m, f, float(sigma), report, force, w, rho, mu_rho, tail, lower, point, upper,
                   max(clamp, 0.0), tail_mass, _adj=adj)
    if with_diameter:
        v.diam_rho_hat = sampled_diameter(v, rng=rng)
    return v


def d_rho(v: SphereView, source, targets=None, limit: float = np.inf) -> np.ndarray:
    return graph_distance(v.base, source, targets, limit=limit, weights=v.edge_rho_weight) if v._adj is None \
        else _cached_distance(v, source, targets, limit)


def _cached_distance(v: SphereView, source, targets, limit):
    src = np.atleast_1d(np.asarray(source, dtype=int))
    dist = csgraph.dijkstra(v.adjacency, directed=False, indices=src, limit=limit)
    if targets is not None:
        dist = dist[:, np.atleast_1d(np.asarray(targets, dtype=int))]
    return dist[0] if np.ndim(source) == 0 else dist


def sampled_diameter(v: SphereView, sweeps: int = 4, rng=0) -> float:
    """Double-sweep lower estimate of diam(X u {inf}, d_rho)."""
    rng = np.random.default_rng(rng)
    best = float(np.max(v.inf_point))
    x = int(rng.integers(v.base.n_nodes))
    for _ in range(sweeps):
        d = _cached_distance(v, x, None, np.inf)
        k = int(np.argmax(d))
        best = max(best, float(d[k]))
        x = k
    return best


def diameter_bound(v: SphereView) -> float:
    """6 C_qd C_U (1 + C_U) int_0^inf rho."""
    C_U = v.base.C_U_hint
    return 6.0 * v.report.C_qd_hat * C_U * (1.0 + C_U) * float(v.density.tail(v.density.domain_floor))


@dataclass
class InfinityBracket:
    node: int
    lower: float
    point: float
    upper: float
    h: float
    bracket_lo: float
    bracket_hi: float

    @property
    def inside(self) -> bool:
        return self.bracket_lo <= self.point <= self.bracket_hi


def d_rho_infinity(v: SphereView, x: int) -> InfinityBracket:
    """(lower, point, upper) estimates of d_rho(x, inf) with the h(|x|) bracket."""
    c = v.constants()
    r = float(v.base.radial[x])
    h = float(v.h(r))
    return InfinityBracket(int(x), float(v.inf_lower[x]), float(v.inf_point[x]), float(v.inf_upper[x]), h,
                           h / c.C_A, c.C1 * h)


def ball_nodes_rho(v: SphereView, center, r: float, which: str = "point") -> np.ndarray:
    """Nodes of the open d_rho ball; center may be a node id or "inf"."""
    if center == "inf":
        d = {"point": v.inf_point, "lower": v.inf_lower, "upper": v.inf_upper}[which]
        return np.flatnonzero(d < r)
    d = _cached_distance(v, int(center), None, r)
    return np.flatnonzero(d < r)


# ---------------------------------------------------------------------------
# Condition (C)


def _mass_split(m: SpaceModel, weights: np.ndarray, r: np.ndarray, above: bool) -> np.ndarray:
    """sum of node weights with each cell counted by its area fraction beyond (or within) radius r."""
    if m.r_cell is None:
        sel = (m.radial[None, :] >= r[:, None]) if above else (m.radial[None, :] < r[:, None])
        return sel.astype(float) @ weights
    lo, hi = m.r_cell[:, 0], m.r_cell[:, 1]
    c = np.clip(r[:, None], lo, hi) ** 2
    num = (hi[None, :] ** 2 - c) if above else (c - lo[None, :] ** 2)
    return (num / (hi**2 - lo**2)[None, :]) @ weights


def _mass_above(m: SpaceModel, weights: np.ndarray, r: np.ndarray) -> np.ndarray:
    return _mass_split(m, weights, r, True)


def _mass_below(m: SpaceModel, weights: np.ndarray, r: np.ndarray) -> np.ndarray:
    return _mass_split(m, weights, r, False)


@dataclass
class ConditionCResult:
    verdict: str
    C_C_hat: float
    witness: float
    lower_ratio: float  # min sampled LHS/RHS
    lower_bound: float | None  # 1/(C_A^sigma C_mu^3) when (A), (B) pass
    two_sided_holds: bool | None
    r: np.ndarray
    ratio: np.ndarray

    def __iter__(self):
        return iter((self.verdict, self.C_C_hat, self.witness))


def _log_ratio_C(v: SphereView, r: np.ndarray) -> np.ndarray:
    m = v.base
    lhs = _mass_above(m, v.node_mu_rho_weight, r) + v.tail_mass
    rhs_mu = _mass_below(m, m.mu, r + 1.0)
    return np.log(lhs) - v.sigma * v.density.log_rho(r) - np.log(rhs_mu)


def check_condition_C(v: SphereView, grid=None, C_mu: float = 4.0) -> ConditionCResult:
    """sup over r of int_{|x|>=r} rho^sigma dmu / (rho(r)^sigma mu(B(b, r+1))).

    The mass beyond the truncation radius comes from the polar oracle; an
    imported graph has no such oracle and the verdict is inconclusive.
    """
    m = v.base
    hi = m.R_max - 1.0
    g1 = geometric_grid(1e-3, hi, 20) if grid is None else np.asarray(grid, dtype=float)
    g1 = g1[(g1 > 0) & (g1 + 1.0 <= m.R_max)]
    if v.tail_mass is None:
        return ConditionCResult(INCONCLUSIVE, math.nan, math.nan, math.nan, None, None, g1, np.full(len(g1), np.nan))
    g2 = np.sort(np.concatenate([g1, np.sqrt(g1[:-1] * g1[1:])]))
    l1 = _log_ratio_C(v, g1)
    l2 = _log_ratio_C(v, g2)
    i = int(np.argmax(l1))
    verdict = _verdict(float(l1[i]), float(np.max(l2)), _decade_maxima(g1, l1))
    ratio = np.exp(l1)
    lower_ratio = float(ratio.min())
    lb, two = None, None
    if v.report.passes and verdict == PASS:
        lb = 1.0 / (v.report.C_A_hat**v.sigma * C_mu**3)
        two = lower_ratio >= lb
    return ConditionCResult(verdict, float(ratio[i]), float(g1[i]), lower_ratio, lb, two, g1, ratio)


# ---------------------------------------------------------------------------
# ball inclusions at infinity


@dataclass
class InfinityBallCheck:
    r: float
    inner_radius: float  # 2 h^-1(r / (2 C1 C_A C_B)): nodes beyond it must lie in the ball
    outer_radius: float  # h^-1(C_A r): ball nodes must lie beyond it
    n_ball: int
    inner_ok: bool
    outer_ok: bool
    applicable: bool  # inner radius inside the truncated model

    @property
    def holds(self) -> bool:
        return self.inner_ok and self.outer_ok


def check_infinity_balls(v: SphereView, radii=None) -> list[InfinityBallCheck]:
    """Node-set inclusions X \\ B(b, 2h^-1(r/(2C1 C_A C_B))) in B_rho(inf, r) in X \\ B(b, h^-1(C_A r))."""
    c = v.constants()
    tau1 = v.report.tau1_hat
    if radii is None:
        radii = tau1 / c.C_A * np.logspace(-3, 0, 13)
    table = v.h_table()
    out = []
    for r in np.asarray(radii, dtype=float):
        if r > tau1 / c.C_A * (1 + 1e-12):
            raise DegenerateError(f"radius {r} exceeds tau1/C_A = {tau1 / c.C_A}")
        inner, _ = table.inverse(r / (2 * c.C1 * c.C_A * c.C_B))
        inner = 2 * inner
        outer, _ = table.inverse(c.C_A * r)
        ball = v.inf_point < r
        far = v.base.radial >= inner
        out.append(InfinityBallCheck(
            float(r), float(inner), float(outer), int(ball.sum()),
            bool(np.all(ball[far])), bool(np.all(v.base.radial[ball] >= outer)), bool(inner <= v.base.R_max),
        ))
    return out


# ---------------------------------------------------------------------------
# export


def summary(v: SphereView, bins: int = 20) -> dict:
    m = v.base
    hist, edges = np.histogram(np.log10(v.edge_rho_weight), bins=bins)
    return {
        "density": v.density.name,
        "sigma": v.sigma,
        "forced": v.forced,
        "space_kind": m.kind,
        "n_nodes": m.n_nodes,
        "n_edges": m.n_edges,
        "R_max": m.R_max,
        "mesh_rel": m.mesh_rel,
        "edge_rho_weight_log10_hist": {"counts": hist.tolist(), "edges": edges.tolist()},
        "diam_rho_hat": v.diam_rho_hat,
        "mu_rho_graph": float(v.node_mu_rho_weight.sum()),
        "mu_rho_tail": v.tail_mass,
        "mu_rho_total": v.mu_rho_total,
        "infinity_bracket_max_width": float(np.max(v.inf_upper - v.inf_lower)),
        "infinity_lower_clamp": v.lower_clamp,
        "density_report": v.report.to_dict(),
    }


def write_summary(v: SphereView, path) -> None:
    Path(path).write_text(json.dumps(summary(v), indent=2, default=_json_default) + "\n")


def write_distance_csv(path, fields: dict[str, np.ndarray], node_ids=None) -> None:
    """One row per node, one column per named distance field."""
    names = list(fields)
    n = len(fields[names[0]])
    ids = np.arange(n) if node_ids is None else np.asarray(node_ids)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", *names])
        for k in range(n):
            w.writerow([int(ids[k]), *(repr(float(fields[c][k])) for c in names)])


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
