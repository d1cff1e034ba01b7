"""Discretized metric measure spaces: the graded half-plane graph and imported graphs.

The half-plane {(x, y) : y > 0} with base point b = (0, 0) is meshed in
log-polar coordinates (u, theta) = (log|z|, arg z).  Since the map is
conformal, square cells in (u, theta) are nearly square in the plane and
their size scales with |z|, so every radial decade gets the same number of
rings.  A tiny half-disk of radius ~r_min around b is left out; nodes
never touch the boundary line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import DegenerateError, ResourceError, UnreachableError

ANISOTROPY = 1.083  # worst 8-neighbour grid metric distortion
HALFPLANE_CU = math.pi / 2
DEFAULT_MAX_NODES = 1_000_000
RESOLVED_MIN_NODES = 24


@dataclass(frozen=True)
class PolarGrid:
    """Index bookkeeping for the log-polar half-plane mesh."""

    du: float
    dtheta: float
    i0: int  # ring index of the innermost ring, r = exp(i * du)
    n_r: int
    n_theta: int

    @property
    def radii(self) -> np.ndarray:
        return np.exp((self.i0 + np.arange(self.n_r)) * self.du)

    @property
    def thetas(self) -> np.ndarray:
        return (np.arange(self.n_theta) + 0.5) * self.dtheta

    def node(self, i, j):
        return np.asarray(i) * self.n_theta + np.asarray(j)

    def snap(self, xy) -> np.ndarray:
        """Nearest mesh node (in log-polar index space) to each planar point."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        r = np.hypot(xy[:, 0], xy[:, 1])
        th = np.arctan2(xy[:, 1], xy[:, 0])
        i = np.clip(np.rint(np.log(r) / self.du).astype(int) - self.i0, 0, self.n_r - 1)
        j = np.clip(np.floor(th / self.dtheta).astype(int), 0, self.n_theta - 1)
        return self.node(i, j)


@dataclass
class SpaceModel:
    coords: np.ndarray  # (n, dim), base point at the origin
    radial: np.ndarray  # |x| = d(b, x)
    mu: np.ndarray  # cell measure
    boundary_adjacent: np.ndarray
    outer_ring: np.ndarray
    edges: np.ndarray  # (m, 2) int
    lengths: np.ndarray  # (m,)
    R_max: float
    C_U_hint: float = 1.0
    mesh_rel: float = math.nan
    dX: np.ndarray | None = None  # distance to the boundary, when known
    kind: str = "imported"
    base_point: tuple = (0.0, 0.0)
    grid: PolarGrid | None = None
    r_cell: np.ndarray | None = None  # (n, 2) radial extent of each cell
    _adj: sparse.csr_matrix | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.radial)

    @property
    def n_edges(self) -> int:
        return len(self.lengths)

    @property
    def total_mu(self) -> float:
        return float(self.mu.sum())

    def adjacency(self, weights=None) -> sparse.csr_matrix:
        """Symmetric sparse adjacency; edge weights default to lengths in d."""
        if weights is None and self._adj is not None:
            return self._adj
        w = self.lengths if weights is None else np.asarray(weights, dtype=float)
        n = self.n_nodes
        a, b = self.edges[:, 0], self.edges[:, 1]
        mat = sparse.csr_matrix((np.concatenate([w, w]), (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(n, n))
        if weights is None:
            self._adj = mat
        return mat

    def is_connected(self) -> bool:
        k, _ = csgraph.connected_components(self.adjacency(), directed=False)
        return k == 1

    def nearest(self, xy) -> np.ndarray:
        if self.grid is not None:
            return self.grid.snap(xy)
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        d2 = ((self.coords[None, :, :] - xy[:, None, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)

    def local_mesh(self) -> np.ndarray:
        """Largest incident edge length per node."""
        out = np.zeros(self.n_nodes)
        np.maximum.at(out, self.edges[:, 0], self.lengths)
        np.maximum.at(out, self.edges[:, 1], self.lengths)
        return out


def build_halfplane(mesh_rel: float = 0.05, R_max: float = 1e3, r_min: float = 1e-2,
                    max_nodes: int = DEFAULT_MAX_NODES) -> SpaceModel:
    """Graded 8-neighbour graph of the upper half-plane truncated at |x| <= R_max."""
    if not mesh_rel > 0 or not R_max > 0:
        raise DegenerateError("mesh_rel and R_max must be positive")
    if R_max <= max(mesh_rel, r_min) * 4:
        raise ResourceError(f"R_max={R_max} is too small for the mesh (needs several cells)")
    # r = 1 and r = 3 land on rings
    steps = max(1, round(math.log(3.0) / mesh_rel))
    du = math.log(3.0) / steps
    n_theta = int(round(math.pi / du))
    if n_theta % 2 == 0:
        n_theta += 1  # odd so that theta = pi/2 is a node column
    dtheta = math.pi / n_theta
    i0 = math.ceil(math.log(r_min) / du - 1e-9)
    i1 = math.floor(math.log(R_max) / du + 1e-9)
    n_r = i1 - i0 + 1
    n = n_r * n_theta
    if n > max_nodes:
        raise ResourceError(f"half-plane mesh needs {n} nodes, budget is {max_nodes}")
    grid = PolarGrid(du, dtheta, i0, n_r, n_theta)

    r = grid.radii
    th = grid.thetas
    rr, tt = np.meshgrid(r, th, indexing="ij")
    coords = np.stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()], axis=1)
    radial = rr.ravel().copy()

    lo = r * math.exp(-du / 2)
    hi = np.minimum(r * math.exp(du / 2), R_max)
    area_ring = 0.5 * (hi**2 - lo**2) * dtheta
    mu = np.repeat(area_ring, n_theta)
    r_cell = np.repeat(np.stack([lo, hi], axis=1), n_theta, axis=0)

    jj = np.tile(np.arange(n_theta), n_r)
    ii = np.repeat(np.arange(n_r), n_theta)
    boundary = (jj == 0) | (jj == n_theta - 1)
    outer = ii == n_r - 1

    I, J = np.meshgrid(np.arange(n_r), np.arange(n_theta), indexing="ij")
    pairs = []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        ok = (I + di < n_r) & (J + dj >= 0) & (J + dj < n_theta)
        a = grid.node(I[ok], J[ok])
        b = grid.node(I[ok] + di, J[ok] + dj)
        pairs.append(np.stack([a, b], axis=1))
    edges = np.concatenate(pairs)
    lengths = np.linalg.norm(coords[edges[:, 0]] - coords[edges[:, 1]], axis=1)

    return SpaceModel(
        coords=coords, radial=radial, mu=mu, boundary_adjacent=boundary, outer_ring=outer,
        edges=edges, lengths=lengths, R_max=float(R_max), C_U_hint=HALFPLANE_CU, mesh_rel=float(mesh_rel),
        dX=coords[:, 1].copy(), kind="halfplane", grid=grid, r_cell=r_cell,
    )


def graph_distance(m: SpaceModel, source, targets=None, limit: float = np.inf, weights=None) -> np.ndarray:
    """Shortest-path distances from one source (1-d result) or a batch of sources (2-d).

    Raises UnreachableError if a requested target cannot be reached and no
    limit was set.
    """
    adj = m.adjacency(weights)
    src = np.atleast_1d(np.asarray(source, dtype=int))
    dist = csgraph.dijkstra(adj, directed=False, indices=src, limit=limit)
    if targets is not None:
        dist = dist[:, np.atleast_1d(np.asarray(targets, dtype=int))]
    if not np.isfinite(limit) and np.isinf(dist).any():
        raise UnreachableError("graph is disconnected between requested nodes")
    return dist[0] if np.ndim(source) == 0 else dist


def halfplane_area(R_max: float, r_inner: float = 0.0) -> float:
    return 0.5 * math.pi * (R_max**2 - r_inner**2)


@dataclass(frozen=True)
class BallQuery:
    center: int | str  # node id, "inf" or "b"
    radius: float
    metric_tag: str = "original"

    def __post_init__(self):
        if not self.radius > 0:
            raise DegenerateError("ball radius must be positive")
        if self.metric_tag not in ("original", "sphericalized"):
            raise DegenerateError(f"unknown metric tag {self.metric_tag!r}")
        if self.center == "inf" and self.metric_tag != "sphericalized":
            raise DegenerateError("balls about infinity only exist in the sphericalized metric")
        if self.center == "b" and self.metric_tag != "original":
            raise DegenerateError("balls about b only exist in the original metric")


def ball_nodes(m: SpaceModel, q: BallQuery) -> np.ndarray:
    """Node indices of an open ball in the original metric."""
    if q.metric_tag != "original":
        raise DegenerateError("use sphere.ball_nodes_rho for sphericalized balls")
    if q.center == "b":
        return np.flatnonzero(m.radial < q.radius)
    d = graph_distance(m, int(q.center), limit=q.radius)
    return np.flatnonzero(d < q.radius)


@dataclass
class DoublingSample:
    center: int
    radius: float
    ratio: float
    n_inner: int
    resolved: bool


@dataclass
class DoublingResult:
    C_mu_hat: float
    worst: DoublingSample | None
    samples: list
    resolution_limited: list

    def __iter__(self):
        return iter((self.C_mu_hat, self.worst))


def doubling_constant_mu(m: SpaceModel, samples: int = 200, rng=None, r_min: float | None = None,
                         min_nodes: int = RESOLVED_MIN_NODES) -> DoublingResult:
    """Max of mu(B(x,2r))/mu(B(x,r)) over balls stratified by radial decade, log-uniform radii.

    Radii are capped at R_max/4 and balls whose double would leave the
    truncated region are skipped.  Balls with fewer than min_nodes nodes are
    reported separately as resolution-limited and do not enter C_mu_hat.
    """
    rng = np.random.default_rng(rng)
    lo_dec = math.floor(math.log10(max(m.radial.min(), 1e-12)))
    hi_dec = math.floor(math.log10(m.R_max / 2))
    decades = np.arange(lo_dec, hi_dec + 1)
    r_floor = float(np.median(m.lengths)) * 0.5 if r_min is None else r_min
    adj = m.adjacency()
    out, limited = [], []
    for k in range(samples):
        dec = decades[k % len(decades)]
        cand = np.flatnonzero((m.radial >= 10.0**dec) & (m.radial < 10.0 ** (dec + 1)) & (m.radial < m.R_max / 2))
        if cand.size == 0:
            continue
        x = int(rng.choice(cand))
        r_cap = min(m.R_max / 4, (m.R_max - m.radial[x]) / 2)
        if r_cap <= r_floor:
            continue
        r = float(math.exp(rng.uniform(math.log(r_floor), math.log(r_cap))))
        d = csgraph.dijkstra(adj, directed=False, indices=x, limit=2 * r)
        inner = d < r
        outer = d < 2 * r
        ratio = float(m.mu[outer].sum() / m.mu[inner].sum())
        s = DoublingSample(x, r, ratio, int(inner.sum()), int(inner.sum()) >= min_nodes)
        (out if s.resolved else limited).append(s)
    worst = max(out, key=lambda s: s.ratio) if out else None
    return DoublingResult(worst.ratio if worst else math.nan, worst, out, limited)


# ---------------------------------------------------------------------------
# text I/O
#
#   base <x> <y> ...
#   rmax <R>
#   cu <C_U>
#   node <id> <radial> <mu> <flags> <dX|nan> <coord> <coord> ...
#   edge <a> <b> <length>
#
# flags: "b" boundary-adjacent, "o" outer ring, "-" neither.


def write_graph(m: SpaceModel, path) -> None:
    path = Path(path)
    dx = m.dX if m.dX is not None else np.full(m.n_nodes, np.nan)
    with path.open("w") as fh:
        fh.write("# sphericalization graph v1\n")
        fh.write("base " + " ".join(repr(float(c)) for c in m.base_point) + "\n")
        fh.write(f"rmax {m.R_max!r}\ncu {m.C_U_hint!r}\n")
        for k in range(m.n_nodes):
            flags = ("b" if m.boundary_adjacent[k] else "") + ("o" if m.outer_ring[k] else "") or "-"
            coords = " ".join(repr(float(c)) for c in m.coords[k])
            fh.write(f"node {k} {float(m.radial[k])!r} {float(m.mu[k])!r} {flags} {float(dx[k])!r} {coords}\n")
        for (a, b), w in zip(m.edges, m.lengths):
            fh.write(f"edge {int(a)} {int(b)} {float(w)!r}\n")


def read_graph(path) -> SpaceModel:
    """Parse the text format; node ids may be arbitrary integers and are renumbered."""
    base, rmax, cu = (0.0, 0.0), None, 1.0
    nodes, edges = [], []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            try:
                if tok[0] == "base":
                    base = tuple(float(t) for t in tok[1:])
                elif tok[0] == "rmax":
                    rmax = float(tok[1])
                elif tok[0] == "cu":
                    cu = float(tok[1])
                elif tok[0] == "node":
                    nodes.append((int(tok[1]), float(tok[2]), float(tok[3]), tok[4], float(tok[5]),
                                  [float(t) for t in tok[6:]]))
                elif tok[0] == "edge":
                    edges.append((int(tok[1]), int(tok[2]), float(tok[3])))
                else:
                    raise ValueError(f"unknown record {tok[0]!r}")
            except (IndexError, ValueError) as exc:
                raise DegenerateError(f"{path}:{lineno}: {exc}") from None
    if not nodes:
        raise DegenerateError(f"{path}: no node records")
    index = {nid: k for k, (nid, *_) in enumerate(nodes)}
    radial = np.array([n[1] for n in nodes])
    mu = np.array([n[2] for n in nodes])
    flags = [n[3] for n in nodes]
    dx = np.array([n[4] for n in nodes])
    dims = {len(n[5]) for n in nodes}
    if len(dims) != 1:
        raise DegenerateError(f"{path}: inconsistent coordinate dimensions")
    coords = np.array([n[5] for n in nodes], dtype=float).reshape(len(nodes), dims.pop())
    if coords.shape[1]:
        coords = coords - np.asarray(base, dtype=float)[: coords.shape[1]]
    try:
        e = np.array([(index[a], index[b]) for a, b, _ in edges], dtype=int).reshape(-1, 2)
    except KeyError as exc:
        raise DegenerateError(f"{path}: edge references unknown node {exc}") from None
    w = np.array([x for *_, x in edges], dtype=float)
    if (w <= 0).any() or (mu < 0).any() or (radial <= 0).any():
        raise DegenerateError(f"{path}: lengths and radial values must be positive, measures non-negative")
    outer = np.array(["o" in f for f in flags])
    if rmax is None:
        rmax = float(radial.max())
    return SpaceModel(
        coords=coords, radial=radial, mu=mu, boundary_adjacent=np.array(["b" in f for f in flags]),
        outer_ring=outer if outer.any() else radial >= radial.max() * (1 - 1e-9),
        edges=e, lengths=w, R_max=rmax, C_U_hint=cu, dX=None if np.isnan(dx).all() else dx,
        kind="imported", base_point=base,
    )
