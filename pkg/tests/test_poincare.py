import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csgraph

import oracles
from conftest import node_at
from sphericalization import BallQuery, SkippedBall, graph_distance
from sphericalization.errors import DegenerateError
from sphericalization.poincare import (ANCHORS, CSV_FIELDS, N_RANDOM_FIELDS, SUITE_VERSION, ScalarField,
                                       _ball_sets, field_suite, interior_point_check, local_upper_gradient,
                                       lp_norm_identity, poincare_sweep, poincare_terms, random_walk_curves,
                                       sample_balls, transform_identity_check, ug_transform_check,
                                       upper_gradient_excess, write_sweep_csv, write_sweep_summary)

RHO = oracles.powlog(-2)


@pytest.fixture(scope="module")
def suite(small_halfplane):
    return field_suite(small_halfplane)


def test_suite_composition(suite):
    tags = [u.tag for u in suite]
    assert SUITE_VERSION == "1"
    assert len(tags) == len(ANCHORS) + 3 + N_RANDOM_FIELDS
    assert {"coord_x", "coord_y", "log_radial"} <= set(tags)


def test_suite_deterministic(small_halfplane):
    a, b = field_suite(small_halfplane, seed=3), field_suite(small_halfplane, seed=3)
    for u, w in zip(a, b):
        np.testing.assert_array_equal(u.values, w.values)


def test_scalar_field_rejects_nonfinite():
    with pytest.raises(DegenerateError):
        ScalarField(np.array([0.0, np.nan]), "bad")


# ---------------------------------------------------------------------------
# upper gradients


def test_constant_field_zero_gradient(small_halfplane):
    g = local_upper_gradient(small_halfplane, np.full(small_halfplane.n_nodes, 3.0))
    assert np.all(g.values == 0.0)


def test_distance_field_is_one_lipschitz(small_halfplane, suite):
    g = local_upper_gradient(small_halfplane, suite[0])
    assert g.values.max() <= 1.0 + 1e-12
    assert g.values.min() > 0.0


def test_coordinate_gradient_near_one(small_halfplane, suite):
    u = next(f for f in suite if f.tag == "coord_x")
    g = local_upper_gradient(small_halfplane, u).values
    assert np.all(g <= 1.0 + 1e-12)
    assert np.median(g) > 0.9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["original", "sphericalized"]))
def test_local_gradient_is_edgewise_upper_gradient(small_view, seed, tag):
    m = small_view.base
    u = np.random.default_rng(seed).normal(size=m.n_nodes)
    g = local_upper_gradient(small_view, u, tag).values
    L = m.lengths if tag == "original" else small_view.edge_rho_weight
    assert np.all(upper_gradient_excess(small_view, u, g, L) <= 1.0 + 1e-12)


# ---------------------------------------------------------------------------
# transform identities


def test_transform_identity_radial_closed_form(view, gate):
    ref = gate("radial d_rho (0,1)-(0,3)", 2 / 15, oracles.segment(RHO, 1, 3), 1e-25)
    m = view.base
    a, b = node_at(m, 0, 1), node_at(m, 0, 3)
    _, pred = csgraph.dijkstra(view.adjacency, indices=a, return_predecessors=True)
    path = [b]
    while path[-1] != a:
        path.append(int(pred[path[-1]]))
    path = np.array(path[::-1])
    res = transform_identity_check(view, [path])
    assert res.worst_rel_error < 10 * m.mesh_rel
    length = sum(float(view.adjacency[i, j]) for i, j in zip(path[:-1], path[1:]))
    assert length == pytest.approx(ref, rel=0.02)


def test_transform_identity_zero_field(small_view):
    curves = random_walk_curves(small_view.base, 20, rng=1)
    res = transform_identity_check(small_view, curves, np.zeros(small_view.base.n_nodes))
    assert res.worst_rel_error == 0.0


def test_transform_identity_random_curves(small_view, suite):
    m = small_view.base
    curves = random_walk_curves(m, 200, rng=2)
    g = local_upper_gradient(m, suite[-1]).values
    for field in (None, g):
        res = transform_identity_check(small_view, curves, field)
        assert res.n_curves == 200
        assert res.worst_rel_error < 10 * m.mesh_rel


def test_random_walks_follow_edges(small_halfplane):
    adj = small_halfplane.adjacency()
    for c in random_walk_curves(small_halfplane, 10, rng=4, max_steps=5):
        assert 2 <= len(c) <= 6
        assert all(adj[i, j] > 0 for i, j in zip(c[:-1], c[1:]))


@pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
def test_lp_norm_identity(small_view, suite, p):
    g = local_upper_gradient(small_view, suite[5], "sphericalized").values
    lhs, rhs = lp_norm_identity(small_view, g, p)
    assert rhs == pytest.approx(lhs, rel=1e-12)


def test_ug_transform_holds(small_view, suite):
    for u in suite[:4]:
        rep = ug_transform_check(small_view, u)
        assert rep.holds
        assert rep.worst_bias_rho_to_d >= 1.0 - 1e-6
        assert all(e <= 1e-12 for e in rep.lp_rel_errors.values())


# ---------------------------------------------------------------------------
# Poincare sweep


def test_constant_field_ratio_zero(small_view):
    m = small_view.base
    sw = poincare_sweep(small_view, fields=[ScalarField(np.ones(m.n_nodes), "const")], n_balls=20, rng=0)
    # g vanishes identically; the oscillation is zero up to the rounding of the weighted mean
    assert sw.samples and all(s.ratio == 0.0 and s.rhs == 0.0 and s.lhs < 1e-14 for s in sw.samples)


def test_interior_coordinate_baseline(halfplane, gate):
    """At lambda = 1 a coordinate on an interior disk gives mean |x - x_B| / r = 4/(3 pi)."""
    ref = gate("disk mean |x| / r", 4 / (3 * math.pi),
               mp.quad(lambda r, t: r * abs(r * mp.cos(t)), [0, 1], [0, mp.pi / 2, 3 * mp.pi / 2, 2 * mp.pi]) / mp.pi,
               1e-12)
    m = halfplane
    u = ScalarField(m.coords[:, 0], "coord_x")
    x = node_at(m, 0.0, 200.0)
    q = BallQuery(x, 40.0)
    sw = poincare_sweep(m, p=1, lam=1, balls=[q], fields=[u])
    s = sw.samples[0]
    assert s.lhs / s.radius == pytest.approx(ref, rel=5 * m.mesh_rel)
    # the local upper gradient of a coordinate on the anisotropic grid is at most 1
    assert s.ratio >= ref * (1 - 5 * m.mesh_rel)


def test_scale_covariance(small_view, suite):
    balls = sample_balls(small_view, 10, "sphericalized", rng=3)
    base = poincare_sweep(small_view, balls=balls, fields=[suite[6]], metrics=("sphericalized",))
    scaled = poincare_sweep(small_view, balls=balls, fields=[suite[6].scaled(7.5)], metrics=("sphericalized",))
    assert base.samples
    for a, b in zip(base.samples, scaled.samples):
        assert b.ratio == pytest.approx(a.ratio, rel=1e-10)
        assert b.lhs == pytest.approx(7.5 * a.lhs, rel=1e-10)


def test_dilation_monotone_corrected(small_view, suite):
    """lhs / (r (int_{lam B} g^p / mu(B))^(1/p)) is non-increasing in lam; the plain ratio need not be."""
    m = small_view.base
    mu = small_view.node_mu_rho_weight
    w = small_view.edge_rho_weight
    u = suite[7]
    g = local_upper_gradient(small_view, u, "sphericalized").values
    balls = sample_balls(small_view, 15, "sphericalized", rng=5, lam=4.0)
    checked = 0
    for q in balls:
        d = graph_distance(m, int(q.center), weights=w, limit=4 * q.radius)
        ball = d < q.radius
        if ball.sum() < 2:
            continue
        vals = []
        for lam in (1.0, 2.0, 4.0):
            dil = d < lam * q.radius
            lhs, _ = poincare_terms(u.values, g, mu, ball, dil, q.radius, 1.0)
            energy = float(mu[dil] @ g[dil]) / float(mu[ball].sum())
            vals.append(lhs / (q.radius * energy))
        assert vals[0] >= vals[1] >= vals[2]
        checked += 1
    assert checked > 0


def test_skipped_balls(small_halfplane):
    m = small_halfplane
    x = node_at(m, 0, 90)
    with pytest.raises(SkippedBall):
        _ball_sets(m, BallQuery(x, 20.0), 2.0, 1)
    with pytest.raises(SkippedBall):
        _ball_sets(m, BallQuery(x, 1e-6), 1.0, 5)


def test_sweep_validation(small_view):
    with pytest.raises(DegenerateError):
        poincare_sweep(small_view, p=0.5)
    with pytest.raises(DegenerateError):
        poincare_sweep(small_view, lam=0.5)


def test_sweep_both_metrics_and_outputs(tmp_path, small_view):
    sw = poincare_sweep(small_view, n_balls=20, rng=1)
    assert set(sw.C_P_hat) == {"original", "sphericalized"}
    assert sw.preservation_factor == pytest.approx(sw.C_P_hat["sphericalized"] / sw.C_P_hat["original"])
    assert all(s.ratio <= sw.C_P_hat[s.metric_tag] for s in sw.samples)
    write_sweep_csv(sw, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS) and len(lines) == len(sw.samples) + 1
    write_sweep_summary(sw, tmp_path / "p.json")
    assert '"suite_version": "1"' in (tmp_path / "p.json").read_text()


def test_sample_balls_mesh_independent_centres(small_view):
    a = sample_balls(small_view.base, 10, "original", rng=9)
    b = sample_balls(small_view.base, 10, "original", rng=9)
    assert [(q.center, q.radius) for q in a] == [(q.center, q.radius) for q in b]
    assert all(q.metric_tag == "original" for q in a)


def test_interior_point(small_view):
    res = interior_point_check(small_view, C_hat=math.pi / 2, n=50, rng=0)
    assert res.n_balls == 50
    assert res.worst_ratio <= 1.0
