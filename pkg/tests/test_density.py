import json
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sphericalization.density import (FAIL, INCONCLUSIVE, PASS, DensityFn, Exponential, PowLog, Tabulated,
                                      check_condition_A, check_condition_B, check_equivalence,
                                      check_h_inverse_doubling, classify, decay_exponent, eval_rho,
                                      geometric_grid, h_and_inverse, quasidecreasing_constant, tail_integral)
from sphericalization.errors import DivergenceError, DomainError, PrereqError


# ---------------------------------------------------------------- evaluation

def test_eval_examples():
    assert eval_rho(PowLog(-2, 0), 1.0) == pytest.approx(1 / 9, rel=1e-15)
    assert eval_rho(PowLog(-2, 0), 1e-6) == pytest.approx((2 + 1e-6) ** -2)
    assert eval_rho(PowLog(-1, -2), math.e**2 - 2) == pytest.approx(math.exp(-2) / 4, rel=1e-14)
    assert eval_rho(Exponential(1), 0.5) == pytest.approx(0.6065306597126334, rel=1e-15)


def test_eval_below_floor_raises():
    with pytest.raises(DomainError):
        eval_rho(PowLog(-2, 0), 1e-7)
    with pytest.raises(DomainError):
        eval_rho(PowLog(-2, 0), -1.0)


def test_constructor_validation():
    with pytest.raises(ValueError):
        Exponential(0.0)
    with pytest.raises(ValueError):
        Tabulated([(1.0, 1.0), (0.5, 1.0)])
    with pytest.raises(ValueError):
        Tabulated([(1.0, -1.0)])


# ---------------------------------------------------------------- tails

def test_tail_powlog_one_third(gate):
    ref = gate("tail PowLog(-2,0) r=1", 1 / 3, oracles.tail(oracles.powlog(-2), 1), 1e-12)
    assert tail_integral(PowLog(-2, 0), 1.0) == pytest.approx(ref, rel=1e-12)


def test_tail_exponential_zero():
    assert tail_integral(Exponential(1), 1e-6) == pytest.approx(math.exp(-1e-6), rel=1e-14)


def test_tail_log_family_one(gate):
    r = math.e - 2
    ref = gate("tail PowLog(-1,-2) r=e-2", 1.0, oracles.tail(oracles.powlog(-1, -2), mp.e - 2), 1e-10)
    assert tail_integral(PowLog(-1, -2), r) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("f,orc", [
    (PowLog(-2, 0), oracles.powlog(-2)),
    (PowLog(-1.5, -1), oracles.powlog(-1.5, -1)),
    (PowLog(-2, -2), oracles.powlog(-2, -2)),
    (PowLog(-1, -2), oracles.powlog(-1, -2)),
    (Exponential(1), oracles.exponential(1)),
    (Exponential(0.3), oracles.exponential(0.3)),
])
@pytest.mark.parametrize("r", [1e-3, 0.5, 7.0, 300.0])
def test_tail_matches_oracle(f, orc, r):
    assert float(f.tail(r)) == pytest.approx(float(oracles.tail(orc, r)), rel=1e-9)


def test_tabulated_tail_matches_oracle():
    knots = [(0.1, 2.0), (1.0, 1.0), (10.0, 0.05), (100.0, 1e-4)]
    f = Tabulated(knots)
    # log-log interpolation, power extension past the last knot
    lt = [math.log(t) for t, _ in knots]
    lv = [math.log(v) for _, v in knots]

    def rho(t):
        x = mp.log(t)
        for k in range(len(lt) - 1):
            if x <= lt[k + 1] or k == len(lt) - 2:
                s = (lv[k + 1] - lv[k]) / (lt[k + 1] - lt[k])
                return mp.e ** (lv[k] + s * (x - lt[k]))

    for r in (0.2, 3.0, 50.0):
        ref = mp.quad(rho, [r] + [t for t, _ in knots if t > r] + [mp.inf])
        assert float(f.tail(r)) == pytest.approx(float(ref), rel=1e-8)


def test_quadrature_matches_closed_form_on_grid():
    g = geometric_grid(1e-3, 1e5, 4)
    for f in (PowLog(-2, 0), PowLog(-3, 0), PowLog(-1, -2), PowLog(-1, -3), Exponential(1)):
        closed = f.tail(g, method="closed")
        quad = f.tail(g, method="quad")
        np.testing.assert_allclose(quad, closed, rtol=0, atol=10 * f.tol)
        np.testing.assert_allclose(quad, closed, rtol=1e-6, atol=0)


def test_divergent_tails_rejected():
    with pytest.raises(DivergenceError):
        PowLog(-1, 0).tail(1.0)
    with pytest.raises(DivergenceError):
        PowLog(-0.5, -2).tail(1.0)
    with pytest.raises(DivergenceError):
        classify(PowLog(-1, -1))


# ---------------------------------------------------------------- conditions

def test_condition_A_examples():
    v, c, wit = check_condition_A(PowLog(-2, 0))
    assert v == PASS and c == pytest.approx(4.0, rel=2e-3) and c <= 4.0
    r, s = wit
    assert s == pytest.approx(2 * r + 1, rel=1e-6)
    assert check_condition_A(Exponential(1)).verdict == FAIL
    assert check_condition_A(PowLog(-1, -2)).verdict == PASS


def test_condition_A_exponential_ratio_closed_form():
    # rho(r)/rho(2r+1) = e^(r+1)
    f = Exponential(1)
    for r in (1.0, 10.0, 100.0):
        assert float(f(r) / f(2 * r + 1)) == pytest.approx(math.exp(r + 1), rel=1e-12)


def test_condition_B_examples():
    v, c, wit = check_condition_B(PowLog(-2, 0))
    assert v == PASS and c == pytest.approx(2.0, rel=1e-3)
    assert wit <= 1e-3
    v, c, _ = check_condition_B(Exponential(1))
    assert v == PASS and c <= 1.0
    assert check_condition_B(PowLog(-1, -2)).verdict == FAIL


def test_condition_B_log_family_ratio_closed_form(gate):
    # T(r)/((r+1) rho(r)) = (r+2) log(r+2) / (r+1)
    f = PowLog(-1, -2)
    for r in (1.0, 1e3, 1e6):
        ref = gate(f"B ratio log family r={r:g}", (r + 2) * math.log(r + 2) / (r + 1),
                   oracles.tail(oracles.powlog(-1, -2), r) / ((r + 1) * oracles.powlog(-1, -2)(r)), 1e-10)
        assert float(f.tail(r) / ((r + 1) * f(r))) == pytest.approx(ref, rel=1e-10)


def test_safety_multiplier_inflates_constant():
    a = check_condition_A(PowLog(-2, 0))
    b = check_condition_A(PowLog(-2, 0), safety=1.5)
    assert b.constant == pytest.approx(1.5 * a.constant)
    assert b.verdict == a.verdict


def test_equivalence_examples():
    v, c, _ = check_equivalence(PowLog(-2, 0))
    assert v == PASS and c == pytest.approx(2.0, rel=1e-3)
    assert check_equivalence(Exponential(1)).verdict == FAIL


@pytest.mark.parametrize("f", [PowLog(-2, 0), PowLog(-3, 0), PowLog(-1.5, -1), PowLog(-2, -2),
                               PowLog(-1, -2), Exponential(1), Exponential(2)])
def test_equivalence_consistent_with_A_and_B(f):
    both = check_condition_A(f).verdict == PASS and check_condition_B(f).verdict == PASS
    assert (check_equivalence(f).verdict == PASS) == both


def test_decay_exponent_eighth():
    rep = classify(PowLog(-2, 0))
    d = decay_exponent(PowLog(-2, 0), rep)
    assert d.epsilon == pytest.approx(1 / 8, rel=3e-3)
    assert d.holds


def test_decay_exponent_slack_positive_other_family():
    f = PowLog(-1.5, 0)
    d = decay_exponent(f, classify(f))
    assert d.holds and d.worst_log_slack >= -1e-12


def test_decay_exponent_requires_pass():
    with pytest.raises(PrereqError):
        decay_exponent(Exponential(1), classify(Exponential(1)))


def test_h_inverse_closed_form(gate):
    f = PowLog(-2, 0)
    h1 = gate("h(1) PowLog(-2,0)", 2 / 9, 2 * oracles.powlog(-2)(1), 1e-15)
    tab = h_and_inverse(f)
    t_hat, below = tab.inverse(h1)
    assert below is not None and below < 1.0 <= t_hat
    assert t_hat == pytest.approx(1.0, rel=0.03)
    # h is strictly decreasing: derivative -t/(t+2)^3
    assert np.all(np.diff(tab.h[tab.t > 0]) < 0)


def test_h_inverse_saturates_at_floor():
    tab = h_and_inverse(PowLog(-2, 0))
    t_hat, below = tab.inverse(10.0)
    assert t_hat == tab.t[0] and below is None


def test_tau1(gate):
    rep = classify(PowLog(-2, 0))
    ref = gate("tau1 PowLog(-2,0)", 1 / 36, oracles.powlog(-2)(1) / 4, 1e-15)
    assert rep.tau1_hat == pytest.approx(ref, rel=3e-3)
    t_hat, _ = h_and_inverse(PowLog(-2, 0), report=rep).inverse(rep.tau1_hat)
    assert t_hat >= 1.0


def test_h_inverse_doubling():
    f = PowLog(-2, 0)
    rep = classify(f)
    chk = check_h_inverse_doubling(h_and_inverse(f, report=rep), rep, np.geomspace(1e-6, rep.tau1_hat, 40))
    assert chk.monotone and chk.holds


def test_h_requires_pass():
    with pytest.raises(PrereqError):
        h_and_inverse(Exponential(1))


# ---------------------------------------------------------------- report

def test_report_invariants_and_json():
    for f in (PowLog(-2, 0), PowLog(-1, -2), Exponential(1), PowLog(-3, -1)):
        rep = classify(f)
        if rep.verdict_A == PASS:
            assert math.isfinite(rep.C_A_hat) and rep.C_A_hat > 2
        if rep.verdict_B == PASS:
            assert math.isfinite(rep.C_B_hat)
        if rep.passes:
            assert rep.epsilon_hat == pytest.approx(1 / (rep.C_A_hat * rep.C_B_hat))
        else:
            assert rep.epsilon_hat is None
        d = json.loads(json.dumps(rep.to_dict()))
        assert set(d) == {"C_A_hat", "C_B_hat", "C_qd_hat", "epsilon_hat", "tau1_hat", "verdict_A", "verdict_B",
                          "witness_A", "witness_B"}
    assert json.loads(json.dumps(classify(Exponential(1)).to_dict()))["C_A_hat"] == "inf"


def test_slowly_converging_ratio_is_not_failed():
    # (B)-ratio of PowLog(-2,-2) increases towards its bound, decelerating
    rep = classify(PowLog(-2, -2))
    assert rep.verdict_B == PASS and rep.verdict_A == PASS


def test_verdicts_are_known_strings():
    for f in (PowLog(-2, 0), Exponential(1)):
        rep = classify(f)
        assert {rep.verdict_A, rep.verdict_B} <= {PASS, FAIL, INCONCLUSIVE}


# ---------------------------------------------------------------- properties

families = st.one_of(
    st.builds(PowLog, st.floats(-4.0, -1.05), st.floats(-2.0, 0.0)),
    st.builds(PowLog, st.just(-1.0), st.floats(-3.0, -1.1)),
    st.builds(Exponential, st.floats(0.1, 3.0)),
)


@settings(max_examples=25, deadline=None)
@given(f=families)
def test_tail_strictly_decreasing(f):
    g = geometric_grid(1e-3, 1e6, 8)
    T = f.tail(g)
    T = T[T > 0]
    assert np.all(np.diff(T) < 0)


@settings(max_examples=15, deadline=None)
@given(f=families)
def test_tail_lower_bound_from_A(f):
    a = check_condition_A(f)
    if a.verdict != PASS:
        return
    g = geometric_grid(1e-3, 1e6, 8)
    lhs = f.log_tail(g)
    rhs = np.log1p(g) + f.log_rho(g) - math.log(a.constant)
    assert np.all(lhs >= rhs - 1e-9)


@settings(max_examples=15, deadline=None)
@given(f=families)
def test_h_quasidecreasing_with_CA_CB(f):
    rep = classify(f)
    if not rep.passes:
        return
    g = geometric_grid(1e-3, 1e6, 8)
    lh = np.log1p(g) + f.log_rho(g)
    worst = float(np.max(lh - np.minimum.accumulate(lh)))
    assert worst <= math.log(rep.C_A_hat * rep.C_B_hat) + 1e-9


@settings(max_examples=15, deadline=None)
@given(f=families)
def test_t_rho_tends_to_zero(f):
    if not check_condition_A(f).verdict == PASS or not isinstance(f, DensityFn):
        return
    # slowly decaying members need a long grid tail before t rho(t) drops tenfold
    g = geometric_grid(1e-3, 1e300, 8)
    lv = np.log(g) + f.log_rho(g)
    first = lv[g < 1e-2].max()
    last = lv[g >= 1e299].max()
    assert last <= first - math.log(10)


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(-4.0, -1.1), beta=st.floats(-2.0, 0.0), r=st.floats(1e-3, 1e4))
def test_powlog_tail_against_oracle(alpha, beta, r):
    f = PowLog(alpha, beta)
    ref = oracles.tail(oracles.powlog(alpha, beta), r)
    assert float(f.tail(r)) == pytest.approx(float(ref), rel=1e-8)


def test_quasidecreasing_constant_for_decreasing_family():
    assert quasidecreasing_constant(PowLog(-2, 0)) == pytest.approx(1.0)
