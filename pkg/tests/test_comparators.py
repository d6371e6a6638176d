import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdlab import comparators, data, losses
from mdlab.comparators import Comparator, t_ref
from mdlab.geometry import bregman_div, euclidean

E1 = np.array([1.0, 0.0])


def _point_mass_risk(w):
    r = 1.0 - w[0]
    return 0.5 * r * r, np.array([-r, 0.0])


def test_u_ref_point_mass_closed_form():
    # argmin 1/2 (1 - u)^2 + (lam / 2) u^2 / 2 at lam = 1 is u = 2/3
    comp = comparators.solve_u_ref(euclidean(), losses.squared(), _point_mass_risk, np.zeros(2), 1.0)
    assert np.allclose(comp.w_ref, [2 / 3, 0.0], atol=1e-8)
    assert comp.excess_risk == pytest.approx(1 / 18, abs=1e-8)
    assert comp.bregman_to_w0 == pytest.approx(2 / 9, abs=1e-8)
    assert comp.excess_risk <= 1.0 * comp.bregman_to_w0 + 1e-6


def test_u_ref_huge_lambda_stays_at_start():
    w0 = np.array([0.2, -0.1])
    comp = comparators.solve_u_ref(euclidean(), losses.squared(), _point_mass_risk, w0, 1e8)
    assert np.allclose(comp.w_ref, w0, atol=1e-7)


def test_u_ref_inverse_sqrt_t_meets_general_hypothesis():
    src = data.two_cluster_source()
    loss = losses.logistic()
    floor, _ = comparators.minimal_risk(src, loss)
    t = 400
    comp = comparators.solve_u_ref(euclidean(), loss, lambda w: src.exact_risk_grad(loss, w), np.zeros(2), 1 / math.sqrt(t), risk_floor=floor)
    assert comp.excess_risk <= comp.bregman_to_w0 / math.sqrt(t) + 1e-6
    assert comp.extras["grad_norm"] <= 1e-8


def test_u_ref_reports_nonconvergence():
    with pytest.raises(comparators.ConvergenceError) as err:
        comparators.solve_u_ref(euclidean(), losses.squared(), _point_mass_risk, np.zeros(2), 1.0, max_iter=1)
    assert err.value.grad_norm > 0


def test_u_ref_recomputable():
    comp = comparators.solve_u_ref(euclidean(), losses.squared(), _point_mass_risk, np.zeros(2), 0.5)
    assert abs(comp.bregman_to_w0 - bregman_div(euclidean(), comp.w_ref, np.zeros(2))) <= 1e-8
    assert abs(comp.excess_risk - _point_mass_risk(comp.w_ref)[0]) <= 1e-8


def _comp(E, D):
    return Comparator(np.zeros(2), E, D, "user")


def test_t_ref_examples():
    assert t_ref(_comp(0.0, 1.0)) == math.inf
    assert t_ref(_comp(0.5, 2.0)) == 16
    assert t_ref(_comp(0.3, 0.0)) == 0


@given(st.floats(1e-6, 10), st.floats(1e-6, 10))
def test_t_ref_consistency(E, D):
    T = t_ref(_comp(E, D))
    for t in {1, max(1, int(T) // 2), max(1, int(T))}:
        if 1 <= t <= T:
            assert E <= D / math.sqrt(t) + 1e-12


def test_unknown_provenance_rejected():
    with pytest.raises(ValueError):
        Comparator(np.zeros(2), 0.0, 0.0, "magic")


def test_margin_comparator_examples():
    comp = comparators.margin_comparator(np.array([0.0, 1.0]), 0.5, 10)
    assert np.linalg.norm(comp.w_ref) == pytest.approx(math.log(10) / 0.5, rel=1e-14)
    assert comp.extras["risk_ceiling"] == pytest.approx((2 + math.log(10) / 0.5) / 10, rel=1e-14)
    assert comp.extras["risk_ceiling"] == pytest.approx(0.6605, abs=1e-4)
    comp = comparators.margin_comparator(E1, 1.0, math.e**2)
    assert np.linalg.norm(comp.w_ref) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ValueError):
        comparators.margin_comparator(np.array([1.0, 1.0]), 0.5, 10)


def test_margin_comparator_on_two_cluster_likely_points():
    src = data.two_cluster_source()
    loss = losses.logistic()
    t = 100
    u = np.array([0.0, 1.0])
    X, Y = src.draw(np.random.default_rng(0), 100_000)
    gamma = comparators.estimate_margin(u, X, Y, t)
    # rare points have negative margin along e2 but carry 10% > 1/t mass, so
    # the estimate must sit at or below the rare margin
    assert gamma <= -0.15 / math.hypot(0.95, 0.15) + 1e-12 or gamma > 0
    likely_gamma = 0.95 / math.hypot(0.95, 0.15)
    comp = comparators.margin_comparator(u, likely_gamma, t)
    Xl, Yl = X[X[:, 1] > 0], Y[X[:, 1] > 0]
    value, _ = loss.value_and_deriv(Yl, Xl @ comp.w_ref)
    assert value.mean() <= comp.extras["risk_ceiling"]


def test_estimate_margin_quantile():
    X = np.column_stack([np.linspace(0.1, 1.0, 100), np.zeros(100)])
    Y = np.ones(100)
    assert comparators.estimate_margin(E1, X, Y, 10) == pytest.approx(X[10, 0])


def test_svt_examples():
    b = np.array([0.3, -0.7, 0.2])
    for k in (1, 2, 3):
        S = np.eye(3)
        if k == 3:
            assert np.allclose(comparators.svt_solution(S, b, k), b, atol=1e-15)
    assert np.allclose(comparators.svt_solution(np.diag([1.0, 0.01]), [1.0, 1.0], 1), [1.0, 0.0], atol=1e-15)
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 4))
    S = M @ M.T + np.eye(4)
    assert np.max(np.abs(comparators.svt_solution(S, b.tolist() + [1.0], 4) - np.linalg.solve(S, b.tolist() + [1.0]))) <= 1e-10
    with pytest.raises(ValueError):
        comparators.svt_solution(S, np.ones(4), 0)
    with pytest.raises(ValueError):
        comparators.svt_solution(S, np.ones(4), 5)


def test_svt_ties_pick_lower_index():
    out = comparators.svt_solution(np.diag([1.0, 1.0, 0.5]), [1.0, 2.0, 3.0], 1)
    assert np.count_nonzero(out) == 1


def test_svt_risk_monotone_in_k():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(6, 3))
    pts /= 1.5 * np.linalg.norm(pts, axis=1, keepdims=True)
    src = data.DiscreteSource(pts, rng.uniform(-1, 1, 6), np.full(6, 1 / 6))
    loss = losses.squared()
    risks = [comparators.svt_comparator(src.second_moment(), src.cross_moment(), k, src, loss).extras["risk"] for k in (1, 2, 3)]
    assert risks[1] <= risks[0] + 1e-10 and risks[2] <= risks[1] + 1e-10


def test_sphere_axis_comparator():
    comp = comparators.sphere_axis_comparator(1000, 3)
    assert np.linalg.norm(comp.w_ref) == pytest.approx(0.1, rel=1e-12)
    assert abs(comp.extras["risk"] - data.sphere_risk_exact(0.1)) <= 1e-8
    assert np.array_equal(comparators.sphere_axis_comparator(1, 2).w_ref, E1)


def test_td_fixed_point_single_state():
    chain = data.FiniteChain(np.array([[1.0]]), np.array([[1.0, 0.0]]), np.array([1.0]))
    fp = comparators.td_fixed_point(chain, 0.9)
    assert np.allclose(fp.w_star, [10.0, 0.0], atol=1e-10)
    assert fp.residual(fp.w_star) <= 1e-10


def test_td_fixed_point_two_state_hand_solve():
    chain = data.FiniteChain(np.array([[0.9, 0.1], [0.2, 0.8]]), np.eye(2), np.array([1.0, 0.0]))
    fp = comparators.td_fixed_point(chain, 0.5)
    # (I - P / 2) w = r gives w = (0.6, 0.1) / 0.325
    assert np.allclose(fp.w_star, [24 / 13, 4 / 13], atol=1e-12)
    assert fp.residual(fp.w_star) <= 1e-10
    assert fp.residual(np.zeros(2)) == pytest.approx(np.linalg.norm(fp.b))


def test_comparator_json_roundtrip():
    comp = comparators.margin_comparator(E1, 0.5, 100)
    rec = json.loads(comp.to_json())
    assert rec["provenance"] == "margin" and rec["coords"] == pytest.approx(comp.w_ref.tolist())
    assert rec["excess_risk"] == pytest.approx(comp.excess_risk)
