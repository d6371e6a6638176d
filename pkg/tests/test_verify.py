import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdlab import comparators, data, losses, solvers, verify
from mdlab.geometry import euclidean, pnorm
from mdlab.rng import stream

TWO_STATE = data.FiniteChain(np.array([[0.9, 0.1], [0.2, 0.8]]), np.eye(2) * 0.9, np.array([1.0, -0.5]))


def _md(seed=0, loss="logistic", geom=None, eta=1.0, t=400, w0=None):
    geom = geom or euclidean()
    return solvers.run_stochastic_md(geom, losses.get_loss(loss), data.two_cluster_source(), np.zeros(2) if w0 is None else w0, eta, t, rng=stream(seed))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("geom", [euclidean(), pnorm(1.5, 1.0)], ids=lambda g: g.name)
def test_det_md_holds_on_stochastic_runs(seed, geom):
    traj = _md(seed, geom=geom)
    w_ref = np.array([0.0, 2.0])
    rep = verify.check_det_md(geom, traj, verify.losses_at(losses.logistic(), traj, w_ref), w_ref)
    assert rep.passed and rep.first_violation is None and rep.n_checked == 3 * 400


def test_det_md_holds_on_batch_run():
    X, Y = data.two_cluster_source().draw(stream(1), 50)
    traj = solvers.run_batch_md(euclidean(), losses.squared(), (X, Y), np.zeros(2), 0.5, 50)
    w_ref = np.array([0.1, 0.9])
    assert verify.check_det_md(euclidean(), traj, verify.losses_at(losses.squared(), traj, w_ref), w_ref).passed


def test_det_md_zero_step_keeps_divergence():
    traj = _md(eta=0.0, t=20)
    w_ref = np.array([0.3, 0.4])
    rep = verify.check_det_md(euclidean(), traj, verify.losses_at(losses.logistic(), traj, w_ref), w_ref, keep_ledger=True)
    assert rep.passed
    assert all(e.lhs == e.rhs for e in rep.ledger)


@pytest.mark.parametrize("mode", verify.MD_FAULTS)
def test_det_md_detects_faults(mode):
    traj = _md(3)
    w_ref = np.array([0.0, 2.0])
    bad = verify.corrupt_md(traj, mode, w_ref=w_ref)
    rep = verify.check_det_md(euclidean(), bad, verify.losses_at(losses.logistic(), bad, w_ref), w_ref)
    assert not rep.passed and rep.first_violation is not None


def test_perturbed_iterate_is_flagged_at_its_prefix():
    traj = _md(4)
    w_ref = np.array([0.0, 2.0])
    bad = verify.corrupt_md(traj, "perturb_iterate", index=100, w_ref=w_ref)
    rep = verify.check_det_md(euclidean(), bad, verify.losses_at(losses.logistic(), bad, w_ref), w_ref)
    assert rep.first_violation == 100


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("gamma", [0.5, 0.9])
def test_det_td_holds(seed, gamma):
    w_ref = comparators.td_fixed_point(TWO_STATE, gamma).w_star
    traj = solvers.run_td(TWO_STATE, np.zeros(2), gamma, 0.3, 500, ball=(w_ref, np.linalg.norm(w_ref)), rng=stream(seed))
    assert verify.check_det_td(traj, w_ref).passed
    assert verify.check_det_td(traj, w_ref, use_projected=True).passed


def test_det_td_holds_after_decoupling():
    w_ref = comparators.td_fixed_point(TWO_STATE, 0.9).w_star
    traj = solvers.run_td(TWO_STATE, np.zeros(2), 0.9, 0.3, 500, ball=(w_ref, np.linalg.norm(w_ref)), rng=stream(0))
    assert traj.first_divergence() is not None
    assert verify.check_det_td(traj, w_ref, use_projected=True).passed


def test_det_td_projected_needs_w_ref_in_ball():
    traj = solvers.run_td(TWO_STATE, np.zeros(2), 0.5, 0.3, 50, ball=(np.zeros(2), 0.5), rng=stream(0))
    with pytest.raises(ValueError):
        verify.check_det_td(traj, np.array([3.0, 0.0]), use_projected=True)


def test_det_td_trivial_case():
    traj = solvers.run_td(TWO_STATE, np.array([0.2, 0.1]), 0.5, 0.0, 50, rng=stream(0))
    assert verify.check_det_td(traj, np.array([0.2, 0.1])).passed


@pytest.mark.parametrize("mode", verify.TD_FAULTS)
def test_det_td_detects_faults(mode):
    traj = solvers.run_td(TWO_STATE, np.zeros(2), 0.5, 0.01, 400, rng=stream(1))
    w_ref = comparators.td_fixed_point(TWO_STATE, 0.5).w_star
    assert not verify.check_det_td(verify.corrupt_td(traj, mode, w_ref=w_ref), w_ref).passed


def _quadratic_flow(h, t_final=2.0):
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    Y = np.array([1.0, -0.5])
    return solvers.integrate_mirror_flow(euclidean(), losses.squared(), (X, Y), np.zeros(2), t_final, h=h)


def test_mf_identity_constant_flow():
    flow = solvers.integrate_mirror_flow(euclidean(), losses.squared(), (np.array([[1.0, 0.0]]), np.array([1.0])), np.array([1.0, 0.0]), 1.0, h=0.1)
    assert verify.mf_identity_residual(euclidean(), flow, np.zeros(2)) == 0.0
    assert verify.check_mf_identity(euclidean(), flow, np.zeros(2)).passed


def test_mf_identity_quadratic_flow():
    flow = _quadratic_flow(1e-3)
    # closed form w_s = w* (1 - e^{-s/2}) for the averaged squared loss
    w_star = np.array([1.0, -0.5])
    assert np.allclose(flow.W[-1], w_star * (1 - math.exp(-1.0)), atol=1e-12)
    w_ref = np.array([0.5, 0.5])
    assert verify.mf_identity_residual(euclidean(), flow, w_ref) <= 1e-8
    f_ref = float(np.mean(0.5 * (np.array([1.0, -0.5]) - w_ref) ** 2))
    assert verify.check_mf_identity(euclidean(), flow, w_ref, f_ref=f_ref).passed


def test_mf_identity_order():
    w_ref = np.array([0.5, 0.5])
    res = [verify.mf_identity_residual(euclidean(), _quadratic_flow(h), w_ref) for h in (0.2, 0.1, 0.05)]
    assert res[0] / res[1] >= 8 and res[1] / res[2] >= 8


@pytest.mark.parametrize("mode", verify.MF_FAULTS)
def test_mf_identity_detects_faults(mode):
    flow = _quadratic_flow(1e-2)
    assert not verify.check_mf_identity(euclidean(), verify.corrupt_flow(flow, euclidean(), mode), np.array([0.5, 0.5])).passed


def test_estimate_risk_exact_and_monte_carlo():
    src, loss = data.two_cluster_source(), losses.logistic()
    w = np.array([0.3, 1.2])
    exact, se = verify.estimate_risk(loss, src, w)
    manual = sum(p * math.log1p(math.exp(-x @ w)) for p, x in zip(src.probs, src.points))
    assert se == 0.0 and exact == pytest.approx(manual, rel=1e-14)
    mc, se = verify.estimate_risk(loss, src, w, ("monte_carlo", 100_000), rng=stream(0))
    assert abs(mc - exact) <= 4 * se


def test_estimate_risk_sphere_and_errors():
    value, _ = verify.estimate_risk(losses.logistic(), data.SphereSource(2), [2.0, 0.0])
    assert value == pytest.approx(data.sphere_risk_exact(2.0), abs=1e-9)
    with pytest.raises(ValueError):
        verify.estimate_risk(losses.logistic(), object(), [1.0, 0.0])
    with pytest.raises(ValueError):
        verify.estimate_risk(losses.logistic(), data.SphereSource(2), [1.0, 0.0], ("monte_carlo", 10))


def test_running_average_risk():
    assert np.allclose(verify.running_average_risk([1.0, 3.0, 5.0]), [1.0, 2.0, 3.0])


def test_violation_stats_examples():
    assert verify.violation_stats([False] * 200, 0.05).passed
    assert not verify.violation_stats([True] * 200, 0.05).passed
    stats = verify.violation_stats([True] * 5 + [False] * 195, 0.05)
    assert stats.passed and stats.fraction == 0.025
    # Wilson score interval for 5/200 at 95%
    z = 1.959963984540054
    p, n = 0.025, 200
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    assert stats.wilson_low == pytest.approx(centre - half, abs=1e-9)
    assert stats.wilson_high == pytest.approx(centre + half, abs=1e-9)
    with pytest.raises(ValueError):
        verify.violation_stats([], 0.05)


@given(st.lists(st.booleans(), min_size=1, max_size=300))
def test_violation_stats_monotone(flags):
    before = verify.violation_stats(flags, 0.05)
    after = verify.violation_stats(flags + [True], 0.05)
    assert after.fraction >= before.fraction
    assert after.wilson_low >= before.wilson_low - 1e-12


def test_trial_summary_from_ledger():
    ledger = verify.ledger_from_arrays([1.0, 3.0, 5.0], [2.0, 2.0, 2.0])
    s = verify.TrialSummary.from_ledger(4, ledger)
    assert s.any_violation and s.first_violation_step == 2
    assert all(e.violated == (e.slack < 0) for e in ledger)


def test_hexbin_single_point_at_center():
    R = 0.5
    # column 1 is odd, so its centers sit half a row up
    c = (0.75, math.sqrt(3) * R / 2)
    grid = verify.hexbin_aggregate(np.array([c]), R, bounds=(-1, 2, -1, 2))
    assert grid.total == 1
    (k,) = np.flatnonzero(grid.counts)
    assert np.allclose(grid.centers[k], c)


def test_hexbin_conservation():
    trajs = np.stack([_md(s, t=400).iterates[1:] for s in range(100)])
    grid = verify.hexbin_aggregate(trajs, 0.1)
    assert grid.total == 100 * 400
    order = np.lexsort((grid.centers[:, 1], grid.centers[:, 0]))
    assert np.array_equal(order, np.arange(order.size))


def test_hexbin_tie_goes_to_smaller_center():
    R = 1.0
    # midpoint between centers (0, 0) and (0, sqrt 3)
    grid = verify.hexbin_aggregate(np.array([[0.0, math.sqrt(3) / 2]]), R, bounds=(-2, 2, -2, 2))
    (k,) = np.flatnonzero(grid.counts)
    assert np.allclose(grid.centers[k], [0.0, 0.0])


def test_hexbin_needs_two_dims():
    with pytest.raises(ValueError):
        verify.hexbin_aggregate(np.zeros((3, 3)), 0.1)


def test_csv_writers(tmp_path):
    grid = verify.hexbin_aggregate(np.array([[0.0, 0.0], [0.01, 0.0]]), 0.5, bounds=(-1, 1, -1, 1))
    verify.write_hexbin_csv(tmp_path / "h.csv", grid)
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["center_x", "center_y", "count"] and sum(int(r[2]) for r in rows[1:]) == 2
    ledger = verify.ledger_from_arrays([1.0], [2.0])
    verify.write_ledger_csv(tmp_path / "l.csv", [(0, "det_md", ledger[0])])
    rows = list(csv.reader(open(tmp_path / "l.csv")))
    assert rows[1] == ["0", "det_md", "1", "1.0", "2.0", "1.0", "0"]
    traj = _md(t=3)
    verify.write_trajectories_csv(tmp_path / "t.csv", [traj])
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0][:4] == ["trial", "step", "coord0", "coord1"] and len(rows) == 5
    assert float(rows[2][2]) == traj.iterates[1, 0] and rows[-1][-1] == ""
