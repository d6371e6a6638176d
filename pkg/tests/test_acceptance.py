"""Exit criteria of the package, one test per criterion, each with a wall-clock budget."""

import filecmp
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from mdlab import bounds, comparators, data, losses, solvers, verify
from mdlab.experiments import EXPERIMENTS, ExperimentConfig, run_experiment, svt_source, td_chain
from mdlab.geometry import euclidean
from mdlab.rng import stream

acceptance = pytest.mark.acceptance


def _run(name, **kw):
    cfg = ExperimentConfig(name, **kw)
    return EXPERIMENTS[name].runner(cfg)


@pytest.fixture
def clock():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start


def _md_cases():
    two = data.two_cluster_source()
    sq_floor, sq_min = comparators.minimal_risk(two, losses.squared())
    law = data.scalar_law([0.0, 1.0, 3.0], [0.15, 0.75, 0.1])
    return [
        ("two_cluster_logistic", two, losses.logistic(), 1.0, np.array([0.0, 2.0])),
        ("two_cluster_squared", two, losses.squared(), 0.1, sq_min),
        ("sphere_logistic", data.SphereSource(2), losses.logistic(), 1.0, comparators.sphere_axis_comparator(400, 2).w_ref),
        ("median_absolute", law, losses.absolute(), 0.01, np.array([data.law_median(law)])),
    ]


@acceptance(1, "sure deterministic mirror descent inequality")
def test_criterion_01_det_md(clock):
    geom, t, failures, runs = euclidean(), 400, [], 0
    for name, source, loss, eta, w_ref in _md_cases():
        w0 = np.zeros(source.dim)
        for seed in range(50):
            stoch = solvers.run_stochastic_md(geom, loss, source, w0, eta, t, rng=stream(seed))
            batch = solvers.run_batch_md(geom, loss, source.draw(stream(seed, 0, "dataset"), t), w0, eta, t)
            for kind, traj in (("stochastic", stoch), ("batch", batch)):
                rep = verify.check_det_md(geom, traj, verify.losses_at(loss, traj, w_ref), w_ref, rtol=1e-9)
                runs += 1
                if not rep.passed:
                    failures.append((name, kind, seed, rep.first_violation))
    assert runs == 400
    assert failures == []
    assert clock() < 30


@acceptance(2, "sure deterministic TD inequality")
def test_criterion_02_det_td(clock):
    failures, runs = [], 0
    for chain_name in ("two_state", "five_state"):
        chain = td_chain(chain_name)
        for gamma in (0.5, 0.9):
            w_ref = comparators.td_fixed_point(chain, gamma).w_star
            for seed in range(50):
                traj = solvers.run_td(chain, np.zeros(chain.dim), gamma, 0.1, 2000, rng=stream(seed))
                runs += 1
                if not verify.check_det_td(traj, w_ref).passed:
                    failures.append((chain_name, gamma, seed))
    assert runs == 200
    assert failures == []
    assert clock() < 30


@acceptance(3, "loss taxonomy")
def test_criterion_03_losses(clock):
    sq, lg = losses.squared(), losses.logistic()
    reports = [
        losses.check_quadratic_bounded(sq, qb=(0.0, 1.0)),
        losses.check_self_bounding(sq, 1.0),
        losses.check_quadratic_bounded(lg, qb=(1.0, 0.0)),
        losses.check_lipschitz(lg, 1.0),
        losses.check_smooth(lg, 0.25),
        losses.check_self_bounding(lg, 0.5),
    ]
    for rep in reports:
        assert rep.passed and rep.max_violation <= 1e-12, rep.to_dict()
    assert clock() < 5


@acceptance(4, "sphere risk asymptotics")
def test_criterion_04_sphere_risk(clock):
    for r in (1.0, 2.0, 5.0, 10.0, 20.0):
        quad = data.sphere_risk_quadrature(r)
        assert abs(quad - math.pi**2 / (12 * r)) <= 2 * math.exp(-r)
        assert abs(quad - data.sphere_risk_series(r)) <= 1e-8
    assert clock() < 1


@acceptance(5, "regularized comparator excess risk")
@pytest.mark.xfail(
    strict=True,
    reason="E(u_ref) <= lambda D fails for lambda in {10, 1}: at large lambda u_ref stays near w0, "
    "so D is small while E stays near E(w0); a point mass at lambda = 10 gives 0.347 > 0.139",
)
def test_criterion_05_uref(clock):
    geom, source = euclidean(), data.two_cluster_source()
    failing = []
    for loss in (losses.logistic(), losses.squared()):
        floor, _ = comparators.minimal_risk(source, loss)
        for lam in (10.0, 1.0, 0.1, 1 / math.sqrt(400)):
            comp = comparators.solve_u_ref(geom, loss, lambda w: source.exact_risk_grad(loss, w), np.zeros(2), lam, floor)
            if not comp.excess_risk <= lam * comp.bregman_to_w0 + 1e-6:
                failing.append((loss.name, lam, comp.excess_risk, lam * comp.bregman_to_w0))
    assert clock() < 10
    assert failing == []


@acceptance(6, "margin comparator")
def test_criterion_06_margin(clock):
    out = _run("margin_prop", t=100)
    mc = out.report["monte_carlo"]
    assert mc["n"] == 1_000_000 and out.report["gamma"] == 0.5
    assert mc["value"] <= (2 + math.log(100) / 0.5) / 100 + 4 * mc["stderr"]
    assert out.checks["monte_carlo_below_ceiling"]
    assert clock() < 20


@acceptance(7, "coupling event of projected and unprojected runs")
def test_criterion_07_coupling(clock):
    out = _run("general_thm", trials=200, t=400)
    st = out.report["decoupling"]
    assert st["n"] == 200
    assert abs(st["budget"] - 0.05) <= 1e-12
    assert st["wilson_low"] <= st["budget"]
    assert out.checks["det_md"]
    assert clock() < 60


@acceptance(8, "TD fixed point and bound ledger")
def test_criterion_08_td_bound(clock):
    chain, gamma = td_chain("two_state"), 0.5
    fp = comparators.td_fixed_point(chain, gamma)
    A, b = comparators.td_system(chain, gamma)
    assert np.max(np.abs(A @ fp.w_star - b)) <= 1e-12
    out = _run("td_thm", trials=200, t=2000)
    assert out.checks["fixed_point_residual"] and out.checks["det_td"]
    st = out.report["bound_violations"]
    assert st["n"] == 200 and st["wilson_low"] <= st["budget"]
    assert clock() < 60


def _quadratic_flow(h):
    X = np.eye(2)
    Y = np.array([1.0, -0.5])
    return solvers.integrate_mirror_flow(euclidean(), losses.squared(), (X, Y), np.zeros(2), 2.0, h=h)


@acceptance(9, "mirror flow identity")
def test_criterion_09_mf_identity(clock):
    w_ref = np.array([0.5, 0.5])
    flow = _quadratic_flow(1e-3)
    # closed form w_s = w* (1 - e^{-s/2})
    assert np.allclose(flow.W, np.outer(1 - np.exp(-flow.times / 2), [1.0, -0.5]), atol=1e-12)
    assert verify.mf_identity_residual(euclidean(), flow, w_ref) <= 1e-8
    assert verify.check_mf_identity(euclidean(), flow, w_ref).passed
    res = [verify.mf_identity_residual(euclidean(), _quadratic_flow(h), w_ref) for h in (0.2, 0.1, 0.05)]
    assert res[0] / res[1] >= 8 and res[1] / res[2] >= 8
    assert clock() < 10


@acceptance(10, "singular value thresholding comparator")
def test_criterion_10_svt(clock):
    source, loss = svt_source((1.0, 0.1, 0.001)), losses.squared()
    S, b = source.second_moment(), source.cross_moment()
    risks = [source.exact_risk(loss, comparators.svt_solution(S, b, k)) for k in (1, 2, 3)]
    assert risks[0] >= risks[1] - 1e-10 and risks[1] >= risks[2] - 1e-10
    assert np.max(np.abs(comparators.svt_solution(S, b, 3) - np.linalg.solve(S, b))) <= 1e-10
    assert clock() < 1


@acceptance(11, "median demo")
def test_criterion_11_median(clock):
    out = _run("median_demo", trials=100, t=10_000, eta=0.01)
    assert out.report["within_2eta"] >= 0.95
    assert out.checks["median_within_2eta"] and out.checks["det_md"]
    assert clock() < 10


def _exact_pareto_central_moment(alpha, r):
    mu = Fraction(alpha, alpha - 1)
    raw = [Fraction(alpha, alpha - k) for k in range(r + 1)]
    return float(sum(math.comb(r, k) * raw[k] * (-mu) ** (r - k) for k in range(r + 1)))


@acceptance(12, "heavy-tailed run stability")
def test_criterion_12_heavy(clock):
    t = 1000
    out = _run("heavy_thm", trials=100, t=t)
    assert out.checks["finite_iterates"] and out.checks["det_md"]
    assert all(np.all(np.isfinite(tr.iterates)) for tr in out.trajectories)
    assert out.report["bound_violations"]["violations"] == 0
    delta, alpha, p = 0.05 / (2 * t), 12, 8
    M = max(p / math.e, _exact_pareto_central_moment(alpha, 2), _exact_pareto_central_moment(alpha, p))
    C = alpha / (alpha - 1) + 2 * M * (2 / delta) ** (1 / p) / math.sqrt(t)
    assert abs(out.report["C"] - C) <= 1e-12 * max(1.0, abs(C))
    assert abs(bounds.heavy_constant(data.HeavyTailSpec("polynomial", p=8, alpha=12.0), alpha / (alpha - 1), delta, t) - C) <= 1e-12 * C
    assert clock() < 30


@acceptance(13, "fault injection")
def test_criterion_13_faults(clock):
    geom, loss = euclidean(), losses.logistic()
    w_ref = np.array([0.0, 2.0])
    md = solvers.run_stochastic_md(geom, loss, data.two_cluster_source(), np.zeros(2), 1.0, 400, rng=stream(3))
    assert verify.check_det_md(geom, md, verify.losses_at(loss, md, w_ref), w_ref).passed
    missed = []
    for mode in verify.MD_FAULTS:
        bad = verify.corrupt_md(md, mode, w_ref=w_ref)
        if verify.check_det_md(geom, bad, verify.losses_at(loss, bad, w_ref), w_ref).passed:
            missed.append(("md", mode))
    chain = td_chain("two_state")
    td_ref = comparators.td_fixed_point(chain, 0.5).w_star
    td = solvers.run_td(chain, np.zeros(2), 0.5, 0.01, 400, rng=stream(1))
    assert verify.check_det_td(td, td_ref).passed
    for mode in verify.TD_FAULTS:
        if verify.check_det_td(verify.corrupt_td(td, mode, w_ref=td_ref), td_ref).passed:
            missed.append(("td", mode))
    flow = _quadratic_flow(1e-2)
    mf_ref = np.array([0.5, 0.5])
    assert verify.check_mf_identity(geom, flow, mf_ref).passed
    for mode in verify.MF_FAULTS:
        if verify.check_mf_identity(geom, verify.corrupt_flow(flow, geom, mode), mf_ref).passed:
            missed.append(("mf", mode))
    assert missed == []
    assert clock() < 5


@acceptance(14, "reproducibility")
def test_criterion_14_reproducible(tmp_path, clock):
    a = run_experiment(ExperimentConfig("fig1_log", seed=7, output_dir=tmp_path / "a"))
    b = run_experiment(ExperimentConfig("fig1_log", seed=7, output_dir=tmp_path / "b"))
    for name in ("trajectories.csv", "hexbin.csv"):
        assert filecmp.cmp(a.out_dir / name, b.out_dir / name, shallow=False)
    assert (a.out_dir / "trajectories.csv").stat().st_size > 0
    assert clock() < 20
