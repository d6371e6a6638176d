import json

import numpy as np
import pytest

from mdlab import experiments
from mdlab.experiments import EXPERIMENTS, ExperimentConfig, map_trials, run_experiment

SMALL = {
    "fig1_sq": dict(trials=3, t=50),
    "fig1_log": dict(trials=3, t=50),
    "fig2_hexbin": dict(trials=3, t=50),
    "realizable_thm": dict(trials=3, t=100),
    "general_thm": dict(trials=3, t=100),
    "td_thm": dict(trials=3, t=200),
    "heavy_thm": dict(trials=3, t=100),
    "batch_thm": dict(trials=3, t=100),
    "flow_thm": dict(trials=2),
    "median_demo": dict(trials=5, t=2000),
}


@pytest.mark.parametrize("name", list(EXPERIMENTS))
def test_every_experiment_runs_and_writes_artifacts(name, tmp_path):
    cfg = ExperimentConfig(name, seed=1, output_dir=tmp_path, **SMALL.get(name, {}))
    result = run_experiment(cfg)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] == (result.exit_code == 0)
    assert (tmp_path / "trajectories.csv").exists() and (tmp_path / "ledger.csv").exists()
    if name == "fig2_hexbin":
        assert (tmp_path / "hexbin.csv").exists()
    # sure inequalities never fail, whatever the scale
    for check, ok in result.outcome.checks.items():
        if check in ("det_md", "det_td", "mf_identity", "finite_iterates"):
            assert ok, check


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig("fig1_sq", trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig("fig1_sq", t=0)
    with pytest.raises(ValueError):
        ExperimentConfig("fig1_sq", delta=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig("nope")


def test_step_size_scaling():
    cfg = ExperimentConfig("fig1_sq", eta_scale=4.0)
    assert cfg.step_size(0.25) == 1.0
    assert ExperimentConfig("fig1_sq", eta=0.3, eta_scale=4.0).step_size(0.25) == 0.3


def test_map_trials_keeps_order():
    assert map_trials(lambda k: k * k, 20, 4) == [k * k for k in range(20)]


def test_td_chains_are_valid():
    for name in ("two_state", "five_state"):
        chain = experiments.td_chain(name)
        assert chain.is_primitive()
        assert np.all(np.linalg.norm(chain.features, axis=1) <= 1)
    with pytest.raises(ValueError):
        experiments.td_chain("seven_state")


def test_svt_source_spectrum():
    src = experiments.svt_source((1.0, 0.1, 0.001), rotate_seed=3)
    assert np.allclose(np.linalg.eigvalsh(src.second_moment())[::-1], [1.0, 0.1, 0.001], atol=1e-12)
