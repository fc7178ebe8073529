import math

import numpy as np
import pytest

import rapid
from rapid import _core as core


def bandit():
    return rapid.builtin_task("Bandit", vocab=2)


def test_bandit_objective_and_gradient():
    task = bandit()
    pol = rapid.make_policy(task, "unigram")
    assert core.exact_objective(pol, task) == pytest.approx(0.5)
    np.testing.assert_allclose(core.exact_gradient(pol, task), [0.25, -0.25], atol=1e-15)


def test_theta_roundtrip_and_length_check():
    task = bandit()
    pol = rapid.make_policy(task, "unigram")
    pol.theta = np.array([math.log(3.0), 0.0])
    dist = core.next_token_dist(pol, task.prompts[0])
    np.testing.assert_allclose(dist, [0.75, 0.25])
    with pytest.raises(core.LengthError):
        pol.theta = np.zeros(3)


def test_enumeration_and_sampling():
    task = rapid.builtin_task("LastTokenMatch")
    pol = rapid.make_policy(task)
    outs = core.enumerate_outputs(pol, task.prompts[0])
    assert len(outs) == 64
    assert sum(p for _, p in outs) == pytest.approx(1.0)
    a = core.sample_generation(pol, task.prompts[0], 5)
    assert a == core.sample_generation(pol, task.prompts[0], 5)
    assert len(a[0]) == 2


def test_loo_estimator_unbiased():
    task = bandit()
    mu = rapid.make_policy(task, "unigram")
    pi = mu.with_theta(np.array([math.log(1.5), 0.0]))
    opts = core.IwOptions(clip=core.ClipConfig(2.0, core.ClipMode.OFF), leave_one_out=True)
    exp = core.estimator_expectation("iw_grpg", pi, mu, task, 3, opts)
    np.testing.assert_allclose(exp, core.exact_gradient(pi, task), atol=1e-12)


def test_advantages_and_clip():
    assert core.clip_weight(3.0, core.ClipConfig(2.0, core.ClipMode.CAP)) == (2.0, True)
    task = bandit()
    pol = rapid.make_policy(task, "unigram")
    samples = [core.make_sample(pol, task, task.prompts[0], [t]) for t in (0, 1, 1, 0)]
    group = core.GroupBatch(samples)
    assert core.group_advantages(group) == [0.5, -0.5, -0.5, 0.5]
    g = core.grpg_gradient([group], pol)
    np.testing.assert_allclose(g, core.iw_grpg_gradient([group], pol), atol=1e-12)


def test_training_structure():
    task = rapid.builtin_task("LastTokenMatch")
    cfg = core.TrainConfig()
    cfg.outer_steps = 5
    cfg.oracle_every = 5
    pol, records = rapid.train(cfg, task, rapid.make_policy(task))
    assert len(records) == 20
    assert records[-1]["generations"] == 320
    assert records[-1]["snapshots"] == 5
    assert records[-1]["oracle_J"] is not None
    assert pol.dimension == rapid.make_policy(task).dimension


def test_errors_are_typed():
    with pytest.raises(core.ConfigError):
        rapid.builtin_task("Nope")
    with pytest.raises(rapid.RapidError):
        core.pearson([1, 2, 3], [1, 1, 1])
    cfg = core.TrainConfig()
    cfg.n_group = 3
    task = bandit()
    with pytest.raises(core.ConfigError):
        rapid.train(cfg, task, rapid.make_policy(task))


def test_metrics_helpers():
    assert core.pass_at_k([[True, False, False, False]], 1) == pytest.approx(0.25)
    assert core.pearson([2, 4, 8, 16], [0.06, 0.08, 0.11, 0.13]) == pytest.approx(0.952, abs=5e-4)
    assert core.simulated_inference_cost(8, 256) == pytest.approx(92.8)
    assert core.simulated_inference_cost(1, 256) == pytest.approx(22.8)


def test_verify_quick_passes():
    checks = core.verify("quick")
    assert checks and all(c["passed"] for c in checks)


def test_cli_train_writes_outputs(tmp_path):
    code, err = core.cli_train(["T=2", "seed=3"], str(tmp_path / "run"))
    assert code == 0, err
    assert (tmp_path / "run" / "metrics.csv").exists()
    code, err = core.cli_train(["N_group=3"], str(tmp_path / "bad"))
    assert code == 2 and "N_group" in err
