import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sfc import envs, meta
from sfc.config import RunConfig
from sfc.context import ContextEncoder
from sfc.errors import ArgumentError
from sfc.expert_data import collect, episode_initial_states, expert_policy
from sfc.meta import (Artifacts, adapt, baselines, candidate_rollouts, choose_context, evaluate,
                      normalized_score, results_csv, select_candidate)
from sfc.policy import ContextPolicy, PolicyTrainConfig, train_policy
from sfc.sfnet import SfNetwork, SfTrainConfig, train_sf


def test_tie_break_picks_smallest_index():
    assert select_candidate([3.0, 5.0, 5.0]) == 1
    assert select_candidate([-1.0]) == 0
    with pytest.raises(ArgumentError):
        select_candidate([])


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=12))
def test_selection_is_first_maximum(returns):
    k = select_candidate(returns)
    assert returns[k] == max(returns) and all(r < returns[k] for r in returns[:k])


def test_normalized_score_anchors():
    assert normalized_score([-10.0, -10.0], -10.0, -50.0) == 1.0
    assert normalized_score([-50.0], -10.0, -50.0) == 0.0
    assert normalized_score([-30.0], -10.0, -50.0) == 0.5
    with pytest.raises(ArgumentError):
        normalized_score([0.0], -5.0, -5.0)
    with pytest.raises(ArgumentError):
        normalized_score([0.0], -6.0, -5.0)


def test_zero_action_return_closed_form():
    fam = envs.make_family("point_goal", horizon=20)
    task = envs.sample_tasks(fam, 1, seed=3)[0]
    pol = ContextPolicy(fam.state_dim, 2, fam.action_dim, seed=0)
    pol.params.fill(0.0)
    start = episode_initial_states(fam, task, seed=7, episodes=1)[0]
    ret = evaluate(pol, np.zeros(2), fam, task, episodes=1, seed=7)[0]
    assert ret == pytest.approx(-20 * np.linalg.norm(start - np.array(task.params)), rel=1e-12)


def test_expert_scores_one_and_zero_policy_scores_zero():
    fam = envs.make_family("point_goal", horizon=20)
    task = envs.sample_tasks(fam, 1, seed=4)[0]
    e, z = baselines(fam, task, episodes=3, seed=1)
    init = episode_initial_states(fam, task, 1, 3)
    expert = envs.run_episodes(fam, task, expert_policy(fam, task), init).returns
    assert normalized_score(expert, e, z) == pytest.approx(1.0, abs=1e-12)
    pol = ContextPolicy(fam.state_dim, 2, fam.action_dim, seed=0)
    pol.params.fill(0.0)
    zero = evaluate(pol, np.zeros(2), fam, task, 3, 1)
    assert normalized_score(zero, e, z) == pytest.approx(0.0, abs=1e-12)


def _untrained_artifacts(K=3, horizon=16):
    fam = envs.make_family("point_goal", horizon=horizon)
    tasks = envs.sample_tasks(fam, K, seed=0)
    data = [collect(fam, t, expert_policy(fam, t), 2 * horizon, seed=0) for t in tasks]
    sf = SfNetwork(fam.state_dim, fam.action_dim, 4, hidden=(8,), seed=0)
    enc = ContextEncoder(4, 3, seed=0)
    pol = ContextPolicy(fam.state_dim, 3, fam.action_dim, hidden=(8,), seed=0)
    return Artifacts(fam, data, sf, enc, pol, context_len=8)


def test_z_prime_uses_only_chosen_trajectory():
    art = _untrained_artifacts()
    new = envs.sample_tasks(art.family, 5, seed=0)[4]
    cands = candidate_rollouts(art, new, seed=0)
    returns, k, z = choose_context(art, cands)
    for j, c in enumerate(cands):
        if j != k:
            c.states += np.random.default_rng(j).normal(size=c.states.shape)
            c.rewards -= 100.0  # keep candidate k the winner
    _, k2, z2 = choose_context(art, cands)
    assert k2 == k and np.array_equal(z2.z, z.z)


def test_adapt_is_deterministic_and_leaves_models_unchanged():
    art = _untrained_artifacts()
    before = [m.params.copy() for m in (art.sf, art.encoder, art.policy)]
    new = envs.sample_tasks(art.family, 5, seed=0)[4]
    r1 = adapt(new, art, seed=2, eval_episodes=3)
    r2 = adapt(new, art, seed=2, eval_episodes=3)
    assert r1.chosen_k == r2.chosen_k and r1.eval_returns == r2.eval_returns
    assert np.array_equal(r1.z_prime.z, r2.z_prime.z)
    assert all(b == m.params for b, m in zip(before, (art.sf, art.encoder, art.policy)))
    assert len(r1.candidate_returns) == 3 and len(r1.eval_returns) == 3
    header = results_csv([r1]).splitlines()[0].split(",")
    assert header == ["new_task_id", "chosen_k", "candidate_return_0", "candidate_return_1",
                      "candidate_return_2", "eval_mean", "eval_std", "normalized_score"]


def test_adapt_rejects_family_mismatch():
    art = _untrained_artifacts()
    other = envs.sample_tasks(envs.make_family("point_vel"), 1, seed=0)[0]
    with pytest.raises(ArgumentError):
        adapt(other, art, seed=0)


def test_adapt_rejects_bad_episode_counts():
    art = _untrained_artifacts()
    with pytest.raises(ArgumentError):
        adapt(art.tasks[0], art, seed=0, eval_episodes=0)


def _digests(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


def test_adapt_stage_never_writes_checkpoints(tmp_path):
    cfg = RunConfig.defaults().with_overrides([
        "env.K=2", "env.H=16", "data.transitions=64", "sf.d=4", "sf.hidden=8", "sf.steps=5",
        "mmd.bandwidth_sf=1.0", "context.C=8", "context.z_dim=3", "policy.hidden=8", "policy.steps=5",
        "policy.batch=8", "policy.windows=2", "adapt.new_tasks=2", "adapt.eval_episodes=2"])
    layout = meta.Layout(tmp_path / "run")
    meta.run_training_pipeline(cfg, layout)
    before = _digests(layout.checkpoints)
    results = meta.stage_adapt(cfg, layout)
    assert _digests(layout.checkpoints) == before
    assert [r.task.task_id for r in results] == [2, 3]
    train_params = {tuple(ds.task.params) for ds in meta.load_datasets(layout)}
    assert not train_params & {tuple(r.task.params) for r in results}


@pytest.fixture(scope="module")
def trained_goal_system():
    fam = envs.make_family("point_goal")
    tasks = envs.goal_tasks_at_angles(fam, np.linspace(0, 2 * np.pi, 4, endpoint=False))
    data = [collect(fam, t, expert_policy(fam, t), 1280, seed=0) for t in tasks]
    sf = SfNetwork(fam.state_dim, fam.action_dim, 8, hidden=(32,), seed=0)
    train_sf(sf, data, SfTrainConfig(steps=400, batch=32, bandwidth=1.0, log_every=100), seed=0)
    enc = ContextEncoder(8, 4, seed=0)
    pol = ContextPolicy(fam.state_dim, 4, fam.action_dim, hidden=(32, 32), seed=0)
    cfg = PolicyTrainConfig(steps=1200, batch=32, windows_per_task=2, context_len=32, log_every=100,
                            bandwidth=0.3)
    train_policy(pol, enc, sf, data, cfg, seed=0)
    return Artifacts(fam, data, sf, enc, pol, context_len=32)


def test_adapting_to_a_training_task_recovers_it(trained_goal_system):
    art = trained_goal_system
    for k_star, task in enumerate(art.tasks):
        res = adapt(task, art, seed=1, eval_episodes=5)
        others = np.delete(res.candidate_returns, k_star)
        assert res.candidate_returns[k_star] >= others.max() - 1e-9
        assert res.chosen_k == k_star
        assert res.normalized_score >= 0.8, (k_star, res.normalized_score)
