import numpy as np
import pytest

from sfc import envs
from sfc.diffkit import load_checkpoint, save_checkpoint
from sfc.errors import ArgumentError, DimensionError, ParseError
from sfc.expert_data import (Td3Config, TaskDataset, collect, episode_initial_states,
                             expert_policy, load_dataset, save_dataset, train_single_task,
                             zero_policy)


@pytest.fixture
def goal_family():
    return envs.make_family("point_goal")


def test_collect_partial_episode_bookkeeping(goal_family):
    task = envs.sample_tasks(goal_family, 1, seed=0)[0]
    ds = collect(goal_family, task, expert_policy(goal_family, task), 10, seed=1)
    assert len(ds) == 10
    assert ds.episode_ranges() == [(0, 10)]
    assert all(tr.task_id == task.task_id for tr in ds)


def test_collect_episode_ranges_partition(goal_family):
    task = envs.sample_tasks(goal_family, 1, seed=0)[0]
    ds = collect(goal_family, task, expert_policy(goal_family, task), 150, seed=1)
    ranges = ds.episode_ranges()
    assert ranges == [(0, 64), (64, 128), (128, 150)]
    assert all(b - a <= goal_family.horizon for a, b in ranges)


def test_collect_deterministic(goal_family):
    task = envs.sample_tasks(goal_family, 1, seed=0)[0]
    a = collect(goal_family, task, expert_policy(goal_family, task), 200, seed=5)
    b = collect(goal_family, task, expert_policy(goal_family, task), 200, seed=5)
    assert a == b
    assert a != collect(goal_family, task, expert_policy(goal_family, task), 200, seed=6)


def test_collect_validates(goal_family):
    task = envs.sample_tasks(goal_family, 1, seed=0)[0]
    with pytest.raises(ArgumentError):
        collect(goal_family, task, expert_policy(goal_family, task), 0, seed=0)
    with pytest.raises(DimensionError):
        collect(goal_family, task, lambda s: np.zeros((len(s), 3)), 5, seed=0)


def test_expert_tracks_target_velocity():
    fam = envs.make_family("point_vel")
    for task in envs.sample_tasks(fam, 4, seed=2):
        ds = collect(fam, task, expert_policy(fam, task), 3 * fam.horizon, seed=0)
        for a, b in ds.episode_ranges():
            tail = slice(a + 3 * (b - a) // 4, b)
            assert np.mean(np.abs(ds.next_states[tail, 1] - task.params[0])) < 0.05


@pytest.mark.parametrize("name", ["point_goal", "point_vel", "point_fwd_back"])
def test_dataset_dynamically_consistent(name):
    fam = envs.make_family(name)
    task = envs.sample_tasks(fam, 1, seed=3)[0]
    ds = collect(fam, task, expert_policy(fam, task), 100, seed=3)
    for i in range(len(ds)):
        s2, r, done = envs.step(fam, task, ds.states[i], ds.actions[i], int(ds.step[i]))
        assert np.array_equal(s2, ds.next_states[i]) and r == ds.rewards[i] and done == ds.dones[i]


@pytest.mark.parametrize("name", ["point_goal", "point_vel", "point_fwd_back"])
def test_expert_data_dominates_random(name):
    fam = envs.make_family(name)
    for task in envs.sample_tasks(fam, 3, seed=8):
        expert = collect(fam, task, expert_policy(fam, task), 5 * fam.horizon, seed=1)
        rng = np.random.default_rng(0)
        rand = collect(fam, task, lambda s: rng.uniform(-1, 1, (len(s), fam.action_dim)),
                       5 * fam.horizon, seed=1)
        assert expert.episode_returns().mean() > rand.episode_returns().mean()


def test_save_load_round_trip(tmp_path, goal_family):
    task = envs.sample_tasks(goal_family, 2, seed=0)[1]
    ds = collect(goal_family, task, expert_policy(goal_family, task), 70, seed=2)
    save_dataset(ds, tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "task_id,episode,step,s0,s1,a0,a1,r,sp0,sp1,done"
    back = load_dataset(tmp_path / "d.csv")
    assert back == ds
    assert back.rewards.tobytes() == ds.rewards.tobytes()


def test_empty_dataset_round_trip(tmp_path, goal_family):
    task = envs.sample_tasks(goal_family, 1, seed=0)[0]
    save_dataset(TaskDataset.empty(goal_family, task), tmp_path / "e.csv")
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 1
    assert len(load_dataset(tmp_path / "e.csv")) == 0


def test_truncated_file_names_line(tmp_path, goal_family):
    task = envs.sample_tasks(goal_family, 1, seed=0)[0]
    save_dataset(collect(goal_family, task, expert_policy(goal_family, task), 5, seed=0),
                 tmp_path / "t.csv")
    text = (tmp_path / "t.csv").read_text()
    (tmp_path / "t.csv").write_text(text[: len(text) - 25])
    with pytest.raises(ParseError, match="line 6"):
        load_dataset(tmp_path / "t.csv")


def test_td3_zero_steps_is_initialization(tmp_path):
    fam = envs.make_family("point_fwd_back")
    task = envs.sample_tasks(fam, 1, seed=0)[0]
    a = train_single_task(fam, task, Td3Config(training_steps=0), seed=3)
    b = train_single_task(fam, task, Td3Config(training_steps=0), seed=3)
    save_checkpoint(a.actor.params, tmp_path / "a.txt")
    assert load_checkpoint(tmp_path / "a.txt") == b.actor.params


def test_td3_config_validation():
    with pytest.raises(ArgumentError):
        Td3Config(policy_delay=0)
    with pytest.raises(ArgumentError):
        Td3Config(tau=0.0)


def _normalized(fam, task, policy):
    init = episode_initial_states(fam, task, 123, 10)
    ret = lambda p: envs.run_episodes(fam, task, p, init).returns.mean()
    e, z = ret(expert_policy(fam, task)), ret(zero_policy(fam, task))
    return (ret(policy) - z) / (e - z)


@pytest.mark.slow
def test_td3_learns_fwd_back():
    fam = envs.make_family("point_fwd_back")
    task = envs.sample_tasks(fam, 2, seed=0)[1]
    res = train_single_task(fam, task, Td3Config(training_steps=20_000), seed=0)
    assert _normalized(fam, task, res.policy()) >= 0.7


@pytest.mark.slow
def test_td3_point_vel_loss_decreases():
    fam = envs.make_family("point_vel")
    task = envs.sample_tasks(fam, 1, seed=0)[0]
    res = train_single_task(fam, task, Td3Config(training_steps=20_000), seed=0)
    losses = np.array(res.critic_losses)
    w = len(losses) // 10
    assert losses[-w:].mean() < losses[:w].mean()
    assert _normalized(fam, task, res.policy()) >= 0.7
