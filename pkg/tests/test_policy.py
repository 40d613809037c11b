import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfc import envs
from sfc.context import ContextEncoder, ContextVariable, encode_array
from sfc.diffkit import ParameterSet, backward, grad_check
from sfc.errors import ArgumentError, DimensionError
from sfc.expert_data import collect, expert_policy
from sfc.mmd import KernelConfig, mmd2
from sfc.policy import (ContextPolicy, PolicyTrainConfig, TaskBatch, act, il_losses, loss_bc,
                        loss_context_sep, params_digest, train_policy)
from sfc.sfnet import SfNetwork


def _batches(rng, tasks=3, windows=2, length=5, width=8, n=4, sd=2, ad=2):
    return [TaskBatch(rng.normal(size=(windows, length, width)), rng.normal(size=(n, sd)),
                      rng.uniform(-1, 1, (n, ad))) for _ in range(tasks)]


def test_zero_policy_gives_zero_action():
    pol = ContextPolicy(2, 3, 2, seed=0)
    pol.params.fill(0.0)
    assert np.all(act(pol, np.array([0.3, -1.2]), np.ones(3)) == 0.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 5.0), st.integers(0, 1000))
def test_actions_within_bound(bound, seed):
    pol = ContextPolicy(2, 3, 2, action_bound=bound, hidden=(16,), seed=seed)
    for e in pol.params.items():
        e[1].array[...] *= 20.0  # saturate the output
    rng = np.random.default_rng(seed)
    a = np.vstack([act(pol, rng.normal(scale=10, size=(100, 2)), rng.normal(scale=10, size=3))
                   for _ in range(10)])
    assert a.shape == (1000, 2) and np.all(np.abs(a) <= bound)


def test_act_is_deterministic_and_accepts_context_variable():
    pol = ContextPolicy(2, 3, 2, seed=1)
    s, z = np.array([0.1, 0.2]), np.array([0.5, -0.5, 0.0])
    assert np.array_equal(act(pol, s, z), act(pol, s, ContextVariable(z)))
    with pytest.raises(DimensionError):
        act(pol, s, np.zeros(4))
    with pytest.raises(DimensionError):
        act(pol, np.zeros(3), z)


def test_bc_single_pair_analytic():
    pol = ContextPolicy(2, 3, 2, seed=0)
    pol.params.fill(0.0)
    enc = ContextEncoder(4, 3, seed=0)
    tb = TaskBatch(np.zeros((1, 2, 8)), np.zeros((1, 2)), np.array([[1.0, 0.0]]))
    assert loss_bc(pol, enc, [tb]).item() == 0.5


def test_bc_matches_loop_oracle():
    rng = np.random.default_rng(0)
    pol = ContextPolicy(2, 3, 2, hidden=(6,), seed=0)
    enc = ContextEncoder(4, 3, seed=0)
    batches = _batches(rng, n=5)
    expected = 0.0
    for b in batches:
        z = encode_array(enc, b.windows)
        total = 0.0
        for j, (s, a) in enumerate(zip(b.states, b.actions)):
            pred = act(pol, s, z[j % len(z)])
            for i in range(len(a)):
                total += (pred[i] - a[i]) ** 2
        expected += total / (len(b.states) * len(b.actions[0]))
    assert abs(loss_bc(pol, enc, batches).item() - expected) <= 1e-12


def test_bc_zero_when_labels_are_policy_output():
    rng = np.random.default_rng(1)
    pol = ContextPolicy(2, 3, 2, hidden=(6,), seed=1)
    enc = ContextEncoder(4, 3, seed=1)
    batches = _batches(rng, windows=1)
    for b in batches:
        b.actions[...] = act(pol, b.states, encode_array(enc, b.windows)[0])
    assert loss_bc(pol, enc, batches).item() < 1e-28


def test_separation_zero_for_identical_groups():
    enc = ContextEncoder(4, 3, seed=0)
    w = np.random.default_rng(0).normal(size=(3, 5, 8))
    tb = [TaskBatch(w, np.zeros((1, 2)), np.zeros((1, 2))) for _ in range(3)]
    assert abs(loss_context_sep(enc, tb, cfg=KernelConfig(1.0)).item()) < 1e-15


def test_separation_with_single_windows_is_finite():
    rng = np.random.default_rng(2)
    enc = ContextEncoder(4, 3, seed=2)
    v = loss_context_sep(enc, _batches(rng, windows=1), cfg=KernelConfig(1.0)).item()
    assert np.isfinite(v) and v < 0  # separation rewards distance


def test_separation_orders_clusters():
    # identity-like encoder inputs: clusters far apart score lower than coincident ones
    enc = ContextEncoder(4, 3, seed=3)
    rng = np.random.default_rng(3)
    far = [TaskBatch(rng.normal(scale=0.05, size=(3, 4, 8)) + 3.0 * k, np.zeros((1, 2)), np.zeros((1, 2)))
           for k in (-1, 1)]
    near = [TaskBatch(rng.normal(scale=0.05, size=(3, 4, 8)), np.zeros((1, 2)), np.zeros((1, 2)))
            for _ in range(2)]
    cfg = KernelConfig(0.5)
    assert loss_context_sep(enc, far, cfg=cfg).item() < loss_context_sep(enc, near, cfg=cfg).item()
    z = [encode_array(enc, b.windows) for b in far]
    # the loss sums both ordered pairs
    expected = -2 * mmd2(z[0], z[1], cfg).item()
    assert loss_context_sep(enc, far, cfg=cfg).item() == pytest.approx(expected, abs=1e-12)


def test_separation_needs_two_tasks():
    enc = ContextEncoder(4, 3, seed=0)
    with pytest.raises(ArgumentError):
        loss_context_sep(enc, _batches(np.random.default_rng(0), tasks=1))


def test_mmd_off_equals_pure_bc():
    rng = np.random.default_rng(4)
    pol = ContextPolicy(2, 3, 2, hidden=(6,), seed=4)
    enc = ContextEncoder(4, 3, seed=4)
    batches = _batches(rng)
    cfg = PolicyTrainConfig(enabled={"bc": True, "mmd2": False})
    terms = il_losses(pol, enc, batches, cfg)
    assert set(terms) == {"bc"} and terms["bc"].item() == loss_bc(pol, enc, batches).item()


def test_zero_separation_weight_gives_bc_gradients():
    rng = np.random.default_rng(5)
    pol = ContextPolicy(2, 3, 2, hidden=(6,), seed=5)
    enc = ContextEncoder(4, 3, seed=5)
    batches = _batches(rng)
    joint = ParameterSet.union(pol.params, enc.params)

    joint.zero_grad()
    backward(loss_bc(pol, enc, batches))
    g_bc = joint.flat_grads()
    joint.zero_grad()
    t = il_losses(pol, enc, batches, PolicyTrainConfig(bandwidth=1.0))
    backward(t["bc"] + t["mmd2"] * 0.0)
    np.testing.assert_array_equal(joint.flat_grads(), g_bc)


def test_joint_gradient_check():
    rng = np.random.default_rng(6)
    pol = ContextPolicy(2, 3, 2, hidden=(5,), seed=6)
    enc = ContextEncoder(4, 3, seed=6)
    batches = _batches(rng, tasks=2, length=4)
    joint = ParameterSet.union(pol.params, enc.params)
    cfg = KernelConfig(0.7)
    rep = grad_check(lambda: loss_bc(pol, enc, batches) + loss_context_sep(enc, batches, cfg=cfg), joint)
    assert rep.passed, rep.max_rel_error


@pytest.fixture(scope="module")
def goal_data():
    fam = envs.make_family("point_goal", horizon=16)
    tasks = envs.sample_tasks(fam, 2, seed=0)
    data = [collect(fam, t, expert_policy(fam, t), 64, seed=0) for t in tasks]
    return fam, data


def _train(fam, data, steps=4, **kw):
    sf = SfNetwork(fam.state_dim, fam.action_dim, 4, hidden=(8,), seed=0)
    enc = ContextEncoder(4, 3, seed=0)
    pol = ContextPolicy(fam.state_dim, 3, fam.action_dim, hidden=(8,), seed=0)
    opts = dict(steps=steps, batch=8, windows_per_task=2, context_len=8, log_every=1)
    cfg = PolicyTrainConfig(**{**opts, **kw})
    return sf, enc, pol, train_policy(pol, enc, sf, data, cfg, seed=0)


def test_training_leaves_sf_untouched(goal_data):
    fam, data = goal_data
    sf = SfNetwork(fam.state_dim, fam.action_dim, 4, hidden=(8,), seed=0)
    before = params_digest(sf.params)
    enc = ContextEncoder(4, 3, seed=0)
    pol = ContextPolicy(fam.state_dim, 3, fam.action_dim, hidden=(8,), seed=0)
    train_policy(pol, enc, sf, data, PolicyTrainConfig(steps=3, batch=8, windows_per_task=2, context_len=8), seed=0)
    assert params_digest(sf.params) == before


def test_training_is_deterministic_and_reports_curve(goal_data):
    fam, data = goal_data
    _, _, pol1, rep1 = _train(fam, data)
    _, _, pol2, rep2 = _train(fam, data)
    assert rep1.to_csv() == rep2.to_csv() and pol1.params == pol2.params
    lines = rep1.to_csv().splitlines()
    assert lines[0] == "step,L_bc,L_mmd2,L_total" and len(lines) == 5


def test_training_without_separation_logs_zero(goal_data):
    fam, data = goal_data
    *_, rep = _train(fam, data, enabled={"bc": True, "mmd2": False})
    assert all(r[2] == 0.0 and r[3] == r[1] for r in rep.rows)


def test_training_reduces_bc(goal_data):
    fam, data = goal_data
    *_, rep = _train(fam, data, steps=150, lr=3e-3, enabled={"bc": True, "mmd2": False})
    assert np.mean([r[1] for r in rep.rows[-10:]]) < 0.5 * np.mean([r[1] for r in rep.rows[:10]])


def test_config_and_precondition_errors(goal_data):
    fam, data = goal_data
    with pytest.raises(ArgumentError):
        PolicyTrainConfig(window_align="middle")
    with pytest.raises(ArgumentError):
        PolicyTrainConfig(sign="sideways")
    with pytest.raises(ArgumentError):
        _train(fam, data[:1])
    with pytest.raises(ArgumentError):
        _train(fam, data, context_len=17)
