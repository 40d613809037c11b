"""Per-task transition datasets: collection, CSV persistence, and a TD3-style learner."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import envs
from .diffkit import AdamState, Mlp, ParameterSet, adam_step, backward, mse
from .diffkit import tensor as T
from .diffkit.params import format_real
from .envs import EnvFamily, TaskSpec
from .errors import ArgumentError, NumericError, ParseError

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    task_id: int


@dataclass
class TaskDataset:
    """Column-oriented transitions for one task, in collection order."""

    family: EnvFamily
    task: TaskSpec
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    episode: np.ndarray
    step: np.ndarray

    def __post_init__(self):
        n = len(self.rewards)
        sd, ad = self.family.state_dim, self.family.action_dim
        self.states = np.asarray(self.states, dtype=np.float64).reshape(n, sd)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(n, ad)
        self.next_states = np.asarray(self.next_states, dtype=np.float64).reshape(n, sd)
        self.rewards = np.asarray(self.rewards, dtype=np.float64).reshape(n)
        self.dones = np.asarray(self.dones, dtype=bool).reshape(n)
        self.episode = np.asarray(self.episode, dtype=np.int64).reshape(n)
        self.step = np.asarray(self.step, dtype=np.int64).reshape(n)

    @property
    def task_id(self) -> int:
        return self.task.task_id

    def __len__(self) -> int:
        return len(self.rewards)

    def __getitem__(self, i: int) -> Transition:
        return Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                          self.next_states[i], bool(self.dones[i]), self.task_id)

    def __iter__(self) -> Iterator[Transition]:
        return (self[i] for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TaskDataset):
            return NotImplemented
        cols = ("states", "actions", "rewards", "next_states", "dones", "episode", "step")
        return (self.family == other.family and self.task == other.task
                and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in cols))

    def episode_ranges(self) -> list[tuple[int, int]]:
        """Half-open [start, end) index ranges, one per episode, in order."""
        if len(self) == 0:
            return []
        cuts = np.flatnonzero(np.diff(self.episode)) + 1
        starts = np.concatenate([[0], cuts])
        ends = np.concatenate([cuts, [len(self)]])
        return [(int(a), int(b)) for a, b in zip(starts, ends)]

    def episode_returns(self) -> np.ndarray:
        return np.array([self.rewards[a:b].sum() for a, b in self.episode_ranges()])

    def subset(self, idx) -> "TaskDataset":
        return TaskDataset(self.family, self.task, self.states[idx], self.actions[idx],
                           self.rewards[idx], self.next_states[idx], self.dones[idx],
                           self.episode[idx], self.step[idx])

    @classmethod
    def empty(cls, family: EnvFamily, task: TaskSpec) -> "TaskDataset":
        sd, ad = family.state_dim, family.action_dim
        return cls(family, task, np.zeros((0, sd)), np.zeros((0, ad)), np.zeros(0),
                   np.zeros((0, sd)), np.zeros(0, bool), np.zeros(0, int), np.zeros(0, int))

    @classmethod
    def from_rollout(cls, family: EnvFamily, task: TaskSpec, ro: envs.Rollout,
                     first_episode: int = 0) -> "TaskDataset":
        E, H = ro.rewards.shape
        return cls(family, task,
                   ro.states.reshape(E * H, -1), ro.actions.reshape(E * H, -1),
                   ro.rewards.reshape(-1), ro.next_states.reshape(E * H, -1),
                   ro.dones.reshape(-1),
                   np.repeat(np.arange(first_episode, first_episode + E), H),
                   np.tile(np.arange(H), E))


def expert_policy(family: EnvFamily, task: TaskSpec) -> Policy:
    return lambda s: envs.expert_action(family, task, s)


def zero_policy(family: EnvFamily, task: TaskSpec) -> Policy:
    return lambda s: envs.zero_action(family, task, s)


def episode_initial_states(family: EnvFamily, task: TaskSpec, seed: int, episodes: int,
                           first_episode: int = 0) -> np.ndarray:
    """One RNG stream per episode, keyed by (seed, task_id, episode index)."""
    return np.stack([
        envs.initial_states(family, np.random.default_rng([int(seed), task.task_id, ep]))
        for ep in range(first_episode, first_episode + episodes)
    ])


def collect(family: EnvFamily, task: TaskSpec, policy: Policy, n_transitions: int,
            seed: int) -> TaskDataset:
    """Roll whole episodes of ``policy`` and keep the first ``n_transitions`` steps.

    The last episode is recorded partially when ``n_transitions`` is not a
    multiple of the horizon.
    """
    if n_transitions < 1:
        raise ArgumentError(f"n_transitions must be >= 1, got {n_transitions}")
    envs.validate_task(family, task)
    n_eps = -(-n_transitions // family.horizon)
    init = episode_initial_states(family, task, seed, n_eps)
    noise_rng = np.random.default_rng([int(seed), task.task_id, 0x0A15E])
    ro = envs.run_episodes(family, task, policy, init, noise_rng)
    return TaskDataset.from_rollout(family, task, ro).subset(slice(0, n_transitions))


# ---------------------------------------------------------------------------
# persistence


def _columns(family: EnvFamily) -> list[str]:
    sd, ad = family.state_dim, family.action_dim
    return (["task_id", "episode", "step"] + [f"s{i}" for i in range(sd)]
            + [f"a{i}" for i in range(ad)] + ["r"] + [f"sp{i}" for i in range(sd)] + ["done"])


def manifest_path(path) -> Path:
    return Path(path).with_suffix(".manifest")


def save_dataset(ds: TaskDataset, path) -> None:
    """CSV rows (17 significant digits) plus a task manifest sidecar."""
    path = Path(path)
    envs.write_manifest(manifest_path(path), ds.family, [ds.task])
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_columns(ds.family))
        for i in range(len(ds)):
            w.writerow([ds.task_id, int(ds.episode[i]), int(ds.step[i]),
                        *map(format_real, ds.states[i]), *map(format_real, ds.actions[i]),
                        format_real(ds.rewards[i]), *map(format_real, ds.next_states[i]),
                        int(ds.dones[i])])


def load_dataset(path) -> TaskDataset:
    path = Path(path)
    family, tasks = envs.read_manifest(manifest_path(path))
    if len(tasks) != 1:
        raise ParseError(f"dataset manifest must list exactly one task, found {len(tasks)}",
                         path=manifest_path(path))
    task = tasks[0]
    cols = _columns(family)
    sd, ad = family.state_dim, family.action_dim
    rows = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != cols:
            raise ParseError(f"expected header {','.join(cols)}", line=1, path=path)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(cols):
                raise ParseError(f"expected {len(cols)} fields, got {len(row)}", line=lineno, path=path)
            try:
                if int(row[0]) != task.task_id:
                    raise ParseError(f"task_id {row[0]} does not match manifest task {task.task_id}",
                                     line=lineno, path=path)
                done = int(row[-1])
                if done not in (0, 1):
                    raise ValueError(f"done must be 0 or 1, got {row[-1]}")
                rows.append([float(x) for x in row[:-1]] + [done])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
    if not rows:
        return TaskDataset.empty(family, task)
    arr = np.array(rows, dtype=np.float64)
    c = 3
    states = arr[:, c:c + sd]; c += sd
    actions = arr[:, c:c + ad]; c += ad
    rewards = arr[:, c]; c += 1
    nxt = arr[:, c:c + sd]
    return TaskDataset(family, task, states, actions, rewards, nxt, arr[:, -1].astype(bool),
                       arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64))


# ---------------------------------------------------------------------------
# TD3-style single-task learner


@dataclass
class Td3Config:
    actor_hidden: tuple = (64, 64)
    critic_hidden: tuple = (64, 64)
    explore_noise: float = 0.1
    target_noise: float = 0.2
    target_clip: float = 0.5
    policy_delay: int = 2
    tau: float = 0.005
    batch_size: int = 100
    replay_capacity: int = 100_000
    training_steps: int = 20_000
    start_steps: int = 1000
    learning_rate: float = 1e-3
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.policy_delay < 1:
            raise ArgumentError("policy_delay must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ArgumentError("tau must lie in (0, 1]")
        if min(self.explore_noise, self.target_noise, self.target_clip) < 0:
            raise ArgumentError("noise scales must be non-negative")
        if self.training_steps < 0 or self.batch_size < 1 or self.replay_capacity < 1:
            raise ArgumentError("training_steps, batch_size and replay_capacity out of range")


@dataclass
class Td3Result:
    actor: Mlp
    action_bound: float
    episode_returns: list = field(default_factory=list)  # (env step, return)
    critic_losses: list = field(default_factory=list)    # per update step
    snapshots: list = field(default_factory=list)        # (env step, ParameterSet)

    def policy(self) -> Policy:
        return lambda s: self.action_bound * self.actor.predict(s)


def _q_input(s, a):
    return T.concat([T.as_tensor(s), T.as_tensor(a)], axis=-1)


def train_single_task(family: EnvFamily, task: TaskSpec, cfg: Td3Config, seed: int) -> Td3Result:
    """Twin critics, clipped target-policy smoothing, delayed actor, soft targets.

    Time-limit terminations are bootstrapped through (the horizon is artificial).
    """
    envs.validate_task(family, task)
    sd, ad, bound = family.state_dim, family.action_dim, family.action_bound
    actor = Mlp([sd, *cfg.actor_hidden, ad], "relu", "tanh", seed=seed, prefix="pi.")
    critics = ParameterSet(seed + 1)
    q1 = Mlp([sd + ad, *cfg.critic_hidden, 1], "relu", params=critics, prefix="q1.")
    q2 = Mlp([sd + ad, *cfg.critic_hidden, 1], "relu", params=critics, prefix="q2.")
    actor_t, critics_t = actor.params.copy(), critics.copy()
    q1_t = _shadow(q1, critics_t)
    q2_t = _shadow(q2, critics_t)
    pi_t = _shadow(actor, actor_t)
    opt_pi = AdamState.for_params(actor.params, learning_rate=cfg.learning_rate)
    opt_q = AdamState.for_params(critics, learning_rate=cfg.learning_rate)

    rng = np.random.default_rng([int(seed), task.task_id, 0x7D3])
    cap = cfg.replay_capacity
    buf_s, buf_a = np.zeros((cap, sd)), np.zeros((cap, ad))
    buf_r, buf_s2 = np.zeros(cap), np.zeros((cap, sd))
    size = ptr = 0
    result = Td3Result(actor, bound)

    s = envs.initial_states(family, rng)
    t, ep_ret, ep = 0, 0.0, 0
    for it in range(cfg.training_steps):
        if it < cfg.start_steps:
            a = rng.uniform(-bound, bound, size=ad)
        else:
            a = bound * actor.predict(s) + rng.normal(0.0, cfg.explore_noise * bound, size=ad)
            a = np.clip(a, -bound, bound)
        s2, r, done = envs.step(family, task, s, a, t, rng)
        buf_s[ptr], buf_a[ptr], buf_r[ptr], buf_s2[ptr] = s, a, r, s2
        ptr, size = (ptr + 1) % cap, min(size + 1, cap)
        ep_ret += float(r)
        s, t = s2, t + 1
        if done:
            result.episode_returns.append((it + 1, ep_ret))
            ep += 1
            s, t, ep_ret = envs.initial_states(family, rng), 0, 0.0
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            result.snapshots.append((it + 1, actor.params.copy()))
        if size < cfg.batch_size or it < cfg.start_steps:
            continue

        idx = rng.integers(size, size=cfg.batch_size)
        bs, ba, br, bs2 = buf_s[idx], buf_a[idx], buf_r[idx], buf_s2[idx]
        noise = np.clip(rng.normal(0.0, cfg.target_noise * bound, size=ba.shape),
                        -cfg.target_clip * bound, cfg.target_clip * bound)
        a2 = np.clip(bound * pi_t.predict(bs2) + noise, -bound, bound)
        x2 = np.concatenate([bs2, a2], axis=1)
        y = br[:, None] + family.gamma * np.minimum(q1_t.predict(x2), q2_t.predict(x2))

        x = _q_input(bs, ba)
        loss_q = mse(q1(x), y) + mse(q2(x), y)
        if not np.isfinite(loss_q.value):
            raise NumericError(f"critic loss is non-finite at step {it}")
        backward(loss_q)
        adam_step(critics, opt_q)
        result.critic_losses.append(loss_q.item())

        if it % cfg.policy_delay == 0:
            loss_pi = -T.mean(q1(_q_input(bs, actor(bs) * bound)))
            if not np.isfinite(loss_pi.value):
                raise NumericError(f"actor loss is non-finite at step {it}")
            backward(loss_pi)
            critics.zero_grad()
            adam_step(actor.params, opt_pi)
            actor_t.soft_update(actor.params, cfg.tau)
            critics_t.soft_update(critics, cfg.tau)
    return result


def _shadow(net: Mlp, params: ParameterSet) -> Mlp:
    """An Mlp view of the same architecture reading weights from ``params``."""
    twin = Mlp.__new__(Mlp)
    twin.__dict__.update(net.__dict__)
    twin.params = params
    return twin
