"""Point-mass task families that share dynamics and differ only in reward.

Families:

* ``point_goal``: 2-D position, 2-D velocity command, reward is minus the
  distance to a goal on a circle.
* ``point_vel``: 1-D position/velocity, scalar acceleration, reward is minus the
  gap to a target velocity.
* ``point_fwd_back``: point_vel dynamics, reward is ``direction * velocity``.
* ``tabular_ring``: one-hot states on a deterministic ring (policy fixed); used
  as a policy-evaluation substrate with a closed-form successor-feature answer.

All step functions are vectorized over leading batch axes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .diffkit.params import format_real
from .errors import ArgumentError, DimensionError, NumericError, ParseError

FAMILIES = ("point_goal", "point_vel", "point_fwd_back", "tabular_ring")


@dataclass(frozen=True)
class EnvFamily:
    name: str
    horizon: int = 64
    gamma: float = 0.99
    dt: float = 0.1
    action_bound: float = 1.0
    state_bound: float = 2.0
    goal_radius: float = 1.0
    vel_min: float = 0.2
    vel_max: float = 1.0
    init_box: float = 0.1
    noise: float = 0.0
    n_states: int = 5

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ArgumentError(f"unknown family {self.name!r}; choose from {FAMILIES}")
        if not 0.0 <= self.gamma < 1.0:
            raise ArgumentError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise ArgumentError(f"horizon must be >= 1, got {self.horizon}")
        if self.action_bound <= 0 or self.state_bound <= 0 or self.dt <= 0:
            raise ArgumentError("action_bound, state_bound and dt must be positive")
        if self.vel_min > self.vel_max:
            raise ArgumentError("vel_min exceeds vel_max")
        if self.noise < 0 or self.init_box < 0:
            raise ArgumentError("noise and init_box must be non-negative")
        if self.name == "tabular_ring" and self.n_states < 1:
            raise ArgumentError("tabular_ring needs n_states >= 1")

    @property
    def state_dim(self) -> int:
        if self.name == "point_goal":
            return 2
        if self.name == "tabular_ring":
            return self.n_states
        return 2

    @property
    def action_dim(self) -> int:
        return 2 if self.name == "point_goal" else 1

    @property
    def n_params(self) -> int:
        return {"point_goal": 2, "point_vel": 1, "point_fwd_back": 1}.get(self.name, self.n_states)

    def reward_bound(self, task: "TaskSpec | None" = None) -> float:
        b = self.state_bound
        if self.name == "point_goal":
            return np.sqrt(2.0) * b + self.goal_radius
        if self.name == "point_vel":
            return b + max(abs(self.vel_min), abs(self.vel_max))
        if self.name == "point_fwd_back":
            return b
        return 1.0 if task is None else float(np.max(np.abs(task.params), initial=0.0))

    def with_(self, **changes) -> "EnvFamily":
        return replace(self, **changes)


@dataclass(frozen=True)
class TaskSpec:
    family: str
    params: tuple
    task_id: int

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.params, dtype=np.float64)


def make_family(name: str, **overrides) -> EnvFamily:
    return EnvFamily(name=name, **overrides)


def validate_task(family: EnvFamily, task: TaskSpec) -> None:
    if task.family != family.name:
        raise ArgumentError(f"task family {task.family!r} does not match {family.name!r}")
    if len(task.params) != family.n_params:
        raise DimensionError(f"{family.name} tasks carry {family.n_params} params")


def sample_tasks(family: EnvFamily, count: int, seed: int, exclude: Sequence[TaskSpec] = (),
                 first_id: int = 0) -> list[TaskSpec]:
    """Draw ``count`` tasks uniformly from the family's parameter space.

    ``point_fwd_back`` is exhaustive: ids alternate between directions +1 and -1.
    Parameters equal to any task in ``exclude`` are redrawn.
    """
    if count < 1:
        raise ArgumentError(f"need at least one task, got {count}")
    rng = np.random.default_rng([int(seed), 0x7A5C])
    banned = {tuple(t.params) for t in exclude}
    tasks = []
    while len(tasks) < count:
        i = len(tasks)
        if family.name == "point_goal":
            angle = rng.uniform(0.0, 2.0 * np.pi)
            params = (family.goal_radius * np.cos(angle), family.goal_radius * np.sin(angle))
        elif family.name == "point_vel":
            params = (rng.uniform(family.vel_min, family.vel_max),)
        elif family.name == "point_fwd_back":
            params = (1.0 if (first_id + i) % 2 == 0 else -1.0,)
        else:
            params = tuple(rng.uniform(-1.0, 1.0, size=family.n_states))
        params = tuple(float(p) for p in params)
        if params in banned and family.name != "point_fwd_back":
            continue
        tasks.append(TaskSpec(family.name, params, first_id + i))
    return tasks


def goal_tasks_at_angles(family: EnvFamily, angles: Sequence[float], first_id: int = 0) -> list[TaskSpec]:
    """point_goal tasks with goals at the given angles (radians) on the goal circle."""
    r = family.goal_radius
    return [TaskSpec("point_goal", (float(r * np.cos(a)), float(r * np.sin(a))), first_id + i)
            for i, a in enumerate(angles)]


def initial_states(family: EnvFamily, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniform draw from a small box around the origin (ring: uniform one-hot state)."""
    shape = () if n is None else (n,)
    if family.name == "tabular_ring":
        idx = rng.integers(family.n_states, size=shape)
        return np.eye(family.n_states)[idx]
    return rng.uniform(-family.init_box, family.init_box, size=shape + (family.state_dim,))


def step(family: EnvFamily, task: TaskSpec, state, action, t: int = 0,
         rng: np.random.Generator | None = None):
    """Advance one step from time index ``t``.

    Returns ``(next_state, reward, done)``; ``done`` is true once ``t + 1`` reaches
    the horizon. Dynamics do not depend on the task.
    """
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if state.shape[-1:] != (family.state_dim,) or action.shape[-1:] != (family.action_dim,):
        raise DimensionError(f"state/action dims {state.shape}/{action.shape} do not match "
                             f"{family.name} ({family.state_dim}/{family.action_dim})")
    if not (np.isfinite(state).all() and np.isfinite(action).all()):
        raise NumericError("non-finite state or action")
    p = task.array
    a = np.clip(action, -family.action_bound, family.action_bound)
    b, dt = family.state_bound, family.dt

    if family.name == "point_goal":
        nxt = np.clip(state + dt * a, -b, b)
    elif family.name in ("point_vel", "point_fwd_back"):
        x, v = state[..., 0], state[..., 1]
        nxt = np.stack([x + dt * v, np.clip(v + dt * a[..., 0], -b, b)], axis=-1)
    else:
        nxt = np.roll(state, 1, axis=-1)

    if family.noise > 0 and family.name != "tabular_ring":
        if rng is None:
            raise ArgumentError("noise > 0 requires an rng")
        nxt = nxt + rng.uniform(-family.noise, family.noise, size=nxt.shape)

    if family.name == "point_goal":
        reward = -np.linalg.norm(nxt - p, axis=-1)
    elif family.name == "point_vel":
        reward = -np.abs(nxt[..., 1] - p[0])
    elif family.name == "point_fwd_back":
        reward = p[0] * nxt[..., 1]
    else:
        reward = nxt @ p
    done = np.full(reward.shape, t + 1 >= family.horizon)
    return nxt, reward, done


def expert_action(family: EnvFamily, task: TaskSpec, state) -> np.ndarray:
    """Analytic near-optimal action for a task (vectorized over batch rows)."""
    validate_task(family, task)
    state = np.asarray(state, dtype=np.float64)
    bound, dt = family.action_bound, family.dt
    p = task.array
    if family.name == "point_goal":
        delta = p - state
        dist = np.linalg.norm(delta, axis=-1, keepdims=True)
        # full speed toward the goal; the last step lands on it exactly
        speed = np.minimum(bound, dist / dt)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(dist > 0, delta / np.where(dist > 0, dist, 1.0), 0.0)
        return unit * speed
    if family.name == "point_vel":
        return np.clip((p[0] - state[..., 1:2]) / dt, -bound, bound)
    if family.name == "point_fwd_back":
        return np.full(state.shape[:-1] + (1,), p[0] * bound)
    if family.name == "tabular_ring":
        return np.zeros(state.shape[:-1] + (1,))
    raise ArgumentError(f"no expert for family {family.name!r}")


def zero_action(family: EnvFamily, task: TaskSpec, state) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    return np.zeros(state.shape[:-1] + (family.action_dim,))


@dataclass
class Rollout:
    """Batched episodes: arrays shaped (episodes, horizon, ...)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def run_episodes(family: EnvFamily, task: TaskSpec, policy: Callable[[np.ndarray], np.ndarray],
                 init: np.ndarray, rng: np.random.Generator | None = None) -> Rollout:
    """Roll a deterministic batched policy for one full horizon from ``init`` (E, state_dim)."""
    validate_task(family, task)
    s = np.array(init, dtype=np.float64, ndmin=2)
    E, H = s.shape[0], family.horizon
    S = np.empty((E, H, family.state_dim))
    A = np.empty((E, H, family.action_dim))
    R = np.empty((E, H))
    S2 = np.empty((E, H, family.state_dim))
    D = np.empty((E, H), dtype=bool)
    for t in range(H):
        a = np.asarray(policy(s), dtype=np.float64)
        if a.shape != (E, family.action_dim):
            raise DimensionError(f"policy returned shape {a.shape}, expected {(E, family.action_dim)}")
        a = np.clip(a, -family.action_bound, family.action_bound)
        s2, r, d = step(family, task, s, a, t, rng)
        S[:, t], A[:, t], R[:, t], S2[:, t], D[:, t] = s, a, r, s2, d
        s = s2
    return Rollout(S, A, R, S2, D)


# ---------------------------------------------------------------------------
# tabular substrate


@dataclass
class TabularMdp:
    P: np.ndarray
    Phi: np.ndarray
    gamma: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.Phi = np.asarray(self.Phi, dtype=np.float64)
        n = self.P.shape[0]
        if self.P.shape != (n, n) or self.Phi.shape[0] != n:
            raise DimensionError("P must be n x n and Phi must have n rows")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=1) - 1.0)) > 1e-12:
            raise ArgumentError("P rows must be non-negative and sum to 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ArgumentError("gamma must lie in [0, 1)")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]


def ring_mdp(family: EnvFamily) -> TabularMdp:
    """The ring family's fixed-policy chain with one-hot features."""
    n = family.n_states
    return TabularMdp(np.roll(np.eye(n), 1, axis=1), np.eye(n), family.gamma)


def tabular_sr_oracle(mdp: TabularMdp) -> np.ndarray:
    """Successor features in closed form: solve (I - gamma P) Psi = Phi."""
    A = np.eye(mdp.n_states) - mdp.gamma * mdp.P
    try:
        return np.linalg.solve(A, mdp.Phi)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular successor system: {exc}") from None


# ---------------------------------------------------------------------------
# manifest files

_FAMILY_KEYS = [f.name for f in EnvFamily.__dataclass_fields__.values()]


def write_manifest(path, family: EnvFamily, tasks: Sequence[TaskSpec]) -> None:
    """``key = value`` family lines, then ``tasks:`` and one ``task_id,p0,p1,...`` per task."""
    lines = ["# task manifest"]
    fields = asdict(family)
    fields_order = ["name"] + [k for k in _FAMILY_KEYS if k != "name"]
    for k in fields_order:
        v = fields[k]
        lines.append(f"{k} = {format_real(v) if isinstance(v, float) else v}")
    lines.append(f"state_dim = {family.state_dim}")
    lines.append(f"action_dim = {family.action_dim}")
    lines.append("tasks:")
    for t in tasks:
        lines.append(",".join([str(t.task_id), *(format_real(p) for p in t.params)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> tuple[EnvFamily, list[TaskSpec]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    fields: dict = {}
    tasks: list[TaskSpec] = []
    in_tasks = False
    types = {f.name: f.type for f in EnvFamily.__dataclass_fields__.values()}
    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "tasks:":
            in_tasks = True
            try:
                family = EnvFamily(**fields)
            except (TypeError, ArgumentError) as exc:
                raise ParseError(f"bad family definition: {exc}", line=no, path=path) from None
            continue
        if not in_tasks:
            if "=" not in line:
                raise ParseError("expected 'key = value'", line=no, path=path)
            key, value = (s.strip() for s in line.split("=", 1))
            if key in ("state_dim", "action_dim"):
                continue
            if key not in types:
                raise ParseError(f"unknown manifest key {key!r}", line=no, path=path)
            try:
                fields[key] = {"int": int, "float": float}.get(types[key], str)(value)
            except ValueError as exc:
                raise ParseError(str(exc), line=no, path=path) from None
            continue
        parts = line.split(",")
        try:
            task = TaskSpec(family.name, tuple(float(x) for x in parts[1:]), int(parts[0]))
        except ValueError as exc:
            raise ParseError(str(exc), line=no, path=path) from None
        if len(task.params) != family.n_params:
            raise ParseError(f"expected {family.n_params} task params", line=no, path=path)
        tasks.append(task)
    if not in_tasks:
        raise ParseError("missing 'tasks:' section", line=len(lines), path=path)
    return family, tasks
