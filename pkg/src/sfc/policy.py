"""Context-conditioned policy and joint stage-3 training of policy and context encoder.

Each step draws, per task, a few context windows (contiguous runs of that task's
dataset) and an independent batch of labeled (s, a) pairs. Windows go through the
GRU encoder; labeled pairs are regressed onto the dataset actions with the
policy conditioned on one of the task's window contexts. The successor-feature
network is frozen, so its per-transition features are computed once up front.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .context import (ContextEncoder, dataset_inputs, encode_tensor, episode_starts, gather_windows,
                      window_starts)
from .diffkit import AdamState, Mlp, ParameterSet, adam_step, backward
from .diffkit import tensor as T
from .diffkit.params import format_real, load_checkpoint, save_checkpoint
from .diffkit.tensor import Tensor
from .errors import ArgumentError, DimensionError, NumericError, StateError
from .mmd import SIGNS, KernelConfig, pairwise_separation_loss

IL_TERMS = ("bc", "mmd2")
# "episode": windows open at an episode start, like every context built at test time;
# "any": windows may start at any row
WINDOW_ALIGN = ("episode", "any")


class ContextPolicy:
    """pi(s, z) = bound * tanh(MLP([s, z]))."""

    def __init__(self, state_dim: int, z_dim: int, action_dim: int, action_bound: float = 1.0,
                 hidden: Sequence[int] = (64, 64), seed: int = 0):
        if action_bound <= 0:
            raise ArgumentError("action_bound must be positive")
        self.state_dim, self.z_dim, self.action_dim = int(state_dim), int(z_dim), int(action_dim)
        self.action_bound = float(action_bound)
        self.params = ParameterSet(seed)
        self.net = Mlp([state_dim + z_dim, *hidden, action_dim], hidden_activation="tanh",
                       output_activation="tanh", params=self.params, prefix="pi.")

    def forward(self, states, z) -> Tensor:
        return self.net(T.concat([states, z], axis=1)) * self.action_bound

    def save(self, path) -> None:
        save_checkpoint(self.params, path)

    def load(self, path) -> None:
        self.params.assign(load_checkpoint(path))


def act(pol: ContextPolicy, s, z) -> np.ndarray:
    """Deterministic bounded action for one state (or a batch sharing one z)."""
    s = np.asarray(s, dtype=np.float64)
    z = np.asarray(getattr(z, "z", z), dtype=np.float64).reshape(-1)
    if z.shape != (pol.z_dim,):
        raise DimensionError(f"z must have length {pol.z_dim}, got {z.shape}")
    if s.shape[-1:] != (pol.state_dim,):
        raise DimensionError(f"state must end in {pol.state_dim}, got {s.shape}")
    batch = np.atleast_2d(s)
    x = np.concatenate([batch, np.broadcast_to(z, (len(batch), pol.z_dim))], axis=1)
    a = pol.net.predict(x) * pol.action_bound
    return a if s.ndim == 2 else a[0]


def policy_fn(pol: ContextPolicy, z):
    """Batched ``states -> actions`` callable for rollouts."""
    return lambda states: act(pol, np.atleast_2d(states), z)


@dataclass
class TaskBatch:
    """Context windows (W, C, width) plus labeled pairs for one task."""

    windows: np.ndarray
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        if len(self.states) == 0 or len(self.windows) == 0:
            raise ArgumentError("task batch needs at least one window and one labeled pair")


def _encode_all(enc: ContextEncoder, batches: Sequence[TaskBatch]) -> Tensor:
    """z for every window of every task, stacked in task order: (sum W_k, z_dim)."""
    if len({b.windows.shape[1] for b in batches}) == 1:
        return encode_tensor(enc, np.concatenate([b.windows for b in batches]))
    return T.concat([encode_tensor(enc, b.windows) for b in batches], axis=0)


def _groups(z: Tensor, batches: Sequence[TaskBatch]) -> list[Tensor]:
    cuts = np.concatenate([[0], np.cumsum([len(b.windows) for b in batches])])
    return [z[int(cuts[i]):int(cuts[i + 1])] for i in range(len(batches))]


def _bc_term(pol: ContextPolicy, z: Tensor, batches: Sequence[TaskBatch]) -> Tensor:
    # one policy pass over all tasks; per-row weights turn the sum into per-task means
    rows, weights, offset = [], [], 0
    for b in batches:
        n, w = len(b.states), len(b.windows)
        rows.append(offset + np.arange(n) % w)  # pair j uses window j mod W
        weights.append(np.full(n, 1.0 / (n * pol.action_dim)))
        offset += w
    states = np.concatenate([b.states for b in batches])
    actions = np.concatenate([b.actions for b in batches])
    if actions.shape[1] != pol.action_dim:
        raise DimensionError(f"actions must have {pol.action_dim} columns")
    err = T.square(pol.forward(states, z[np.concatenate(rows)]) - actions)
    return T.tsum(err * np.concatenate(weights)[:, None])


def loss_bc(pol: ContextPolicy, enc: ContextEncoder, per_task: Sequence[TaskBatch]) -> Tensor:
    """Sum over tasks of the mean squared action error (mean over pairs and action dims)."""
    if not per_task:
        raise ArgumentError("empty batch")
    return _bc_term(pol, _encode_all(enc, per_task), per_task)


def loss_context_sep(enc: ContextEncoder, per_task: Sequence[TaskBatch], sign: str = "separate",
                     cfg: KernelConfig | None = None) -> Tensor:
    if len(per_task) < 2:
        raise ArgumentError("context separation needs at least 2 tasks")
    return pairwise_separation_loss(_groups(_encode_all(enc, per_task), per_task), sign, cfg)


@dataclass
class PolicyTrainConfig:
    steps: int = 20_000
    batch: int = 128
    windows_per_task: int = 4
    context_len: int = 64
    lr: float = 1e-3
    weights: dict = field(default_factory=lambda: {t: 1.0 for t in IL_TERMS})
    enabled: dict = field(default_factory=lambda: {t: True for t in IL_TERMS})
    sign: str = "separate"
    bandwidth: object = "median"
    shuffle_windows: bool = False
    window_align: str = "episode"
    log_every: int = 10

    def __post_init__(self):
        if self.window_align not in WINDOW_ALIGN:
            raise ArgumentError(f"window_align must be one of {WINDOW_ALIGN}")
        if self.sign not in SIGNS:
            raise ArgumentError(f"sign must be one of {SIGNS}")
        if min(self.batch, self.windows_per_task, self.context_len) <= 0:
            raise ArgumentError("batch, windows_per_task and context_len must be positive")
        if self.steps < 0:
            raise ArgumentError("steps must be non-negative")


@dataclass
class PolicyTrainReport:
    rows: list  # (step, L_bc, L_mmd2, L_total)
    opt_policy: AdamState
    opt_encoder: AdamState

    HEADER = "step,L_bc,L_mmd2,L_total"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self.HEADER + "\n")
        for row in self.rows:
            buf.write(",".join([str(row[0]), *(format_real(v) for v in row[1:])]) + "\n")
        return buf.getvalue()


def params_digest(params: ParameterSet) -> str:
    h = hashlib.sha256()
    for name, e in params.items():
        h.update(name.encode())
        h.update(e.values.tobytes())
    return h.hexdigest()


def il_losses(pol: ContextPolicy, enc: ContextEncoder, per_task: Sequence[TaskBatch],
              cfg: PolicyTrainConfig) -> dict:
    z = _encode_all(enc, per_task)
    terms = {}
    if cfg.enabled.get("bc"):
        terms["bc"] = _bc_term(pol, z, per_task)
    if cfg.enabled.get("mmd2"):
        if len(per_task) < 2:
            raise ArgumentError("context separation needs at least 2 tasks")
        terms["mmd2"] = pairwise_separation_loss(_groups(z, per_task), cfg.sign, KernelConfig.parse(cfg.bandwidth))
    return terms


def sample_task_batches(inputs: Sequence[np.ndarray], datasets: Sequence, cfg: PolicyTrainConfig,
                        rng: np.random.Generator, aligned: Sequence | None = None) -> list[TaskBatch]:
    out = []
    for i, (x, ds) in enumerate(zip(inputs, datasets)):
        if cfg.window_align == "episode":
            pool = aligned[i] if aligned is not None else episode_starts(ds, cfg.context_len)
            starts = pool[rng.integers(len(pool), size=cfg.windows_per_task)]
        else:
            starts = window_starts(len(ds), cfg.context_len, cfg.windows_per_task, rng)
        windows = gather_windows(x, starts, cfg.context_len, rng if cfg.shuffle_windows else None)
        idx = rng.integers(len(ds), size=cfg.batch)
        out.append(TaskBatch(windows, ds.states[idx], ds.actions[idx]))
    return out


def train_policy(pol: ContextPolicy, enc: ContextEncoder, sf, datasets: Sequence,
                 cfg: PolicyTrainConfig, seed: int = 0, start_step: int = 0,
                 opt_policy: AdamState | None = None,
                 opt_encoder: AdamState | None = None) -> PolicyTrainReport:
    """Jointly minimize the enabled imitation terms over policy and encoder parameters.

    ``sf`` is only read; a digest check guards that contract.
    """
    if not datasets or any(len(ds) == 0 for ds in datasets):
        raise ArgumentError("train_policy needs non-empty datasets")
    if cfg.enabled.get("mmd2") and len(datasets) < 2:
        raise ArgumentError("context separation needs at least 2 tasks")
    digest = params_digest(sf.params) if sf is not None else None
    inputs = [dataset_inputs(sf, enc, ds) for ds in datasets]
    aligned = ([episode_starts(ds, cfg.context_len) for ds in datasets]
               if cfg.window_align == "episode" else None)
    opt_policy = opt_policy or AdamState.for_params(pol.params, learning_rate=cfg.lr)
    opt_encoder = opt_encoder or AdamState.for_params(enc.params, learning_rate=cfg.lr)
    active = [t for t in IL_TERMS if cfg.enabled.get(t)]
    rows = []
    for step in range(start_step, cfg.steps):
        rng = np.random.default_rng([int(seed), 3, step])
        batches = sample_task_batches(inputs, datasets, cfg, rng, aligned)
        terms = il_losses(pol, enc, batches, cfg)
        values = {}
        for name, val in terms.items():
            v = val.item()
            if not np.isfinite(v):
                raise NumericError(f"policy loss term {name!r} is non-finite at step {step}")
            values[name] = v
        if active:
            total = None
            for name in active:
                weighted = terms[name] * cfg.weights.get(name, 1.0)
                total = weighted if total is None else total + weighted
            backward(total)
            adam_step(pol.params, opt_policy)
            adam_step(enc.params, opt_encoder)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            vals = [values.get(t, 0.0) for t in IL_TERMS]
            rows.append((step, *vals, sum(cfg.weights.get(t, 1.0) * values.get(t, 0.0) for t in active)))
    if digest is not None and params_digest(sf.params) != digest:
        raise StateError("stage 3 modified the frozen SF network")
    return PolicyTrainReport(rows, opt_policy, opt_encoder)
