"""Successor-feature network: state features, successor features, reward weights,
and next-state reconstruction, trained on the four-term loss of stage 2.

Wiring (per transition ``(s, a, r, s')``)::

    phi   = encoder(s)
    psi   = sf_head(phi)
    omega = omega_head([phi, a, r])
    s_hat = recon_head([phi, a])

``phi . omega`` predicts ``r``; ``psi`` is trained by TD toward
``phi(s) + gamma * target_sf_head(phi(s'))`` with the target held fixed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffkit import AdamState, Mlp, ParameterSet, adam_step, backward, mse
from .diffkit import tensor as T
from .diffkit.params import format_real, load_checkpoint, save_checkpoint
from .diffkit.tensor import Tensor
from .errors import ArgumentError, DimensionError, NumericError
from .mmd import KernelConfig, pairwise_separation_loss

TERMS = ("r", "recons", "td", "mmd")
FEATURE_MODES = ("learned", "identity")


@dataclass
class SfOutputs:
    phi: np.ndarray
    psi: np.ndarray
    omega: np.ndarray
    s_next_pred: np.ndarray


@dataclass
class Batch:
    """Transition columns; any object with these attributes works as a batch."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    @classmethod
    def of(cls, data, idx=None) -> "Batch":
        sel = (lambda x: x) if idx is None else (lambda x: x[idx])
        return cls(np.atleast_2d(sel(data.states)), np.atleast_2d(sel(data.actions)),
                   np.atleast_1d(sel(data.rewards)), np.atleast_2d(sel(data.next_states)),
                   np.atleast_1d(sel(data.dones)))

    @classmethod
    def concat(cls, batches: Sequence["Batch"]) -> "Batch":
        return cls(*(np.concatenate([getattr(b, f) for b in batches])
                     for f in ("states", "actions", "rewards", "next_states", "dones")))

    @classmethod
    def from_transition(cls, t) -> "Batch":
        return cls(np.atleast_2d(t.s), np.atleast_2d(t.a), np.atleast_1d(float(t.r)),
                   np.atleast_2d(t.s_next), np.atleast_1d(bool(t.done)))


class SfNetwork:
    def __init__(self, state_dim: int, action_dim: int, feature_dim: int = 16,
                 hidden: Sequence[int] = (64,), psi_hidden: Sequence[int] | None = None,
                 gamma: float = 0.99, feature_mode: str = "learned", seed: int = 0):
        if feature_mode not in FEATURE_MODES:
            raise ArgumentError(f"feature_mode must be one of {FEATURE_MODES}")
        if feature_mode == "identity" and feature_dim != state_dim:
            raise DimensionError("identity features need feature_dim == state_dim")
        if not 0.0 <= gamma < 1.0:
            raise ArgumentError("gamma must lie in [0, 1)")
        self.state_dim, self.action_dim, self.feature_dim = state_dim, action_dim, feature_dim
        self.gamma = gamma
        self.feature_mode = feature_mode
        psi_hidden = tuple(hidden) if psi_hidden is None else tuple(psi_hidden)
        d = feature_dim
        self.params = ParameterSet(seed)
        self.encoder = (Mlp([state_dim, *hidden, d], params=self.params, prefix="phi.")
                        if feature_mode == "learned" else None)
        self.sf_head = Mlp([d, *psi_hidden, d], params=self.params, prefix="psi.")
        self.omega_head = Mlp([d + action_dim + 1, *hidden, d], params=self.params, prefix="omega.")
        self.recon_head = Mlp([d + action_dim, *hidden, state_dim], params=self.params, prefix="recon.")
        self.target = ParameterSet(seed)
        for name, e in self.params.items():
            if name.startswith("psi."):
                self.target.add(name, e.shape, values=e.values.copy())
        self.target_head = Mlp.__new__(Mlp)
        self.target_head.__dict__.update(self.sf_head.__dict__)
        self.target_head.params = self.target

    # -- forward -----------------------------------------------------------

    def phi(self, s) -> Tensor:
        return T.as_tensor(s) if self.encoder is None else self.encoder(s)

    def phi_np(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        return s if self.encoder is None else self.encoder.predict(s)

    def _check(self, b: Batch) -> None:
        n = len(b)
        if n == 0:
            raise ArgumentError("empty batch")
        if b.states.shape != (n, self.state_dim) or b.next_states.shape != (n, self.state_dim):
            raise DimensionError(f"states must be (n, {self.state_dim})")
        if b.actions.shape != (n, self.action_dim):
            raise DimensionError(f"actions must be (n, {self.action_dim})")

    def soft_update_target(self, tau: float) -> None:
        for name, e in self.target.items():
            e.values *= 1.0 - tau
            e.values += tau * self.params[name].values

    def psi_target_gap(self) -> float:
        return float(np.sqrt(sum(np.sum((e.values - self.params[n].values) ** 2)
                                 for n, e in self.target.items())))

    def features(self, states, actions, rewards) -> tuple[np.ndarray, np.ndarray]:
        """Tape-free (psi, omega) for arrays of transitions."""
        phi = self.phi_np(states)
        psi = self.sf_head.predict(phi)
        x = np.concatenate([phi, np.asarray(actions, float), np.asarray(rewards, float)[:, None]], axis=1)
        return psi, self.omega_head.predict(x)

    def save(self, stem) -> None:
        save_checkpoint(self.params, f"{stem}.ckpt")
        save_checkpoint(self.target, f"{stem}_target.ckpt")

    def load(self, stem) -> None:
        self.params.assign(load_checkpoint(f"{stem}.ckpt"))
        self.target.assign(load_checkpoint(f"{stem}_target.ckpt"))


def sf_forward(net: SfNetwork, t) -> SfOutputs:
    """(phi, psi, omega, s_next_pred) for one Transition or a Batch (rows)."""
    b = Batch.from_transition(t) if not isinstance(t, Batch) else t
    net._check(b)
    phi = net.phi_np(b.states)
    psi = net.sf_head.predict(phi)
    omega = net.omega_head.predict(np.concatenate([phi, b.actions, b.rewards[:, None]], axis=1))
    s_hat = net.recon_head.predict(np.concatenate([phi, b.actions], axis=1))
    out = SfOutputs(phi, psi, omega, s_hat)
    if not isinstance(t, Batch):
        out = SfOutputs(phi[0], psi[0], omega[0], s_hat[0])
    return out


# -- losses ------------------------------------------------------------------


def _omega(net: SfNetwork, phi: Tensor, b: Batch) -> Tensor:
    return net.omega_head(T.concat([phi, b.actions, b.rewards[:, None]], axis=1))


def _reward_term(net: SfNetwork, phi: Tensor, omega: Tensor, b: Batch) -> Tensor:
    return mse(T.tsum(phi * omega, axis=1), b.rewards)


def _recon_term(net: SfNetwork, phi: Tensor, b: Batch) -> Tensor:
    return mse(net.recon_head(T.concat([phi, b.actions], axis=1)), b.next_states)


def td_targets(net: SfNetwork, b: Batch, terminal_cut: bool = False) -> np.ndarray:
    """phi(s) + gamma * psi_target(phi(s')); constants with respect to the tape."""
    phi = net.phi_np(b.states)
    boot = net.target_head.predict(net.phi_np(b.next_states))
    if terminal_cut:
        boot = boot * (~b.dones.astype(bool))[:, None]
    return phi + net.gamma * boot


def _td_term(net: SfNetwork, phi: Tensor, b: Batch, terminal_cut: bool,
             into_features: bool = False) -> Tensor:
    source = phi if into_features else phi.detach()
    return mse(net.sf_head(source), td_targets(net, b, terminal_cut))


def loss_reward(net: SfNetwork, batch) -> Tensor:
    b = Batch.of(batch)
    net._check(b)
    phi = net.phi(b.states)
    return _reward_term(net, phi, _omega(net, phi, b), b)


def loss_recon(net: SfNetwork, batch) -> Tensor:
    b = Batch.of(batch)
    net._check(b)
    return _recon_term(net, net.phi(b.states), b)


def loss_td(net: SfNetwork, batch, terminal_cut: bool = False, into_features: bool = False) -> Tensor:
    """TD regression of psi(s); with ``into_features`` the gradient also reaches phi."""
    b = Batch.of(batch)
    net._check(b)
    return _td_term(net, net.phi(b.states), b, terminal_cut, into_features)


def loss_mmd_omega(net: SfNetwork, per_task_batches: Sequence, cfg: KernelConfig | None = None) -> Tensor:
    if len(per_task_batches) < 2:
        raise ArgumentError("the reward-weight MMD term needs at least 2 tasks")
    groups = []
    for batch in per_task_batches:
        b = Batch.of(batch)
        net._check(b)
        groups.append(_omega(net, net.phi(b.states), b))
    return pairwise_separation_loss(groups, "separate", cfg)


# -- training ----------------------------------------------------------------


@dataclass
class SfTrainConfig:
    steps: int = 20_000
    batch: int = 64
    lr: float = 1e-3
    tau: float = 0.01
    weights: dict = field(default_factory=lambda: {t: 1.0 for t in TERMS})
    enabled: dict = field(default_factory=lambda: {t: True for t in TERMS})
    bandwidth: object = "median"
    terminal_cut: bool = False
    td_into_features: bool = False
    log_every: int = 10


@dataclass
class SfTrainReport:
    rows: list  # (step, L_r, L_recons, L_td, L_mmd, L_total)
    opt: AdamState

    HEADER = "step,L_r,L_recons,L_td,L_mmd,L_total"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self.HEADER + "\n")
        for row in self.rows:
            buf.write(",".join([str(row[0]), *(format_real(v) for v in row[1:])]) + "\n")
        return buf.getvalue()

    def final(self, term: str) -> float:
        return self.rows[-1][1 + TERMS.index(term)] if term in TERMS else self.rows[-1][-1]


def sf_losses(net: SfNetwork, per_task: Sequence[Batch], cfg: SfTrainConfig) -> dict:
    """Enabled loss terms for one step; one shared encoder pass over all tasks."""
    b = Batch.concat(per_task)
    phi = net.phi(b.states)
    terms: dict = {}
    on = cfg.enabled
    omega = _omega(net, phi, b) if (on["r"] or on["mmd"]) else None
    if on["r"]:
        terms["r"] = _reward_term(net, phi, omega, b)
    if on["recons"]:
        terms["recons"] = _recon_term(net, phi, b)
    if on["td"]:
        terms["td"] = _td_term(net, phi, b, cfg.terminal_cut, cfg.td_into_features)
    if on["mmd"]:
        if len(per_task) < 2:
            raise ArgumentError("the reward-weight MMD term needs at least 2 tasks")
        cuts = np.cumsum([len(p) for p in per_task])
        groups, start = [], 0
        for end in cuts:
            groups.append(omega[start:end])
            start = end
        terms["mmd"] = pairwise_separation_loss(groups, "separate", KernelConfig.parse(cfg.bandwidth))
    return terms


def sample_batches(datasets: Sequence, batch: int, rng: np.random.Generator) -> list[Batch]:
    return [Batch.of(ds, rng.integers(len(ds), size=batch)) for ds in datasets]


def train_sf(net: SfNetwork, datasets: Sequence, cfg: SfTrainConfig, seed: int = 0,
             start_step: int = 0, opt: AdamState | None = None) -> SfTrainReport:
    """Minimize the weighted sum of enabled terms; minibatch RNG is keyed by (seed, step).

    Passing ``start_step`` and the saved ``opt`` continues a run exactly.
    """
    if not datasets or any(len(ds) == 0 for ds in datasets):
        raise ArgumentError("train_sf needs non-empty datasets")
    if cfg.enabled.get("mmd") and len(datasets) < 2:
        raise ArgumentError("the reward-weight MMD term needs at least 2 tasks")
    opt = opt or AdamState.for_params(net.params, learning_rate=cfg.lr)
    rows = []
    active = [t for t in TERMS if cfg.enabled.get(t)]
    for step in range(start_step, cfg.steps):
        rng = np.random.default_rng([int(seed), 2, step])
        per_task = sample_batches(datasets, cfg.batch, rng)
        terms = sf_losses(net, per_task, cfg)
        values = {}
        for name, val in terms.items():
            v = val.item()
            if not np.isfinite(v):
                raise NumericError(f"SF loss term {name!r} is non-finite at step {step}")
            values[name] = v
        if active:
            total = None
            for name in active:
                weighted = terms[name] * cfg.weights.get(name, 1.0)
                total = weighted if total is None else total + weighted
            backward(total)
            adam_step(net.params, opt)
            net.soft_update_target(cfg.tau)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            vals = [values.get(t, 0.0) for t in TERMS]
            rows.append((step, *vals, sum(cfg.weights.get(t, 1.0) * values.get(t, 0.0) for t in active)))
    return SfTrainReport(rows, opt)
