"""Recurrent context encoder: sequences of (psi, omega) pairs -> context variable z.

The encoder is a GRU whose final hidden state is the context. In ``"sf"`` mode the
per-transition input is ``concat(psi(s), omega(phi(s), a, r))`` from a frozen
successor-feature network; ``"raw"`` mode feeds ``concat(s, a, r, s')`` instead and
exists as a comparison baseline.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .diffkit import GruCell, ParameterSet, gru_sequence
from .diffkit.params import format_real, load_checkpoint, save_checkpoint
from .diffkit.tensor import Tensor
from .errors import ArgumentError, DimensionError, ParseError

ENCODER_MODES = ("sf", "raw")


@dataclass
class ContextVariable:
    z: np.ndarray
    source_task_id: Optional[int] = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.z)):
            raise ArgumentError("context variable must be finite")


class ContextEncoder:
    """GRU encoder g with parameters under the ``gru.`` prefix of ``params``."""

    def __init__(self, feature_dim: int, z_dim: int = 8, mode: str = "sf",
                 state_dim: int | None = None, action_dim: int | None = None, seed: int = 0):
        if mode not in ENCODER_MODES:
            raise ArgumentError(f"encoder mode must be one of {ENCODER_MODES}")
        if mode == "sf":
            input_dim = 2 * int(feature_dim)
        else:
            if state_dim is None or action_dim is None:
                raise ArgumentError("raw encoder needs state_dim and action_dim")
            input_dim = 2 * int(state_dim) + int(action_dim) + 1
        self.mode = mode
        self.feature_dim = int(feature_dim)
        self.z_dim = int(z_dim)
        self.input_dim = input_dim
        self.params = ParameterSet(seed)
        self.gru = GruCell(input_dim, z_dim, self.params, prefix="gru.")

    def save(self, path) -> None:
        save_checkpoint(self.params, path)

    def load(self, path) -> None:
        self.params.assign(load_checkpoint(path))


def transition_inputs(sf, enc: ContextEncoder, states, actions, rewards, next_states) -> np.ndarray:
    """Per-transition encoder inputs (n, enc.input_dim); ``sf`` is only read."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    rewards = np.atleast_1d(np.asarray(rewards, dtype=np.float64))
    if enc.mode == "raw":
        next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
        x = np.concatenate([states, actions, rewards[:, None], next_states], axis=1)
    else:
        if sf.feature_dim != enc.feature_dim:
            raise DimensionError(f"encoder expects d={enc.feature_dim}, SF network has d={sf.feature_dim}")
        psi, omega = sf.features(states, actions, rewards)
        x = np.concatenate([psi, omega], axis=1)
    if x.shape[1] != enc.input_dim:
        raise DimensionError(f"encoder input width {enc.input_dim}, got {x.shape[1]}")
    return x


def dataset_inputs(sf, enc: ContextEncoder, ds) -> np.ndarray:
    return transition_inputs(sf, enc, ds.states, ds.actions, ds.rewards, ds.next_states)


def _as_sequence(seq) -> np.ndarray:
    if isinstance(seq, np.ndarray):
        x = np.asarray(seq, dtype=np.float64)
    else:
        seq = list(seq)
        if not seq:
            raise ArgumentError("cannot encode an empty sequence")
        x = np.stack([np.concatenate([np.ravel(psi), np.ravel(om)]) for psi, om in seq])
    if x.ndim != 2 or len(x) == 0:
        raise ArgumentError("sequence must be a non-empty (length, width) array")
    return x


def encode_tensor(enc: ContextEncoder, windows) -> Tensor:
    """Taped batch encode: ``windows`` is (B, C, input_dim); returns z as (B, z_dim)."""
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim != 3 or w.shape[1] == 0:
        raise ArgumentError(f"windows must be (batch, length>0, width), got {w.shape}")
    if w.shape[2] != enc.input_dim:
        raise DimensionError(f"encoder input width {enc.input_dim}, got {w.shape[2]}")
    return gru_sequence(enc.gru, w)


def hidden_states(enc: ContextEncoder, seq) -> np.ndarray:
    """Hidden state after each prefix of ``seq``: row t encodes ``seq[:t+1]``."""
    x = _as_sequence(seq)
    if x.shape[1] != enc.input_dim:
        raise DimensionError(f"encoder input width {enc.input_dim}, got {x.shape[1]}")
    h = np.zeros(enc.z_dim)
    out = np.empty((len(x), enc.z_dim))
    for t, xt in enumerate(x):
        h = enc.gru.predict_step(h, xt)
        out[t] = h
    return out


def encode_array(enc: ContextEncoder, windows) -> np.ndarray:
    """Tape-free batch encode of (B, C, width) windows."""
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim != 3 or w.shape[2] != enc.input_dim:
        raise DimensionError(f"windows must be (batch, length, {enc.input_dim}), got {w.shape}")
    h = np.zeros((w.shape[0], enc.z_dim))
    for t in range(w.shape[1]):
        h = enc.gru.predict_step(h, w[:, t])
    return h


def encode(enc: ContextEncoder, seq, source_task_id: int | None = None) -> ContextVariable:
    """Final GRU state after consuming ``seq`` (list of (psi, omega) pairs or an array) in order."""
    return ContextVariable(hidden_states(enc, seq)[-1], source_task_id)


def context_from_transitions(sf, enc: ContextEncoder, transitions, max_len: int = 64) -> ContextVariable:
    """Encode the first ``min(max_len, len)`` transitions (a TaskDataset or list of Transition)."""
    if max_len <= 0:
        raise ArgumentError("max_len must be positive")
    if hasattr(transitions, "states"):
        n = min(max_len, len(transitions))
        if n == 0:
            raise ArgumentError("no transitions to encode")
        ds = transitions
        x = transition_inputs(sf, enc, ds.states[:n], ds.actions[:n], ds.rewards[:n], ds.next_states[:n])
        tid = ds.task_id
    else:
        ts = list(transitions)[:max_len]
        if not ts:
            raise ArgumentError("no transitions to encode")
        x = transition_inputs(sf, enc, np.stack([t.s for t in ts]), np.stack([t.a for t in ts]),
                              np.array([t.r for t in ts]), np.stack([t.s_next for t in ts]))
        tid = ts[0].task_id
    return encode(enc, x, tid)


def window_starts(n: int, length: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if n < length:
        raise ArgumentError(f"dataset of {n} transitions is shorter than the window {length}")
    return rng.integers(0, n - length + 1, size=count)


def episode_starts(ds, length: int) -> np.ndarray:
    """Start rows of the episodes in ``ds`` that hold at least ``length`` transitions."""
    starts = np.array([a for a, b in ds.episode_ranges() if b - a >= length], dtype=np.int64)
    if starts.size == 0:
        raise ArgumentError(f"no episode holds {length} transitions")
    return starts


def gather_windows(inputs: np.ndarray, starts: Sequence[int], length: int,
                   shuffle_rng: np.random.Generator | None = None) -> np.ndarray:
    """(len(starts), length, width) contiguous slices; optional per-window order shuffle."""
    idx = np.asarray(starts)[:, None] + np.arange(length)[None, :]
    if shuffle_rng is not None:
        idx = shuffle_rng.permuted(idx, axis=1)
    return inputs[idx]


# -- embedding export ----------------------------------------------------------


def pca_2d(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project rows of ``Z`` on the top two principal axes.

    Returns (projection (n, 2), components (2, z_dim)). Each component's sign is
    fixed so its largest-magnitude entry is positive, which makes output
    deterministic across LAPACK builds.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or len(Z) < 2:
        raise ArgumentError("PCA needs at least 2 row vectors")
    centered = Z - Z.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    if len(comps) < 2:
        comps = np.vstack([comps, np.zeros((2 - len(comps), Z.shape[1]))])
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return centered @ comps.T, comps


def embeddings_csv(task_ids: Sequence[int], Z: np.ndarray) -> str:
    Z = np.atleast_2d(Z)
    buf = io.StringIO()
    buf.write(",".join(["task_id", *(f"z{i}" for i in range(Z.shape[1]))]) + "\n")
    for tid, z in zip(task_ids, Z):
        buf.write(",".join([str(int(tid)), *(format_real(v) for v in z)]) + "\n")
    return buf.getvalue()


def projection_csv(task_ids: Sequence[int], P: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write("task_id,pc0,pc1\n")
    for tid, p in zip(task_ids, P):
        buf.write(f"{int(tid)},{format_real(p[0])},{format_real(p[1])}\n")
    return buf.getvalue()


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    lines = open(path, encoding="utf-8").read().splitlines()
    if not lines or not lines[0].startswith("task_id,"):
        raise ParseError("missing embeddings header", line=1, path=path)
    width = len(lines[0].split(","))
    ids, rows = [], []
    for no, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != width:
            raise ParseError(f"expected {width} fields, got {len(parts)}", line=no, path=path)
        try:
            ids.append(int(parts[0]))
            rows.append([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise ParseError(str(exc), line=no, path=path) from None
    return np.array(ids, dtype=np.int64), np.array(rows, dtype=np.float64).reshape(len(ids), width - 1)


# -- separation diagnostics ----------------------------------------------------


def nearest_centroid_accuracy(train_z: np.ndarray, train_y, test_z: np.ndarray, test_y) -> float:
    """Fraction of ``test_z`` rows whose nearest per-label centroid of ``train_z`` has the right label."""
    train_y, test_y = np.asarray(train_y), np.asarray(test_y)
    labels = np.unique(train_y)
    cents = np.stack([train_z[train_y == k].mean(axis=0) for k in labels])
    d = ((test_z[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(labels[np.argmin(d, axis=1)] == test_y))
