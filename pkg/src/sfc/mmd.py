"""Gaussian-kernel maximum mean discrepancy and pairwise group separation losses.

The estimator keeps the diagonal terms of the within-set double sums (the
biased V-statistic), so ``mmd2(X, X) == 0`` exactly for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import pdist

from .diffkit import tensor as T
from .diffkit.tensor import Tensor, as_tensor
from .errors import ArgumentError, DimensionError

SIGNS = ("separate", "attract")


@dataclass(frozen=True)
class KernelConfig:
    """``bandwidth`` is a positive float or ``"median"`` (recomputed per call)."""

    bandwidth: Union[float, str] = "median"

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ArgumentError(f"bandwidth must be positive or 'median', got {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ArgumentError(f"bandwidth must be positive, got {self.bandwidth}")

    @classmethod
    def parse(cls, value) -> "KernelConfig":
        if isinstance(value, KernelConfig):
            return value
        if isinstance(value, str) and value != "median":
            value = float(value)
        return cls(value)


def gaussian_kernel(x, y, sigma: float) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    if not sigma > 0:
        raise ArgumentError("sigma must be positive")
    d = x - y
    return float(np.exp(-(d @ d) / (2.0 * sigma * sigma)))


def median_bandwidth(points: np.ndarray) -> float:
    """Median pairwise Euclidean distance over distinct index pairs; 1.0 if degenerate."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 2:
        return 1.0
    med = float(np.median(pdist(pts)))
    return med if med > 0 else 1.0


def _as_set(X) -> Tensor:
    X = as_tensor(X)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise DimensionError(f"sample sets must be 2-D (n, dim), got {X.shape}")
    if X.shape[0] == 0:
        raise ArgumentError("empty sample set")
    return X


def _resolve_sigma(cfg: KernelConfig | None, pooled: np.ndarray) -> float:
    cfg = cfg or KernelConfig()
    return median_bandwidth(pooled) if cfg.bandwidth == "median" else float(cfg.bandwidth)


def _kernel_matrix(X: Tensor, Y: Tensor, sigma: float) -> Tensor:
    n, m, d = X.shape[0], Y.shape[0], X.shape[1]
    diff = X.reshape(n, 1, d) - Y.reshape(1, m, d)
    sq = T.tsum(T.square(diff), axis=-1)
    return T.exp(sq * (-1.0 / (2.0 * sigma * sigma)))


def mmd2(X, Y, cfg: KernelConfig | None = None) -> Tensor:
    """Squared MMD between sample sets (rows), differentiable w.r.t. both sets."""
    X, Y = _as_set(X), _as_set(Y)
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"sample dims differ: {X.shape[1]} vs {Y.shape[1]}")
    sigma = _resolve_sigma(cfg, np.concatenate([X.value, Y.value]))
    kxx = T.mean(_kernel_matrix(X, X, sigma))
    kxy = T.mean(_kernel_matrix(X, Y, sigma))
    kyy = T.mean(_kernel_matrix(Y, Y, sigma))
    return kxx - 2.0 * kxy + kyy


def pairwise_separation_loss(groups: Sequence, sign: str = "separate",
                             cfg: KernelConfig | None = None) -> Tensor:
    """Sum of MMD^2 over ordered group pairs i != j; negated when ``sign='separate'``.

    All groups are pooled into one kernel matrix and the pair terms are read off
    its block means, so the cost is one N x N kernel for N pooled points.
    """
    if sign not in SIGNS:
        raise ArgumentError(f"sign must be one of {SIGNS}, got {sign!r}")
    if len(groups) < 2:
        raise ArgumentError(f"need at least 2 groups, got {len(groups)}")
    sets = [_as_set(g) for g in groups]
    dim = sets[0].shape[1]
    if any(s.shape[1] != dim for s in sets):
        raise DimensionError("groups have different dimensions")
    pooled = T.concat(sets, axis=0)
    sigma = _resolve_sigma(cfg, pooled.value)

    sizes = [s.shape[0] for s in sets]
    G, N = len(sets), sum(sizes)
    avg = np.zeros((G, N))
    start = 0
    for i, n in enumerate(sizes):
        avg[i, start:start + n] = 1.0 / n
        start += n

    sqn = T.tsum(T.square(pooled), axis=1)
    gram = pooled @ pooled.T
    sq = sqn.reshape(N, 1) + sqn.reshape(1, N) - 2.0 * gram
    K = T.exp(sq * (-1.0 / (2.0 * sigma * sigma)))
    block = avg @ K @ avg.T  # block[i, j] = mean kernel between groups i and j
    diag = T.tsum(block * np.eye(G))
    off = T.tsum(block * (1.0 - np.eye(G)))
    total = 2.0 * (G - 1) * diag - 2.0 * off
    return -total if sign == "separate" else total
