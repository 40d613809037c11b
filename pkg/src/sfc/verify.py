"""Finite-difference verification of every trainable loss on tiny instances."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .context import ContextEncoder
from .diffkit import GradCheckReport, GruCell, Mlp, ParameterSet, grad_check, gru_sequence, mse
from .mmd import KernelConfig, median_bandwidth, mmd2
from .policy import ContextPolicy, TaskBatch, loss_bc, loss_context_sep
from .sfnet import Batch, SfNetwork, loss_mmd_omega, loss_recon, loss_reward, loss_td

TOLERANCE = 1e-4


def _batch(rng: np.random.Generator, n: int, sd: int = 2, ad: int = 2) -> Batch:
    return Batch(rng.normal(size=(n, sd)), rng.uniform(-1, 1, (n, ad)), rng.normal(size=n),
                 rng.normal(size=(n, sd)), np.zeros(n, dtype=bool))


def _cases(seed: int) -> list[tuple[str, Callable[[], GradCheckReport]]]:
    rng = np.random.default_rng(seed)
    cases = []

    ps = ParameterSet(seed)
    ps.add("pred", (4, 3))
    target = rng.normal(size=(4, 3))
    cases.append(("mse", lambda: grad_check(lambda: mse(ps.tensor("pred"), target), ps)))

    mlp = Mlp([3, 5, 2], seed=seed)
    x_mlp = rng.normal(size=(4, 3))
    cases.append(("mlp", lambda: grad_check(lambda: mse(mlp(x_mlp), np.zeros((4, 2))), mlp.params)))

    gps = ParameterSet(seed)
    cell = GruCell(3, 4, gps, prefix="gru.")
    xs = rng.normal(size=(2, 6, 3))
    cases.append(("gru_sequence", lambda: grad_check(
        lambda: (gru_sequence(cell, xs) ** 2).sum(), gps)))

    # d = 4, batch 4
    net = SfNetwork(2, 2, 4, hidden=(6,), seed=seed)
    b = _batch(rng, 4)
    groups = [_batch(rng, 4) for _ in range(3)]
    omegas = [net.features(g.states, g.actions, g.rewards)[1] for g in groups]
    frozen = KernelConfig(median_bandwidth(np.vstack(omegas)))
    psi_names = [n for n in net.params.names() if n.startswith("psi.")]
    cases += [
        ("L_r", lambda: grad_check(lambda: loss_reward(net, b), net.params)),
        ("L_recons", lambda: grad_check(lambda: loss_recon(net, b), net.params)),
        # the TD target is a constant, so only the online psi head carries gradient
        ("L_td", lambda: grad_check(lambda: loss_td(net, b), net.params, names=psi_names)),
        # shift invariance leaves the omega output bias with a ~1e-16 true gradient;
        # the wider step keeps difference noise below the relative-error floor
        ("L_mmd", lambda: grad_check(lambda: loss_mmd_omega(net, groups, frozen), net.params, h=1e-3)),
    ]

    X, Y = rng.normal(size=(3, 2)), rng.normal(size=(4, 2)) + 0.5
    mps = ParameterSet(seed)
    mps.add("X", (3, 2), values=X.ravel())
    mps.add("Y", (4, 2), values=Y.ravel())
    cases.append(("mmd2", lambda: grad_check(
        lambda: mmd2(mps.tensor("X"), mps.tensor("Y"), KernelConfig(1.0)), mps)))

    enc = ContextEncoder(4, 3, seed=seed)
    pol = ContextPolicy(2, 3, 2, hidden=(6,), seed=seed)
    tb = [TaskBatch(rng.normal(size=(2, 5, 8)), rng.normal(size=(3, 2)), rng.uniform(-1, 1, (3, 2)))
          for _ in range(2)]
    joint = ParameterSet.union(pol.params, enc.params)
    cases += [
        ("L_bc", lambda: grad_check(lambda: loss_bc(pol, enc, tb), joint)),
        ("L_mmd2", lambda: grad_check(lambda: loss_context_sep(enc, tb, cfg=KernelConfig(0.5)), enc.params)),
    ]
    return cases


def gradient_suite(seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    """(name, report) for each loss term; every report uses tolerance ``TOLERANCE``."""
    out = []
    for name, run in _cases(seed):
        rep = run()
        rep.tolerance = TOLERANCE
        out.append((name, rep))
    return out
