"""End-to-end acceptance checks, one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from sfc import envs, meta
from sfc.config import RunConfig
from sfc.expert_data import collect, expert_policy, zero_policy
from sfc.mmd import KernelConfig, mmd2
from sfc.sfnet import SfNetwork, SfTrainConfig, loss_reward, train_sf
from sfc.verify import TOLERANCE, gradient_suite

CONFIGS = Path(__file__).parent.parent / "configs"


def _verdict(line, n, ok, detail):
    line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


def _pipeline(cfg_name, out, overrides=(), adapt=False):
    cfg = RunConfig.load(CONFIGS / cfg_name).with_overrides(list(overrides))
    layout = meta.Layout.for_config(cfg, str(out))
    t0 = time.perf_counter()
    art = meta.run_training_pipeline(cfg, layout)
    results = meta.stage_adapt(cfg, layout) if adapt else None
    return cfg, layout, art, results, time.perf_counter() - t0


# -- 1: TD-trained successor features vs the closed form ---------------------------------


def test_c1_ring_successor_features(acceptance_line):
    t0 = time.perf_counter()
    fam = envs.make_family("tabular_ring", n_states=5, gamma=0.9)
    tasks = envs.sample_tasks(fam, 2, seed=0)
    sets = [collect(fam, t, zero_policy(fam, t), 640, seed=i) for i, t in enumerate(tasks)]
    net = SfNetwork(5, 1, 5, hidden=(8,), psi_hidden=(), gamma=0.9, feature_mode="identity")
    off = {"r": False, "recons": False, "td": True, "mmd": False}
    train_sf(net, sets, SfTrainConfig(steps=8000, batch=32, tau=0.05, enabled=off), seed=0)
    # oracle: truncated Neumann series sum_t gamma^t P^t Phi for the deterministic ring shift
    P, psi_star, term = np.roll(np.eye(5), 1, axis=1), np.zeros((5, 5)), np.eye(5)
    for _ in range(600):
        psi_star += term
        term = 0.9 * term @ P
    err = np.abs(net.sf_head.predict(np.eye(5)) - psi_star).max()
    dt = time.perf_counter() - t0
    assert _verdict(acceptance_line, 1, err <= 1e-2 and dt < 30,
                    f"L_inf {err:.2e} <= 1e-2, 8000 steps, {dt:.1f}s < 30s")


# -- 2: reward decomposition on linear-reward tasks ---------------------------------------


def test_c2_reward_decomposition(acceptance_line):
    t0 = time.perf_counter()
    fam = envs.make_family("point_goal")
    tasks = envs.sample_tasks(fam, 4, seed=0)
    rng = np.random.default_rng(0)
    A, W = rng.normal(size=(4, 2)), rng.normal(size=(4, 4))  # phi*(s) = A s, omega*_k = W[k]

    def relabel(ds, w):
        ds.rewards = (ds.states @ A.T) @ w
        return ds

    train = [relabel(collect(fam, t, expert_policy(fam, t), 2000, seed=1), W[k]) for k, t in enumerate(tasks)]
    test = [relabel(collect(fam, t, expert_policy(fam, t), 640, seed=2), W[k]) for k, t in enumerate(tasks)]
    net = SfNetwork(2, 2, 16, hidden=(64,), gamma=fam.gamma, seed=0)
    train_sf(net, train, SfTrainConfig(steps=10_000, batch=64, bandwidth=1.0, log_every=1000), seed=0)
    held = float(np.mean([loss_reward(net, d).item() for d in test]))
    dt = time.perf_counter() - t0
    assert _verdict(acceptance_line, 2, held < 1e-3 and dt < 120,
                    f"held-out L_r {held:.2e} < 1e-3, {dt:.1f}s < 120s")


# -- 3: MMD estimator vs triple loop ------------------------------------------------------


def _mmd2_loop(X, Y, sigma):
    k = lambda a, b: np.exp(-np.sum((a - b) ** 2) / (2 * sigma ** 2))
    n, m = len(X), len(Y)
    xx = sum(k(X[i], X[j]) for i in range(n) for j in range(n)) / n ** 2
    yy = sum(k(Y[i], Y[j]) for i in range(m) for j in range(m)) / m ** 2
    xy = sum(k(X[i], Y[j]) for i in range(n) for j in range(m)) / (n * m)
    return xx + yy - 2 * xy


def test_c3_mmd_estimator(acceptance_line):
    rng = np.random.default_rng(0)
    worst_oracle = worst_self = worst_sym = 0.0
    for _ in range(50):
        n, m, d = rng.integers(1, 11), rng.integers(1, 11), rng.integers(1, 5)
        X, Y = rng.normal(size=(n, d)), rng.normal(size=(m, d)) + rng.normal()
        sigma = float(rng.uniform(0.3, 3.0))
        cfg = KernelConfig(sigma)
        v = mmd2(X, Y, cfg).item()
        worst_oracle = max(worst_oracle, abs(v - _mmd2_loop(X, Y, sigma)))
        worst_sym = max(worst_sym, abs(v - mmd2(Y, X, cfg).item()))
        worst_self = max(worst_self, abs(mmd2(X, X, cfg).item()))
    ok = worst_oracle <= 1e-12 and worst_sym <= 1e-12 and worst_self <= 1e-12
    assert _verdict(acceptance_line, 3, ok,
                    f"50 instances: oracle {worst_oracle:.1e}, symmetry {worst_sym:.1e}, self {worst_self:.1e}")


# -- 4: finite-difference gradient suite --------------------------------------------------


def test_c4_gradient_suite(acceptance_line):
    t0 = time.perf_counter()
    reports = gradient_suite(seed=0)
    dt = time.perf_counter() - t0
    worst_name, worst = max(((n, r.max_rel_error) for n, r in reports), key=lambda p: p[1])
    ok = all(r.passed for _, r in reports) and dt < 60
    assert _verdict(acceptance_line, 4, ok,
                    f"{len(reports)} terms, worst {worst_name} {worst:.1e} <= {TOLERANCE:.0e}, {dt:.1f}s < 60s")


# -- 5 and 7: context separation and its MMD ablation ---------------------------------------


@pytest.fixture(scope="module")
def separation_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("separation")
    runs = {}
    for name, extra in (("with_mmd", []), ("no_mmd", ["sf.use_mmd=false", "policy.use_mmd2=false"])):
        _, _, art, _, dt = _pipeline("separation.cfg", out, ["run.name=" + name, *extra])
        runs[name] = (meta.probe_separation(art), dt)
    return runs


def test_c5_context_separation(acceptance_line, separation_runs):
    rep, dt = separation_runs["with_mmd"]
    ok = rep.accuracy >= 0.9 and rep.inter_mmd2 > rep.intra_mmd2 and dt < 600
    assert _verdict(acceptance_line, 5, ok,
                    f"accuracy {rep.accuracy:.3f} >= 0.9, inter MMD2 {rep.inter_mmd2:.3f} > intra "
                    f"{rep.intra_mmd2:.3f}, {dt:.0f}s < 600s")


def test_c6_adaptation(acceptance_line, tmp_path):
    t0 = time.perf_counter()
    per_seed, zero_scores = [], []
    for seed in (0, 1, 2):
        *_, results, _ = _pipeline("adapt.cfg", tmp_path, [f"run.seed={seed}", f"run.name=s{seed}"], adapt=True)
        per_seed.append(np.mean([r.normalized_score for r in results]))
        zero_scores += [meta.normalized_score([r.zero_return], r.expert_return, r.zero_return) for r in results]
    dt = time.perf_counter() - t0
    mean = float(np.mean(per_seed))
    ok = mean >= 0.8 and all(z == 0.0 for z in zero_scores) and dt < 600
    assert _verdict(acceptance_line, 6, ok,
                    f"normalized score {mean:.3f} +/- {np.std(per_seed):.3f} over seeds "
                    f"{np.round(per_seed, 3).tolist()} >= 0.8, zero-action 0, {dt:.0f}s < 600s")


def test_c7a_mmd_ablation_does_not_help(acceptance_line, separation_runs):
    on, off = separation_runs["with_mmd"][0].accuracy, separation_runs["no_mmd"][0].accuracy
    assert _verdict(acceptance_line, "7a", off - on <= 0.05,
                    f"accuracy without MMD {off:.3f} - with MMD {on:.3f} <= 0.05")


def test_c7b_sf_context_beats_raw_on_fwd_back(acceptance_line, tmp_path):
    acc = {}
    for mode in ("sf", "raw"):
        _, _, art, _, _ = _pipeline("fwd_back.cfg", tmp_path, [f"context.encoder={mode}", f"run.name={mode}"])
        acc[mode] = meta.probe_separation(art).accuracy
    drop = acc["sf"] - acc["raw"]
    assert _verdict(acceptance_line, "7b", drop >= 0.10,
                    f"fwd/back accuracy sf {acc['sf']:.3f} vs raw {acc['raw']:.3f}, drop {drop:.3f} >= 0.10")


# -- 8: reproducibility -------------------------------------------------------------------


def test_c8_smoke_pipeline_reproducible(acceptance_line, tmp_path):
    roots, times = [], []
    for name in ("a", "b"):
        cfg = RunConfig.load(CONFIGS / "smoke.cfg")
        layout = meta.Layout.for_config(cfg, str(tmp_path / name))
        t0 = time.perf_counter()
        meta.run_training_pipeline(cfg, layout)
        meta.stage_adapt(cfg, layout)
        meta.stage_embeddings(cfg, layout)
        times.append(time.perf_counter() - t0)
        roots.append(layout.root)
    csvs = sorted(p.relative_to(roots[0]) for p in itertools.chain(
        roots[0].glob("curves/*.csv"), roots[0].glob("results/*.csv")))
    same = all((roots[0] / p).read_bytes() == (roots[1] / p).read_bytes() for p in csvs)
    ok = same and len(csvs) >= 5 and max(times) < 60
    assert _verdict(acceptance_line, 8, ok,
                    f"{len(csvs)} CSVs byte-identical: {same}, slowest run {max(times):.1f}s < 60s")
