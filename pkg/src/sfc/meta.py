"""Test-time adaptation by candidate-context rollouts, plus evaluation helpers.

Adaptation never updates parameters: each training task's context is tried on
the new task for a rollout, the best-returning trajectory is re-encoded into a
fresh context, and the policy is evaluated under that context.
"""

from __future__ import annotations

import functools
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import envs, plotting
from .context import (ContextEncoder, ContextVariable, context_from_transitions, dataset_inputs,
                      embeddings_csv, encode_array, nearest_centroid_accuracy, pca_2d,
                      projection_csv)
from .diffkit import AdamState
from .diffkit.params import format_real, save_checkpoint
from .envs import EnvFamily, TaskSpec
from .errors import ArgumentError, ParseError, SfcError, StateError
from .expert_data import (TaskDataset, collect, episode_initial_states, expert_policy, load_dataset,
                          save_dataset, train_single_task, zero_policy)
from .mmd import mmd2
from .policy import ContextPolicy, policy_fn, train_policy
from .sfnet import SfNetwork, train_sf


@dataclass
class Artifacts:
    """Everything adaptation reads: the family, training data, and the three trained models."""

    family: EnvFamily
    datasets: list
    sf: object
    encoder: ContextEncoder
    policy: ContextPolicy
    context_len: int = 64

    @property
    def tasks(self) -> list[TaskSpec]:
        return [ds.task for ds in self.datasets]


@dataclass
class AdaptationResult:
    task: TaskSpec
    candidate_returns: np.ndarray
    chosen_k: int
    z_prime: ContextVariable
    eval_returns: list
    normalized_score: float
    expert_return: float
    zero_return: float


def normalized_score(returns, expert_return: float, random_return: float) -> float:
    """(mean(returns) - random) / (expert - random)."""
    denom = float(expert_return) - float(random_return)
    if not denom > 0:
        raise ArgumentError(f"expert return must exceed the baseline (got {expert_return} vs {random_return})")
    return (float(np.mean(returns)) - float(random_return)) / denom


def evaluate(pol: ContextPolicy, z, family: EnvFamily, task: TaskSpec, episodes: int,
             seed: int) -> list[float]:
    """Undiscounted returns of ``pi(., z)`` from seeded initial states."""
    init = episode_initial_states(family, task, seed, episodes)
    return envs.run_episodes(family, task, policy_fn(pol, z), init).returns.tolist()


def baselines(family: EnvFamily, task: TaskSpec, episodes: int, seed: int) -> tuple[float, float]:
    """Mean expert and zero-action returns from the same initial states ``evaluate`` uses."""
    init = episode_initial_states(family, task, seed, episodes)
    run = lambda p: float(envs.run_episodes(family, task, p, init).returns.mean())
    return run(expert_policy(family, task)), run(zero_policy(family, task))


def select_candidate(returns: Sequence[float]) -> int:
    """Index of the maximum return; ties resolve to the smallest index."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size == 0:
        raise ArgumentError("no candidate returns")
    return int(np.flatnonzero(r == r.max())[0])


def candidate_rollouts(art: Artifacts, task: TaskSpec, seed: int, episodes: int = 1) -> list[TaskDataset]:
    """One batch of ``episodes`` rollouts on ``task`` per training-task context."""
    fam = art.family
    out = []
    for k, ds in enumerate(art.datasets):
        z_k = context_from_transitions(art.sf, art.encoder, ds, art.context_len)
        rng = np.random.default_rng([int(seed), 0xADA, task.task_id, k])
        ro = envs.run_episodes(fam, task, policy_fn(art.policy, z_k), envs.initial_states(fam, rng, episodes))
        out.append(TaskDataset.from_rollout(fam, task, ro))
    return out


def choose_context(art: Artifacts, cands: Sequence[TaskDataset]) -> tuple[np.ndarray, int, ContextVariable]:
    """(mean candidate returns, chosen k, z') where z' re-encodes only candidate k."""
    returns = np.array([c.episode_returns().mean() for c in cands])
    k = select_candidate(returns)
    chosen = cands[k]
    # with several episodes per candidate, re-encode its best single episode
    a, b = chosen.episode_ranges()[select_candidate(chosen.episode_returns())]
    z_prime = context_from_transitions(art.sf, art.encoder, chosen.subset(slice(a, b)), art.context_len)
    return returns, k, z_prime


def adapt(new_task: TaskSpec, art: Artifacts, seed: int, eval_episodes: int = 10,
          candidate_episodes: int = 1) -> AdaptationResult:
    envs.validate_task(art.family, new_task)
    if eval_episodes < 1 or candidate_episodes < 1:
        raise ArgumentError("episode counts must be positive")
    cands = candidate_rollouts(art, new_task, seed, candidate_episodes)
    returns, k, z_prime = choose_context(art, cands)
    eval_returns = evaluate(art.policy, z_prime, art.family, new_task, eval_episodes, seed)
    e, z = baselines(art.family, new_task, eval_episodes, seed)
    return AdaptationResult(new_task, returns, k, z_prime, eval_returns,
                            normalized_score(eval_returns, e, z), e, z)


def results_csv(results: Sequence[AdaptationResult]) -> str:
    if not results:
        raise ArgumentError("no adaptation results")
    K = len(results[0].candidate_returns)
    buf = io.StringIO()
    buf.write(",".join(["new_task_id", "chosen_k", *(f"candidate_return_{k}" for k in range(K)),
                        "eval_mean", "eval_std", "normalized_score"]) + "\n")
    for r in results:
        ev = np.asarray(r.eval_returns)
        buf.write(",".join([str(r.task.task_id), str(r.chosen_k),
                            *(format_real(v) for v in r.candidate_returns),
                            format_real(ev.mean()), format_real(ev.std()),
                            format_real(r.normalized_score)]) + "\n")
    return buf.getvalue()


# -- Training pipeline ----------------------------------------------------------


class Layout:
    """``<output_dir>/<run-name>/{config.resolved, datasets/, checkpoints/, curves/, results/}``."""

    SUBDIRS = ("datasets", "checkpoints", "curves", "results")

    def __init__(self, root):
        self.root = Path(root)

    @classmethod
    def for_config(cls, cfg, out: str | None = None) -> "Layout":
        return cls(Path(out or cfg["run.output_dir"]) / cfg["run.name"])

    def make(self) -> "Layout":
        for d in self.SUBDIRS:
            (self.root / d).mkdir(parents=True, exist_ok=True)
        return self

    def __getattr__(self, name):
        if name in self.SUBDIRS:
            return self.root / name
        raise AttributeError(name)

    @property
    def manifest(self) -> Path:
        return self.root / "datasets" / "tasks.manifest"

    def dataset(self, task_id: int) -> Path:
        return self.root / "datasets" / f"task_{task_id}.csv"


class StageError(RuntimeError):
    """Wraps any failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _stage(name):
    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except SfcError as exc:
                raise StageError(name, exc) from exc
        return inner
    return wrap


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def write_resolved(cfg, layout: Layout) -> None:
    layout.make()
    _write(layout.root / "config.resolved", cfg.to_text())


@_stage("experts")
def stage_experts(cfg, layout: Layout) -> list[TaskDataset]:
    """Stage 1: sample K training tasks and collect expert transitions for each."""
    fam, seed = cfg.family(), cfg["run.seed"]
    tasks = envs.sample_tasks(fam, cfg["env.K"], seed=seed)
    layout.make()
    datasets = []
    for task in tasks:
        if cfg["data.source"] == "td3":
            res = train_single_task(fam, task, cfg.td3(), seed=seed)
            save_checkpoint(res.actor.params, layout.checkpoints / f"td3_actor_task{task.task_id}.ckpt")
            pol = res.policy()
        else:
            pol = expert_policy(fam, task)
        ds = collect(fam, task, pol, cfg["data.transitions"], seed=seed)
        save_dataset(ds, layout.dataset(task.task_id))
        datasets.append(ds)
    envs.write_manifest(layout.manifest, fam, tasks)
    return datasets


def load_datasets(layout: Layout, min_tasks: int = 1) -> list[TaskDataset]:
    if not layout.manifest.exists():
        raise StateError(f"no datasets under {layout.datasets}; run the experts stage first")
    _, tasks = envs.read_manifest(layout.manifest)
    if len(tasks) < min_tasks:
        raise ArgumentError(f"training needs K >= {min_tasks} tasks, the manifest lists {len(tasks)}")
    return [load_dataset(layout.dataset(t.task_id)) for t in tasks]


def build_sf(cfg, fam: EnvFamily) -> SfNetwork:
    return SfNetwork(fam.state_dim, fam.action_dim, cfg["sf.d"], hidden=cfg["sf.hidden"],
                     gamma=fam.gamma, feature_mode=cfg["sf.feature_mode"], seed=cfg["run.seed"])


def build_models(cfg, fam: EnvFamily) -> tuple[ContextEncoder, ContextPolicy]:
    seed = cfg["run.seed"]
    enc = ContextEncoder(cfg["sf.d"], cfg["context.z_dim"], mode=cfg["context.encoder"],
                         state_dim=fam.state_dim, action_dim=fam.action_dim, seed=seed)
    pol = ContextPolicy(fam.state_dim, cfg["context.z_dim"], fam.action_dim, fam.action_bound,
                        hidden=cfg["policy.hidden"], seed=seed)
    return enc, pol


def _progress(path: Path) -> int:
    text = path.read_text(encoding="utf-8").strip()
    if not text.startswith("step = "):
        raise ParseError("expected 'step = N'", line=1, path=path)
    return int(text.split("=", 1)[1])


@_stage("train-sf")
def stage_sf(cfg, layout: Layout, resume: bool = False) -> SfNetwork:
    """Stage 2. With ``resume`` the saved network, optimizer and curve are continued."""
    datasets = load_datasets(layout, min_tasks=2)
    fam = datasets[0].family
    net = build_sf(cfg, fam)
    ck, curve = layout.checkpoints, layout.curves / "sf.csv"
    start, opt, prior = 0, None, ""
    if resume and (ck / "sf_progress.txt").exists():
        start = _progress(ck / "sf_progress.txt")
        net.load(ck / "sf")
        opt = AdamState.load(ck / "sf_opt.ckpt")
        prior = curve.read_text(encoding="utf-8")
    scfg = cfg.sf_train()
    if start > scfg.steps:
        raise ArgumentError(f"checkpoint is at step {start}, beyond sf.steps = {scfg.steps}")
    rep = train_sf(net, datasets, scfg, seed=cfg["run.seed"], start_step=start, opt=opt)
    net.save(ck / "sf")
    rep.opt.save(ck / "sf_opt.ckpt")
    _write(ck / "sf_progress.txt", f"step = {scfg.steps}\n")
    body = rep.to_csv()
    _write(curve, prior + body.split("\n", 1)[1] if prior else body)
    plotting.loss_curves(curve, layout.curves / "sf.png", "successor-feature losses")
    return net


def load_sf(cfg, layout: Layout, fam: EnvFamily) -> SfNetwork:
    net = build_sf(cfg, fam)
    if not (layout.checkpoints / "sf.ckpt").exists():
        raise StateError("no SF checkpoint; run train-sf first")
    net.load(layout.checkpoints / "sf")
    return net


@_stage("train-policy")
def stage_policy(cfg, layout: Layout) -> tuple[ContextEncoder, ContextPolicy]:
    datasets = load_datasets(layout, min_tasks=2)
    fam = datasets[0].family
    sf = load_sf(cfg, layout, fam) if cfg["context.encoder"] == "sf" else None
    enc, pol = build_models(cfg, fam)
    rep = train_policy(pol, enc, sf, datasets, cfg.policy_train(), seed=cfg["run.seed"])
    enc.save(layout.checkpoints / "encoder.ckpt")
    pol.save(layout.checkpoints / "policy.ckpt")
    _write(layout.curves / "policy.csv", rep.to_csv())
    plotting.loss_curves(layout.curves / "policy.csv", layout.curves / "policy.png", "policy losses")
    return enc, pol


def load_artifacts(cfg, layout: Layout) -> Artifacts:
    datasets = load_datasets(layout)
    fam = datasets[0].family
    sf = load_sf(cfg, layout, fam) if cfg["context.encoder"] == "sf" else None
    enc, pol = build_models(cfg, fam)
    for name, model in (("encoder", enc), ("policy", pol)):
        if not (layout.checkpoints / f"{name}.ckpt").exists():
            raise StateError(f"no {name} checkpoint; run train-policy first")
        model.load(layout.checkpoints / f"{name}.ckpt")
    return Artifacts(fam, datasets, sf, enc, pol, cfg["context.C"])


def new_tasks(cfg, art: Artifacts) -> list[TaskSpec]:
    """Held-out tasks: the continuation of the training-task stream after id K-1.

    Draws whose parameters coincide with a training task are skipped (the
    two-task fwd/back family has no other tasks, so it is exempt).
    """
    K, n = len(art.datasets), cfg["adapt.new_tasks"]
    stream = envs.sample_tasks(art.family, 2 * K + n, seed=cfg["run.seed"])[K:]
    if art.family.name == "point_fwd_back":
        return stream[:n]
    seen = {tuple(t.params) for t in art.tasks}
    return [t for t in stream if tuple(t.params) not in seen][:n]


@_stage("adapt")
def stage_adapt(cfg, layout: Layout) -> list[AdaptationResult]:
    art = load_artifacts(cfg, layout)
    results = [adapt(t, art, cfg["run.seed"], cfg["adapt.eval_episodes"], cfg["adapt.candidate_episodes"])
               for t in new_tasks(cfg, art)]
    _write(layout.results / "adapt.csv", results_csv(results))
    plotting.adaptation_bars(results, layout.results / "adapt.png")
    return results


def episode_contexts(art: Artifacts, datasets: Sequence[TaskDataset],
                     per_task: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One context per whole episode of each dataset (its first C transitions)."""
    C, Z, ids = art.context_len, [], []
    for ds in datasets:
        x = dataset_inputs(art.sf, art.encoder, ds)
        ranges = [r for r in ds.episode_ranges() if r[1] - r[0] >= C][:per_task]
        for a, _ in ranges:
            Z.append(x[a:a + C])
            ids.append(ds.task_id)
    if not Z:
        raise ArgumentError(f"no episode holds {C} transitions")
    return encode_array(art.encoder, np.stack(Z)), np.array(ids)


def training_contexts(art: Artifacts, per_task: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    return episode_contexts(art, art.datasets, per_task)


@dataclass
class SeparationReport:
    accuracy: float
    inter_mmd2: float
    intra_mmd2: float


def probe_separation(art: Artifacts, episodes: int = 20, seed: int = 77) -> SeparationReport:
    """Classify contexts of fresh expert episodes by nearest training-task centroid.

    The held-out contexts of each task are split in two halves; intra-task MMD^2
    compares the halves of one task, inter-task MMD^2 compares first halves of
    different tasks.
    """
    if episodes < 4:
        raise ArgumentError("need at least 4 held-out episodes per task")
    fam, H = art.family, art.family.horizon
    held = [collect(fam, ds.task, expert_policy(fam, ds.task), episodes * H, seed=seed) for ds in art.datasets]
    Ztr, ytr = training_contexts(art)
    Zte, yte = episode_contexts(art, held)
    acc = nearest_centroid_accuracy(Ztr, ytr, Zte, yte)
    halves = []
    for ds in art.datasets:
        z = Zte[yte == ds.task_id]
        halves.append((z[:len(z) // 2], z[len(z) // 2:]))
    K = len(halves)
    inter = np.mean([mmd2(halves[i][0], halves[j][0]).item() for i in range(K) for j in range(K) if i != j])
    intra = np.mean([mmd2(a, b).item() for a, b in halves])
    return SeparationReport(float(acc), float(inter), float(intra))


@_stage("export-embeddings")
def stage_embeddings(cfg, layout: Layout) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    art = load_artifacts(cfg, layout)
    Z, ids = training_contexts(art)
    proj, comps = pca_2d(Z)
    _write(layout.results / "embeddings.csv", embeddings_csv(ids, Z))
    _write(layout.results / "pca.csv", projection_csv(ids, proj))
    plotting.embedding_scatter(ids, proj, layout.results / "pca.png")
    return Z, ids, comps


def run_training_pipeline(cfg, layout: Layout) -> Artifacts:
    """Stages 1 -> 2 -> 3 in order; every artifact lands under ``layout``."""
    write_resolved(cfg, layout)
    stage_experts(cfg, layout)
    if cfg["context.encoder"] == "sf":
        stage_sf(cfg, layout)
    stage_policy(cfg, layout)
    return load_artifacts(cfg, layout)
