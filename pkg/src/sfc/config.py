"""Run configuration: line-oriented ``section.key = value`` text with typed defaults.

Unknown keys are rejected, values are validated on load, and the effective
configuration (defaults merged with file and overrides) can be written back out
and re-read to reproduce a run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import envs
from .errors import ConfigError
from .expert_data import Td3Config
from .policy import PolicyTrainConfig
from .sfnet import TERMS, SfTrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    text = text.strip()
    return () if text in ("", "none") else tuple(int(p) for p in text.split(","))


def _bandwidth(text: str):
    text = text.strip()
    if text == "median":
        return text
    value = float(text)
    if not value > 0:
        raise ValueError("bandwidth must be positive or 'median'")
    return value


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text
    return parse


def _str(text: str) -> str:
    return text.strip()


def _optional_int(text: str):
    text = text.strip()
    return None if text in ("", "none") else int(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value) if value else "none"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (default, parser)
SCHEMA: dict[str, tuple[Any, Callable[[str], Any]]] = {
    "run.name": ("run", _str),
    "run.seed": (0, int),
    "run.output_dir": ("out", _str),
    "env.family": ("point_goal", _choice(*envs.FAMILIES)),
    "env.K": (4, int),
    "env.H": (64, int),
    "env.gamma": (0.99, float),
    "env.dt": (0.1, float),
    "env.action_bound": (1.0, float),
    "env.state_bound": (2.0, float),
    "env.goal_radius": (1.0, float),
    "env.n_states": (5, int),
    "data.transitions": (10_000, int),
    "data.source": ("analytic", _choice("analytic", "td3")),
    "data.td3_steps": (None, _optional_int),
    "sf.d": (16, int),
    "sf.hidden": ((64,), _ints),
    "sf.feature_mode": ("learned", _choice("learned", "identity")),
    "sf.steps": (20_000, int),
    "sf.batch": (64, int),
    "sf.lr": (1e-3, float),
    "sf.tau": (0.01, float),
    "sf.terminal_cut": (False, _bool),
    "sf.td_into_features": (False, _bool),
    "sf.log_every": (10, int),
    **{f"sf.use_{t}": (True, _bool) for t in TERMS},
    **{f"sf.w_{t}": (1.0, float) for t in TERMS},
    "context.C": (64, int),
    "context.z_dim": (8, int),
    "context.encoder": ("sf", _choice("sf", "raw")),
    "context.shuffle": (False, _bool),
    "policy.hidden": ((64, 64), _ints),
    "policy.steps": (20_000, int),
    "policy.batch": (128, int),
    "policy.windows": (4, int),
    "policy.lr": (1e-3, float),
    "policy.log_every": (10, int),
    "policy.use_bc": (True, _bool),
    "policy.use_mmd2": (True, _bool),
    "policy.w_bc": (1.0, float),
    "policy.w_mmd2": (1.0, float),
    "policy.window_align": ("episode", _choice("episode", "any")),
    "mmd.bandwidth_sf": ("median", _bandwidth),
    "mmd.bandwidth_context": ("median", _bandwidth),
    "mmd.sign_stage3": ("separate", _choice("separate", "attract")),
    "adapt.new_tasks": (5, int),
    "adapt.eval_episodes": (10, int),
    "adapt.candidate_episodes": (1, int),
}

POSITIVE = ("env.K", "env.H", "env.dt", "env.action_bound", "env.state_bound", "env.goal_radius",
            "data.transitions", "sf.d", "sf.batch", "sf.lr", "sf.log_every", "context.C",
            "context.z_dim", "policy.batch", "policy.windows", "policy.lr", "policy.log_every",
            "adapt.new_tasks", "adapt.eval_episodes", "adapt.candidate_episodes")
NON_NEGATIVE = ("sf.steps", "policy.steps", "run.seed")


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    # -- construction ---------------------------------------------------------

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k: d for k, (d, _) in SCHEMA.items()})

    @classmethod
    def parse(cls, text: str, source: str = "<config>", base: "RunConfig | None" = None) -> "RunConfig":
        cfg = RunConfig(dict((base or cls.defaults()).values))
        for no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{no}: expected 'section.key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            cfg._set(key, value, f"{source}:{no}")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text, str(path))

    def with_overrides(self, items) -> "RunConfig":
        cfg = RunConfig(dict(self.values))
        for item in items or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            key, value = (p.strip() for p in item.split("=", 1))
            cfg._set(key, value, "--override")
        cfg.validate()
        return cfg

    def _set(self, key: str, value: str, where: str) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        try:
            self.values[key] = SCHEMA[key][1](value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None

    def validate(self) -> None:
        v = self.values
        for key in POSITIVE:
            if not v[key] > 0:
                raise ConfigError(f"{key} must be positive, got {v[key]}")
        for key in NON_NEGATIVE:
            if v[key] < 0:
                raise ConfigError(f"{key} must be non-negative, got {v[key]}")
        if not 0.0 <= v["env.gamma"] < 1.0:
            raise ConfigError("env.gamma must lie in [0, 1)")
        if not 0.0 < v["sf.tau"] <= 1.0:
            raise ConfigError("sf.tau must lie in (0, 1]")
        if v["data.source"] == "td3":
            if v["data.td3_steps"] is None:
                raise ConfigError("data.source = td3 requires the key data.td3_steps")
            if v["data.td3_steps"] < 0:
                raise ConfigError("data.td3_steps must be non-negative")
        if v["env.family"] == "tabular_ring" and v["data.source"] == "td3":
            raise ConfigError("td3 experts need a continuous family")
        try:
            self.family()
        except ValueError as exc:
            raise ConfigError(f"env section: {exc}") from None

    def to_text(self) -> str:
        lines, section = [], None
        for key in SCHEMA:
            sec = key.split(".", 1)[0]
            if sec != section and lines:
                lines.append("")
            section = sec
            lines.append(f"{key} = {_fmt(self.values[key])}")
        return "\n".join(lines) + "\n"

    # -- derived component configs ----------------------------------------------

    def family(self) -> envs.EnvFamily:
        v = self.values
        return envs.make_family(v["env.family"], horizon=v["env.H"], gamma=v["env.gamma"], dt=v["env.dt"],
                                action_bound=v["env.action_bound"], state_bound=v["env.state_bound"],
                                goal_radius=v["env.goal_radius"], n_states=v["env.n_states"])

    def sf_train(self) -> SfTrainConfig:
        v = self.values
        return SfTrainConfig(steps=v["sf.steps"], batch=v["sf.batch"], lr=v["sf.lr"], tau=v["sf.tau"],
                             weights={t: v[f"sf.w_{t}"] for t in TERMS},
                             enabled={t: v[f"sf.use_{t}"] for t in TERMS},
                             bandwidth=v["mmd.bandwidth_sf"], terminal_cut=v["sf.terminal_cut"],
                             td_into_features=v["sf.td_into_features"], log_every=v["sf.log_every"])

    def policy_train(self) -> PolicyTrainConfig:
        v = self.values
        return PolicyTrainConfig(steps=v["policy.steps"], batch=v["policy.batch"],
                                 windows_per_task=v["policy.windows"], context_len=v["context.C"],
                                 lr=v["policy.lr"],
                                 weights={"bc": v["policy.w_bc"], "mmd2": v["policy.w_mmd2"]},
                                 enabled={"bc": v["policy.use_bc"], "mmd2": v["policy.use_mmd2"]},
                                 sign=v["mmd.sign_stage3"], bandwidth=v["mmd.bandwidth_context"],
                                 shuffle_windows=v["context.shuffle"],
                                 window_align=v["policy.window_align"], log_every=v["policy.log_every"])

    def td3(self) -> Td3Config:
        return Td3Config(training_steps=self.values["data.td3_steps"] or 0)
