from pathlib import Path

import pytest

from sfc.config import SCHEMA, RunConfig
from sfc.errors import ConfigError

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.cfg"))


def test_defaults_validate_and_round_trip():
    cfg = RunConfig.defaults()
    cfg.validate()
    again = RunConfig.parse(cfg.to_text())
    assert again.values == cfg.values


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_round_trip(path):
    cfg = RunConfig.load(path)
    assert RunConfig.parse(cfg.to_text()).values == cfg.values


def test_every_key_survives_text():
    text = RunConfig.defaults().to_text()
    keys = [line.split("=")[0].strip() for line in text.splitlines() if line]
    assert keys == list(SCHEMA)


def test_unknown_key_names_file_and_line():
    with pytest.raises(ConfigError, match=r"my\.cfg:3: unknown config key 'sf\.depth'"):
        RunConfig.parse("# comment\nenv.K = 4\nsf.depth = 3\n", "my.cfg")


def test_malformed_line_and_value():
    with pytest.raises(ConfigError, match=":1:"):
        RunConfig.parse("env.K 4")
    with pytest.raises(ConfigError, match="env.K"):
        RunConfig.parse("env.K = four")
    with pytest.raises(ConfigError, match="env.family"):
        RunConfig.parse("env.family = humanoid")


def test_td3_source_requires_steps_key():
    with pytest.raises(ConfigError, match=r"data\.td3_steps"):
        RunConfig.parse("data.source = td3")
    cfg = RunConfig.parse("data.source = td3\ndata.td3_steps = 500")
    assert cfg.td3().training_steps == 500


@pytest.mark.parametrize("line", ["env.K = 0", "env.gamma = 1.0", "sf.tau = 0", "sf.lr = -1",
                                  "context.C = 0", "policy.steps = -1", "env.dt = 0"])
def test_numeric_preconditions(line):
    with pytest.raises(ConfigError):
        RunConfig.parse(line)


def test_overrides_apply_in_order():
    cfg = RunConfig.defaults().with_overrides(["env.K=6", "env.K = 7", "mmd.bandwidth_sf=0.5"])
    assert cfg["env.K"] == 7 and cfg["mmd.bandwidth_sf"] == 0.5
    with pytest.raises(ConfigError):
        RunConfig.defaults().with_overrides(["env.K"])


def test_component_configs_follow_keys():
    cfg = RunConfig.parse("sf.use_mmd = false\nsf.w_td = 0.5\npolicy.use_mmd2 = no\n"
                          "mmd.bandwidth_context = 0.3\nsf.hidden = 32,16\n")
    sft, pt = cfg.sf_train(), cfg.policy_train()
    assert sft.enabled["mmd"] is False and sft.weights["td"] == 0.5
    assert pt.enabled == {"bc": True, "mmd2": False} and pt.bandwidth == 0.3
    assert cfg["sf.hidden"] == (32, 16)
    assert cfg.family().name == "point_goal"
