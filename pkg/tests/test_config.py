"""Config loading: defaults, file/env/override precedence, validation."""

import pytest
import yaml

from clvqa.config import load_config
from clvqa.data.synth import SynthConfig
from clvqa.errors import ConfigError
from clvqa.runner import RunConfig


def test_defaults():
    cfg = load_config(env={})
    assert cfg.source == "<defaults>"
    assert cfg.run["lr"] == 8e-5
    assert cfg.run["hidden"] == [64, 64]
    assert cfg.run["strategy"] == "finetune"
    assert cfg.run["eval_every"] is None
    assert cfg.data["manifest"] is None
    assert cfg.sweep["seeds"] == [0]
    assert cfg.pairwise["finetune_steps"] == 400
    assert cfg.output["dir"] == "out"


def test_file_overrides_defaults(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text(yaml.safe_dump({
        "run": {"lr": 0.01, "strategy": "er"},
        "sweep": {"seeds": [0, 1]},
    }))
    cfg = load_config(p, env={})
    assert cfg.source == str(p)
    assert cfg.run["lr"] == 0.01
    assert cfg.run["strategy"] == "er"
    assert cfg.sweep["seeds"] == [0, 1]
    assert cfg.run["batch_size"] == 512  # untouched default


def test_empty_file_is_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    cfg = load_config(p, env={})
    assert cfg.run["lr"] == 8e-5


@pytest.mark.parametrize("doc, fragment", [
    ({"nope": {}}, "unknown section"),
    ({"run": {"nope": 1}}, "unknown key"),
    ({"run": [1, 2]}, "must be a mapping"),
    ({"run": {"lr": -1}}, "run.lr"),
    ({"run": {"strategy": "sgd"}}, "run.strategy"),
    ({"run": {"hidden": [64, 0]}}, "run.hidden"),
    ({"run": {"eval_future": "yes"}}, "run.eval_future"),
    ({"sweep": {"seeds": []}}, "sweep.seeds"),
])
def test_bad_file_values(tmp_path, doc, fragment):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(doc))
    with pytest.raises(ConfigError) as ei:
        load_config(p, env={})
    assert fragment in str(ei.value)


def test_top_level_must_be_mapping(tmp_path):
    p = tmp_path / "list.yaml"
    p.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(p, env={})


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/no/such/config.yaml", env={})


def test_nullable_keys_accept_none(tmp_path):
    p = tmp_path / "n.yaml"
    p.write_text("run:\n  eval_every: null\ndata:\n  manifest: null\n")
    cfg = load_config(p, env={})
    assert cfg.run["eval_every"] is None


def test_non_nullable_rejects_none(tmp_path):
    p = tmp_path / "n.yaml"
    p.write_text("run:\n  lr: null\n")
    with pytest.raises(ConfigError, match="run.lr"):
        load_config(p, env={})


def test_env_override():
    cfg = load_config(env={"CLVQA_RUN__LR": "0.01",
                           "CLVQA_SWEEP__SEEDS": "[0, 1, 2]"})
    assert cfg.run["lr"] == 0.01
    assert cfg.sweep["seeds"] == [0, 1, 2]


def test_env_beats_file_overrides_beat_env(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text("run:\n  lr: 0.5\n  batch_size: 64\n")
    cfg = load_config(p, env={"CLVQA_RUN__LR": "0.25"},
                      overrides={("run", "batch_size"): 32})
    assert cfg.run["lr"] == 0.25       # env over file
    assert cfg.run["batch_size"] == 32  # explicit over file


def test_env_backend_switch_is_not_a_config_key():
    cfg = load_config(env={"CLVQA_BACKEND": "numpy"})
    assert cfg.run["lr"] == 8e-5  # ignored, no error


@pytest.mark.parametrize("env", [
    {"CLVQA_RUNLR": "1"},                 # no __ separator
    {"CLVQA_RUN__NOPE": "1"},             # unknown key
    {"CLVQA_NOPE__LR": "1"},              # unknown section
    {"CLVQA_RUN__HIDDEN": "[64, ]]"},     # unparseable value
])
def test_bad_env_overrides(env):
    with pytest.raises(ConfigError):
        load_config(env=env)


def test_irrelevant_env_ignored():
    cfg = load_config(env={"PATH": "/bin", "CLVQA": "x"})
    assert cfg.run["lr"] == 8e-5


def test_manifest_and_synth_exclusive(tmp_path):
    p = tmp_path / "both.yaml"
    p.write_text(yaml.safe_dump({
        "data": {"manifest": "seq/manifest.json",
                 "synth": {"n_tasks": 2}},
    }))
    with pytest.raises(ConfigError, match="mutually exclusive"):
        load_config(p, env={})


def test_order_must_be_permutation():
    with pytest.raises(ConfigError, match="permutation"):
        load_config(env={}, overrides={("run", "order"): [0, 2, 3]})
    cfg = load_config(env={}, overrides={("run", "order"): [2, 0, 1]})
    assert cfg.run["order"] == [2, 0, 1]


def test_run_config_mapping():
    cfg = load_config(env={}, overrides={("run", "lr"): 0.01,
                                         ("run", "strategy"): "ewc",
                                         ("run", "seed"): 7})
    rc = cfg.run_config()
    assert isinstance(rc, RunConfig)
    assert rc.lr == 0.01 and rc.strategy == "ewc" and rc.seed == 7


@pytest.mark.parametrize("baseline", ["fixed", "joint"])
def test_baselines_map_to_plain_training(baseline):
    cfg = load_config(env={}, overrides={("run", "strategy"): baseline})
    assert cfg.run_config().strategy == "finetune"


def test_synth_config():
    cfg = load_config(env={}, overrides={
        ("data", "synth"): {"n_tasks": 2, "classes_per_task": 3, "seed": 4},
    })
    sc = cfg.synth_config()
    assert isinstance(sc, SynthConfig)
    assert sc.n_tasks == 2 and sc.seed == 4


def test_synth_config_requires_section():
    with pytest.raises(ConfigError, match="data.synth"):
        load_config(env={}).synth_config()


def test_synth_config_rejects_unknown_key():
    cfg = load_config(env={}, overrides={("data", "synth"): {"nope": 1}})
    with pytest.raises(ConfigError, match="nope"):
        cfg.synth_config()


def test_to_dict_round_trip(tmp_path):
    cfg = load_config(env={}, overrides={("run", "lr"): 0.125})
    p = tmp_path / "dump.yaml"
    p.write_text(yaml.safe_dump(cfg.to_dict()))
    again = load_config(p, env={})
    assert again.to_dict() == cfg.to_dict()
