"""Experiment configuration.

YAML file with sections data / run / sweep / pairwise / output; every key
has a default, unknown sections or keys are rejected, and any value can be
overridden from the environment as CLVQA_<SECTION>__<KEY>=value (parsed as
YAML, e.g. CLVQA_RUN__LR=0.01, CLVQA_SWEEP__SEEDS='[0,1,2]').

Defaults mirror the reference training regime; desk-scale configs override
lr, batch_size, steps_per_task, and the model size.
"""

import os
from dataclasses import dataclass, field

import yaml

from clvqa.data.synth import SynthConfig
from clvqa.errors import ConfigError
from clvqa.runner import RunConfig

ENV_PREFIX = "CLVQA_"


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


def _check_order(v):
    return isinstance(v, list) and all(_is_int(x) for x in v)


# (default, predicate, description)
SCHEMA = {
    "data": {
        "manifest": (None, lambda v: isinstance(v, str), "path to a sequence "
                     "manifest"),
        "synth": (None, lambda v: isinstance(v, dict), "inline synthetic-"
                  "sequence settings"),
        "embeddings": (None, lambda v: isinstance(v, str), "path to a word-"
                       "embedding text file"),
    },
    "run": {
        "hidden": ([64, 64], lambda v: isinstance(v, list)
                   and all(_is_int(x) and x > 0 for x in v), "hidden sizes"),
        "activation": ("tanh", lambda v: v in ("tanh", "relu", "identity"),
                       "nonlinearity"),
        "head_init": ("zeros", lambda v: v in ("zeros", "gaussian"),
                      "init rule for new head rows"),
        "optimizer": ("adam", lambda v: v in ("adam", "sgd"), "optimizer"),
        "lr": (8e-5, lambda v: _is_num(v) and v > 0, "learning rate"),
        "beta1": (0.9, _is_num, "adam beta1"),
        "beta2": (0.999, _is_num, "adam beta2"),
        "eps": (1e-8, lambda v: _is_num(v) and v > 0, "adam epsilon"),
        "trunk_lr_scale": (1.0, lambda v: _is_num(v) and v > 0,
                           "lr multiplier for hidden layers (0.1 runs the "
                           "trunk at lr/10)"),
        "head_lr_scale": (1.0, lambda v: _is_num(v) and v > 0,
                          "lr multiplier for the head"),
        "batch_size": (512, lambda v: _is_int(v) and v > 0, "batch size"),
        "steps_per_task": (500, lambda v: _is_int(v) and v > 0,
                           "minibatch steps per task"),
        "seed": (0, _is_int, "run seed"),
        "strategy": ("finetune", lambda v: v in ("finetune", "ewc", "lwf",
                                                 "er", "agem", "pseudo_replay",
                                                 "fixed", "joint"),
                     "training strategy or baseline"),
        "ewc_lambda": (400.0, lambda v: _is_num(v) and v >= 0,
                       "quadratic-penalty weight"),
        "fisher_samples": (None, lambda v: _is_int(v) and v > 0,
                           "cap on per-task Fisher sample count"),
        "lwf_lambda": (1.0, lambda v: _is_num(v) and v >= 0,
                       "distillation weight"),
        "memory_capacity": (500, lambda v: _is_int(v) and v > 0,
                            "stored samples per task"),
        "replay_ratio": (3, lambda v: _is_int(v) and v >= 1,
                         "new:old mixing ratio"),
        "agem_ref_batch": (None, lambda v: _is_int(v) and v > 0,
                           "reference-gradient batch size"),
        "eval_every": (None, lambda v: _is_int(v) and v > 0,
                       "within-task eval cadence (steps)"),
        "eval_future": (False, lambda v: isinstance(v, bool),
                        "also evaluate not-yet-trained tasks"),
        "order": (None, _check_order, "task order permutation"),
    },
    "sweep": {
        "orders": (None, lambda v: isinstance(v, list)
                   and all(_check_order(o) for o in v), "explicit task "
                   "orders"),
        "n_orders": (1, lambda v: _is_int(v) and v >= 1, "number of random "
                     "orders when none are given"),
        "order_seed": (0, _is_int, "seed for random orders"),
        "seeds": ([0], lambda v: isinstance(v, list) and v
                  and all(_is_int(x) for x in v), "run seeds"),
        "workers": (1, lambda v: _is_int(v) and v >= 1, "parallel workers"),
    },
    "pairwise": {
        "finetune_steps": (400, lambda v: _is_int(v) and v > 0,
                           "second-phase steps"),
        "finetune_batch": (512, lambda v: _is_int(v) and v > 0,
                           "second-phase batch size"),
        "finetune_lr": (5e-5, lambda v: _is_num(v) and v > 0,
                        "second-phase learning rate"),
        "include_self": (False, lambda v: isinstance(v, bool),
                         "also run (i, i) control pairs"),
    },
    "output": {
        "dir": ("out", lambda v: isinstance(v, str), "artifact directory"),
    },
}

# keys whose None default means "optional", so None passes validation
_NULLABLE = {
    ("data", "manifest"), ("data", "synth"), ("data", "embeddings"),
    ("run", "fisher_samples"), ("run", "agem_ref_batch"),
    ("run", "eval_every"), ("run", "order"), ("sweep", "orders"),
}

RUN_KEYS = [k for k in SCHEMA["run"] if k != "order"]


@dataclass
class ExperimentConfig:
    data: dict
    run: dict
    sweep: dict
    pairwise: dict
    output: dict
    source: str = "<defaults>"

    def run_config(self):
        kwargs = {k: self.run[k] for k in RUN_KEYS
                  if k in RunConfig.__dataclass_fields__}
        kwargs.pop("strategy", None)
        strategy = self.run["strategy"]
        # baselines are run modes, not strategy objects
        run_strategy = "finetune" if strategy in ("fixed", "joint") else strategy
        return RunConfig(strategy=run_strategy, **kwargs)

    def synth_config(self):
        if self.data["synth"] is None:
            raise ConfigError("no data.synth section in the config")
        raw = self.data["synth"]
        valid = set(SynthConfig.__dataclass_fields__)
        unknown = set(raw) - valid
        if unknown:
            raise ConfigError(f"data.synth: unknown key {sorted(unknown)[0]!r}")
        try:
            return SynthConfig(**raw).check()
        except TypeError as e:
            raise ConfigError(f"data.synth: {e}") from e

    def to_dict(self):
        return {"data": dict(self.data), "run": dict(self.run),
                "sweep": dict(self.sweep), "pairwise": dict(self.pairwise),
                "output": dict(self.output)}


def _validate(section, key, value):
    default, pred, doc = SCHEMA[section][key]
    if value is None and (section, key) in _NULLABLE:
        return None
    if not pred(value):
        raise ConfigError(
            f"{section}.{key}: bad value {value!r} ({doc})"
        )
    return value


def _apply_env(doc, env):
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if rest == "BACKEND":  # kernel-backend switch, not a config key
            continue
        if "__" not in rest:
            raise ConfigError(
                f"environment override {name} must look like "
                f"{ENV_PREFIX}SECTION__KEY"
            )
        section, key = rest.lower().split("__", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"environment override {name}: unknown key "
                              f"{section}.{key}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"environment override {name}: bad value: {e}") \
                from e
        doc.setdefault(section, {})[key] = value
    return doc


def load_config(path=None, env=None, overrides=None):
    """Load, override, validate; returns an ExperimentConfig.

    Precedence: defaults < file < environment < explicit overrides
    ({(section, key): value}).
    """
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                raw = yaml.safe_load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML: {e}") from e
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        for section, content in raw.items():
            if section not in SCHEMA:
                raise ConfigError(f"{path}: unknown section {section!r}")
            if content is None:
                continue
            if not isinstance(content, dict):
                raise ConfigError(f"{path}: section {section!r} must be a "
                                  "mapping")
            for key in content:
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key "
                                      f"{section}.{key!r}")
            doc[section] = dict(content)
    doc = _apply_env(doc, os.environ if env is None else env)
    for (section, key), value in (overrides or {}).items():
        doc.setdefault(section, {})[key] = value
    final = {}
    for section, keys in SCHEMA.items():
        final[section] = {}
        given = doc.get(section, {})
        for key, (default, pred, doc_str) in keys.items():
            value = given.get(key, default)
            final[section][key] = _validate(section, key, value)
    cfg = ExperimentConfig(
        source="<defaults>" if path is None else str(path), **final)
    if cfg.data["manifest"] is not None and cfg.data["synth"] is not None:
        raise ConfigError("data.manifest and data.synth are mutually "
                          "exclusive")
    if cfg.run["order"] is not None:
        order = cfg.run["order"]
        if sorted(order) != list(range(len(order))):
            raise ConfigError(f"run.order {order} is not a permutation")
    return cfg
