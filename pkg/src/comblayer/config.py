"""Run configuration files.

A run config is YAML with four sections. Keys that carry a physical unit say
so in their name::

    model:
      frontend: comb            # comb | conv
      channels: 32
      later_kernel: 9
      f_min_hz: 200
      f_max_hz: 500
      alpha: 0.9
      echo_count: 10
      sample_rate_hz: 16000
      pool_window_samples: 1024
      pool_stride_samples: 512
      conv_kernel_samples: 251
      conv_stride_samples: 1
    train:
      lr: 0.001
      max_steps: 20000
      batch_size: 8
      grad_clip: 0.5
      seed: 0
      eval_interval_steps: 200
      patience_evals: 10
      crop_seconds: 2.0
      log_interval_steps: 10
    data:
      dir: data                 # holds manifest_{train,valid,test}.yaml
    output:
      dir: runs
      run_name: CombNet_32      # optional

Every section and key is optional except ``data.dir``. Errors carry the line
number of the offending node.
"""
from dataclasses import dataclass
from pathlib import Path

import yaml

from .models import ModelSpec
from .nn import TrainConfig


class ConfigError(ValueError):
    def __init__(self, path, line, msg):
        where = "%s:%d" % (path, line + 1) if line is not None else str(path)
        super().__init__("%s: %s" % (where, msg))
        self.line = None if line is None else line + 1


MODEL_KEYS = {
    "frontend": ("frontend", str),
    "channels": ("channels", int),
    "later_kernel": ("later_kernel", int),
    "f_min_hz": ("f_min", float),
    "f_max_hz": ("f_max", float),
    "alpha": ("alpha", float),
    "echo_count": ("echo_count", int),
    "sample_rate_hz": ("sample_rate", int),
    "pool_window_samples": ("pool_window", int),
    "pool_stride_samples": ("pool_stride", int),
    "conv_kernel_samples": ("conv_kernel", int),
    "conv_stride_samples": ("conv_stride", int),
}
TRAIN_KEYS = {
    "lr": ("lr", float),
    "max_steps": ("max_steps", int),
    "batch_size": ("batch_size", int),
    "grad_clip": ("grad_clip", float),
    "seed": ("seed", int),
    "eval_interval_steps": ("eval_interval", int),
    "patience_evals": ("patience", int),
    "crop_seconds": ("crop_seconds", float),
    "log_interval_steps": ("log_interval", int),
    "divergence_factor": ("divergence_factor", float),
}
PATH_KEYS = {"data": {"dir"}, "output": {"dir", "run_name"}}


@dataclass
class RunConfig:
    spec: ModelSpec
    train: TrainConfig
    data_dir: Path
    out_dir: Path
    run_name: str = None


def _scalar(path, node, kind):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(path, node.start_mark.line, "expected a scalar value")
    value = yaml.safe_load(node.value) if node.tag != "tag:yaml.org,2002:str" else node.value
    if kind is str:
        return str(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, node.start_mark.line, "expected a number, got %r" % node.value)
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(path, node.start_mark.line,
                              "expected an integer, got %r" % node.value)
        return int(value)
    return float(value)


def _mapping(path, node, what):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(path, node.start_mark.line, "%s must be a mapping" % what)
    seen = {}
    for k, v in node.value:
        key = k.value
        if key in seen:
            raise ConfigError(path, k.start_mark.line, "duplicate key %r" % key)
        seen[key] = (k, v)
    return seen


def _section(path, items, table, what):
    out = {}
    for key, (knode, vnode) in items.items():
        if key not in table:
            raise ConfigError(path, knode.start_mark.line,
                              "unknown key %r in %s (expected one of: %s)"
                              % (key, what, ", ".join(sorted(table))))
        name, kind = table[key]
        out[name] = _scalar(path, vnode, kind)
    return out


def load_model_spec(path):
    """Only the ``model`` section of a config file; ``data`` may be absent."""
    return load_run_config(path, require_data=False).spec


def load_run_config(path, require_data=True):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError("config not found: %s" % path)
    text = path.read_text()
    try:
        root = yaml.compose(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(path, mark.line if mark else None, str(exc.problem)) from exc
    if root is None:
        raise ConfigError(path, 0, "empty config")
    top = _mapping(path, root, "the config")
    for key, (knode, _) in top.items():
        if key not in ("model", "train", "data", "output"):
            raise ConfigError(path, knode.start_mark.line, "unknown section %r" % key)

    def build(section, table, cls):
        kw = {}
        if section in top:
            knode, vnode = top[section]
            kw = _section(path, _mapping(path, vnode, section), table, section)
            line = knode.start_mark.line
        else:
            line = None
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ConfigError(path, line, "%s: %s" % (section, exc)) from exc

    spec = build("model", MODEL_KEYS, ModelSpec)
    train = build("train", TRAIN_KEYS, TrainConfig)
    paths = {}
    for section, allowed in PATH_KEYS.items():
        if section not in top:
            continue
        items = _mapping(path, top[section][1], section)
        for key, (knode, vnode) in items.items():
            if key not in allowed:
                raise ConfigError(path, knode.start_mark.line,
                                  "unknown key %r in %s" % (key, section))
            paths[(section, key)] = _scalar(path, vnode, str)
    if require_data and ("data", "dir") not in paths:
        raise ConfigError(path, None, "data.dir is required")
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    return RunConfig(spec=spec, train=train, data_dir=resolve(paths.get(("data", "dir"), "data")),
                     out_dir=resolve(paths.get(("output", "dir"), "runs")),
                     run_name=paths.get(("output", "run_name")))


def dump_run_config(cfg):
    """Inverse of ``load_run_config`` (paths are written as given)."""
    model = {k: getattr(cfg.spec, name) for k, (name, _) in MODEL_KEYS.items()}
    train = {k: getattr(cfg.train, name) for k, (name, _) in TRAIN_KEYS.items()}
    doc = {"model": model, "train": train, "data": {"dir": str(cfg.data_dir)},
           "output": {"dir": str(cfg.out_dir)}}
    if cfg.run_name:
        doc["output"]["run_name"] = cfg.run_name
    return yaml.safe_dump(doc, sort_keys=False)
