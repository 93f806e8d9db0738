"""Run configuration: YAML config files merged with command-line flags.

Precedence is flag > file > default, per key. Unknown keys in a config file
are rejected with the offending names. The config is the union of the
training hyperparameters (see :class:`roomsdf.train.TrainConfig`) and the
run-level keys ``scene_dir``, ``out_dir``, ``use_raw_normals`` (driven by
the ``no_enhance`` switch), and ``uncertainty_mode``.
"""

import dataclasses
import os

import yaml

from .train import TrainConfig


@dataclasses.dataclass
class RunConfig:
    train: TrainConfig
    scene_dir: str = ""
    out_dir: str = "out"
    uncertainty_mode: str = "file"   # "file" | "zero"

    def resolved_uncertainty_mode(self):
        return "zero" if self.train.no_uncertainty else self.uncertainty_mode


_RUN_KEYS = {"scene_dir", "out_dir", "uncertainty_mode"}


def train_config_fields():
    return [f.name for f in dataclasses.fields(TrainConfig)]


def all_config_keys():
    return sorted(set(train_config_fields()) | _RUN_KEYS)


def load_config_file(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    unknown = set(data) - set(all_config_keys())
    if unknown:
        raise ValueError(
            f"unknown config keys in {path}: {', '.join(sorted(unknown))}")
    return data


def build_run_config(file_path=None, overrides=None):
    """Assemble a RunConfig with flag > file > default precedence."""
    merged = {}
    if file_path:
        merged.update(load_config_file(file_path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in all_config_keys():
            raise ValueError(f"unknown config key '{key}'")
        merged[key] = value
    train_kwargs = {k: v for k, v in merged.items()
                    if k in train_config_fields()}
    run_kwargs = {k: v for k, v in merged.items() if k in _RUN_KEYS}
    return RunConfig(train=TrainConfig(**train_kwargs), **run_kwargs)


def dump_default_config():
    """Every config key with its default, as a YAML string."""
    cfg = RunConfig(train=TrainConfig())
    data = dataclasses.asdict(cfg.train)
    data.update({k: getattr(cfg, k) for k in sorted(_RUN_KEYS)})
    return yaml.safe_dump(data, sort_keys=True)
