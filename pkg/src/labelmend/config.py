"""Pipeline configuration: built-in defaults < config file < command-line flags."""

import dataclasses
import os
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .gat import TrainConfig


@dataclass
class PipelineConfig:
    bg_thresh: float = 0.05
    fg_thresh: float = None
    theta: float = 0.001
    target_precision: float = 0.97
    superpixels: int = 1000
    compactness: float = 10.0
    slic_iters: int = 10
    edge_symmetrize: str = "or"
    heads: int = 8
    hidden: int = 8
    att_dim: int = 8
    learning_rate: float = 5e-3
    epochs: int = 300
    weight_decay: float = 5e-4
    patience: int = 50
    init_scale: float = 1.0
    seed: int = 0
    workers: int = 0
    trust_gat_everywhere: bool = False
    mean_over: str = "present"
    save_models: bool = False

    def validate(self):
        checks = [
            (0 < self.bg_thresh < 1, "bg_thresh must lie in (0, 1)"),
            (self.fg_thresh is None or self.bg_thresh < self.fg_thresh < 1,
             "fg_thresh must lie in (bg_thresh, 1)"),
            (self.theta > 0, "theta must be positive"),
            (0.5 < self.target_precision < 1, "target_precision must lie in (0.5, 1)"),
            (self.superpixels >= 1, "superpixels must be at least 1"),
            (self.compactness > 0, "compactness must be positive"),
            (self.slic_iters >= 0, "slic_iters must be non-negative"),
            (self.edge_symmetrize in ("or", "and"), "edge_symmetrize must be 'or' or 'and'"),
            (self.workers >= 0, "workers must be non-negative (0 = all CPUs)"),
            (self.mean_over in ("present", "all"), "mean_over must be 'present' or 'all'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def train_config(self, seed=None):
        return TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs,
            weight_decay=self.weight_decay, seed=self.seed if seed is None else seed,
            patience=self.patience, init_scale=self.init_scale,
            heads=self.heads, hidden=self.hidden, att_dim=self.att_dim,
        )

    @property
    def worker_count(self):
        return self.workers or os.cpu_count() or 1


FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(name, value):
    default = FIELDS[name].default
    if value is None:
        return None
    kind = type(default) if default is not None else float
    if kind is bool:
        if isinstance(value, str):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        return bool(value)
    try:
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r} as {kind.__name__}") from None


def apply_overrides(cfg, values, source):
    for key, value in values.items():
        name = key.replace("-", "_")
        if name not in FIELDS:
            raise ConfigError(f"{source}: unknown key {key!r}")
        setattr(cfg, name, _coerce(name, value))
    return cfg


def load_config(path=None, overrides=None):
    cfg = PipelineConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        nested = [k for k, v in data.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"{path}: config is flat; unexpected table(s) {nested}")
        apply_overrides(cfg, data, path)
    if overrides:
        apply_overrides(cfg, {k: v for k, v in overrides.items() if v is not None}, "command line")
    return cfg.validate()


def dump_config(cfg):
    lines = []
    for name in FIELDS:
        value = getattr(cfg, name)
        if value is None:
            continue
        if isinstance(value, bool):
            lines.append(f"{name} = {'true' if value else 'false'}")
        elif isinstance(value, str):
            lines.append(f'{name} = "{value}"')
        else:
            lines.append(f"{name} = {value!r}")
    return "\n".join(lines) + "\n"
