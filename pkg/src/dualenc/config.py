"""Flat key=value config files and the training-run configuration.

Config files are UTF-8 text, one `key=value` per line, '#' starts a comment.
Unknown keys are rejected. Every training run writes its resolved config
beside the checkpoint.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ConfigError


def parse_config_text(text):
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def format_config(mapping):
    return "".join(f"{k}={mapping[k]}\n" for k in sorted(mapping))


def save_config_file(path, mapping):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(mapping))


def _coerce(value, target):
    if isinstance(target, bool):
        v = str(value).lower()
        if v in ("1", "true", "yes"):
            return True
        if v in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected boolean, got {value!r}")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    if isinstance(target, tuple):
        if isinstance(value, tuple):
            return value
        parts = [p for p in str(value).split(",") if p != ""]
        kind = type(target[0]) if target else float
        return tuple(kind(p) for p in parts)
    return str(value)


def apply_overrides(cfg, overrides):
    """Set dataclass fields from a {key: str} mapping; unknown keys rejected."""
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {type(cfg).__name__}")
        setattr(cfg, key, _coerce(value, known[key]))
    if hasattr(cfg, "validate"):
        cfg.validate()
    return cfg


def config_dict(cfg):
    out = {}
    for key, value in asdict(cfg).items():
        if isinstance(value, tuple):
            out[key] = ",".join(str(v) for v in value)
        else:
            out[key] = str(value)
    return out


@dataclass
class TrainConfig:
    """Optimization and augmentation settings for all training recipes."""

    lr_seed: float = 1e-3
    lr_finetune: float = 1e-4
    lr_pretrain: float = 1e-2
    momentum: float = 0.9
    clip_norm: float = 5.0
    batch_size: int = 16
    epochs: int = 15
    dropout: float = 0.3
    spec_t_max: int = 20
    spec_m_t: int = 2
    spec_f_max: int = 8
    spec_m_f: int = 1
    max_train_shift: int = 0
    freeze: tuple = ()
    sel_unit: str = "utt"
    seed: int = 0

    def validate(self):
        if self.sel_unit not in ("utt", "frame"):
            raise ConfigError(f"sel_unit must be utt or frame, got {self.sel_unit!r}")
        if not self.lr_finetune < self.lr_seed:
            raise ConfigError(
                f"fine-tune lr {self.lr_finetune} must be below seed lr {self.lr_seed}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")
        return self
