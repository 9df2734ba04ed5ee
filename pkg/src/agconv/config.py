"""Run configuration: a flat ``key = value`` text format mapped onto :class:`TrainConfig`."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any, Mapping

from .exceptions import ConfigError
from .pointcloud import AugmentConfig


@dataclass
class TrainConfig:
    task: str = "cls"
    conv: str = "agconv"
    lr_max: float = 0.1
    lr_min: float = 0.001
    momentum: float = 0.9
    grad_clip: float = 1.0
    epochs: int = 10
    batch_size: int = 8
    k: int = 20
    seed: int = 0
    hidden: int = 64
    widths: tuple[int, ...] = ()
    emb: int = 1024
    head: tuple[int, ...] = (512, 256)
    norm: bool = True
    slope: float = 0.2
    stn: bool = False
    use_normals: bool = False
    data: str = ""
    shapes: tuple[str, ...] = ("sphere", "cube", "torus")
    n_train: int = 300
    n_test: int = 60
    n_points: int = 256
    augment: bool = True
    scale_low: float = 0.8
    scale_high: float = 1.25
    shift: float = 0.1
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    keep_fractions: tuple[float, ...] = (1.0, 0.75, 0.5, 0.25)
    noise_levels: tuple[float, ...] = (0.0, 0.02, 0.05)
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in ("cls", "seg"):
            raise ConfigError(f"task must be 'cls' or 'seg', got {self.task!r}")
        if self.lr_min > self.lr_max:
            raise ConfigError("lr_min must not exceed lr_max")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0 (0 disables clipping)")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.scale_low, self.scale_high, self.shift, self.jitter_sigma, self.jitter_clip)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, value: Any) -> Any:
    kind = _FIELD_TYPES[key]
    if not isinstance(value, str):
        return tuple(value) if kind.startswith("tuple") else value
    text = value.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "str":
            return text
        item = {"tuple[int, ...]": int, "tuple[float, ...]": float, "tuple[str, ...]": str}[kind]
        return tuple(item(p.strip()) for p in text.split(",") if p.strip())
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {err}") from None


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def make_config(values: Mapping[str, Any] | None = None, base: TrainConfig | None = None) -> TrainConfig:
    """Build a config from raw values; unknown keys are an error."""
    values = dict(values or {})
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    changes = {k: _coerce(k, v) for k, v in values.items()}
    base = base or TrainConfig()
    return dataclasses.replace(base, **changes)


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))
