"""Declarative run configuration: a flat key-value file plus CLI overrides.

The file format is one ``key = value`` per line (``#`` starts a comment),
chosen so archived ablation configs diff cleanly. The effective
configuration, after overrides, is archived next to the checkpoints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .training import TrainConfig


class ConfigError(ValueError):
    """Missing, unknown, or unparsable configuration value."""


@dataclass
class RunConfig:
    # Data and output paths
    manifest: str = ""
    lexicon: str = ""
    codec: str = ""
    out_dir: str = ""
    val_manifest: str = ""
    pad_side: str = "right"
    cache_images: bool = False
    # Run control
    seed: int = 0
    max_iters: int = 1000
    checkpoint_every: int = 1000
    fid_every: int = 0  # 0 disables periodic FID
    grid_every: int = 0  # 0 disables periodic sample grids
    fid_count: int = 256
    grid_words: str = ""  # comma-separated probe words; default: lexicon samples
    # Training hyperparameters (see TrainConfig)
    alpha: float | None = 1.0
    adv_loss: str = "hinge"
    self_attention: bool = True
    conditioning: str = "cbn"
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.999
    batch_size: int = 64
    clip_norm: float = 10.0
    rec_channels: str = "32,64,128,128,128"
    rec_v_strides: str = "2,2,2,2,2"
    rec_h_strides: str = "1,1,2,2,1"

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            alpha=self.alpha,
            adv_loss=self.adv_loss,
            self_attention=self.self_attention,
            conditioning=self.conditioning,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            batch_size=self.batch_size,
            clip_norm=self.clip_norm,
            rec_channels=_int_tuple("rec_channels", self.rec_channels),
            rec_v_strides=_int_tuple("rec_v_strides", self.rec_v_strides),
            rec_h_strides=_int_tuple("rec_h_strides", self.rec_h_strides),
        )


def _int_tuple(key: str, raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(","))
    except ValueError:
        raise ConfigError(f"field {key}: expected comma-separated integers, got {raw!r}") from None


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"field {key}: expected a boolean, got {raw!r}")


def _parse_alpha(raw: str) -> float | None:
    lowered = raw.strip().lower()
    if lowered in ("disabled", "none", "off"):
        return None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"field alpha: expected a number or 'disabled', got {raw!r}") from None


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read raw key-value pairs, erroring with line numbers on bad syntax."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    raw: dict[str, str] = {}
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{i}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def build_run_config(
    file_values: dict[str, str] | None = None,
    overrides: dict[str, object] | None = None,
) -> RunConfig:
    """Merge file values and CLI overrides (overrides win) into a RunConfig."""
    cfg = RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    for key, raw in (file_values or {}).items():
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        setattr(cfg, key, _coerce(key, raw, known[key].type))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        setattr(cfg, key, _coerce(key, str(value), known[key].type) if isinstance(value, str) else value)
    return cfg


def _coerce(key: str, raw: str, annotation: object) -> object:
    if key == "alpha":
        return _parse_alpha(raw)
    if annotation in ("bool", bool):
        return _parse_bool(key, raw)
    if annotation in ("int", int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"field {key}: expected an integer, got {raw!r}") from None
    if annotation in ("float", float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"field {key}: expected a number, got {raw!r}") from None
    return raw


def validate_train_paths(cfg: RunConfig) -> None:
    """Check the fields cmd_train needs, naming the first missing one."""
    for field_name in ("manifest", "lexicon", "codec", "out_dir"):
        value = getattr(cfg, field_name)
        if not value:
            raise ConfigError(f"field {field_name} is required for training")
    for field_name in ("manifest", "lexicon", "codec"):
        if not Path(getattr(cfg, field_name)).is_file():
            raise ConfigError(
                f"field {field_name}: file {getattr(cfg, field_name)!r} does not exist"
            )
    if cfg.pad_side not in ("right", "left"):
        raise ConfigError(f"field pad_side: expected 'right' or 'left', got {cfg.pad_side!r}")


def archive_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    """Write the effective configuration next to the checkpoints it produced."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "alpha" and value is None:
            value = "disabled"
        lines.append(f"{f.name} = {value}\n")
    path = out_dir / "effective_config.cfg"
    path.write_text("".join(lines), encoding="utf-8")
    return path
