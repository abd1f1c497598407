"""``key = value`` run configuration with typed keys and strict validation."""

from __future__ import annotations

from pathlib import Path

from .io import read_key_values


class ConfigError(ValueError):
    pass


SEARCH_DEFAULTS: dict[str, object] = {
    "seed": 0,
    "jobs": 1,
    # budget
    "iterations": 2,
    "candidates": 8,
    "proxy_epochs": 2,
    "retrain_epochs": 2,
    # backbone
    "B": 5,
    "N": 1,
    "F": 8,
    # optimiser
    "lr": 0.05,
    "momentum": 0.9,
    "weight_decay": 3e-4,
    "batch_size": 32,
    "cutout": 0,
    # surrogate
    "nao_epochs": 1000,
    "nao_lr": 0.01,
    "d": 64,
    "lam": 0.8,
    "eta": 0.01,
    "steps": 10,
    # data
    "n_train": 512,
    "n_val": 256,
    "n_test": 256,
    "image_size": 0,  # 0 = dataset default
}


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None


def load_config(path, defaults: dict[str, object]) -> dict[str, object]:
    """Read ``path`` and return the values it sets, typed like ``defaults``.

    Unknown keys are an error.
    """
    values = read_key_values(Path(path))
    unknown = sorted(set(values) - set(defaults))
    if unknown:
        raise ConfigError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    return {k: _convert(k, v, defaults[k]) for k, v in values.items()}


def resolve(defaults: dict[str, object], path=None, overrides: dict[str, object] | None = None) -> dict[str, object]:
    """Defaults, then the config file, then non-None flag overrides."""
    cfg = dict(defaults)
    if path is not None:
        cfg.update(load_config(path, defaults))
    for k, v in (overrides or {}).items():
        if v is not None:
            if k not in defaults:
                raise ConfigError(f"unknown setting {k!r}")
            cfg[k] = v
    return cfg


def format_config(cfg: dict[str, object]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))
