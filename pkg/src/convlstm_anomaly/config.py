"""Flat `key = value` text configuration files.

One format serves run configs and scene specs: one assignment per line,
`#` starts a comment, blank lines ignored. Unknown keys are errors so
typos fail loudly.
"""

from __future__ import annotations

from dataclasses import fields

from .errors import ConfigError
from .network import NetworkConfig
from .training import TrainConfig


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read(), source=str(path))


def parse_bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def parse_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def parse_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def parse_pair(value: str, key: str) -> tuple[float, float]:
    parts = value.replace(",", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"{key}: expected two numbers, got {value!r}")
    return (parse_float(parts[0], key), parse_float(parts[1], key))


_NETWORK_KEYS = {f.name for f in fields(NetworkConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def parse_run_config(kv: dict[str, str]) -> tuple[NetworkConfig, TrainConfig]:
    """Split a flat mapping into network and training configs."""
    unknown = sorted(set(kv) - _NETWORK_KEYS - _TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    net = NetworkConfig.from_dict({k: v for k, v in kv.items() if k in _NETWORK_KEYS})

    targs = {}
    for key, value in kv.items():
        if key not in _TRAIN_KEYS:
            continue
        if key == "optimizer":
            targs[key] = value.strip()
        elif key in ("learning_rate", "decay", "validation_fraction"):
            targs[key] = parse_float(value, key)
        elif key == "clip_norm":
            targs[key] = None if value == "" else parse_float(value, key)
        else:
            targs[key] = parse_int(value, key)
    return net, TrainConfig(**targs)


def load_run_config(path) -> tuple[NetworkConfig, TrainConfig]:
    return parse_run_config(read_kv_file(path))


def write_run_config(path, net: NetworkConfig, train: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in (net.to_dict(), train.to_dict()):
            for key, value in d.items():
                fh.write(f"{key} = {value}\n")
