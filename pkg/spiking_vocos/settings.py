"""
Ambient settings for the spiking vocoder engine.

Values are looked up in the process environment first, then in a `.env`
file in the working directory, then fall back to built-in defaults.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Dict, Optional, Tuple

import torch

from .errors import InvalidConfig

_ENV_CACHE: Optional[Dict[str, str]] = None

PRECISIONS = {"f32": torch.float32, "f64": torch.float64}


def _parse_env_line(raw: str) -> Optional[Tuple[str, str]]:
    """`KEY=value`, `export KEY="value"`; comments and blank lines give None."""
    line = raw.strip()
    if line.startswith("export "):
        line = line[len("export "):].lstrip()
    name, sep, value = line.partition("=")
    name = name.strip()
    if not sep or not name or name.startswith("#"):
        return None
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        value = value[1:-1]
    return name, value


def _load_env_config(path: Optional[Path] = None) -> Dict[str, str]:
    env_file = path or Path.cwd() / ".env"
    if not env_file.is_file():
        return {}
    try:
        text = env_file.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InvalidConfig(f"{env_file}: unreadable settings file ({exc}).") from exc
    return dict(pair for pair in map(_parse_env_line, text.splitlines()) if pair is not None)


def reset_cache() -> None:
    global _ENV_CACHE
    _ENV_CACHE = None


def get_setting(key: str, default: Optional[str] = None) -> Optional[str]:
    global _ENV_CACHE
    value = os.environ.get(key)
    if value is None or value == "":
        if _ENV_CACHE is None:
            _ENV_CACHE = _load_env_config()
        value = _ENV_CACHE.get(key)
    if value is None or value == "":
        value = default
    return value


def get_int_setting(key: str, default: int) -> int:
    value = get_setting(key, str(default))
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{key} must be an integer, got {value!r}.") from exc


def precision_name() -> str:
    value = (get_setting("SVOC_PRECISION", "f32") or "f32").lower()
    if value not in PRECISIONS:
        raise InvalidConfig(f"SVOC_PRECISION must be one of {sorted(PRECISIONS)}, got {value!r}.")
    return value


def compute_dtype() -> torch.dtype:
    """Model-wide compute precision selected by SVOC_PRECISION."""
    return PRECISIONS[precision_name()]


def default_seed() -> int:
    return get_int_setting("SVOC_SEED", 0)


def log_level() -> str:
    return (get_setting("SVOC_LOG_LEVEL", "WARNING") or "WARNING").upper()
