"""Reconstruct a(x) and f(u) in u_t - (a u_x)_x = f(u) + r(x, t)."""

import json as _json
from pathlib import Path as _Path

from ._core import (
    ConditionViolation,
    ConfigError,
    Error,
    RangeViolation,
    run,
    singular_values,
)
from ._core import forward as _forward
from ._core import invert as _invert

__all__ = [
    "ConditionViolation",
    "ConfigError",
    "Error",
    "RangeViolation",
    "forward",
    "invert",
    "run",
    "singular_values",
]


def _config_text(config):
    """Accept a dict, a JSON string or a path; return (text, base_dir)."""
    if isinstance(config, dict):
        return _json.dumps(config), ""
    if isinstance(config, _Path) or (isinstance(config, str) and not config.lstrip().startswith("{")):
        path = _Path(config)
        return path.read_text(), str(path.parent)
    return config, ""


def forward(config):
    """Forward solve of the config's first run. Returns dict with x, t, u."""
    return _forward(*_config_text(config))


def invert(config):
    """Synthesize data from the config's truth and reconstruct a and f."""
    return _invert(*_config_text(config))
