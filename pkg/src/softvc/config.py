"""``key = value`` configuration files with namespaced, typed keys.

Defaults encode the reference setup (100 units, lr 2e-5 for the soft
encoder, 128-band mels, 50 enrollments per EER trial); desk-scale runs
override ``*.steps`` and learning rates from a file or the command line.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

from softvc.errors import ConfigError, ParseError

# key -> (type, default)
DEFAULTS: dict[str, tuple[type, Any]] = {
    "seed": (int, 42),
    "mel.n_mels": (int, 128),
    "kmeans.k": (int, 100),
    "kmeans.tol": (float, 1e-4),
    "kmeans.max_iter": (int, 100),
    "kmeans.n_init": (int, 10),
    "kmeans.speaker_normalize": (bool, False),
    "soft.tau": (float, 0.1),
    "soft.dim": (int, 256),
    "soft.lr": (float, 2e-5),
    "soft.steps": (int, 25000),
    "soft.batch_frames": (int, 256),
    "acoustic.hidden": (int, 256),
    "acoustic.upsample_factor": (int, 2),
    "acoustic.lr": (float, 1e-3),
    "acoustic.steps": (int, 50000),
    "acoustic.batch_frames": (int, 256),
    "acoustic.val_fraction": (float, 0.0),
    "acoustic.eval_every": (int, 100),
    "acoustic.align": (str, "truncate"),
    "griffin_lim.iters": (int, 32),
    "eer.n_enroll": (int, 50),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(key: str, value: Any) -> Any:
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    typ = DEFAULTS[key][0]
    if isinstance(value, typ) and not (typ is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ.__name__}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = coerce(key, value)
    return values


def load_config(path) -> dict[str, Any]:
    return parse_config_text(Path(path).read_text(), str(path))


def resolve(file_values: Mapping[str, Any] | None = None, overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Defaults, then file values, then non-``None`` overrides."""
    cfg = {k: default for k, (_, default) in DEFAULTS.items()}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is not None:
                cfg[key] = coerce(key, value)
    return cfg


def format_config(cfg: Mapping[str, Any]) -> str:
    return "\n".join(f"{k} = {cfg[k]}" for k in sorted(cfg))
