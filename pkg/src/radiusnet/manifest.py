"""Run manifests, content hashes and config loading."""

from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .synthgen import ConfigError, GenConfig
from .trainer import NetShape, TrainConfig

MANIFEST_NAME = "manifest.json"


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_outputs(out_dir: str | Path, patterns=("*.csv", "*.json")) -> dict[str, str]:
    """sha256 of every matching file below ``out_dir`` except manifests."""
    out = Path(out_dir)
    files = sorted({p for pat in patterns for p in out.rglob(pat) if p.name != MANIFEST_NAME})
    return {str(p.relative_to(out)): sha256_file(p) for p in files}


def write_manifest(out_dir: str | Path, command: str, config: dict, seeds: dict | None = None, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds or {},
        "artifacts": hash_outputs(out),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "radiusnet_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
    }
    if extra:
        manifest.update(extra)
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return json.loads(path.read_text())


def load_json_config(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON in {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be an object")
    return data


def _build(cls, section: str, d: dict | None):
    d = dict(d or {})
    known = {f.name for f in dataclasses.fields(cls)}
    for key in d:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
    try:
        return cls(**d)
    except ConfigError as e:
        raise ConfigError(f"{section}.{e.key}", str(e).split(": ", 1)[-1]) from None
    except TypeError as e:
        raise ConfigError(section, str(e)) from None


def gen_config(d: dict | None) -> GenConfig:
    return _build(GenConfig, "gen", d)


def train_config(d: dict | None) -> TrainConfig:
    return _build(TrainConfig, "train", d)


def net_shape(d: dict | None) -> NetShape:
    return _build(NetShape, "shape", d)


def resolved(obj) -> dict:
    d = dataclasses.asdict(obj)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
