"""Deterministic JSON output and run manifests."""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from . import __version__


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        # non-finite values have no JSON literal
        return format(obj, ".17g") if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (list, dict)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        inner = (",\n").join(pad + _encode(v, indent, level + 1) for v in obj)
        return "[\n" + inner + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = sorted(obj.items())
        inner = (",\n").join(f"{pad}{_encode(k, indent, level + 1)}: {_encode(v, indent, level + 1)}"
                             for k, v in items)
        return "{\n" + inner + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON with sorted keys and floats at 17 significant digits."""
    return _encode(_plain(obj), indent, 0) + "\n"


def sha256_text(text: str | bytes | None) -> str | None:
    if text is None:
        return None
    data = text.encode() if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def manifest(argv, config: dict, model_text=None, seed: int = 0, duration: float = 0.0) -> dict:
    return {
        "command": list(argv),
        "config": config,
        "model_sha256": sha256_text(model_text),
        "seed": seed,
        "version": __version__,
        "duration_s": duration,
    }


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",") if t.strip()], dtype=float)
    except ValueError:
        raise ValueError(f"cannot parse a comma-separated vector from {text!r}") from None


def parse_vectors(text: str) -> list[np.ndarray]:
    """Semicolon-separated list of comma-separated vectors."""
    return [parse_vector(chunk) for chunk in text.split(";") if chunk.strip()]
