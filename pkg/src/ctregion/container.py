"""Sidecar container helpers: `<name>.json` header + `<name>.bin` payload.

All binary payloads in the pipeline are little-endian and row-major. The
JSON headers are written with sorted keys and fixed separators so repeated
runs produce byte-identical files.
"""

import json
import os
from pathlib import Path

from .errors import SchemaViolation


def bin_path_for(header_path) -> Path:
    """Payload path that pairs with a JSON header path."""
    p = Path(header_path)
    return p.with_suffix(".bin")


def write_json(path, obj) -> None:
    """Write a JSON document atomically with deterministic formatting."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise SchemaViolation(f"missing header file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaViolation(f"expected a JSON object in {path}")
    return obj


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file + rename so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def require_keys(header: dict, keys, where: str) -> None:
    missing = [k for k in keys if k not in header]
    if missing:
        raise SchemaViolation(f"{where}: missing keys {missing}")
