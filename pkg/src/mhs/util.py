"""Small shared helpers: hashing, canonical JSON, provenance blocks."""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any

TOOL_NAME = "mhs"
TOOL_VERSION = "0.1.0"


def canonical_json(value: Any) -> str:
    """Stable serialization used for fingerprints and config hashes."""
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def provenance(config: dict, input_paths: dict[str, str] | None = None) -> dict:
    """Provenance block embedded in JSON artifacts.

    Deliberately timestamp-free so identical invocations produce identical bytes.
    """
    block = {
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
        "config": config,
        "config_hash": sha256_text(canonical_json(config)),
    }
    if input_paths:
        block["inputs"] = {
            name: sha256_file(path) for name, path in sorted(input_paths.items())
        }
    return block


def thread_limit() -> int:
    """Worker cap from MHS_THREADS; 0 or unset means auto (cpu count).

    Workers are separate processes: grid cells are dominated by many small
    numpy calls that serialize on the GIL, so threads would not help.
    """
    raw = os.environ.get("MHS_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value <= 0:
        return os.cpu_count() or 1
    return value
