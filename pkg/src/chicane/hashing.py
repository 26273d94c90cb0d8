"""Content hashing helpers shared by model files and run manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_of_json(obj) -> str:
    """Hash of the canonical JSON encoding of ``obj``."""
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def sha256_of_file(path) -> str:
    h = hashlib.sha256()
    with open(Path(path), "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
