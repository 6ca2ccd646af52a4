"""Config hashing and sidecar metadata for emitted artifacts."""

import hashlib
import json
from pathlib import Path


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(obj):
    """Short sha256 digest of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def meta_path(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_meta(path, **fields):
    """Write ``<path>.meta.json`` next to an artifact."""
    target = meta_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(fields, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return target


def read_meta(path):
    target = meta_path(path)
    if not target.is_file():
        return None
    return json.loads(target.read_text(encoding="utf-8"))
