"""Config hashing and provenance records embedded in every report."""

import hashlib
import json

from . import __version__


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def provenance(config_obj, dataset_hashes=None):
    return {
        "tool_version": __version__,
        "config_hash": config_hash(config_obj),
        "dataset_hashes": dict(dataset_hashes or {}),
    }
