"""Stage artifacts on disk: canonical JSON plus metadata sidecars for CSV tables."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

from .errors import MissingArtifactError

ARTIFACT_VERSION = "1"


def _sanitize(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, fixed indentation, non-finite floats as null: same input, same bytes."""
    return json.dumps(_sanitize(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def metadata(stage: str, seed: int, cfg_hash: str) -> dict:
    from . import __version__

    return {"stage": stage, "seed": seed, "config_hash": cfg_hash, "artifact_version": ARTIFACT_VERSION,
            "package_version": __version__}


def write_json(path: str | Path, payload: dict, meta: dict) -> Path:
    path = Path(path)
    path.write_text(canonical_json({"meta": meta, **payload}), encoding="utf-8")
    return path


def write_sidecar(csv_path: str | Path, meta: dict) -> Path:
    side = Path(str(csv_path) + ".meta.json")
    side.write_text(canonical_json(meta), encoding="utf-8")
    return side


def read_json(path: str | Path, stage: str) -> dict:
    """Load an upstream artifact, naming the stage that produces it when absent."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{path.name} not found in {path.parent}: run the '{stage}' stage first")
    return json.loads(path.read_text(encoding="utf-8"))
