"""Artifact persistence: atomic writes, canonical JSON, config hashing."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(obj):
    # JSON has no inf/nan; encode them as strings so the output stays valid
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def canonical_json(obj, compact: bool = False) -> str:
    plain = _finite(json.loads(json.dumps(obj, default=_default)))
    if compact:
        return json.dumps(plain, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"
    return json.dumps(plain, sort_keys=True, indent=1, allow_nan=False) + "\n"


def config_hash(config: dict) -> str:
    text = json.dumps(_finite(json.loads(json.dumps(config, default=_default))),
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, payload: dict, kind: str, cfg_hash: str | None = None,
               compact: bool = False) -> Path:
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind}
    if cfg_hash is not None:
        doc["config_hash"] = cfg_hash
    doc.update(payload)
    return atomic_write_text(path, canonical_json(doc, compact))


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header, rows, cfg_hash: str | None = None) -> Path:
    buf = io.StringIO()
    if cfg_hash is not None:
        buf.write(f"# schema_version={SCHEMA_VERSION} config_hash={cfg_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
