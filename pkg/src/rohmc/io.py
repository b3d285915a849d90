"""Raw array files with JSON sidecars, canonical JSON and checksums.

Arrays are stored as little-endian float64 bytes with no header.  The
sidecar ``<stem>.json`` next to ``<stem>.bin`` records shape and memory
layout plus any caller metadata.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ContractError

__all__ = [
    "canonical_json",
    "read_array",
    "read_json",
    "sha256_bytes",
    "sha256_file",
    "sidecar_path",
    "write_array",
    "write_json",
]

_LAYOUTS = {"C": "row-major", "F": "column-major"}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not np.isfinite(v):
            return None if np.isnan(v) else ("inf" if v > 0 else "-inf")
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj):
    """Sorted-key, two-space-indented JSON text ending in a newline."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8")
    return sha256_file(path)


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def write_array(path, arr, order="C", meta=None):
    """Write ``arr`` as raw ``<f8`` bytes in ``order`` plus a sidecar.

    Returns the sha256 of the data file.
    """
    if order not in _LAYOUTS:
        raise ContractError(f"order must be 'C' or 'F', got {order!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    a = np.asarray(arr, dtype="<f8")
    data = a.tobytes(order=order)
    path.write_bytes(data)
    side = {
        "data_file": path.name,
        "dtype": "float64",
        "byte_order": "little",
        "shape": list(a.shape),
        "layout": _LAYOUTS[order],
        "sha256": sha256_bytes(data),
    }
    if meta:
        side["meta"] = meta
    write_json(sidecar_path(path), side)
    return side["sha256"]


def read_array(path):
    """Read an array written by :func:`write_array`; returns ``(array, sidecar)``."""
    path = Path(path)
    side = read_json(sidecar_path(path))
    order = "F" if side["layout"] == "column-major" else "C"
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    shape = tuple(side["shape"])
    if raw.size != int(np.prod(shape)):
        raise ContractError(f"{path}: expected {np.prod(shape)} values, found {raw.size}")
    return raw.reshape(shape, order=order).astype(np.float64), side
