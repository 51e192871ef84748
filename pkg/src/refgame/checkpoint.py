"""Checkpoint serialization: JSON manifest plus a raw little-endian float payload.

The manifest lists every tensor (values and optimizer accumulator) with its
byte offset into payload.bin, and carries the optimizer hyperparameters, the
training RNG state, and arbitrary run metadata.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .params import ParamStore

MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "payload.bin"
FORMAT = "refgame-checkpoint-v1"


def save_checkpoint(path, stores: dict[str, ParamStore], metadata: dict,
                    rng: np.random.Generator | None = None) -> None:
    """Write stores to path/ as manifest.json + payload.bin."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for store_name in sorted(stores):
        for t in stores[store_name]:
            for kind, arr in (("values", t.values), ("opt_state", t.opt_state)):
                raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
                entries.append({
                    "store": store_name,
                    "name": t.name,
                    "kind": kind,
                    "shape": list(arr.shape),
                    "offset": offset,
                    "nbytes": len(raw),
                })
                chunks.append(raw)
                offset += len(raw)
    manifest = {
        "format": FORMAT,
        "dtype": "<f8",
        "tensors": entries,
        "metadata": metadata,
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    (path / PAYLOAD_NAME).write_bytes(b"".join(chunks))
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(path) -> tuple[dict, dict, np.random.Generator | None]:
    """Read a checkpoint directory.

    Returns (tensors, metadata, rng) where tensors maps store name to
    {tensor name: {"values": array, "opt_state": array}}.
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise DataError(f"unsupported checkpoint format {manifest.get('format')!r}")
    payload = (path / PAYLOAD_NAME).read_bytes()
    tensors: dict[str, dict[str, dict[str, np.ndarray]]] = {}
    for e in manifest["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise DataError(f"payload truncated for tensor {e['name']!r}")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(e["shape"])
        tensors.setdefault(e["store"], {}).setdefault(e["name"], {})[e["kind"]] = arr
    rng = None
    if manifest.get("rng_state") is not None:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = manifest["rng_state"]
    return tensors, manifest["metadata"], rng


def restore_stores(stores: dict[str, ParamStore], tensors: dict) -> None:
    """Load values and optimizer state from load_checkpoint output into live stores."""
    for store_name, store in stores.items():
        saved = tensors.get(store_name)
        if saved is None:
            raise DataError(f"checkpoint is missing store {store_name!r}")
        for t in store:
            entry = saved.get(t.name)
            if entry is None:
                raise DataError(f"checkpoint store {store_name!r} is missing tensor {t.name!r}")
            if entry["values"].shape != t.values.shape:
                raise DataError(
                    f"tensor {t.name!r}: checkpoint shape {entry['values'].shape} "
                    f"!= model shape {t.values.shape}"
                )
            t.values[...] = entry["values"]
            t.opt_state[...] = entry["opt_state"]
