"""Flat binary checkpoint format.

Layout (all integers little-endian)::

    bytes 0-7    magic  b"CN2CKPT\\0"
    bytes 8-11   uint32 format version (currently 1)
    bytes 12-19  uint64 header length N
    N bytes      UTF-8 JSON header, keys sorted
    rest         float64 little-endian arrays, concatenated in header order

The header lists every array as ``{"name", "shape", "offset"}`` (offset in
bytes from the start of the data section) next to the architecture,
normalization statistics, feature list, window geometry, seed, training
state and a SHA-256 hash of the run configuration.  Writing the same model
twice gives identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..timeseries import NormalizationStats
from .gru import GruForecaster
from .mlp import MlpForecaster
from .optim import AdamState

MAGIC = b"CN2CKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(model, path: str | Path, config: dict | None = None, training: dict | None = None,
                    adam: AdamState | None = None) -> None:
    arrays = {f"param.{k}": v for k, v in model.params().items()}
    if adam is not None:
        for k in sorted(adam.m):
            arrays[f"adam.m.{k}"] = adam.m[k]
            arrays[f"adam.v.{k}"] = adam.v[k]
    entries, offset, blobs = [], 0, []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": VERSION,
        "architecture": model.architecture(),
        "seed": model.seed,
        "stats": None if model.stats is None else model.stats.as_dict(),
        "stats_order": None if model.stats is None else list(model.stats.names),
        "features": list(getattr(model, "features", ()) or ()),
        "window": list(getattr(model, "window", ()) or ()),
        "arrays": entries,
        "config": config or {},
        "config_hash": config_hash(config or {}),
        "training": training or {},
        "adam_step": None if adam is None else adam.step,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path):
    """Return ``(model, header, adam_state_or_None)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[20:20 + hlen])
    data = raw[20 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = np.frombuffer(data, "<f8", count, e["offset"]).reshape(e["shape"]).copy()
    arch = header["architecture"]
    if arch["kind"] == "gru":
        model = GruForecaster.zeros(arch["n_features"], arch["hidden_sizes"], arch["n_out"])
    elif arch["kind"] == "mlp":
        model = MlpForecaster.zeros(arch["n_features"], arch["in_len"], arch["hidden_sizes"], arch["n_out"])
    else:
        raise CheckpointError(f"unknown model kind {arch['kind']!r}")
    model.seed = header["seed"]
    model.set_params({k[6:]: v for k, v in arrays.items() if k.startswith("param.")})
    if header["stats"] is not None:
        d = header["stats"]
        order = header.get("stats_order") or list(d)
        model.stats = NormalizationStats.from_dict({n: d[n] for n in order})
    model.features = tuple(header["features"])
    model.window = tuple(header["window"])
    adam = None
    if header.get("adam_step") is not None:
        adam = AdamState(step=int(header["adam_step"]))
        for k, v in arrays.items():
            if k.startswith("adam.m."):
                adam.m[k[7:]] = v
            elif k.startswith("adam.v."):
                adam.v[k[7:]] = v
    return model, header, adam
