"""Self-describing binary checkpoints.

Layout::

    b"GCACKPT1" | uint64 little-endian header length | JSON header | raw '<f8' data

The header lists every tensor by name with its shape and byte offset into the
data block, plus the model config. Headers are serialized with sorted keys so
that saving the same model twice yields identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .gca import ModelConfig
from .models import build_model
from .numerics import ContractError, ShapeError

MAGIC = b"GCACKPT1"
FORMAT_VERSION = 1
# not learnable, but part of the model's input transform
BUFFERS = ("input.mean", "input.std")


class CheckpointError(ValueError):
    pass


def _model_arrays(model):
    arrays = [(p.name, p.value) for p in model.store]
    arrays.append(("input.mean", model.input_mean))
    arrays.append(("input.std", model.input_std))
    return arrays


def to_bytes(model, extra=None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, value in _model_arrays(model):
        raw = np.ascontiguousarray(value, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"format": FORMAT_VERSION, "model": model.cfg.to_dict(), "tensors": entries,
              "extra": extra or {}}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def save_checkpoint(path, model, extra=None):
    Path(path).write_bytes(to_bytes(model, extra))


def parse(blob: bytes):
    """Split a checkpoint into (header dict, {name: array})."""
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (n,) = struct.unpack("<Q", blob[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(blob[start:start + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")
    data = blob[start + n:]
    arrays = {}
    for t in header["tensors"]:
        name, shape = t["name"], tuple(t["shape"])
        expected = 8 * int(np.prod(shape, dtype=np.int64))
        if t["nbytes"] != expected or t["offset"] + expected > len(data):
            raise CheckpointError(f"tensor {name!r}: truncated or inconsistent data for shape {shape}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=expected // 8,
                                     offset=t["offset"]).reshape(shape).astype(np.float64)
    return header, arrays


def load_into(model, arrays):
    """Copy arrays into ``model``; every tensor must be present with the right shape."""
    expected = dict(_model_arrays(model))
    for name in expected:
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
    for name in arrays:
        if name not in expected:
            raise CheckpointError(f"checkpoint has unexpected tensor {name!r}")
    for name, value in arrays.items():
        if value.shape != expected[name].shape:
            raise CheckpointError(f"tensor {name!r}: checkpoint shape {value.shape} does not match "
                                  f"model shape {expected[name].shape}")
        if not np.all(np.isfinite(value)):
            raise CheckpointError(f"tensor {name!r} holds non-finite values")
    for name, value in arrays.items():
        if name == "input.mean":
            model.input_mean = value.copy()
        elif name == "input.std":
            model.input_std = value.copy()
        else:
            model.store[name].value[...] = value
    return model


def load_checkpoint(path, cfg: ModelConfig | None = None):
    """Rebuild the model stored at ``path``.

    When ``cfg`` is given the checkpoint must match it tensor for tensor;
    otherwise the config saved in the header is used.
    """
    header, arrays = parse(Path(path).read_bytes())
    if cfg is None:
        try:
            cfg = ModelConfig.from_dict(header["model"])
        except (TypeError, KeyError) as exc:
            raise CheckpointError(f"checkpoint carries an invalid model config: {exc}") from None
    try:
        model = build_model(cfg)
    except (ContractError, ShapeError) as exc:
        raise CheckpointError(f"invalid model config: {exc}") from None
    return load_into(model, arrays), header.get("extra", {})
