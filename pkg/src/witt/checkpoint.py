"""Portable named-tensor checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic  b"WITTCKPT"
    u32       format version (1)
    u64       header length L
    L bytes   UTF-8 JSON header:
                {"format_version": 1,
                 "meta": {...},                     # free-form, e.g. model config, manifest hash
                 "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    ...       tensor payload; each tensor is row-major little-endian data
              starting at ``offset`` bytes after the end of the header

Supported dtypes: float32, float64, int64.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

MAGIC = b"WITTCKPT"
FORMAT_VERSION = 1
DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    pass


def _to_numpy(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    return np.asarray(t)


def save_tensors(path, tensors: Mapping[str, object], meta: Mapping | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, value in tensors.items():
        arr = _to_numpy(value)
        dtype = arr.dtype.name
        if dtype not in DTYPES:
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {dtype}")
        raw = np.ascontiguousarray(arr, dtype=DTYPES[dtype]).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": dict(meta or {}), "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def read_header(path) -> dict:
    with Path(path).open("rb") as fh:
        return _read_header(fh)[0]


def _read_header(fh):
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a WITT checkpoint (bad magic)")
    version, length = struct.unpack("<IQ", fh.read(12))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(fh.read(length).decode())
    return header, len(MAGIC) + 12 + length


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns ({name: array}, meta)."""
    raw = Path(path).read_bytes()
    header, start = _read_header(io.BytesIO(raw))
    tensors = {}
    for e in header["tensors"]:
        begin = start + e["offset"]
        buf = raw[begin:begin + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise CheckpointError(f"truncated data for tensor {e['name']!r}")
        tensors[e["name"]] = np.frombuffer(buf, dtype=DTYPES[e["dtype"]]).reshape(e["shape"]).astype(e["dtype"])
    return tensors, header["meta"]


def module_tensors(module: torch.nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + k: v for k, v in module.state_dict().items()}


def load_module(module: torch.nn.Module, tensors: Mapping[str, np.ndarray], prefix: str = "") -> None:
    state = {}
    for key, ref in module.state_dict().items():
        name = prefix + key
        if name not in tensors:
            raise CheckpointError(f"checkpoint lacks tensor {name!r}")
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(f"{name!r}: shape {arr.shape} != expected {tuple(ref.shape)}")
        state[key] = torch.from_numpy(np.array(arr)).to(ref.dtype)
    module.load_state_dict(state)


def save_model(path, model, meta: Mapping | None = None, extra: Mapping[str, object] | None = None) -> None:
    """Model parameters (prefixed ``model.``) plus a self-describing ``model_config`` meta entry."""
    tensors = module_tensors(model, "model.")
    tensors.update(extra or {})
    full_meta = {"model_config": model.config.to_dict(), "use_modnet": bool(model.use_modnet)}
    full_meta.update(meta or {})
    save_tensors(path, tensors, full_meta)


def load_model(path):
    """Rebuild a :class:`~witt.codec.WITT` from a checkpoint; returns (model, tensors, meta)."""
    from .codec import WITT, ModelConfig

    tensors, meta = load_tensors(path)
    if "model_config" not in meta:
        raise CheckpointError("checkpoint has no model_config manifest")
    model = WITT(ModelConfig(**meta["model_config"]))
    load_module(model, tensors, "model.")
    model.use_modnet = bool(meta.get("use_modnet", True))
    return model, tensors, meta
