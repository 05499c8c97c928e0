"""Binary parameter checkpoints.

Layout: ``TFCK`` magic, u16 version, u32 header byte length, UTF-8 JSON header
(config plus an array manifest of names, shapes and float offsets), then every array
as little-endian float32 in manifest order.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .field import ModelConfig, TopoFieldModel

MAGIC = b"TFCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: TopoFieldModel, path, extra: dict | None = None) -> None:
    manifest = []
    blobs = []
    offset = 0
    for name, t in model.state_dict().items():
        arr = t.detach().cpu().numpy().astype("<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes())
    header = {"config": model.cfg.to_json(), "arrays": manifest}
    if extra:
        header["extra"] = extra
    raw = json.dumps(header).encode()
    Path(path).write_bytes(_PREFIX.pack(MAGIC, VERSION, len(raw)) + raw + b"".join(blobs))


def load_checkpoint(path) -> tuple[TopoFieldModel, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a TFCK checkpoint")
    _, version, hlen = _PREFIX.unpack_from(raw)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen])
    data = np.frombuffer(raw[_PREFIX.size + hlen:], dtype="<f4")
    model = TopoFieldModel(ModelConfig(**header["config"]))
    state = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"]))
        if entry["offset"] + n > len(data):
            raise CheckpointError(f"{path}: truncated array {entry['name']}")
        chunk = data[entry["offset"]:entry["offset"] + n].reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(chunk.astype(np.float32))
    model.load_state_dict(state)
    return model, header.get("extra", {})


def parameter_checksum(model: TopoFieldModel) -> str:
    h = hashlib.sha256()
    for name, t in model.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().astype("<f4").tobytes())
    return h.hexdigest()
