"""Binary checkpoint container with bit-exact round-trip.

Layout (all integers little-endian):
    magic   b"TLCK"
    u32     format version (1)
    u32     config JSON byte length, then that many UTF-8 bytes
    u32     parameter count
    per parameter:
        u16     name byte length, then UTF-8 name
        u8      rank
        u32[]   extents
        f64[]   row-major data, little-endian
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import InputError

MAGIC = b"TLCK"
VERSION = 1


def save_checkpoint(path: str, params: dict, config: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        cfg = json.dumps(config, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise InputError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise InputError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", fh.read(4))
        config = json.loads(fh.read(clen).decode("utf-8"))
        (n,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(n):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            params[name] = np.array(data, dtype=np.float64)
    return params, config


def restore_model(path: str):
    """Rebuild the model recorded in a checkpoint and load its weights."""
    from .config import build_model
    params, config = load_checkpoint(path)
    model = build_model(config)
    live = model.parameters()
    if set(live) != set(params):
        missing = set(live) ^ set(params)
        raise InputError(f"checkpoint parameter names do not match model: {missing}")
    for name, value in params.items():
        if live[name].value.shape != value.shape:
            raise InputError(f"{name}: shape {value.shape} != {live[name].value.shape}")
        live[name].value[...] = value
    return model, config
