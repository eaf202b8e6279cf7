"""Single-file checkpoints.

Layout: ``b"HDFC"`` magic, u32 format version, u32 header length, a UTF-8 JSON
header, then every parameter as a raw little-endian float array in header
order. The header carries the flattened experiment config so a checkpoint is
self-describing.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .io import atomic_write_bytes

MAGIC = b"HDFC"
VERSION = 1
_PREFIX = struct.Struct("<4sII")
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8"}


def save_checkpoint(path, state: dict[str, torch.Tensor], config: dict, meta: dict | None = None) -> None:
    params, blobs, offset = [], [], 0
    for name, t in state.items():
        if t.dtype not in _DTYPES:
            raise DataError(f"checkpoint: parameter {name} has unsupported dtype {t.dtype}")
        arr = t.detach().cpu().numpy().astype(_DTYPES[t.dtype], copy=False)
        blob = arr.tobytes()
        params.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"config": config, "meta": meta or {}, "params": params}, sort_keys=True).encode()
    atomic_write_bytes(path, _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs))


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict, dict]:
    """Returns ``(state, config, meta)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise DataError(f"{path}: not a checkpoint (too short)")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    header = json.loads(raw[_PREFIX.size : _PREFIX.size + hlen])
    body = raw[_PREFIX.size + hlen :]
    state = {}
    for p in header["params"]:
        dt = np.dtype(p["dtype"])
        n = int(np.prod(p["shape"], dtype=np.int64))
        start = p["offset"]
        end = start + n * dt.itemsize
        if end > len(body):
            raise DataError(f"{path}: parameter {p['name']} runs past end of file")
        arr = np.frombuffer(body[start:end], dtype=dt).reshape(p["shape"])
        state[p["name"]] = torch.from_numpy(arr.astype(dt.newbyteorder("="), copy=True))
    return state, header["config"], header["meta"]
