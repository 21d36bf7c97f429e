"""Flat tensor archive: JSON header + raw row-major payload + checksum.

Layout:
    magic  b"CGAR1\\n"
    8-byte big-endian header length
    header JSON (sorted keys): {"meta": ..., "tensors": [table]}
    payload (concatenated little-endian tensor data)
    32-byte SHA-256 of everything above

Round-trips are bit-exact; any corruption fails the checksum.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np
import torch
from torch import Tensor

from .errors import FormatError, IntegrityError

MAGIC = b"CGAR1\n"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "|u1"}


def _to_numpy(t: Tensor | np.ndarray) -> np.ndarray:
    if isinstance(t, Tensor):
        t = t.detach().cpu().numpy()
    return np.ascontiguousarray(t)


def save_archive(path: str, tensors: dict[str, Tensor | np.ndarray], meta: dict) -> None:
    arrays = {name: _to_numpy(t) for name, t in tensors.items()}
    table = []
    offset = 0
    for name in sorted(arrays):
        a = arrays[name]
        dtype = str(a.dtype)
        if dtype not in _DTYPES:
            raise FormatError(f"unsupported dtype {dtype} for tensor {name}")
        nbytes = a.astype(_DTYPES[dtype]).nbytes
        table.append(
            {"name": name, "dtype": dtype, "shape": list(a.shape), "offset": offset, "nbytes": nbytes}
        )
        offset += nbytes
    header = json.dumps({"meta": meta, "tensors": table}, sort_keys=True, separators=(",", ":")).encode()
    h = hashlib.sha256()
    with open(path, "wb") as f:
        for chunk in (MAGIC, struct.pack(">Q", len(header)), header):
            f.write(chunk)
            h.update(chunk)
        for entry in table:
            data = arrays[entry["name"]].astype(_DTYPES[entry["dtype"]]).tobytes()
            f.write(data)
            h.update(data)
        f.write(h.digest())


def load_archive(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 8 + 32 or not blob.startswith(MAGIC):
        raise FormatError(f"not a tensor archive: {path}")
    digest = blob[-32:]
    if hashlib.sha256(blob[:-32]).digest() != digest:
        raise IntegrityError(f"checksum mismatch in {path}")
    (hlen,) = struct.unpack(">Q", blob[len(MAGIC) : len(MAGIC) + 8])
    hstart = len(MAGIC) + 8
    header = json.loads(blob[hstart : hstart + hlen])
    payload = blob[hstart + hlen : -32]
    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        a = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = a.astype(entry["dtype"])
    return tensors, header["meta"]
