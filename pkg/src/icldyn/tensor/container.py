"""Named-tensor checkpoint container.

Layout: ``u64 LE header_len | UTF-8 JSON header | packed LE data``. The header maps each
tensor name to ``{dtype: "f32", shape, byte_offset, byte_len}`` (offsets relative to the
data region) and carries ``__config__`` and ``__stats__`` entries.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import torch

from ..errors import IoFailure, SchemaMismatch

_RESERVED = ("__config__", "__stats__")


def encode(tensors: Mapping[str, torch.Tensor], config: dict, stats: Optional[dict]) -> bytes:
    header: dict = {"__config__": config, "__stats__": stats}
    chunks, offset = [], 0
    for name, t in tensors.items():
        if name.startswith("__"):
            raise ValueError(f"tensor name {name!r} collides with reserved header keys")
        arr = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        raw = arr.tobytes()
        header[name] = {"dtype": "f32", "shape": list(arr.shape), "byte_offset": offset, "byte_len": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(head)) + head + b"".join(chunks)


def decode(data: bytes) -> tuple[dict[str, torch.Tensor], dict, Optional[dict]]:
    if len(data) < 8:
        raise SchemaMismatch("checkpoint truncated")
    (hlen,) = struct.unpack_from("<Q", data)
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaMismatch(f"unreadable checkpoint header: {exc}") from exc
    if "__config__" not in header:
        raise SchemaMismatch("checkpoint header lacks __config__")
    body = memoryview(data)[8 + hlen :]
    tensors: dict[str, torch.Tensor] = {}
    entries = sorted((v["byte_offset"], k) for k, v in header.items() if k not in _RESERVED)
    for _, name in entries:
        e = header[name]
        if e.get("dtype") != "f32":
            raise SchemaMismatch(f"unsupported dtype {e.get('dtype')} for {name}")
        a, n = e["byte_offset"], e["byte_len"]
        if a + n > len(body) or n != 4 * int(np.prod(e["shape"], dtype=np.int64)):
            raise SchemaMismatch(f"tensor {name} does not fit the data region")
        arr = np.frombuffer(body[a : a + n], dtype="<f4").reshape(e["shape"]).copy()
        tensors[name] = torch.from_numpy(arr)
    return tensors, header["__config__"], header.get("__stats__")


def save(path, tensors, config: dict, stats: Optional[dict] = None):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(encode(tensors, config, stats))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data)
