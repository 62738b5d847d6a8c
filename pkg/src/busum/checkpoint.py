"""BUSM checkpoint container.

Layout: magic b"BUSM" | uint32 LE format version | uint64 LE header length |
UTF-8 JSON header | raw little-endian float32 payloads in header order.
The header carries tensor names/shapes/offsets plus the run config, so a
checkpoint is self-describing.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"BUSM"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(tensors: dict[str, "np.ndarray | Tensor"], config: dict, path: str,
                    model: str = "model") -> None:
    entries = []
    payloads = []
    offset = 0
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        shape = list(np.asarray(arr).shape)
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": shape, "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"model": model, "config": config, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict, str]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError("not a BUSM checkpoint")
    if len(raw) < 16:
        raise CheckpointError(f"truncated checkpoint: expected 16 header bytes, got {len(raw)}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} is not supported by reader version {FORMAT_VERSION}"
        )
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header_end = 16 + header_len
    if len(raw) < header_end:
        raise CheckpointError(f"truncated checkpoint: expected {header_end} bytes at offset {len(raw)}")
    try:
        header = json.loads(raw[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"corrupt checkpoint header: {err}") from None
    tensors: dict[str, np.ndarray] = {}
    payload_start = header_end
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = payload_start + entry["offset"]
        end = start + 4 * count
        if len(raw) < end:
            raise CheckpointError(f"truncated checkpoint: expected {end} bytes at offset {start}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=start).reshape(shape)
        tensors[entry["name"]] = arr.copy()
    return tensors, header.get("config", {}), header.get("model", "model")
