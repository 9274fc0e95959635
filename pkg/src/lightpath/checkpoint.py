"""Binary checkpoint format.

Layout (little-endian)::

    b"LPCK" | version:u32 | config_len:u32 | config JSON (utf-8)
    then per parameter, in ParameterSet order:
    name_len:u32 | name (utf-8) | rank:u32 | dims:u64 * rank | values:f64 * prod(dims)

The config JSON is written with sorted keys and no whitespace so a
save -> load -> save cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"LPCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(config: dict, arrays: Iterable[tuple[str, np.ndarray]]) -> bytes:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg]
    for name, arr in arrays:
        arr = np.require(np.asarray(arr, dtype="<f8"), requirements="C")  # keeps 0-d shapes
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_checkpoint(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    try:
        version, cfg_len = struct.unpack_from("<II", blob, 4)
    except struct.error:
        raise CheckpointError("truncated header") from None
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    off = 12
    if off + cfg_len > len(blob):
        raise CheckpointError("truncated config")
    try:
        config = json.loads(blob[off : off + cfg_len].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"unreadable config: {exc}") from None
    off += cfg_len
    arrays: dict[str, np.ndarray] = {}
    try:
        while off < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            if off + name_len > len(blob):
                raise CheckpointError("truncated parameter name")
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if off + 8 * count > len(blob):
                raise CheckpointError(f"truncated values for {name}")
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(dims).astype(np.float64)
            off += 8 * count
    except struct.error:
        raise CheckpointError("truncated parameter record") from None
    except UnicodeDecodeError:
        raise CheckpointError("corrupt parameter name") from None
    return config, arrays


def save_checkpoint(file, config: dict, arrays: Iterable[tuple[str, np.ndarray]]) -> None:
    Path(file).write_bytes(encode_checkpoint(config, arrays))


def load_checkpoint(file) -> tuple[dict, dict[str, np.ndarray]]:
    return decode_checkpoint(Path(file).read_bytes())


def file_digest(file) -> str:
    return hashlib.sha256(Path(file).read_bytes()).hexdigest()


def prefixed(prefix: str, params) -> list[tuple[str, np.ndarray]]:
    return [(f"{prefix}.{name}", t.data) for name, t in params.items()]


def strip_prefix(prefix: str, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    head = prefix + "."
    return {k[len(head) :]: v for k, v in arrays.items() if k.startswith(head)}
