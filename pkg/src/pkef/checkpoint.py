"""Versioned binary checkpoints.

Layout (all integers little-endian):
    magic      4 bytes  b"PKEF"
    version    u16      currently 1
    count      u32      number of parameters
    per parameter:
        name_len u16, name utf-8
        ndim     u8, dims u32 each
        data     float64 little-endian, C order
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PKEF"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_arrays(path: str, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    offset = 10
    arrays = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            arrays[name] = arr.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupted checkpoint") from exc
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays


def save_model(path: str, model) -> None:
    save_arrays(path, {p.name: p.value for p in model.parameters()})


def load_model(path: str, model) -> None:
    """Overwrite the model's parameters in place, checking names and shapes."""
    arrays = load_arrays(path)
    params = {p.name: p for p in model.parameters()}
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names do not match the configured model "
            f"(missing: {missing or 'none'}, unexpected: {extra or 'none'})"
        )
    for name, param in params.items():
        arr = arrays[name]
        if arr.shape != param.value.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: checkpoint "
                f"{arr.shape}, model {param.value.shape}"
            )
        param.value = arr
