"""Model checkpoint serialization.

Binary layout (all integers little-endian):

    bytes 0..3   magic b"VHAS"
    bytes 4..5   format version, u16 (currently 1)
    then, until EOF, one record per parameter, sorted by name:
        u32   name length in bytes
        ...   name, UTF-8
        u32   rank
        u32   each dimension
        ...   payload, little-endian float64, C order

Sorting makes the file canonical: save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from visr.errors import DataError

MAGIC = b"VHAS"
VERSION = 1


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        enc = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(enc)))
        chunks.append(enc)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic {blob[:4]!r})")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    off = 6
    total = len(blob)
    while off < total:
        try:
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
        except (struct.error, ValueError) as exc:
            raise DataError(f"{path}: truncated or corrupt checkpoint") from exc
        if off > total:
            raise DataError(f"{path}: truncated checkpoint payload for {name!r}")
        if name in out:
            raise DataError(f"{path}: duplicate parameter name {name!r}")
        out[name] = arr.reshape(shape).copy()
    return out


def save_module(path: str | Path, module) -> None:
    """Serialize every named parameter of a layers.Module."""
    save_arrays(path, {name: t.data for name, t in module.named_parameters()})


def load_module(path: str | Path, module) -> None:
    """Restore parameters in place; names must match the module exactly."""
    arrays = load_arrays(path)
    params = dict(module.named_parameters())
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise DataError(
            f"{path}: parameter names do not match the model "
            f"(missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, tensor in params.items():
        arr = arrays[name]
        if arr.shape != tensor.data.shape:
            raise DataError(
                f"{path}: shape mismatch for {name!r}: "
                f"file {arr.shape} vs model {tensor.data.shape}"
            )
        tensor.data = arr
        tensor.grad = None
