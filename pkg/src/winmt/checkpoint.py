"""Binary parameter checkpoints.

Layout (all integers little-endian):

    magic     8 bytes   b"WMTCKPT\\0"
    version   u32       currently 1
    digest    32 bytes  sha256 of the canonical config JSON
    cfg_len   u32       length of config JSON in bytes
    config    cfg_len   canonical JSON (sorted keys, compact separators)
    n_params  u32
    then per parameter record:
    name_len  u16
    name      name_len  utf-8
    dtype     u8        1 = float32, 2 = float64
    ndim      u8
    dims      ndim*u32
    data      raw little-endian values, row-major

Round-trips are lossless: values are written byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"WMTCKPT\x00"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def config_digest(config: Mapping) -> str:
    return hashlib.sha256(canonical_config(config)).hexdigest()


def canonical_config(config: Mapping) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, params: Mapping[str, np.ndarray], config: Mapping) -> None:
    cfg = canonical_config(config)
    chunks = [MAGIC, struct.pack("<I", VERSION), hashlib.sha256(cfg).digest(),
              struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(getattr(value, "data", value))
        dtype = arr.dtype.newbyteorder("<")
        if dtype not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for parameter {name!r}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(dtype, copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, str]:
    """Return (params, config, config digest). Validates magic, version and digest."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = blob[12:44]
    (cfg_len,) = struct.unpack_from("<I", blob, 44)
    off = 48
    cfg_bytes = blob[off:off + cfg_len]
    off += cfg_len
    if hashlib.sha256(cfg_bytes).digest() != digest:
        raise CheckpointError(f"{path}: config digest mismatch, file corrupted")
    config = json.loads(cfg_bytes.decode("utf-8"))
    (n_params,) = struct.unpack_from("<I", blob, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(dims)
        off += count * dtype.itemsize
        params[name] = arr.copy()
    return params, config, digest.hex()


def average_checkpoints(paths: Iterable, out_path) -> None:
    """Parameter-wise arithmetic mean of model parameters across checkpoints.

    Optimizer-state records (names prefixed "opt.") are dropped; the config
    header is taken from the first checkpoint. Accumulation runs in float64
    so averaging k identical checkpoints reproduces them exactly.
    """
    paths = list(paths)
    if not paths:
        raise CheckpointError("no checkpoints to average")
    acc: dict[str, np.ndarray] = {}
    dtypes: dict[str, np.dtype] = {}
    config = None
    for path in paths:
        params, cfg, _ = load_checkpoint(path)
        if config is None:
            config = cfg
        for name, arr in params.items():
            if name.startswith("opt."):
                continue
            if name not in acc:
                acc[name] = arr.astype(np.float64)
                dtypes[name] = arr.dtype
            else:
                if acc[name].shape != arr.shape:
                    raise CheckpointError(f"shape mismatch for {name!r} across checkpoints")
                acc[name] += arr.astype(np.float64)
    averaged = {name: (total / len(paths)).astype(dtypes[name]) for name, total in acc.items()}
    save_checkpoint(out_path, averaged, config)
