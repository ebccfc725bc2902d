"""SSLC binary checkpoint format.

Layout (all little-endian)::

    b"SSLC" | version:u32 | record*
    record := name_len:u32 | name:utf-8 | rank:u32 | dims:u64*rank | data:f64*prod(dims)

Records are read until end of file.
"""

from __future__ import annotations

import logging
import math
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"SSLC"
VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is missing, malformed or truncated."""


def save_checkpoint(path: Union[str, Path], tensors: Mapping[str, Union[np.ndarray, Tensor]]) -> None:
    """Write *tensors* (name → array) to *path* in record order."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))
    logger.debug("wrote %d records to %s", len(tensors), path)


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Read every record of an SSLC file.

    Raises
    ------
    CheckpointError
        On a bad header, unsupported version, or a truncated/corrupt record;
        the message names the failing record.
    """
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an SSLC checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")

    out: Dict[str, np.ndarray] = {}
    pos = 8
    index = 0
    while pos < len(buf):
        name = "?"
        try:
            (name_len,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + name_len > len(buf):
                raise CheckpointError("name runs past end of file")
            name = buf[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + 8 * rank > len(buf):
                raise CheckpointError(f"{rank} dims run past end of file")
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            # exact python ints; a wrapped numpy product reads as a negative count
            count = math.prod(dims)
            nbytes = 8 * count
            if pos + nbytes > len(buf):
                raise CheckpointError(f"data truncated ({len(buf) - pos} of {nbytes} bytes for dims {list(dims)})")
            if count:
                data = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
            else:
                data = np.zeros(0)
            pos += nbytes
        except (struct.error, UnicodeDecodeError, CheckpointError) as exc:
            raise CheckpointError(f"{path}: record {index} ('{name}') is corrupt: {exc}") from exc
        if not np.all(np.isfinite(data)):
            raise CheckpointError(f"{path}: record {index} ('{name}') holds non-finite values")
        out[name] = data.reshape(dims)
        index += 1
    return out
