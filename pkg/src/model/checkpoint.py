"""
Versioned binary checkpoints.

Layout::

    8 bytes   magic  b"AUGCLCK1"
    u32 LE    format version
    u32 LE    header length
    header    UTF-8 JSON (arch, d_proj, seed, task index, tensor table)
    payload   every tensor as flat little-endian values, in table order
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from src.core.exceptions import CheckpointError
from src.model.encoder import EncoderModel, build_encoder
from src.utils.io import atomic_write_bytes
from src.utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"AUGCLCK1"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<II")


def save_checkpoint(
    path: Union[str, Path],
    model: EncoderModel,
    task_index: int,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write ``model`` (parameters and running statistics) atomically."""
    arrays = model.state_arrays()
    table = []
    payload = bytearray()
    for name, array in arrays:
        little = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))
        table.append({"name": name, "shape": list(array.shape), "dtype": array.dtype.name})
        payload += little.tobytes()
    header = {
        "arch": model.arch.value,
        "d_proj": model.d_proj,
        "seed": model.seed,
        "in_channels": model.in_channels,
        "image_size": model.image_size,
        "dtype": model.dtype,
        "task_index": task_index,
        "tensors": table,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = MAGIC + _PREAMBLE.pack(FORMAT_VERSION, len(header_bytes)) + header_bytes + bytes(payload)
    path = atomic_write_bytes(path, blob)
    logger.debug("Checkpoint saved", path=str(path), task=task_index, tensors=len(table))
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Parse a checkpoint into its header and named arrays.

    Raises:
        CheckpointError: On a bad magic, unknown version or truncated payload
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}", {"path": str(path)}) from e
    start = len(MAGIC) + _PREAMBLE.size
    if len(raw) < start or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path.name} is not a checkpoint", {"path": str(path)})
    version, header_length = _PREAMBLE.unpack_from(raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}", {"version": version})
    try:
        header = json.loads(raw[start:start + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint header in {path.name}", {"path": str(path)}) from e

    offset = start + header_length
    arrays: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        size = count * dtype.itemsize
        if offset + size > len(raw):
            raise CheckpointError(f"Truncated checkpoint payload in {path.name}", {"tensor": entry["name"]})
        values = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        arrays[entry["name"]] = values.astype(dtype.newbyteorder("="), copy=True).reshape(entry["shape"])
        offset += size
    if offset != len(raw):
        raise CheckpointError(f"Trailing bytes in checkpoint {path.name}", {"path": str(path)})
    return header, arrays


def load_checkpoint(path: Union[str, Path]) -> Tuple[EncoderModel, int]:
    """Rebuild the encoder stored in ``path``; returns ``(model, task_index)``."""
    header, arrays = read_checkpoint(path)
    model = build_encoder(
        header["arch"],
        header["d_proj"],
        header["seed"],
        in_channels=header["in_channels"],
        image_size=header["image_size"],
        dtype=header["dtype"],
    )
    targets = dict(model.state_arrays())
    if set(targets) != set(arrays):
        raise CheckpointError("Checkpoint tensors do not match the architecture", {"path": str(path)})
    for name, target in targets.items():
        if target.shape != arrays[name].shape:
            raise CheckpointError(f"Shape mismatch for {name}", {"expected": target.shape})
        target[...] = arrays[name]
    return model, int(header["task_index"])
