"""
Named-tensor archive.

Layout: an ASCII header line ``DAMPCKPT <version> <count>``, then for every
tensor an ASCII line ``<name> <rows> <cols>`` followed by rows*cols
little-endian float64 values. Round trips are byte exact.
"""
from __future__ import annotations

import logging
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from damp.core.exceptions import CheckpointError
from damp.core.io import atomic_open

logger = logging.getLogger("damp.checkpoint")

MAGIC = b"DAMPCKPT"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def save_checkpoint(tensors: Mapping[str, np.ndarray], path: Path) -> Path:
    path = Path(path)
    with atomic_open(path, "wb") as handle:
        handle.write(MAGIC + f" {FORMAT_VERSION} {len(tensors)}\n".encode("ascii"))
        for name, array in tensors.items():
            array = np.asarray(array, dtype=np.float64)
            if array.ndim != 2:
                raise CheckpointError(f"tensor '{name}' is not two-dimensional")
            if not name or any(ch.isspace() for ch in name):
                raise CheckpointError(f"invalid tensor name {name!r}")
            rows, cols = array.shape
            handle.write(f"{name} {rows} {cols}\n".encode("ascii"))
            handle.write(np.ascontiguousarray(array, dtype=_DTYPE).tobytes())
    logger.debug("Saved %d tensors to %s", len(tensors), path)
    return path


def load_checkpoint(path: Path) -> dict[str, np.ndarray]:
    """Parse the whole archive; any defect raises before anything is returned."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc

    header, pos = _read_line(data, 0, path)
    parts = header.split()
    if len(parts) != 3 or parts[0] != MAGIC.decode():
        raise CheckpointError(f"{path}: not a checkpoint archive")
    try:
        version, count = int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if count < 0:
        raise CheckpointError(f"{path}: negative tensor count {count}")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        line, pos = _read_line(data, pos, path)
        fields = line.split()
        if len(fields) != 3:
            raise CheckpointError(f"{path}: corrupt tensor header {line!r}")
        name = fields[0]
        try:
            rows, cols = int(fields[1]), int(fields[2])
        except ValueError as exc:
            raise CheckpointError(f"{path}: corrupt shape for '{name}'") from exc
        if rows < 0 or cols < 0:
            raise CheckpointError(f"{path}: negative shape {rows} x {cols} for '{name}'")
        nbytes = rows * cols * _DTYPE.itemsize
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated while reading '{name}'")
        tensors[name] = np.frombuffer(data, dtype=_DTYPE, count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after {count} tensors")
    return tensors


def _read_line(data: bytes, pos: int, path: Path) -> tuple[str, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        return data[pos:end].decode("ascii"), end + 1
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header bytes") from exc
