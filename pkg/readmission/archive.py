"""Flat key -> array archives with a JSON manifest, used for checkpoints."""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping

import numpy as np

ARCHIVE_NAME = "params.bin"
MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


class ArchiveError(ValueError):
    """Raised when a checkpoint directory is missing or corrupt."""


def write_arrays(path: Path, arrays: Mapping[str, np.ndarray]) -> None:
    """Each record: u32 key length, key, u64 payload length, ``.npy`` payload."""
    with open(path, "wb") as handle:
        for key in arrays:
            payload = io.BytesIO()
            np.lib.format.write_array(payload, np.ascontiguousarray(arrays[key]), allow_pickle=False)
            encoded = key.encode("utf-8")
            blob = payload.getvalue()
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<Q", len(blob)))
            handle.write(blob)


def read_arrays(path: Path) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {}
    data = Path(path).read_bytes()
    offset = 0
    while offset < len(data):
        try:
            (key_length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            key = data[offset : offset + key_length].decode("utf-8")
            offset += key_length
            (blob_length,) = struct.unpack_from("<Q", data, offset)
            offset += 8
            blob = data[offset : offset + blob_length]
            offset += blob_length
        except struct.error as exc:
            raise ArchiveError(f"truncated archive {path} at byte {offset}") from exc
        if len(blob) != blob_length:
            raise ArchiveError(f"truncated record {key!r} in {path}")
        arrays[key] = np.lib.format.read_array(io.BytesIO(blob), allow_pickle=False)
    return arrays


def save_checkpoint(directory: Path, arrays: Mapping[str, np.ndarray], manifest: Mapping[str, Any]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_arrays(directory / ARCHIVE_NAME, arrays)
    body = {"format_version": FORMAT_VERSION, **manifest, "keys": list(arrays)}
    (directory / MANIFEST_NAME).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory: Path) -> tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    archive_path = directory / ARCHIVE_NAME
    if not manifest_path.exists() or not archive_path.exists():
        raise ArchiveError(f"no checkpoint found in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    arrays = read_arrays(archive_path)
    missing = set(manifest.get("keys", [])) - set(arrays)
    if missing:
        raise ArchiveError(f"checkpoint {directory} lacks arrays: {sorted(missing)}")
    return arrays, manifest
