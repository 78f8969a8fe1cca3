"""Bit-exact reader/writer for dense embedding matrices.

Binary layout ("C2FE" format, version 1, little-endian):

    magic   4 bytes  b"C2FE"
    version u32
    n_rows  u32
    dim     u32
    data    n_rows * dim float32, row-major

A matrix file may carry two text sidecars: ``<file>.manifest`` with
provenance key/value lines and ``<file>.idhash`` with a SHA-256 over the
newline-joined row identifiers, used to detect row-order drift between the
producer and this consumer.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "EmbeddingMatrix",
    "EmbeddingFormatError",
    "read_embeddings",
    "write_embeddings",
    "l2_normalize",
    "id_hash",
    "write_id_hash",
    "read_id_hash",
    "write_manifest",
    "read_manifest",
]

MAGIC = b"C2FE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class EmbeddingFormatError(ValueError):
    """Raised for malformed embedding files or invalid matrix payloads."""


@dataclass
class EmbeddingMatrix:
    data: np.ndarray  # float32, shape (n_rows, dim)
    kind: str = "passage"  # "passage" or "prototype"

    def __post_init__(self) -> None:
        if self.kind not in ("passage", "prototype"):
            raise EmbeddingFormatError(f"unknown matrix kind {self.kind!r}")
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise EmbeddingFormatError(f"expected a 2-d matrix, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        bad = ~np.isfinite(self.data)
        if bad.any():
            row = int(np.nonzero(bad.any(axis=1))[0][0])
            raise EmbeddingFormatError(f"non-finite value in row {row}")

    @property
    def n_rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])


def write_embeddings(path: str | Path, matrix: EmbeddingMatrix) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, matrix.n_rows, matrix.dim))
        fh.write(matrix.data.astype("<f4", copy=False).tobytes(order="C"))


def read_embeddings(
    path: str | Path, kind: str = "passage", normalize: bool = False
) -> EmbeddingMatrix:
    """Load a matrix, preserving exact float bits and row order.

    Rejects bad magic, truncated or oversized payloads, and non-finite
    values (reported with the offending row index). With ``normalize=True``
    rows are L2-normalized after load.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: file too short for header")
    magic, version, n_rows, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported format version {version}")
    expected = _HEADER.size + 4 * n_rows * dim
    if len(raw) < expected:
        raise EmbeddingFormatError(
            f"{path}: truncated payload, header claims {n_rows}x{dim} "
            f"({expected} bytes) but file has {len(raw)}"
        )
    if len(raw) > expected:
        raise EmbeddingFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n_rows, dim)
    bad = ~np.isfinite(data)
    if bad.any():
        row = int(np.nonzero(bad.any(axis=1))[0][0])
        raise EmbeddingFormatError(f"{path}: non-finite value in row {row}")
    matrix = EmbeddingMatrix(data=data.copy(), kind=kind)
    if normalize:
        matrix = l2_normalize(matrix)
    return matrix


def l2_normalize(matrix: EmbeddingMatrix | np.ndarray) -> EmbeddingMatrix | np.ndarray:
    """Scale every row to unit L2 norm. Idempotent; zero rows are an error."""
    arr = matrix.data if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    zero = norms.squeeze(-1) == 0.0
    if np.any(zero):
        row = int(np.nonzero(np.atleast_1d(zero))[0][0])
        raise EmbeddingFormatError(f"zero-norm row {row} cannot be normalized")
    out = (arr / norms).astype(arr.dtype, copy=False)
    if isinstance(matrix, EmbeddingMatrix):
        return EmbeddingMatrix(data=out, kind=matrix.kind)
    return out


def id_hash(ids: Iterable[str]) -> str:
    """SHA-256 over newline-joined row identifiers, as lowercase hex."""
    joined = "\n".join(ids).encode("utf-8")
    return hashlib.sha256(joined).hexdigest()


def _sidecar(path: str | Path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.name + suffix)


def write_id_hash(path: str | Path, ids: Iterable[str]) -> Path:
    out = _sidecar(path, ".idhash")
    out.write_text(id_hash(ids) + "\n", encoding="utf-8")
    return out


def read_id_hash(path: str | Path) -> str | None:
    """Stored row-id hash for an embedding file, or None if no sidecar."""
    p = _sidecar(path, ".idhash")
    if not p.exists():
        return None
    return p.read_text(encoding="utf-8").strip()


def write_manifest(path: str | Path, entries: dict[str, str]) -> Path:
    out = _sidecar(path, ".manifest")
    lines = [f"{key}: {value}" for key, value in entries.items()]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def read_manifest(path: str | Path) -> dict[str, str]:
    p = _sidecar(path, ".manifest")
    if not p.exists():
        return {}
    entries: dict[str, str] = {}
    for line in p.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        entries[key.strip()] = value.strip()
    return entries
