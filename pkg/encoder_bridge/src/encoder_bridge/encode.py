"""Text encoders and the embedding file writer.

The default encoder is a dependency-free signed hashed bag of words:
deterministic across runs and platforms, fast, and strong enough to drive
the downstream pipeline on token-overlap data. Transformer encoders plug in
through the same interface as ``hf:<model-name>``.

The on-disk format matches what the pipeline reads: a 16-byte header
(magic, version, rows, dim) followed by row-major little-endian float32.
"""

from __future__ import annotations

import hashlib
import logging
import re
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

__all__ = ["EncodeError", "HashedBagOfWords", "get_encoder", "id_digest", "write_embedding_file"]

MAGIC = b"C2FE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, n_rows, dim

_TOKEN = re.compile(r"[a-z0-9]+")


class EncodeError(RuntimeError):
    """Encoding failed or the requested encoder is unavailable."""


class HashedBagOfWords:
    """Signed hashed bag of words over lowercase alphanumeric tokens.

    Each token lands at ``sha256(token)[:4] % dim`` with a sign taken from
    the fifth digest byte, then rows are L2-normalized. No vocabulary, no
    downloads, and no dependence on process hash randomization.
    """

    name = "hashed"

    def __init__(self, dim: int = 256, max_tokens: int = 512) -> None:
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        if max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {max_tokens}")
        self.dim = int(dim)
        self.max_tokens = int(max_tokens)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            tokens = _TOKEN.findall(text.lower())
            if len(tokens) > self.max_tokens:
                log.warning(
                    "row %d has %d tokens; keeping the first %d",
                    row,
                    len(tokens),
                    self.max_tokens,
                )
                tokens = tokens[: self.max_tokens]
            for token in tokens:
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                index = int.from_bytes(digest[:4], "little") % self.dim
                out[row, index] += 1.0 if digest[4] & 1 else -1.0
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        np.divide(out, norms, out=out, where=norms > 0)
        return out


class TransformerEncoder:
    """First-token last-hidden-state vectors from a Hugging Face model."""

    def __init__(self, model_name: str, batch_size: int = 32) -> None:
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # optional extra, keep the base install light
            raise EncodeError(
                "transformer encoders need torch and transformers; "
                "install encoder-bridge[hf]"
            ) from exc
        self.name = f"hf:{model_name}"
        self.batch_size = int(batch_size)
        self._torch = torch
        self._tokenizer = AutoTokenizer.from_pretrained(model_name)
        self._model = AutoModel.from_pretrained(model_name)
        self._model.eval()

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        chunks: list[np.ndarray] = []
        limit = self._tokenizer.model_max_length
        with self._torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                batch = list(texts[start : start + self.batch_size])
                # truncate, never skip: row alignment with the id sidecar is load-bearing
                over = sum(len(ids) > limit for ids in self._tokenizer(batch)["input_ids"])
                if over:
                    log.warning("truncating %d of %d texts to %d tokens", over, len(batch), limit)
                encoded = self._tokenizer(batch, padding=True, truncation=True, return_tensors="pt")
                hidden = self._model(**encoded).last_hidden_state
                chunks.append(hidden[:, 0, :].cpu().numpy().astype(np.float32))
        if not chunks:
            raise EncodeError("nothing to encode")
        data = np.concatenate(chunks, axis=0)
        norms = np.linalg.norm(data, axis=1, keepdims=True)
        np.divide(data, norms, out=data, where=norms > 0)
        return data


def get_encoder(name: str) -> HashedBagOfWords | TransformerEncoder:
    """Resolve an encoder by name: ``hashed`` or ``hf:<model-name>``."""
    if name == "hashed":
        return HashedBagOfWords()
    if name.startswith("hf:"):
        model = name[3:].strip()
        if not model:
            raise ValueError("hf: needs a model name, e.g. hf:sentence-transformers/all-MiniLM-L6-v2")
        return TransformerEncoder(model)
    raise ValueError(f"unknown encoder {name!r}; expected 'hashed' or 'hf:<model-name>'")


def id_digest(ids: Sequence[str]) -> str:
    """Order-sensitive digest over row ids; the pipeline checks it on load."""
    return hashlib.sha256("\n".join(ids).encode("utf-8")).hexdigest()


def write_embedding_file(path: str | Path, data: np.ndarray) -> Path:
    array = np.asarray(data)
    if array.ndim != 2:
        raise EncodeError(f"embedding data must be 2-d, got shape {array.shape}")
    if array.size and not np.isfinite(array).all():
        raise EncodeError("embedding data contains non-finite values")
    n_rows, dim = array.shape
    path = Path(path)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, n_rows, dim)
    path.write_bytes(header + array.astype("<f4").tobytes(order="C"))
    return path
