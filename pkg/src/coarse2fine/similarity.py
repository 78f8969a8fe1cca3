"""Passage-prototype similarity scoring.

The main metric subtracts, from each passage's base similarity to a
prototype, the mean of that passage's top-K base similarities over all fine
prototypes. Passages that score high against everything (hubs) are demoted
relative to passages with distinctive matches. The correction term is
constant across prototypes for a fixed passage, so it never changes the
within-passage ranking; it matters when scores are compared across
passages.

Metrics: ``csls`` (cosine with the correction), ``cosine`` (no correction),
``manhattan`` and ``euclidean`` (negated distances substituted for cosine,
correction computed with the same substituted function).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "METRICS",
    "SimilarityConfig",
    "cosine",
    "base_scores",
    "knn_mean",
    "knn_means",
    "c_similarity",
    "corrected_scores",
    "rank_candidates",
]

METRICS = ("csls", "cosine", "manhattan", "euclidean")


@dataclass(frozen=True)
class SimilarityConfig:
    metric: str = "csls"
    knn_k: int = 3

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.knn_k < 1:
            raise ValueError(f"knn_k must be >= 1, got {self.knn_k}")


def _unit_rows(arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("zero vector has no direction; cosine undefined")
    return arr / norms


def cosine(p: np.ndarray, l: np.ndarray) -> float:
    """Cosine similarity of two nonzero vectors, clipped into [-1, 1]."""
    p = np.asarray(p, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    if p.shape != l.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {l.shape}")
    value = float(_unit_rows(p[None, :])[0] @ _unit_rows(l[None, :])[0])
    return float(np.clip(value, -1.0, 1.0))


def base_scores(passages: np.ndarray, prototypes: np.ndarray, metric: str) -> np.ndarray:
    """Uncorrected similarity of every passage row against every prototype row.

    Cosine for ``csls``/``cosine``, negated L1/L2 distance for
    ``manhattan``/``euclidean``. Shape (n_passages, n_prototypes).
    """
    P = np.atleast_2d(np.asarray(passages, dtype=np.float64))
    L = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    if metric in ("csls", "cosine"):
        return _unit_rows(P) @ _unit_rows(L).T
    diff = P[:, None, :] - L[None, :, :]
    if metric == "manhattan":
        return -np.abs(diff).sum(axis=-1)
    if metric == "euclidean":
        return -np.sqrt((diff**2).sum(axis=-1))
    raise ValueError(f"unknown metric {metric!r}")


def knn_means(scores_to_all: np.ndarray, k: int) -> np.ndarray:
    """Row-wise mean of the k largest scores. Shape (n_passages,)."""
    scores = np.atleast_2d(scores_to_all)
    n = scores.shape[1]
    if k > n:
        raise ValueError(f"k={k} exceeds the number of prototypes ({n})")
    if k == n:
        return scores.mean(axis=1)
    top = np.partition(scores, n - k, axis=1)[:, n - k :]
    return top.mean(axis=1)


def knn_mean(p: np.ndarray, prototypes: np.ndarray, k: int, metric: str = "csls") -> float:
    """Mean of the k largest base similarities from one passage to all fine prototypes."""
    return float(knn_means(base_scores(p, prototypes, metric), k)[0])


def corrected_scores(
    passages: np.ndarray, prototypes: np.ndarray, config: SimilarityConfig
) -> np.ndarray:
    """Full score table c(passage, prototype) under the configured metric.

    ``prototypes`` must be the complete fine-prototype matrix: the
    correction's neighborhood is always taken over all fine prototypes.
    """
    scores = base_scores(passages, prototypes, config.metric)
    if config.metric == "cosine":
        return scores
    return scores - knn_means(scores, config.knn_k)[:, None]


def c_similarity(
    p: np.ndarray, l: np.ndarray, prototypes: np.ndarray, config: SimilarityConfig
) -> float:
    """Corrected similarity of one passage to one prototype."""
    base = float(base_scores(p, np.atleast_2d(l), config.metric)[0, 0])
    if config.metric == "cosine":
        return base
    return base - knn_mean(p, prototypes, config.knn_k, config.metric)


def rank_candidates(
    p: np.ndarray,
    candidate_ids: Sequence[int],
    prototypes: np.ndarray,
    config: SimilarityConfig,
) -> list[int]:
    """Candidate fine labels sorted by corrected score, best first.

    Ties break toward the smaller label id. The correction term is shared
    by all candidates of a passage, so this ordering always equals the
    uncorrected one.
    """
    if not candidate_ids:
        raise ValueError("empty candidate set")
    table = corrected_scores(p, prototypes, config)[0]
    return sorted(candidate_ids, key=lambda fid: (-table[fid], fid))
