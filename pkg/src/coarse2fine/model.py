"""Trainable representation model and contrastive training machinery.

The representation of both passages and prototypes is a shared two-layer
projection (affine, tanh, affine, L2-normalize) applied to frozen base
embeddings. Training the head moves passage and prototype representations
jointly, so prototypes track the evolving passage geometry without touching
the upstream encoder.

Two hinge losses drive clustering: a ranking loss that pushes a passage's
candidate prototypes above sampled out-of-candidate prototypes (coarse
structure), and a second-best margin loss that pushes a passage's assigned
prototype above its sibling candidates (fine structure). Gradients are
analytic; the top-K neighborhood of the similarity correction is held fixed
within a step.

Note on the ranking-loss orientation: the default hinge is
``max(score(negative) - score(positive) + margin, 0)``, which is minimized
by scoring positives above negatives. ``literal_hinge_sign=True`` flips the
two scores for comparison runs.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .similarity import SimilarityConfig, base_scores, knn_means

__all__ = [
    "LossConfig",
    "ModelState",
    "BatchItem",
    "Batch",
    "TrainingError",
    "init_model",
    "project",
    "hinge_rank_loss",
    "second_best_margin_loss",
    "loss_global",
    "loss_local",
    "loss_coarse_global",
    "loss_and_gradients",
    "optimizer_step",
    "save_checkpoint",
    "load_checkpoint",
]

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2")

CHECKPOINT_MAGIC = b"C2FM"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when a training step produces unusable state (non-finite values)."""


@dataclass(frozen=True)
class LossConfig:
    margin_global: float = 0.05
    margin_local: float = 0.05
    batch_size: int = 8
    learning_rate: float = 2e-4
    weight_decay: float = 0.0
    literal_hinge_sign: bool = False

    def __post_init__(self) -> None:
        if self.margin_global <= 0 or self.margin_local <= 0:
            raise ValueError("margins must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class ModelState:
    params: dict[str, np.ndarray]
    moment1: dict[str, np.ndarray]
    moment2: dict[str, np.ndarray]
    step: int
    seed: int

    @property
    def d_base(self) -> int:
        return int(self.params["W1"].shape[0])

    @property
    def d_proj(self) -> int:
        return int(self.params["W2"].shape[1])


def init_model(
    d_base: int, d_proj: int | None = None, seed: int = 0, init_noise: float = 0.01
) -> ModelState:
    """Near-identity initialization: the head starts out approximately
    reproducing the base embedding geometry (up to normalization)."""
    if d_proj is None:
        d_proj = d_base
    rng = np.random.default_rng(seed)
    scale = init_noise / np.sqrt(d_base)
    params = {
        "W1": np.eye(d_base, d_proj) + scale * rng.standard_normal((d_base, d_proj)),
        "b1": np.zeros(d_proj),
        "W2": 0.99 * np.eye(d_proj) + scale * rng.standard_normal((d_proj, d_proj)),
        "b2": np.zeros(d_proj),
    }
    zeros = lambda: {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(params=params, moment1=zeros(), moment2=zeros(), step=0, seed=seed)


@dataclass
class _ForwardCache:
    X: np.ndarray
    H: np.ndarray
    Z: np.ndarray
    norms: np.ndarray  # column vector (n, 1)
    Y: np.ndarray


def _forward(params: dict[str, np.ndarray], X: np.ndarray) -> _ForwardCache:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H = np.tanh(X @ params["W1"] + params["b1"])
    Z = H @ params["W2"] + params["b2"]
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        row = int(np.nonzero(norms[:, 0] == 0.0)[0][0])
        raise TrainingError(f"projection collapsed to zero for input row {row}")
    return _ForwardCache(X=X, H=H, Z=Z, norms=norms, Y=Z / norms)


def project(state: ModelState, base_vectors: np.ndarray) -> np.ndarray:
    """Map base embeddings to unit-norm representation vectors."""
    squeeze = np.asarray(base_vectors).ndim == 1
    Y = _forward(state.params, base_vectors).Y
    return Y[0] if squeeze else Y


def _backward_projection(
    params: dict[str, np.ndarray],
    cache: _ForwardCache,
    dY: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    # Through the row normalization: d(z/|z|) = (I - y y^T) / |z|.
    gZ = (dY - (dY * cache.Y).sum(axis=1, keepdims=True) * cache.Y) / cache.norms
    grads["W2"] += cache.H.T @ gZ
    grads["b2"] += gZ.sum(axis=0)
    gH = gZ @ params["W2"].T
    gA = gH * (1.0 - cache.H**2)
    grads["W1"] += cache.X.T @ gA
    grads["b1"] += gA.sum(axis=0)


# ---------------------------------------------------------------------------
# Score-level losses


def hinge_rank_loss(
    positive_scores: Sequence[float],
    negative_scores: Sequence[float],
    margin: float,
    literal_hinge_sign: bool = False,
) -> float:
    """Mean hinge over (positive, negative) score pairs.

    Default orientation penalizes a negative scoring within ``margin`` of
    its positive; the flipped orientation penalizes the opposite.
    """
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ValueError("positive/negative score lists must pair up")
    if pos.size == 0:
        return 0.0
    args = (pos - neg + margin) if literal_hinge_sign else (neg - pos + margin)
    return float(np.maximum(args, 0.0).mean())


def second_best_margin_loss(
    candidate_scores: Sequence[float], assigned_index: int, margin: float
) -> float:
    """Hinge pushing the assigned candidate above its best sibling.

    Zero when there is a single candidate (nothing to separate).
    """
    scores = np.asarray(candidate_scores, dtype=np.float64)
    if scores.size < 2:
        return 0.0
    second = np.delete(scores, assigned_index).max()
    return float(max(second - scores[assigned_index] + margin, 0.0))


# ---------------------------------------------------------------------------
# Vector-level losses (scores computed under the configured metric)


def _corrected_row(
    p: np.ndarray,
    targets: np.ndarray,
    fine_prototypes: np.ndarray,
    sim: SimilarityConfig,
) -> np.ndarray:
    row = base_scores(p, targets, sim.metric)[0]
    if sim.metric == "cosine":
        return row
    neighborhood = base_scores(p, fine_prototypes, sim.metric)
    return row - knn_means(neighborhood, sim.knn_k)[0]


def loss_global(
    p: np.ndarray,
    candidate_ids: Sequence[int],
    negative_ids: Sequence[int],
    fine_prototypes: np.ndarray,
    loss_cfg: LossConfig,
    sim: SimilarityConfig,
) -> float:
    """Ranking loss of one passage: candidates vs. sampled outside prototypes."""
    if len(negative_ids) == 0:
        log.warning("no negative prototypes available; ranking loss is 0")
        return 0.0
    row = _corrected_row(p, fine_prototypes, fine_prototypes, sim)
    return hinge_rank_loss(
        row[list(candidate_ids)],
        row[list(negative_ids)],
        loss_cfg.margin_global,
        loss_cfg.literal_hinge_sign,
    )


def loss_local(
    p: np.ndarray,
    assigned: int,
    candidate_ids: Sequence[int],
    fine_prototypes: np.ndarray,
    loss_cfg: LossConfig,
    sim: SimilarityConfig,
) -> float:
    """Second-best margin loss of one passage within its candidate set."""
    candidate_ids = list(candidate_ids)
    row = _corrected_row(p, fine_prototypes, fine_prototypes, sim)
    return second_best_margin_loss(
        row[candidate_ids], candidate_ids.index(assigned), loss_cfg.margin_local
    )


def loss_coarse_global(
    p: np.ndarray,
    coarse_pos: int,
    coarse_neg: int,
    fine_prototypes: np.ndarray,
    coarse_prototypes: np.ndarray,
    loss_cfg: LossConfig,
    sim: SimilarityConfig,
) -> float:
    """Mapping-free ranking loss: own coarse prototype vs. one sampled other."""
    if coarse_prototypes.shape[0] < 2:
        raise ValueError("mapping-free ranking loss needs at least two coarse labels")
    row = _corrected_row(p, coarse_prototypes, fine_prototypes, sim)
    return hinge_rank_loss(
        [row[coarse_pos]], [row[coarse_neg]], loss_cfg.margin_global, loss_cfg.literal_hinge_sign
    )


# ---------------------------------------------------------------------------
# Batched loss + analytic gradients


@dataclass
class BatchItem:
    """Loss assignment for one passage within a batch.

    ``negatives`` pair up with ``candidates`` for the ranking loss (empty to
    skip it); ``assigned`` enables the local loss; ``coarse_pos``/``coarse_neg``
    enable the mapping-free ranking loss.
    """

    row: int
    candidates: tuple[int, ...] = ()
    negatives: tuple[int, ...] = ()
    assigned: int | None = None
    coarse_pos: int | None = None
    coarse_neg: int | None = None


@dataclass
class Batch:
    passages: np.ndarray  # (b, d_base) frozen base embeddings
    fine_prototypes: np.ndarray  # (n_fine, d_base)
    items: list[BatchItem]
    coarse_prototypes: np.ndarray | None = None


def _pair_scores(Yp: np.ndarray, Yt: np.ndarray, metric: str) -> np.ndarray:
    if metric in ("csls", "cosine"):
        return Yp @ Yt.T
    diff = Yp[:, None, :] - Yt[None, :, :]
    if metric == "manhattan":
        return -np.abs(diff).sum(axis=-1)
    if metric == "euclidean":
        return -np.sqrt((diff**2).sum(axis=-1))
    raise ValueError(f"unknown metric {metric!r}")


def _pair_scores_backward(
    Yp: np.ndarray, Yt: np.ndarray, dS: np.ndarray, metric: str
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of sum(dS * S) w.r.t. the two (unit) representation matrices."""
    if metric in ("csls", "cosine"):
        return dS @ Yt, dS.T @ Yp
    diff = Yp[:, None, :] - Yt[None, :, :]
    if metric == "manhattan":
        direction = np.sign(diff)
    elif metric == "euclidean":
        dist = np.sqrt((diff**2).sum(axis=-1, keepdims=True))
        with np.errstate(divide="ignore", invalid="ignore"):
            direction = np.where(dist > 0.0, diff / dist, 0.0)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    weighted = dS[:, :, None] * direction
    return -weighted.sum(axis=1), weighted.sum(axis=0)


def loss_and_gradients(
    state: ModelState,
    batch: Batch,
    loss_cfg: LossConfig,
    sim: SimilarityConfig,
    compute_grads: bool = True,
) -> tuple[float, dict[str, float], dict[str, np.ndarray] | None]:
    """Mean batch loss, per-loss sums, and parameter gradients.

    The loss is the batch mean of per-passage losses; reported parts are
    unscaled per-passage sums. Items and pairs are processed in list order,
    so the reduction order (and the result) is deterministic.
    """
    if not batch.items:
        raise ValueError("empty batch")
    params = state.params
    metric = sim.metric
    corrected = metric != "cosine"
    literal = loss_cfg.literal_hinge_sign

    fwd_p = _forward(params, batch.passages)
    fwd_f = _forward(params, batch.fine_prototypes)
    need_coarse = any(it.coarse_pos is not None for it in batch.items)
    fwd_c = None
    if need_coarse:
        if batch.coarse_prototypes is None:
            raise ValueError("batch items require coarse prototypes but none were given")
        fwd_c = _forward(params, batch.coarse_prototypes)

    S_f = _pair_scores(fwd_p.Y, fwd_f.Y, metric)
    n_fine = S_f.shape[1]
    if corrected:
        if sim.knn_k > n_fine:
            raise ValueError(f"knn_k={sim.knn_k} exceeds the number of fine prototypes")
        top_idx = np.argpartition(S_f, n_fine - sim.knn_k, axis=1)[:, n_fine - sim.knn_k :]
        rows = np.arange(S_f.shape[0])[:, None]
        correction = S_f[rows, top_idx].mean(axis=1)
        C_f = S_f - correction[:, None]
    else:
        C_f = S_f
    if fwd_c is not None:
        S_c = _pair_scores(fwd_p.Y, fwd_c.Y, metric)
        C_c = S_c - correction[:, None] if corrected else S_c
        dC_c = np.zeros_like(S_c)
    else:
        S_c = C_c = dC_c = None

    dC_f = np.zeros_like(S_f)
    parts = {"global": 0.0, "local": 0.0, "coarse_global": 0.0}

    for item in batch.items:
        r = item.row
        if item.negatives:
            if len(item.negatives) != len(item.candidates):
                raise ValueError("negatives must pair up with candidates")
            w = 1.0 / len(item.candidates)
            for pos, neg in zip(item.candidates, item.negatives):
                arg = (
                    C_f[r, pos] - C_f[r, neg] + loss_cfg.margin_global
                    if literal
                    else C_f[r, neg] - C_f[r, pos] + loss_cfg.margin_global
                )
                if arg > 0.0:
                    parts["global"] += w * arg
                    sign = 1.0 if literal else -1.0
                    dC_f[r, pos] += sign * w
                    dC_f[r, neg] -= sign * w
        if item.assigned is not None and len(item.candidates) >= 2:
            cand = np.asarray(item.candidates)
            others = cand[cand != item.assigned]
            sec = int(others[np.argmax(C_f[r, others])])
            arg = C_f[r, sec] - C_f[r, item.assigned] + loss_cfg.margin_local
            if arg > 0.0:
                parts["local"] += arg
                dC_f[r, sec] += 1.0
                dC_f[r, item.assigned] -= 1.0
        if item.coarse_pos is not None:
            if item.coarse_neg is None:
                raise ValueError("coarse positive given without a coarse negative")
            arg = (
                C_c[r, item.coarse_pos] - C_c[r, item.coarse_neg] + loss_cfg.margin_global
                if literal
                else C_c[r, item.coarse_neg] - C_c[r, item.coarse_pos] + loss_cfg.margin_global
            )
            if arg > 0.0:
                parts["coarse_global"] += arg
                sign = 1.0 if literal else -1.0
                dC_c[r, item.coarse_pos] += sign
                dC_c[r, item.coarse_neg] -= sign

    n_items = len(batch.items)
    total = (parts["global"] + parts["local"] + parts["coarse_global"]) / n_items
    if not compute_grads:
        return total, parts, None

    dC_f /= n_items
    dS_f = dC_f.copy()
    if dC_c is not None:
        dC_c /= n_items
        dS_c = dC_c.copy()
    if corrected:
        # The correction is a mean over the (frozen) top-K columns; its
        # upstream gradient is the negated row sum of the corrected-score
        # gradients. It cancels exactly for the hinge differences above but
        # is kept explicit so the path stays correct for any loss shape.
        d_corr = -dC_f.sum(axis=1)
        if dC_c is not None:
            d_corr = d_corr - dC_c.sum(axis=1)
        np.add.at(dS_f, (rows, top_idx), (d_corr / sim.knn_k)[:, None])

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dYp, dYf = _pair_scores_backward(fwd_p.Y, fwd_f.Y, dS_f, metric)
    if fwd_c is not None:
        dYp_c, dYc = _pair_scores_backward(fwd_p.Y, fwd_c.Y, dS_c, metric)
        dYp = dYp + dYp_c
        _backward_projection(params, fwd_c, dYc, grads)
    _backward_projection(params, fwd_p, dYp, grads)
    _backward_projection(params, fwd_f, dYf, grads)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(
                f"non-finite gradient in {name} at step {state.step} "
                f"(max |g| = {np.nanmax(np.abs(g))})"
            )
    return total, parts, grads


# ---------------------------------------------------------------------------
# Optimizer

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


def optimizer_step(
    state: ModelState, grads: dict[str, np.ndarray], loss_cfg: LossConfig
) -> ModelState:
    """One Adam update with bias correction and decoupled weight decay."""
    state.step += 1
    t = state.step
    lr = loss_cfg.learning_rate
    for name in PARAM_NAMES:
        g = grads[name]
        m = state.moment1[name]
        v = state.moment2[name]
        m *= _ADAM_BETA1
        m += (1.0 - _ADAM_BETA1) * g
        v *= _ADAM_BETA2
        v += (1.0 - _ADAM_BETA2) * g * g
        m_hat = m / (1.0 - _ADAM_BETA1**t)
        v_hat = v / (1.0 - _ADAM_BETA2**t)
        p = state.params[name]
        p -= lr * (m_hat / (np.sqrt(v_hat) + _ADAM_EPS) + loss_cfg.weight_decay * p)
        if not np.all(np.isfinite(p)):
            raise TrainingError(f"non-finite parameter {name} after step {t}")
    return state


# ---------------------------------------------------------------------------
# Checkpoints

_CKPT_HEADER = struct.Struct("<4sIIqI")  # magic, version, step, seed, n_tensors


def save_checkpoint(path: str | Path, state: ModelState) -> None:
    """Write parameters and optimizer moments as float32 tensors."""
    tensors: list[tuple[str, np.ndarray]] = []
    for name in PARAM_NAMES:
        tensors.append((name, state.params[name]))
    for name in PARAM_NAMES:
        tensors.append((f"m1.{name}", state.moment1[name]))
        tensors.append((f"m2.{name}", state.moment2[name]))
    with Path(path).open("wb") as fh:
        fh.write(
            _CKPT_HEADER.pack(
                CHECKPOINT_MAGIC, CHECKPOINT_VERSION, state.step, state.seed, len(tensors)
            )
        )
        for name, arr in tensors:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> ModelState:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: file too short for checkpoint header")
    magic, version, step, seed, n_tensors = _CKPT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = _CKPT_HEADER.size
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        tensors[name] = arr.reshape(shape).astype(np.float64)
    missing = [n for n in PARAM_NAMES if n not in tensors]
    if missing:
        raise ValueError(f"{path}: checkpoint missing tensors {missing}")
    return ModelState(
        params={n: tensors[n] for n in PARAM_NAMES},
        moment1={n: tensors.get(f"m1.{n}", np.zeros_like(tensors[n])) for n in PARAM_NAMES},
        moment2={n: tensors.get(f"m2.{n}", np.zeros_like(tensors[n])) for n in PARAM_NAMES},
        step=step,
        seed=seed,
    )
