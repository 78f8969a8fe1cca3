"""Training orchestration: warm-up, confident-set selection, bootstrapping.

The schedule is one warm-up epoch over the seeded corpus followed by
alternating rounds of confident-set selection and finetuning. Selection
assigns each passage a pseudo label (best candidate under the corrected
similarity), keeps passages whose margin over the runner-up candidate beats
the threshold, ranks them by score, and takes the top slice; the threshold
is then raised to the weakest score admitted. Selected passages train with
the fine-separation loss next epoch; everything else keeps the ranking
loss only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    Batch,
    BatchItem,
    LossConfig,
    ModelState,
    loss_and_gradients,
    optimizer_step,
    project,
)
from .similarity import SimilarityConfig, corrected_scores
from .taxonomy import UNLABELED, Corpus, LabelState, StateKind, Taxonomy

__all__ = [
    "Schedule",
    "ConfidentEntry",
    "ConfidentSet",
    "EpochRecord",
    "BootstrapEngine",
    "select_from_scores",
]

log = logging.getLogger(__name__)

CS_LOSS_MODES = ("both", "local-only")
BETA_CHECK_MODES = ("error", "warn", "off")


@dataclass(frozen=True)
class Schedule:
    warmup_epochs: int = 1
    bootstrap_epochs: int = 4

    def __post_init__(self) -> None:
        if self.warmup_epochs < 0 or self.bootstrap_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")


@dataclass(frozen=True)
class ConfidentEntry:
    passage_index: int
    passage_id: str
    fine: int
    score: float
    gap: float


@dataclass
class ConfidentSet:
    """Passages trusted with a pseudo fine label for the next epoch."""

    entries: list[ConfidentEntry]
    beta: float
    r_percent: float

    def __len__(self) -> int:
        return len(self.entries)

    def by_coarse(self, taxonomy: Taxonomy, corpus: Corpus) -> dict[str, int]:
        counts: dict[str, int] = {c.surface_name: 0 for c in taxonomy.coarse}
        for entry in self.entries:
            name = taxonomy.coarse[corpus.passages[entry.passage_index].coarse].surface_name
            counts[name] += 1
        return counts


@dataclass
class EpochRecord:
    epoch: int
    phase: str  # "warmup" or "bootstrap"
    loss_global: float
    loss_local: float
    loss_coarse_global: float
    n_confident: int
    beta: float
    cs_by_coarse: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "epoch": self.epoch,
            "phase": self.phase,
            "loss_global": self.loss_global,
            "loss_local": self.loss_local,
            "loss_coarse_global": self.loss_coarse_global,
            "n_confident": self.n_confident,
            # -inf means "no threshold yet"; JSON has no literal for it
            "beta": self.beta if math.isfinite(self.beta) else None,
            "cs_by_coarse": self.cs_by_coarse,
        }
        return d


def select_from_scores(
    scores: np.ndarray,
    candidate_sets: Sequence[Sequence[int]],
    beta: float,
    r_percent: float,
) -> tuple[list[tuple[int, int, float, float]], float]:
    """Pure confident-set selection over a precomputed score table.

    Parameters
    ----------
    scores : (n_passages, n_fine) corrected-similarity table.
    candidate_sets : per-passage admissible fine ids.
    beta : current margin threshold; a passage qualifies when the score gap
        between its best and second-best candidate exceeds it strictly.
    r_percent : slice size as a percentage of all passages. The top
        ``ceil(r% * n)`` qualifying passages by score are kept, plus any
        further passages tied with the score at the cutoff.

    Returns
    -------
    (entries, new_beta) where entries are (passage_index, fine, score, gap)
    sorted by score descending (ties toward the lower index) and new_beta
    is the minimum selected score, or ``beta`` unchanged when nothing
    qualifies. Passages with fewer than two candidates have no gap and
    never qualify.
    """
    scores = np.atleast_2d(scores)
    n = scores.shape[0]
    if len(candidate_sets) != n:
        raise ValueError("one candidate set per score row required")
    if not 0.0 < r_percent <= 100.0:
        raise ValueError(f"r_percent must be in (0, 100], got {r_percent}")

    qualifying: list[tuple[int, int, float, float]] = []
    for i, cands in enumerate(candidate_sets):
        if len(cands) < 2:
            continue
        row = scores[i]
        best = min(cands, key=lambda fid: (-row[fid], fid))
        second = max(row[fid] for fid in cands if fid != best)
        gap = float(row[best] - second)
        if gap > beta:
            qualifying.append((i, best, float(row[best]), gap))
    if not qualifying:
        return [], beta

    qualifying.sort(key=lambda e: (-e[2], e[0]))
    target = math.ceil(r_percent / 100.0 * n)
    taken = qualifying[:target]
    cutoff = taken[-1][2]
    for extra in qualifying[target:]:
        if extra[2] != cutoff:
            break
        taken.append(extra)
    return taken, taken[-1][2]


class BootstrapEngine:
    """Runs the training schedule against one corpus and embedding set.

    Parameters
    ----------
    passage_matrix : (n_passages, d_base) frozen base embeddings, row i
        aligned with ``corpus.passages[i]``.
    prototype_matrix : (n_fine + n_coarse, d_base) frozen prototype
        embeddings in taxonomy row order (all fine rows, then all coarse).
    select_percent : the r of "top r%".
    mapping_free : train the ranking loss against coarse prototypes with
        the gold coarse label instead of fine candidates.
    cs_losses : "both" gives selected passages the ranking loss on top of
        the fine-separation loss; "local-only" gives them the latter alone.
    no_select : replace selection with the initial weak-seed set each epoch.
    beta_check : what to do if the threshold ever decreases. The threshold
        compares against score gaps but is set from absolute scores, so
        small decreases do occur in ordinary runs; default is "warn".
    """

    def __init__(
        self,
        taxonomy: Taxonomy,
        corpus: Corpus,
        passage_matrix: np.ndarray,
        prototype_matrix: np.ndarray,
        model: ModelState,
        loss_cfg: LossConfig,
        sim: SimilarityConfig,
        schedule: Schedule = Schedule(),
        select_percent: float = 15.0,
        seed: int = 0,
        mapping_free: bool = False,
        cs_losses: str = "both",
        no_select: bool = False,
        beta_check: str = "warn",
    ) -> None:
        n_fine = taxonomy.n_fine
        n_coarse = taxonomy.n_coarse
        passage_matrix = np.asarray(passage_matrix, dtype=np.float64)
        prototype_matrix = np.asarray(prototype_matrix, dtype=np.float64)
        if len(corpus.passages) == 0:
            raise ValueError("empty corpus")
        if passage_matrix.shape[0] != len(corpus.passages):
            raise ValueError(
                f"passage matrix has {passage_matrix.shape[0]} rows, "
                f"corpus has {len(corpus.passages)} passages"
            )
        if prototype_matrix.shape[0] != n_fine + n_coarse:
            raise ValueError(
                f"prototype matrix has {prototype_matrix.shape[0]} rows, "
                f"expected {n_fine} fine + {n_coarse} coarse"
            )
        if passage_matrix.shape[1] != prototype_matrix.shape[1]:
            raise ValueError("passage and prototype dimensions differ")
        if cs_losses not in CS_LOSS_MODES:
            raise ValueError(f"cs_losses must be one of {CS_LOSS_MODES}")
        if beta_check not in BETA_CHECK_MODES:
            raise ValueError(f"beta_check must be one of {BETA_CHECK_MODES}")
        if sim.metric != "cosine" and sim.knn_k > n_fine:
            raise ValueError(f"knn_k={sim.knn_k} exceeds {n_fine} fine prototypes")
        if mapping_free and n_coarse < 2:
            raise ValueError("mapping-free training needs at least two coarse labels")
        if not 0.0 < select_percent <= 100.0:
            raise ValueError(f"select_percent must be in (0, 100], got {select_percent}")

        self.taxonomy = taxonomy
        self.corpus = corpus
        self.passage_matrix = passage_matrix
        self.fine_base = prototype_matrix[:n_fine]
        self.coarse_base = prototype_matrix[n_fine:]
        self.model = model
        self.loss_cfg = loss_cfg
        self.sim = sim
        self.schedule = schedule
        self.select_percent = float(select_percent)
        self.seed = seed
        self.mapping_free = mapping_free
        self.cs_losses = cs_losses
        self.no_select = no_select
        self.beta_check = beta_check

        self.beta = -math.inf
        self.records: list[EpochRecord] = []
        self._candidates: list[tuple[int, ...]] = [
            taxonomy.candidates(p.coarse) for p in corpus.passages
        ]
        self._negative_pools: dict[int, np.ndarray] = {}
        all_fine = set(range(n_fine))
        for coarse in range(n_coarse):
            pool = sorted(all_fine - set(taxonomy.candidates(coarse)))
            self._negative_pools[coarse] = np.asarray(pool, dtype=np.intp)
        self._warned_no_negatives = False

    # -- sampling ----------------------------------------------------------

    def _rng(self, epoch: int, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, epoch, stream])

    def _draw_negatives(self, epoch: int) -> list[tuple[int, ...]]:
        """Per-passage negative prototypes for the ranking loss, redrawn
        each epoch from everything outside the passage's candidate set."""
        rng = self._rng(epoch, 1)
        out: list[tuple[int, ...]] = []
        for p, cands in zip(self.corpus.passages, self._candidates):
            pool = self._negative_pools[p.coarse]
            if pool.size == 0:
                if not self._warned_no_negatives:
                    log.warning("no out-of-candidate prototypes; ranking loss disabled")
                    self._warned_no_negatives = True
                out.append(())
                continue
            draw = rng.choice(pool, size=len(cands), replace=pool.size < len(cands))
            out.append(tuple(int(x) for x in draw))
        return out

    def _draw_coarse_negatives(self, epoch: int) -> list[int]:
        rng = self._rng(epoch, 2)
        n_coarse = self.taxonomy.n_coarse
        out: list[int] = []
        for p in self.corpus.passages:
            others = [c for c in range(n_coarse) if c != p.coarse]
            out.append(int(rng.choice(others)))
        return out

    # -- epochs ------------------------------------------------------------

    def _run_epoch(self, epoch: int, phase: str) -> dict[str, float]:
        order = self._rng(epoch, 0).permutation(len(self.corpus.passages))
        fine_negs = None if self.mapping_free else self._draw_negatives(epoch)
        coarse_negs = self._draw_coarse_negatives(epoch) if self.mapping_free else None
        sums = {"global": 0.0, "local": 0.0, "coarse_global": 0.0}
        bs = self.loss_cfg.batch_size
        for start in range(0, len(order), bs):
            chunk = order[start : start + bs]
            items: list[BatchItem] = []
            for row, idx in enumerate(np.asarray(chunk, dtype=int)):
                p = self.corpus.passages[idx]
                assigned = None
                ranking = True
                if phase == "warmup":
                    if p.state.kind is StateKind.WEAK_SEED:
                        assigned = p.state.fine
                else:
                    if p.state.kind is StateKind.CONFIDENT:
                        assigned = p.state.fine
                        ranking = self.cs_losses == "both"
                item = BatchItem(row=row, candidates=self._candidates[idx], assigned=assigned)
                if ranking:
                    if self.mapping_free:
                        item.coarse_pos = p.coarse
                        item.coarse_neg = coarse_negs[idx]
                    else:
                        item.negatives = fine_negs[idx]
                items.append(item)
            batch = Batch(
                passages=self.passage_matrix[chunk],
                fine_prototypes=self.fine_base,
                items=items,
                coarse_prototypes=self.coarse_base if self.mapping_free else None,
            )
            _, parts, grads = loss_and_gradients(self.model, batch, self.loss_cfg, self.sim)
            optimizer_step(self.model, grads, self.loss_cfg)
            for key in sums:
                sums[key] += parts[key]
        return sums

    def warmup_epoch(self, epoch: int = 1) -> EpochRecord:
        sums = self._run_epoch(epoch, "warmup")
        record = EpochRecord(
            epoch=epoch,
            phase="warmup",
            loss_global=sums["global"],
            loss_local=sums["local"],
            loss_coarse_global=sums["coarse_global"],
            n_confident=0,
            beta=self.beta,
        )
        self.records.append(record)
        return record

    def score_table(self) -> np.ndarray:
        """Corrected-similarity table of every passage against every fine
        prototype under the current parameters."""
        rep_p = project(self.model, self.passage_matrix)
        rep_f = project(self.model, self.fine_base)
        return corrected_scores(rep_p, rep_f, self.sim)

    def select_confident(self) -> ConfidentSet:
        table = self.score_table()
        if self.no_select:
            taken = []
            for idx, fine in sorted(self.corpus.initial_seeds.items()):
                cands = self._candidates[idx]
                if len(cands) >= 2:
                    gap = float(table[idx, fine] - max(table[idx, f] for f in cands if f != fine))
                else:
                    gap = 0.0
                taken.append((idx, fine, float(table[idx, fine]), gap))
            taken.sort(key=lambda e: (-e[2], e[0]))
        else:
            taken, new_beta = select_from_scores(
                table, self._candidates, self.beta, self.select_percent
            )
            if not taken:
                log.warning("no passage cleared the margin threshold; confident set empty")
            else:
                if new_beta < self.beta and self.beta_check != "off":
                    msg = f"threshold decreased: {self.beta} -> {new_beta}"
                    if self.beta_check == "error":
                        raise RuntimeError(msg)
                    log.warning(msg)
                self.beta = new_beta

        selected = {idx for idx, _, _, _ in taken}
        for idx, fine, score, _ in taken:
            self.corpus.set_state(idx, LabelState(StateKind.CONFIDENT, fine=fine, score=score))
        for idx, p in enumerate(self.corpus.passages):
            if p.state.kind is StateKind.CONFIDENT and idx not in selected:
                self.corpus.set_state(idx, UNLABELED)

        entries = [
            ConfidentEntry(idx, self.corpus.passages[idx].id, fine, score, gap)
            for idx, fine, score, gap in taken
        ]
        return ConfidentSet(entries=entries, beta=self.beta, r_percent=self.select_percent)

    def bootstrap_epoch(self, epoch: int, confident: ConfidentSet) -> EpochRecord:
        sums = self._run_epoch(epoch, "bootstrap")
        record = EpochRecord(
            epoch=epoch,
            phase="bootstrap",
            loss_global=sums["global"],
            loss_local=sums["local"],
            loss_coarse_global=sums["coarse_global"],
            n_confident=len(confident),
            beta=self.beta,
            cs_by_coarse=confident.by_coarse(self.taxonomy, self.corpus),
        )
        self.records.append(record)
        return record

    def run(self) -> list[EpochRecord]:
        """Full schedule; returns the per-epoch records (also kept on the
        engine). The model and corpus states are updated in place."""
        epoch = 0
        for _ in range(self.schedule.warmup_epochs):
            epoch += 1
            self.warmup_epoch(epoch)
        for _ in range(self.schedule.bootstrap_epochs):
            epoch += 1
            confident = self.select_confident()
            self.bootstrap_epoch(epoch, confident)
        return self.records
