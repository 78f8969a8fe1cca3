"""Prediction and scoring: Micro/Macro-F1, confusion matrices, reports.

Prediction is plain cosine argmax over a passage's candidate prototypes.
The hubness correction is constant within a passage, so ranking by it
would give the same labels; cosine keeps the prediction path independent
of the training metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ModelState, project
from .taxonomy import Corpus, Taxonomy

__all__ = [
    "ClassScores",
    "EvalReport",
    "predict",
    "predict_corpus",
    "evaluate",
    "confusion_by_coarse",
    "write_predictions",
    "read_predictions",
    "write_confusion",
    "write_report",
]


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    micro_f1: float
    macro_f1: float
    per_class: dict[int, ClassScores]
    confusion: np.ndarray  # (n_fine, n_fine); rows gold, columns predicted
    present: tuple[int, ...]  # classes with at least one gold instance
    n_evaluated: int
    by_coarse: dict[int, "EvalReport"]

    def to_dict(self, taxonomy: Taxonomy | None = None) -> dict:
        name = (lambda f: taxonomy.fine[f].surface_name) if taxonomy else str
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "n_evaluated": self.n_evaluated,
            "per_class": {
                name(f): {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for f, s in sorted(self.per_class.items())
            },
            "by_coarse": (
                {
                    (taxonomy.coarse[c].surface_name if taxonomy else str(c)): {
                        "micro_f1": r.micro_f1,
                        "macro_f1": r.macro_f1,
                        "n_evaluated": r.n_evaluated,
                    }
                    for c, r in sorted(self.by_coarse.items())
                }
            ),
        }

    def to_text(self, taxonomy: Taxonomy | None = None) -> str:
        lines = [
            f"evaluated: {self.n_evaluated}",
            f"micro-F1:  {self.micro_f1:.4f}",
            f"macro-F1:  {self.macro_f1:.4f}",
        ]
        name = (lambda f: taxonomy.fine[f].surface_name) if taxonomy else str
        lines.append("per-class (precision / recall / F1 / support):")
        for f, s in sorted(self.per_class.items()):
            lines.append(
                f"  {name(f):<24} {s.precision:.4f} / {s.recall:.4f} / {s.f1:.4f} / {s.support}"
            )
        if self.by_coarse:
            lines.append("per-coarse:")
            for c, r in sorted(self.by_coarse.items()):
                label = taxonomy.coarse[c].surface_name if taxonomy else str(c)
                lines.append(
                    f"  {label:<24} micro {r.micro_f1:.4f}  macro {r.macro_f1:.4f}"
                    f"  n {r.n_evaluated}"
                )
        return "\n".join(lines) + "\n"


def predict(
    passage_vector: np.ndarray,
    model: ModelState,
    fine_prototypes: np.ndarray,
    candidate_ids: Sequence[int],
) -> int:
    """Best candidate by cosine between projected passage and prototypes.

    Ties break toward the smaller fine id.
    """
    if not candidate_ids:
        raise ValueError("empty candidate set")
    rep_p = project(model, passage_vector)
    rep_f = project(model, fine_prototypes)
    sims = rep_f @ rep_p
    return min(candidate_ids, key=lambda fid: (-sims[fid], fid))


def predict_corpus(
    corpus: Corpus,
    taxonomy: Taxonomy,
    model: ModelState,
    passage_matrix: np.ndarray,
    fine_prototypes: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted fine id and its cosine score for every passage, in corpus order."""
    rep_p = project(model, passage_matrix)
    rep_f = project(model, fine_prototypes)
    sims = rep_p @ rep_f.T
    labels = np.empty(len(corpus.passages), dtype=np.intp)
    scores = np.empty(len(corpus.passages), dtype=np.float64)
    for i, p in enumerate(corpus.passages):
        cands = taxonomy.candidates(p.coarse)
        best = min(cands, key=lambda fid: (-sims[i, fid], fid))
        labels[i] = best
        scores[i] = sims[i, best]
    return labels, scores


def _f1_triple(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def evaluate(
    gold: Sequence[int],
    predicted: Sequence[int],
    taxonomy: Taxonomy,
    with_by_coarse: bool = True,
) -> EvalReport:
    """Score single-label predictions against gold fine labels.

    Micro-F1 reduces to accuracy here (every passage gets exactly one
    prediction). Macro-F1 averages per-class F1 over the classes that
    appear in the gold labels; classes predicted but never gold still get
    a per-class row, they just do not enter the average.
    """
    gold = np.asarray(gold, dtype=np.intp)
    predicted = np.asarray(predicted, dtype=np.intp)
    if gold.shape != predicted.shape or gold.ndim != 1:
        raise ValueError("gold and predicted must be equal-length 1-d sequences")
    if gold.size == 0:
        raise ValueError("nothing to evaluate: no gold labels")
    n_fine = taxonomy.n_fine
    if gold.max() >= n_fine or predicted.max() >= n_fine or gold.min() < 0 or predicted.min() < 0:
        raise ValueError("label id outside the taxonomy")

    confusion = np.zeros((n_fine, n_fine), dtype=np.int64)
    np.add.at(confusion, (gold, predicted), 1)

    gold_counts = confusion.sum(axis=1)
    pred_counts = confusion.sum(axis=0)
    per_class: dict[int, ClassScores] = {}
    for f in range(n_fine):
        if gold_counts[f] == 0 and pred_counts[f] == 0:
            continue
        tp = int(confusion[f, f])
        p, r, f1 = _f1_triple(tp, int(pred_counts[f] - tp), int(gold_counts[f] - tp))
        per_class[f] = ClassScores(p, r, f1, int(gold_counts[f]))

    present = tuple(int(f) for f in np.nonzero(gold_counts)[0])
    macro = float(np.mean([per_class[f].f1 for f in present]))
    micro = float(np.trace(confusion) / gold.size)

    by_coarse: dict[int, EvalReport] = {}
    if with_by_coarse:
        parents = np.asarray([taxonomy.fine[int(f)].parent for f in gold])
        for c in range(taxonomy.n_coarse):
            mask = parents == c
            if mask.any():
                by_coarse[c] = evaluate(gold[mask], predicted[mask], taxonomy, False)
    return EvalReport(
        micro_f1=micro,
        macro_f1=macro,
        per_class=per_class,
        confusion=confusion,
        present=present,
        n_evaluated=int(gold.size),
        by_coarse=by_coarse,
    )


def confusion_by_coarse(report: EvalReport, taxonomy: Taxonomy, coarse: int) -> np.ndarray:
    """Confusion sub-matrix restricted to one coarse label's candidates."""
    if not 0 <= coarse < taxonomy.n_coarse:
        raise ValueError(f"unknown coarse id {coarse}")
    cands = list(taxonomy.candidates(coarse))
    return report.confusion[np.ix_(cands, cands)]


# ---------------------------------------------------------------------------
# File formats: predictions and confusion tables


def write_predictions(
    path: str | Path,
    corpus: Corpus,
    taxonomy: Taxonomy,
    labels: np.ndarray,
    scores: np.ndarray,
) -> None:
    """One tab-separated record per passage: id, fine surface name, score."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for p, fid, score in zip(corpus.passages, labels, scores):
            name = taxonomy.fine[int(fid)].surface_name
            fh.write(f"{p.id}\t{name}\t{score:.17g}\n")


def read_predictions(path: str | Path, taxonomy: Taxonomy) -> dict[str, int]:
    """Predictions file back to a passage-id -> fine-id mapping."""
    out: dict[str, int] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        out[parts[0]] = taxonomy.fine_id(parts[1])
    return out


def write_confusion(path: str | Path, matrix: np.ndarray, labels: Sequence[str]) -> None:
    """Rectangular count table: header row of predicted labels, one row
    per gold label. Loads cleanly into any table/plotting tool."""
    matrix = np.asarray(matrix)
    if matrix.shape != (len(labels), len(labels)):
        raise ValueError(f"matrix shape {matrix.shape} does not match {len(labels)} labels")
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("gold\\pred\t" + "\t".join(labels) + "\n")
        for name, row in zip(labels, matrix):
            fh.write(name + "\t" + "\t".join(str(int(v)) for v in row) + "\n")


def write_report(path_prefix: str | Path, report: EvalReport, taxonomy: Taxonomy) -> None:
    """Emit <prefix>.txt and <prefix>.json next to each other."""
    prefix = Path(path_prefix)
    prefix.with_suffix(".txt").write_text(report.to_text(taxonomy), encoding="utf-8")
    prefix.with_suffix(".json").write_text(
        json.dumps(report.to_dict(taxonomy), indent=2) + "\n", encoding="utf-8"
    )
