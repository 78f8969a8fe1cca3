"""Coarse-to-fine label refinement over frozen text embeddings.

Passages annotated with coarse labels get fine labels from within their
coarse label's candidate set: surface-name matching seeds a few passages,
a contrastive projection head is warmed up on the seeds, and alternating
confident-set selection and finetuning propagate labels to the rest.
"""

from .bootstrap import BootstrapEngine, ConfidentSet, Schedule, select_from_scores
from .config import RunConfig
from .embeddings import EmbeddingMatrix, read_embeddings, write_embeddings
from .evaluation import EvalReport, evaluate, predict, predict_corpus
from .model import LossConfig, ModelState, init_model, project
from .similarity import SimilarityConfig, c_similarity, corrected_scores
from .synthetic import SyntheticSpec, generate
from .taxonomy import (
    Corpus,
    Taxonomy,
    choose_select_percent,
    load_corpus,
    load_taxonomy,
    seed_ratios,
    seed_weak_supervision,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapEngine",
    "ConfidentSet",
    "Corpus",
    "EmbeddingMatrix",
    "EvalReport",
    "LossConfig",
    "ModelState",
    "RunConfig",
    "Schedule",
    "SimilarityConfig",
    "SyntheticSpec",
    "Taxonomy",
    "c_similarity",
    "choose_select_percent",
    "corrected_scores",
    "evaluate",
    "generate",
    "init_model",
    "load_corpus",
    "load_taxonomy",
    "predict",
    "predict_corpus",
    "project",
    "read_embeddings",
    "seed_ratios",
    "seed_weak_supervision",
    "select_from_scores",
    "write_embeddings",
]
