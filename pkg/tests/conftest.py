"""Shared builders for the test suite.

Most tests construct their own tiny fixtures inline; the helpers here cover
the two shapes that recur everywhere: a hand-built taxonomy with known
candidate sets, and a small generated dataset that runs the full pipeline
in well under a second.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import pytest

from coarse2fine.synthetic import SyntheticData, SyntheticSpec, generate
from coarse2fine.taxonomy import CoarseLabel, Corpus, FineLabel, Passage, Taxonomy


def build_taxonomy(
    children_per_coarse: Sequence[int],
    coarse_names: Sequence[str] | None = None,
    fine_names: Sequence[str] | None = None,
) -> Taxonomy:
    """Taxonomy with the given number of fine labels under each coarse."""
    n_fine = sum(children_per_coarse)
    if coarse_names is None:
        coarse_names = [f"c{i}" for i in range(len(children_per_coarse))]
    if fine_names is None:
        fine_names = [f"f{i}" for i in range(n_fine)]
    coarse: list[CoarseLabel] = []
    fine: list[FineLabel] = []
    next_fine = 0
    for cid, n_children in enumerate(children_per_coarse):
        children = tuple(range(next_fine, next_fine + n_children))
        coarse.append(CoarseLabel(id=cid, surface_name=coarse_names[cid], children=children))
        for fid in children:
            fine.append(FineLabel(id=fid, surface_name=fine_names[fid], parent=cid))
        next_fine += n_children
    return Taxonomy(coarse, fine)


def build_corpus(
    taxonomy: Taxonomy,
    coarse_of: Sequence[int],
    texts: Sequence[str] | None = None,
    golds: Sequence[int | None] | None = None,
) -> Corpus:
    if texts is None:
        texts = [f"text {i}" for i in range(len(coarse_of))]
    if golds is None:
        golds = [None] * len(coarse_of)
    passages = [
        Passage(id=f"p{i:03d}", text=t, coarse=c, gold_fine=g)
        for i, (c, t, g) in enumerate(zip(coarse_of, texts, golds))
    ]
    return Corpus(passages, taxonomy)


def tiny_spec(**overrides) -> SyntheticSpec:
    """Small dataset (48 passages, 16 dims) for pipeline-level tests."""
    base = dict(
        n_coarse=2,
        fine_per_coarse=2,
        passages_per_fine=12,
        dim=16,
        seed_fraction=0.25,
        seed=0,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


@pytest.fixture
def tiny_data() -> SyntheticData:
    return generate(tiny_spec())


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)
