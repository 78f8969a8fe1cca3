"""Synthetic hierarchical-cluster datasets for desk-scale pipeline tests.

Passages are drawn from a Gaussian mixture with two-level structure: coarse
centroids far apart, fine centroids offset within each coarse, all riding on
a shared cone direction so vectors keep positive mutual cosine (the regime
where hubs matter). Prototype vectors are noisy copies of the centroids;
the optional hub variant parks one fine prototype on the global passage
mean, giving it high cosine to everything.

Lengths are measured in within-cluster radii, the usual separation unit for
Gaussian-mixture benchmarks: one radius = cluster_std * sqrt(dim), the
typical noise norm. ``separation=2.5`` therefore means each fine centroid
sits 2.5 noise radii from its coarse centroid, which puts sibling clusters
around 3.5 radii apart and makes them cleanly separable; difficulty comes
from the prototype vectors, which are displaced from the centroids they
name (``prototype_noise``, in the same radii) and blended toward a sibling
(``prototype_mix``), so a run has to relearn the fine geometry from a
handful of seeds. A few labeled points per class leave the displacement
poorly estimated; the bootstrap's confident set is what supplies enough
coverage to pin it down.

Texts are filler tokens; a configurable fraction of each fine label's
passages carries the label's surface name (and no other candidate name), so
weak seeding recovers exactly the injected passages.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import (
    EmbeddingMatrix,
    id_hash,
    write_embeddings,
    write_id_hash,
    write_manifest,
)
from .taxonomy import CoarseLabel, Corpus, FineLabel, Passage, Taxonomy

__all__ = ["SyntheticSpec", "SyntheticData", "generate", "write_dataset"]


@dataclass(frozen=True)
class SyntheticSpec:
    n_coarse: int = 3
    fine_per_coarse: int = 3
    passages_per_fine: int = 100
    dim: int = 64
    separation: float = 2.5  # fine-centroid offset, in noise radii (cluster_std * sqrt(dim))
    coarse_separation: float | None = None  # defaults to 3x separation
    cluster_std: float = 1.0
    cone_scale: float = 4.0  # shared-direction norm, in noise radii
    prototype_noise: float = 3.0  # isotropic prototype displacement, in noise radii
    prototype_mix: float = 0.40  # fraction of a sibling's offset blended into each prototype
    seed_fraction: float = 0.05
    skew: float = 0.0  # fraction of all passages forced into the first coarse
    hub: bool = False
    text_length: int = 30
    vocab_size: int = 400
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_coarse, self.fine_per_coarse, self.passages_per_fine) < 1:
            raise ValueError("counts must be positive")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.separation <= 0 or self.cluster_std <= 0:
            raise ValueError("separation and cluster_std must be positive")
        if not 0.0 <= self.seed_fraction <= 1.0:
            raise ValueError("seed_fraction must be in [0, 1]")
        if not 0.0 <= self.skew < 1.0:
            raise ValueError("skew must be in [0, 1)")
        if not 0.0 <= self.prototype_mix < 1.0:
            raise ValueError("prototype_mix must be in [0, 1)")
        if self.skew > 0 and self.n_coarse < 2:
            raise ValueError("skew needs at least two coarse labels")
        if self.vocab_size < 1 or self.text_length < 1:
            raise ValueError("vocab_size and text_length must be positive")

    @property
    def coarse_sep(self) -> float:
        return 3.0 * self.separation if self.coarse_separation is None else self.coarse_separation


@dataclass
class SyntheticData:
    taxonomy: Taxonomy
    corpus: Corpus
    passage_matrix: np.ndarray  # float32 (n_passages, dim)
    prototype_matrix: np.ndarray  # float32 (n_fine + n_coarse, dim)
    hub_fine: int | None


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _passage_counts(spec: SyntheticSpec) -> list[int]:
    """Passage count per fine label (fine-id order), honoring skew while
    keeping the grand total at n_coarse * fine_per_coarse * passages_per_fine."""
    total = spec.n_coarse * spec.fine_per_coarse * spec.passages_per_fine
    if spec.skew == 0.0:
        per_coarse = [spec.fine_per_coarse * spec.passages_per_fine] * spec.n_coarse
    else:
        first = round(spec.skew * total)
        rest, leftover = divmod(total - first, spec.n_coarse - 1)
        per_coarse = [first] + [rest + (i < leftover) for i in range(spec.n_coarse - 1)]
    counts: list[int] = []
    for n in per_coarse:
        base, leftover = divmod(n, spec.fine_per_coarse)
        counts.extend(base + (j < leftover) for j in range(spec.fine_per_coarse))
    return counts


def generate(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    std = spec.cluster_std
    radius = std * np.sqrt(spec.dim)  # typical norm of the within-cluster noise
    n_fine = spec.n_coarse * spec.fine_per_coarse

    fine_names = [f"topic{i:02d}" for i in range(n_fine)]
    coarse_names = [f"area{i}" for i in range(spec.n_coarse)]

    cone = spec.cone_scale * radius * _unit(rng, spec.dim)
    coarse_centroids = np.array(
        [cone + spec.coarse_sep * radius * _unit(rng, spec.dim) for _ in range(spec.n_coarse)]
    )
    fine_offsets = np.array(
        [spec.separation * radius * _unit(rng, spec.dim) for _ in range(n_fine)]
    )
    fine_centroids = np.array(
        [coarse_centroids[f // spec.fine_per_coarse] + fine_offsets[f] for f in range(n_fine)]
    )
    # Prototypes start displaced toward one sibling (entangled label names);
    # the pipeline has to pull them apart again.
    proto_fine = np.empty((n_fine, spec.dim))
    for f in range(n_fine):
        c, j = divmod(f, spec.fine_per_coarse)
        sib = c * spec.fine_per_coarse + (j + 1) % spec.fine_per_coarse
        blended = (1.0 - spec.prototype_mix) * fine_offsets[f] + spec.prototype_mix * fine_offsets[sib]
        proto_fine[f] = (
            coarse_centroids[c] + blended + spec.prototype_noise * std * rng.standard_normal(spec.dim)
        )
    proto_coarse = coarse_centroids + spec.prototype_noise * std * rng.standard_normal(
        (spec.n_coarse, spec.dim)
    )

    counts = _passage_counts(spec)
    vectors: list[np.ndarray] = []
    rows: list[tuple[str, int, int]] = []  # (passage id, coarse, gold fine)
    for f, n in enumerate(counts):
        c = f // spec.fine_per_coarse
        noise = std * rng.standard_normal((n, spec.dim))
        vectors.append(fine_centroids[f] + noise)
        start = len(rows)
        rows.extend((f"p{start + j:05d}", c, f) for j in range(n))
    passage_matrix = np.concatenate(vectors, axis=0)

    hub_fine = None
    if spec.hub:
        # Last fine of the first coarse becomes the hub: its prototype sits
        # on the global passage mean, cosine-close to everything.
        hub_fine = spec.fine_per_coarse - 1
        proto_fine[hub_fine] = passage_matrix.mean(axis=0) + 0.05 * std * rng.standard_normal(
            spec.dim
        )

    texts: list[str] = []
    seeded: list[bool] = []
    for f, n in enumerate(counts):
        n_seed = round(spec.seed_fraction * n)
        if spec.seed_fraction > 0:
            n_seed = max(n_seed, 1)
        flags = np.zeros(n, dtype=bool)
        flags[rng.choice(n, size=min(n_seed, n), replace=False)] = True
        for j in range(n):
            tokens = [f"w{k:03d}" for k in rng.integers(0, spec.vocab_size, spec.text_length)]
            if flags[j]:
                tokens.insert(int(rng.integers(0, len(tokens) + 1)), fine_names[f])
            texts.append(" ".join(tokens))
        seeded.extend(bool(x) for x in flags)

    fine_labels = [
        FineLabel(id=f, surface_name=fine_names[f], parent=f // spec.fine_per_coarse)
        for f in range(n_fine)
    ]
    coarse_labels = [
        CoarseLabel(
            id=c,
            surface_name=coarse_names[c],
            children=tuple(range(c * spec.fine_per_coarse, (c + 1) * spec.fine_per_coarse)),
        )
        for c in range(spec.n_coarse)
    ]
    taxonomy = Taxonomy(coarse_labels, fine_labels)
    passages = [
        Passage(id=pid, text=texts[i], coarse=c, gold_fine=g)
        for i, (pid, c, g) in enumerate(rows)
    ]
    corpus = Corpus(passages, taxonomy)
    return SyntheticData(
        taxonomy=taxonomy,
        corpus=corpus,
        passage_matrix=passage_matrix.astype(np.float32),
        prototype_matrix=np.concatenate([proto_fine, proto_coarse]).astype(np.float32),
        hub_fine=hub_fine,
    )


def write_dataset(spec: SyntheticSpec, out_dir: str | Path) -> dict[str, Path]:
    """Generate and write the four-file dataset; returns the path map.

    Files: taxonomy.tsv, corpus.tsv (gold in the fourth column),
    passages.c2fe and prototypes.c2fe with .idhash and .manifest sidecars.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate(spec)
    tax, corpus = data.taxonomy, data.corpus

    paths = {
        "taxonomy": out / "taxonomy.tsv",
        "corpus": out / "corpus.tsv",
        "passages": out / "passages.c2fe",
        "prototypes": out / "prototypes.c2fe",
    }
    with paths["taxonomy"].open("w", encoding="utf-8") as fh:
        fh.write("# coarse\tfine\tgloss\n")
        for fine in tax.fine:
            fh.write(f"{tax.coarse[fine.parent].surface_name}\t{fine.surface_name}\t\n")
    with paths["corpus"].open("w", encoding="utf-8") as fh:
        fh.write("# id\tcoarse\ttext\tgold_fine\n")
        for p in corpus.passages:
            gold = tax.fine[p.gold_fine].surface_name
            fh.write(f"{p.id}\t{tax.coarse[p.coarse].surface_name}\t{p.text}\t{gold}\n")

    passage_ids = [p.id for p in corpus.passages]
    write_embeddings(paths["passages"], EmbeddingMatrix(data.passage_matrix, kind="passage"))
    write_id_hash(paths["passages"], passage_ids)
    write_embeddings(paths["prototypes"], EmbeddingMatrix(data.prototype_matrix, kind="prototype"))
    write_id_hash(paths["prototypes"], tax.prototype_ids())

    common = {
        "generator": "synthetic-gaussian-mixture",
        "seed": spec.seed,
        "dim": spec.dim,
        "separation": spec.separation,
        "coarse_separation": spec.coarse_sep,
        "cone_scale": spec.cone_scale,
        "prototype_noise": spec.prototype_noise,
        "seed_fraction": spec.seed_fraction,
        "skew": spec.skew,
        "hub": spec.hub,
    }
    write_manifest(
        paths["passages"],
        {"kind": "passage", "n_rows": len(passage_ids), "id_hash": id_hash(passage_ids), **common},
    )
    write_manifest(
        paths["prototypes"],
        {
            "kind": "prototype",
            "n_rows": len(tax.prototype_ids()),
            "id_hash": id_hash(tax.prototype_ids()),
            **common,
        },
    )
    return paths
