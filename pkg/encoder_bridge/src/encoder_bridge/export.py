"""End-to-end export: taxonomy + corpus TSVs in, embedding files out.

Produces the three files the pipeline loads, each with idhash and manifest
sidecars:

* ``passages.c2fe``            one row per corpus passage
* ``prototypes.c2fe``          fine rows then coarse rows, rendered text
* ``prototypes_no_gloss.c2fe`` same rows rendered without glosses

The no-gloss file is always written so a gloss ablation never needs a
second export. Glosses come from the taxonomy's optional third column
first, then from the gloss cache or fetcher.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Sequence

from .encode import get_encoder, id_digest, write_embedding_file
from .render import render_prototype
from .wiki import Fetcher, fetch_gloss

log = logging.getLogger(__name__)

__all__ = ["export_dataset", "read_corpus_rows", "read_taxonomy_rows"]

_DEFAULT_CACHE = Path.home() / ".cache" / "encoder-bridge" / "glosses"


def _records(path: Path) -> list[tuple[int, list[str]]]:
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            out.append((lineno, [part.strip() for part in line.rstrip("\n").split("\t")]))
    return out


def read_taxonomy_rows(path: str | Path) -> list[tuple[str, str, str]]:
    """Taxonomy records as ``(coarse_name, fine_name, gloss)`` in file order.

    Accepts ``coarse<TAB>fine`` with an optional third gloss field; blank
    lines and ``#`` comments are skipped, matching the pipeline's loader.
    """
    path = Path(path)
    rows: list[tuple[str, str, str]] = []
    seen: set[str] = set()
    for lineno, parts in _records(path):
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields, got {len(parts)}")
        coarse, fine = parts[0], parts[1]
        gloss = parts[2] if len(parts) == 3 else ""
        if not coarse or not fine:
            raise ValueError(f"{path}:{lineno}: empty surface name")
        if fine in seen:
            raise ValueError(f"{path}:{lineno}: duplicate fine label {fine!r}")
        seen.add(fine)
        rows.append((coarse, fine, gloss))
    if not rows:
        raise ValueError(f"{path}: no taxonomy records")
    return rows


def read_corpus_rows(path: str | Path) -> list[tuple[str, str]]:
    """Corpus records as ``(passage_id, text)`` in file order.

    Accepts ``id<TAB>coarse<TAB>text`` with an optional gold label field;
    the coarse name and gold label stay in the TSV for the pipeline.
    """
    path = Path(path)
    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    for lineno, parts in _records(path):
        if len(parts) not in (3, 4):
            raise ValueError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(parts)}")
        pid, text = parts[0], parts[2]
        if not pid:
            raise ValueError(f"{path}:{lineno}: empty passage id")
        if pid in seen:
            raise ValueError(f"{path}:{lineno}: duplicate passage id {pid!r}")
        seen.add(pid)
        rows.append((pid, text))
    if not rows:
        raise ValueError(f"{path}: no corpus records")
    return rows


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def _write_sidecars(path: Path, ids: Sequence[str], dim: int, extra: Mapping[str, object]) -> None:
    _sidecar(path, ".idhash").write_text(id_digest(ids) + "\n", encoding="utf-8")
    entries: dict[str, object] = {
        "n_rows": len(ids),
        "dim": dim,
        "id_hash": id_digest(ids),
        "generator": "encoder-bridge",
        **extra,
    }
    lines = [f"{key}: {value}" for key, value in entries.items()]
    _sidecar(path, ".manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_dataset(
    taxonomy: str | Path,
    corpus: str | Path,
    out_dir: str | Path,
    dataset: str = "nyt",
    template_id: int = 1,
    with_gloss: bool = True,
    encoder: str = "hashed",
    offline: bool = False,
    cache_dir: str | Path | None = None,
    fetcher: Fetcher | None = None,
) -> dict[str, Path]:
    """Encode a dataset's passages and label prototypes into embedding files.

    Returns the written embedding paths keyed ``passages``, ``prototypes``,
    ``prototypes_no_gloss``. Prototype rows are the fine labels in taxonomy
    order followed by the coarse labels in first-appearance order, ids
    ``fine:<name>`` and ``coarse:<name>``, which is the order the pipeline
    verifies against its taxonomy.
    """
    tax_rows = read_taxonomy_rows(taxonomy)
    corpus_rows = read_corpus_rows(corpus)
    enc = get_encoder(encoder)
    cache = Path(cache_dir) if cache_dir is not None else _DEFAULT_CACHE

    coarse_names: list[str] = []
    for coarse, _, _ in tax_rows:
        if coarse not in coarse_names:
            coarse_names.append(coarse)
    fine_names = [fine for _, fine, _ in tax_rows]
    tsv_gloss = {fine: gloss for _, fine, gloss in tax_rows}

    def rendered(use_gloss: bool) -> list[str]:
        return [
            render_prototype(name, glosses.get(name, "") if use_gloss else "", template_id, dataset)
            for name in fine_names + coarse_names
        ]

    # bare render first: it validates dataset and template before any fetch
    glosses: dict[str, str] = {}
    bare_texts = rendered(False)
    if with_gloss:
        for name in fine_names + coarse_names:
            inline = tsv_gloss.get(name, "")
            glosses[name] = inline if inline else fetch_gloss(name, cache, offline=offline, fetcher=fetcher)
    with_texts = rendered(with_gloss)

    prototype_ids = [f"fine:{n}" for n in fine_names] + [f"coarse:{n}" for n in coarse_names]

    passage_ids = [pid for pid, _ in corpus_rows]
    passage_texts = [text for _, text in corpus_rows]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "passages": out / "passages.c2fe",
        "prototypes": out / "prototypes.c2fe",
        "prototypes_no_gloss": out / "prototypes_no_gloss.c2fe",
    }

    common = {"encoder": enc.name, "dataset": dataset.lower(), "template": template_id}
    passage_matrix = enc.encode(passage_texts)
    write_embedding_file(paths["passages"], passage_matrix)
    _write_sidecars(paths["passages"], passage_ids, passage_matrix.shape[1], {"kind": "passage", **common})

    for key, texts, gloss_flag in (
        ("prototypes", with_texts, with_gloss),
        ("prototypes_no_gloss", bare_texts, False),
    ):
        matrix = enc.encode(texts)
        write_embedding_file(paths[key], matrix)
        _write_sidecars(
            paths[key],
            prototype_ids,
            matrix.shape[1],
            {"kind": "prototype", **common, "with_gloss": gloss_flag},
        )

    log.info(
        "exported %d passages and %d prototypes (%s) to %s",
        len(passage_ids),
        len(prototype_ids),
        enc.name,
        out,
    )
    return paths
