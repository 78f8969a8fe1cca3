"""Label taxonomy, passage corpus, and weak-supervision seeding.

The taxonomy is a two-level hierarchy: every fine label has exactly one
coarse parent, and the parent->children map partitions the fine labels.
Passages arrive with a coarse annotation only; the initial fine signal
comes from surface-name matching ("weak seeds").
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "FineLabel",
    "CoarseLabel",
    "Taxonomy",
    "StateKind",
    "LabelState",
    "UNLABELED",
    "Passage",
    "Corpus",
    "TaxonomyError",
    "CorpusError",
    "load_taxonomy",
    "load_corpus",
    "seed_weak_supervision",
    "seed_ratios",
    "choose_select_percent",
    "SELECT_PERCENT_CANDIDATES",
]


class TaxonomyError(ValueError):
    """Raised for malformed taxonomy files or inconsistent label structure."""


class CorpusError(ValueError):
    """Raised for malformed corpus files or label-state violations."""


@dataclass(frozen=True)
class FineLabel:
    id: int
    surface_name: str
    parent: int
    gloss: str = ""


@dataclass(frozen=True)
class CoarseLabel:
    id: int
    surface_name: str
    children: tuple[int, ...]


class Taxonomy:
    """Coarse and fine labels plus the coarse->fine partition.

    Ids are dense: coarse ids cover 0..n_coarse-1 and fine ids cover
    0..n_fine-1, assigned in file order (order of first appearance for
    coarse labels).
    """

    def __init__(self, coarse: Sequence[CoarseLabel], fine: Sequence[FineLabel]):
        self.coarse = list(coarse)
        self.fine = list(fine)
        self._coarse_by_name = {c.surface_name: c.id for c in self.coarse}
        self._fine_by_name = {f.surface_name: f.id for f in self.fine}
        self._validate()

    def _validate(self) -> None:
        if not self.fine:
            raise TaxonomyError("taxonomy has no fine labels")
        if not self.coarse:
            raise TaxonomyError("taxonomy has no coarse labels")
        if [c.id for c in self.coarse] != list(range(len(self.coarse))):
            raise TaxonomyError("coarse ids are not dense 0..n-1")
        if [f.id for f in self.fine] != list(range(len(self.fine))):
            raise TaxonomyError("fine ids are not dense 0..n-1")
        if len(self._coarse_by_name) != len(self.coarse):
            raise TaxonomyError("duplicate coarse surface names")
        if len(self._fine_by_name) != len(self.fine):
            raise TaxonomyError("duplicate fine surface names")
        seen: dict[int, int] = {}
        for c in self.coarse:
            if not c.children:
                raise TaxonomyError(f"coarse label {c.surface_name!r} has no fine labels")
            for fid in c.children:
                if fid in seen:
                    raise TaxonomyError(
                        f"fine label id {fid} appears under two coarse labels"
                    )
                seen[fid] = c.id
                if self.fine[fid].parent != c.id:
                    raise TaxonomyError(
                        f"fine label {self.fine[fid].surface_name!r} disagrees "
                        f"with its parent's children list"
                    )
        missing = set(range(len(self.fine))) - set(seen)
        if missing:
            raise TaxonomyError(f"fine labels with no parent: {sorted(missing)}")

    @property
    def n_coarse(self) -> int:
        return len(self.coarse)

    @property
    def n_fine(self) -> int:
        return len(self.fine)

    def candidates(self, coarse_id: int) -> tuple[int, ...]:
        """Fine label ids a passage with this coarse label may take."""
        return self.coarse[coarse_id].children

    def coarse_id(self, surface_name: str) -> int:
        try:
            return self._coarse_by_name[surface_name]
        except KeyError:
            raise TaxonomyError(f"unknown coarse label {surface_name!r}") from None

    def fine_id(self, surface_name: str) -> int:
        try:
            return self._fine_by_name[surface_name]
        except KeyError:
            raise TaxonomyError(f"unknown fine label {surface_name!r}") from None

    def prototype_ids(self) -> list[str]:
        """Stable row identifiers for a prototype embedding matrix.

        Fine labels first (by id), then coarse labels (by id); this is the
        row order every prototype embedding file must follow.
        """
        return [f"fine:{f.surface_name}" for f in self.fine] + [
            f"coarse:{c.surface_name}" for c in self.coarse
        ]


class StateKind(enum.Enum):
    UNLABELED = "unlabeled"
    WEAK_SEED = "weak_seed"
    CONFIDENT = "confident"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class LabelState:
    kind: StateKind
    fine: int | None = None
    score: float | None = None

    def __post_init__(self) -> None:
        if self.kind is StateKind.UNLABELED and self.fine is not None:
            raise CorpusError("unlabeled state cannot carry a fine label")
        if self.kind is not StateKind.UNLABELED and self.fine is None:
            raise CorpusError(f"{self.kind.value} state requires a fine label")


UNLABELED = LabelState(StateKind.UNLABELED)


@dataclass
class Passage:
    id: str
    text: str
    coarse: int
    state: LabelState = UNLABELED
    gold_fine: int | None = None  # evaluation only; training never reads it


class Corpus:
    """Passage collection with label-state bookkeeping.

    Everything except ``state`` is read-only after construction; state is
    mutated by a single writer (the bootstrap engine).
    """

    def __init__(self, passages: Sequence[Passage], taxonomy: Taxonomy):
        self.passages = list(passages)
        self.taxonomy = taxonomy
        ids = [p.id for p in self.passages]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate passage ids")
        for p in self.passages:
            if not 0 <= p.coarse < taxonomy.n_coarse:
                raise CorpusError(f"passage {p.id}: unknown coarse id {p.coarse}")
            if p.gold_fine is not None and p.gold_fine not in taxonomy.candidates(p.coarse):
                raise CorpusError(
                    f"passage {p.id}: gold fine label {p.gold_fine} is not a "
                    f"child of its coarse label"
                )
        # Fine assignment at seeding time, kept separately from the mutable
        # state so the seed set survives later state transitions.
        self.initial_seeds: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.passages)

    def set_state(self, index: int, state: LabelState) -> None:
        p = self.passages[index]
        if state.fine is not None and state.fine not in self.taxonomy.candidates(p.coarse):
            raise CorpusError(
                f"passage {p.id}: fine label {state.fine} is not a child of "
                f"coarse label {p.coarse}"
            )
        p.state = state

    def indices_by_coarse(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {c.id: [] for c in self.taxonomy.coarse}
        for i, p in enumerate(self.passages):
            out[p.coarse].append(i)
        return out


def _parse_record(line: str) -> list[str]:
    return [part.strip() for part in line.rstrip("\n").split("\t")]


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load a taxonomy from a tab-separated text file.

    One record per fine label: ``coarse_name<TAB>fine_name[<TAB>gloss]``.
    Blank lines and ``#`` comments are skipped. Ids are assigned densely in
    file order, so loading is deterministic.
    """
    path = Path(path)
    coarse_names: list[str] = []
    children: dict[str, list[int]] = {}
    fine: list[FineLabel] = []
    seen_fine: dict[str, str] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = _parse_record(line)
            if len(parts) not in (2, 3):
                raise TaxonomyError(
                    f"{path}:{lineno}: expected 2 or 3 tab-separated fields, "
                    f"got {len(parts)}"
                )
            coarse_name, fine_name = parts[0], parts[1]
            gloss = parts[2] if len(parts) == 3 else ""
            if not coarse_name or not fine_name:
                raise TaxonomyError(f"{path}:{lineno}: empty surface name")
            if fine_name in seen_fine:
                raise TaxonomyError(
                    f"{path}:{lineno}: fine label {fine_name!r} already "
                    f"declared under {seen_fine[fine_name]!r}"
                )
            seen_fine[fine_name] = coarse_name
            if coarse_name not in children:
                coarse_names.append(coarse_name)
                children[coarse_name] = []
            fid = len(fine)
            cid = coarse_names.index(coarse_name)
            children[coarse_name].append(fid)
            fine.append(FineLabel(id=fid, surface_name=fine_name, parent=cid, gloss=gloss))
    coarse = [
        CoarseLabel(id=i, surface_name=name, children=tuple(children[name]))
        for i, name in enumerate(coarse_names)
    ]
    return Taxonomy(coarse, fine)


def load_corpus(path: str | Path, taxonomy: Taxonomy) -> Corpus:
    """Load passages from a tab-separated text file.

    One record per passage: ``id<TAB>coarse_name<TAB>text[<TAB>gold_fine]``.
    The gold fine label, when present, is kept for evaluation only.
    """
    path = Path(path)
    passages: list[Passage] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = _parse_record(line)
            if len(parts) not in (3, 4):
                raise CorpusError(
                    f"{path}:{lineno}: expected 3 or 4 tab-separated fields, "
                    f"got {len(parts)}"
                )
            pid, coarse_name, text = parts[0], parts[1], parts[2]
            gold = None
            if len(parts) == 4 and parts[3]:
                gold = taxonomy.fine_id(parts[3])
            passages.append(
                Passage(id=pid, text=text, coarse=taxonomy.coarse_id(coarse_name), gold_fine=gold)
            )
    return Corpus(passages, taxonomy)


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _contains_tokens(haystack: list[str], needle: list[str]) -> bool:
    if not needle or len(needle) > len(haystack):
        return False
    first = needle[0]
    for i in range(len(haystack) - len(needle) + 1):
        if haystack[i] == first and haystack[i : i + len(needle)] == needle:
            return True
    return False


def _name_matches(text: str, tokens: list[str], name: str, match_mode: str) -> bool:
    if match_mode == "token":
        return _contains_tokens(tokens, _tokens(name))
    if match_mode == "substring":
        return name.lower() in text.lower()
    raise ValueError(f"unknown match mode {match_mode!r}")


def seed_weak_supervision(
    corpus: Corpus,
    match_mode: str = "token",
    exclusive_scope: str = "candidates",
) -> int:
    """Mark passages that exclusively mention one candidate fine label.

    A passage becomes a weak seed for fine label ``l`` iff its text contains
    the surface name of ``l`` and of no other fine label in the exclusivity
    scope (the passage's candidate set by default, all fine labels with
    ``exclusive_scope="all"``). Deterministic and idempotent; returns the
    number of seeded passages.

    ``match_mode="token"`` matches surface names as contiguous token
    sequences on lowercased text, so "mac" does not match "machine" and
    multi-word names match whole phrases. ``match_mode="substring"`` is the
    plain case-insensitive substring alternative.
    """
    if exclusive_scope not in ("candidates", "all"):
        raise ValueError(f"unknown exclusive scope {exclusive_scope!r}")
    taxonomy = corpus.taxonomy
    names = [f.surface_name for f in taxonomy.fine]
    count = 0
    corpus.initial_seeds.clear()
    for i, p in enumerate(corpus.passages):
        candidates = taxonomy.candidates(p.coarse)
        scope = range(taxonomy.n_fine) if exclusive_scope == "all" else candidates
        toks = _tokens(p.text) if match_mode == "token" else []
        hits = [fid for fid in scope if _name_matches(p.text, toks, names[fid], match_mode)]
        seed = None
        if len(hits) == 1 and hits[0] in candidates:
            seed = hits[0]
        if seed is not None:
            corpus.set_state(i, LabelState(StateKind.WEAK_SEED, fine=seed))
            corpus.initial_seeds[i] = seed
            count += 1
        else:
            corpus.set_state(i, UNLABELED)
    return count


def seed_ratios(corpus: Corpus) -> dict[int, float]:
    """Per-coarse ratio of weak seeds to total passages.

    Requires seeding to have run; a coarse label with zero passages has no
    defined ratio and raises.
    """
    totals = {c.id: 0 for c in corpus.taxonomy.coarse}
    seeds = dict(totals)
    for p in corpus.passages:
        totals[p.coarse] += 1
        if p.state.kind is StateKind.WEAK_SEED:
            seeds[p.coarse] += 1
    for cid, n in totals.items():
        if n == 0:
            name = corpus.taxonomy.coarse[cid].surface_name
            raise CorpusError(f"coarse label {name!r} has no passages; seed ratio undefined")
    return {cid: seeds[cid] / totals[cid] for cid in totals}


SELECT_PERCENT_CANDIDATES = (1, 5, 10, 15, 20)


def choose_select_percent(
    ratios: Iterable[float],
    candidates: Sequence[int] = SELECT_PERCENT_CANDIDATES,
) -> int:
    """Pick the selection percentage closest to the smallest seed ratio.

    ``ratios`` are fractions in [0, 1]; candidates are percentages. Ties
    break toward the smaller candidate.
    """
    ratios = list(ratios)
    if not ratios:
        raise ValueError("no seed ratios given")
    if not candidates:
        raise ValueError("empty candidate set")
    target = 100.0 * min(ratios)
    return min(candidates, key=lambda cand: (abs(cand - target), cand))
