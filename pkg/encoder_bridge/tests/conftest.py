"""Shared fixtures: a small hand-built dataset and an offline gloss fetcher."""

from __future__ import annotations

from pathlib import Path

import pytest

TAXONOMY_TSV = """\
# coarse\tfine\tgloss
arts\tdance\t
arts\tmusic\tMusic is the art of arranging sound. It spans every culture.
sports\thockey\t
sports\ttennis\t
"""

FINE_NAMES = ["dance", "music", "hockey", "tennis"]
COARSE_NAMES = ["arts", "sports"]
PROTOTYPE_IDS = [f"fine:{n}" for n in FINE_NAMES] + [f"coarse:{n}" for n in COARSE_NAMES]

# taxonomy already glosses "music" inline, so a fetcher never sees it
GLOSSES = {
    "dance": "Dance is an art form of movement. It is performed in many settings. It predates writing.",
    "hockey": "Hockey is a team sport played on ice. Players use sticks to shoot a puck.",
    "tennis": "Tennis is a racket sport. Two or four players compete on a court.",
    "arts": "The arts are expressive disciplines. They include visual and performing forms.",
    "sports": "Sport is physical competitive activity. It is governed by rules.",
}

_FILLERS = [
    "review from last night",
    "local club notes",
    "season opener coverage",
    "weekend roundup item",
    "city desk report",
    "feature story draft",
]


def corpus_rows() -> list[tuple[str, str, str, str]]:
    """24 passages, 6 per fine label; the last one per label omits the name."""
    rows = []
    parents = {"dance": "arts", "music": "arts", "hockey": "sports", "tennis": "sports"}
    pid = 0
    for fine in FINE_NAMES:
        for k, filler in enumerate(_FILLERS):
            text = f"{fine} {fine} {filler}" if k < 5 else f"unsigned {filler} piece"
            rows.append((f"p{pid:02d}", parents[fine], text, fine))
            pid += 1
    return rows


class CountingFetcher:
    """Stand-in for the network fetcher; records every name it is asked for."""

    def __init__(self, glosses: dict[str, str] | None = None):
        self.glosses = GLOSSES if glosses is None else glosses
        self.calls: list[str] = []

    def __call__(self, name: str) -> str | None:
        self.calls.append(name)
        return self.glosses.get(name)


def raising_fetcher(name: str) -> str:
    raise AssertionError(f"unexpected network fetch for {name!r}")


def write_dataset(root: Path) -> dict[str, Path]:
    root.mkdir(parents=True, exist_ok=True)
    taxonomy = root / "taxonomy.tsv"
    corpus = root / "corpus.tsv"
    taxonomy.write_text(TAXONOMY_TSV, encoding="utf-8")
    lines = ["\t".join(row) for row in corpus_rows()]
    corpus.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"taxonomy": taxonomy, "corpus": corpus}


@pytest.fixture
def dataset(tmp_path: Path) -> dict[str, Path]:
    return write_dataset(tmp_path / "data")
