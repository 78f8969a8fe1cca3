"""Label glosses: fetch the lead of a name's Wikipedia page, keep the first
two sentences, and cache the result on disk so exports can run offline.

The fetcher is injectable (any ``name -> extract text | None`` callable);
the default one talks to the public MediaWiki API with a polite rate limit.
Cache entries are keyed by the exact surface name; a cached empty string is
a valid "no gloss found" answer and suppresses refetching.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
import urllib.parse
import urllib.request
from pathlib import Path
from typing import Callable

log = logging.getLogger(__name__)

__all__ = ["GlossError", "fetch_gloss", "first_two_sentences", "split_sentences"]

Fetcher = Callable[[str], "str | None"]

API_URL = "https://en.wikipedia.org/w/api.php"
USER_AGENT = "encoder-bridge/0.1 (embedding export tool)"
_MIN_INTERVAL_S = 0.5
_last_request = 0.0

# words whose trailing period does not end a sentence
_ABBREVIATIONS = frozenset(
    "mr mrs ms dr prof sr jr st no vs etc inc ltd co corp eg ie al fig approx".split()
)

_BOUNDARY = re.compile(r"([.!?]+)(\s+)")


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence split on terminal punctuation.

    A period does not split after a known abbreviation or a single-letter
    token (initials, "U.S."), and the next sentence must start with an
    uppercase letter, digit, or quote.
    """
    flat = " ".join(text.split())
    if not flat:
        return []
    sentences: list[str] = []
    start = 0
    for m in _BOUNDARY.finditer(flat):
        end = m.end(1)
        nxt = flat[m.end() : m.end() + 1]
        if nxt and not (nxt.isupper() or nxt.isdigit() or nxt in "\"'("):
            continue
        if m.group(1) == ".":
            prev = flat[start : m.start()].rsplit(None, 1)[-1] if flat[start : m.start()].strip() else ""
            bare = prev.rstrip(".").split(".")[-1]  # last piece of dotted tokens
            if bare.lower() in _ABBREVIATIONS or len(bare) == 1:
                continue
        sentences.append(flat[start:end].strip())
        start = m.end()
    tail = flat[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def first_two_sentences(text: str) -> str:
    return " ".join(split_sentences(text)[:2])


class GlossError(RuntimeError):
    """Gloss unavailable: offline with a cold cache, or a transport failure."""


def _cache_file(cache_dir: Path, surface_name: str) -> Path:
    digest = hashlib.sha256(surface_name.encode("utf-8")).hexdigest()[:16]
    slug = re.sub(r"[^a-z0-9]+", "-", surface_name.lower()).strip("-")[:40] or "name"
    return cache_dir / f"{slug}-{digest}.txt"


def fetch_gloss(
    surface_name: str,
    cache_dir: str | Path,
    offline: bool = False,
    fetcher: Fetcher | None = None,
) -> str:
    """First two sentences of the name's page, or "" when no page exists.

    Results (including empty ones) are cached under ``cache_dir``; with
    ``offline=True`` only the cache is consulted and a miss raises.
    """
    name = surface_name.strip()
    if not name:
        raise ValueError("empty surface name")
    cache_dir = Path(cache_dir)
    cached = _cache_file(cache_dir, name)
    if cached.exists():
        return cached.read_text(encoding="utf-8").strip()
    if offline:
        raise GlossError(f"offline mode and no cached gloss for {name!r}")

    extract = (fetcher or _wikipedia_extract)(name)
    if extract is None:
        log.warning("no page found for %r; proceeding without a gloss", name)
        gloss = ""
    else:
        gloss = first_two_sentences(extract)
    cache_dir.mkdir(parents=True, exist_ok=True)
    cached.write_text(gloss + "\n", encoding="utf-8")
    return gloss


# ---------------------------------------------------------------------------
# Default fetcher: MediaWiki search + page extract


def _api_call(params: dict) -> dict:
    global _last_request
    wait = _MIN_INTERVAL_S - (time.monotonic() - _last_request)
    if wait > 0:  # sequential and rate-limited per host
        time.sleep(wait)
    query = urllib.parse.urlencode({**params, "format": "json"})
    request = urllib.request.Request(f"{API_URL}?{query}", headers={"User-Agent": USER_AGENT})
    try:
        with urllib.request.urlopen(request, timeout=20) as response:
            payload = json.loads(response.read().decode("utf-8"))
    except OSError as exc:
        raise GlossError(f"wikipedia request failed: {exc}") from exc
    finally:
        _last_request = time.monotonic()
    return payload


def _wikipedia_extract(name: str) -> str | None:
    """Lead text of the first non-disambiguation page matching ``name``."""
    found = _api_call({"action": "query", "list": "search", "srsearch": name, "srlimit": 5})
    for hit in found.get("query", {}).get("search", []):
        pages = _api_call(
            {
                "action": "query",
                "titles": hit["title"],
                "prop": "extracts|pageprops",
                "explaintext": 1,
                "exintro": 1,
                "redirects": 1,
            }
        )
        for page in pages.get("query", {}).get("pages", {}).values():
            if "disambiguation" in page.get("pageprops", {}):
                continue
            extract = page.get("extract", "").strip()
            if extract:
                return extract
    return None
