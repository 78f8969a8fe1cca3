"""Encoder bridge: turns label taxonomies and passage text into the dense
embedding files the coarse2fine pipeline consumes.

The two packages share file formats (TSV inputs, C2FE embedding files with
idhash/manifest sidecars), never code. This side owns text rendering, gloss
fetching, and encoding; the pipeline side owns training and prediction.
"""

from .encode import EncodeError, HashedBagOfWords, get_encoder, id_digest, write_embedding_file
from .export import export_dataset
from .render import TEMPLATES, PrototypeText, render_prototype
from .wiki import GlossError, fetch_gloss, first_two_sentences, split_sentences

__all__ = [
    "EncodeError",
    "GlossError",
    "HashedBagOfWords",
    "PrototypeText",
    "TEMPLATES",
    "export_dataset",
    "fetch_gloss",
    "first_two_sentences",
    "get_encoder",
    "id_digest",
    "render_prototype",
    "split_sentences",
    "write_embedding_file",
]
