"""Locating and loading the public CiteULike-a release."""

from __future__ import annotations

import os
from pathlib import Path

from .corpus import InteractionSet, ItemCorpus, Vocabulary, parse_interactions, parse_item_text

CITEULIKE_ENV = "LCMR_CITEULIKE_DIR"
# published size of the release: users, items, feedback
CITEULIKE_SHAPE = (5551, 16980, 204986)


class DatasetMissing(FileNotFoundError):
    pass


def citeulike_dir(path: str | Path | None = None) -> Path:
    """Directory holding users.dat and mult.dat (vocabulary.dat optional)."""
    raw = path or os.environ.get(CITEULIKE_ENV)
    if not raw:
        raise DatasetMissing(
            f"CiteULike data not configured: set {CITEULIKE_ENV} to a directory with "
            "users.dat and mult.dat from the citeulike-a release")
    d = Path(raw)
    for name in ("users.dat", "mult.dat"):
        if not (d / name).is_file():
            raise DatasetMissing(f"{d / name} not found")
    return d


def load_citeulike(path: str | Path | None = None) -> tuple[InteractionSet, ItemCorpus]:
    d = citeulike_dir(path)
    vocab = Vocabulary.load(d / "vocabulary.dat") if (d / "vocabulary.dat").is_file() else None
    items = parse_item_text(d / "mult.dat", "bow-counts", vocab=vocab,
                            vocab_size=None if vocab else 8000)
    inter = parse_interactions(d / "users.dat", "citeulike-users", num_items=items.num_items)
    return inter, items
