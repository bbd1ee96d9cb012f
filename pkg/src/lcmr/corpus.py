"""Interaction data, item text, vocabulary building, leave-one-out splits and
negative sampling."""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

TOKEN_RE = re.compile(r"[a-z][a-z0-9']*")


class ParseError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionSet:
    """Binary implicit feedback stored as one sorted item array per user."""

    num_users: int
    num_items: int
    items: tuple[np.ndarray, ...]
    user_ids: tuple[str, ...] | None = None  # raw labels, index = dense id
    item_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.items) != self.num_users:
            raise ValueError("one item list per user required")
        for u, its in enumerate(self.items):
            if len(its) == 0:
                raise ValueError(f"user {u} has no interactions")
            if its[-1] >= self.num_items or its[0] < 0:
                raise ValueError(f"user {u} has an item id outside [0, {self.num_items})")
            if np.any(np.diff(its) <= 0):
                raise ValueError(f"user {u} item list not strictly increasing")

    @classmethod
    def from_lists(cls, lists: Sequence[Iterable[int]], num_items: int, **kw) -> "InteractionSet":
        arrays = tuple(np.unique(np.asarray(list(x), dtype=np.int64)) for x in lists)
        return cls(len(arrays), num_items, arrays, **kw)

    @property
    def num_interactions(self) -> int:
        return int(sum(len(x) for x in self.items))

    @property
    def density(self) -> float:
        return self.num_interactions / (self.num_users * self.num_items)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        users = np.repeat(np.arange(self.num_users), [len(x) for x in self.items])
        items = np.concatenate(self.items) if self.items else np.zeros(0, np.int64)
        return users, items

    @cached_property
    def item_sets(self) -> tuple[frozenset, ...]:
        return tuple(frozenset(x.tolist()) for x in self.items)

    @cached_property
    def keys(self) -> np.ndarray:
        """Sorted u * n + i codes, for vectorised membership tests."""
        u, i = self.pairs()
        return np.sort(u * self.num_items + i)

    def contains(self, users, items) -> np.ndarray:
        codes = np.asarray(users) * self.num_items + np.asarray(items)
        pos = np.searchsorted(self.keys, codes)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == codes

    def __eq__(self, other):
        if not isinstance(other, InteractionSet):
            return NotImplemented
        return (self.num_users == other.num_users and self.num_items == other.num_items
                and all(np.array_equal(a, b) for a, b in zip(self.items, other.items)))

    __hash__ = None


@dataclass
class Vocabulary:
    words: list[str]
    doc_freq: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.index = {w: k for k, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate words in vocabulary")
        if not self.doc_freq:
            self.doc_freq = [0] * len(self.words)

    @property
    def size(self) -> int:
        return len(self.words)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for w, df in zip(self.words, self.doc_freq):
                fh.write(f"{w}\t{df}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        words, dfs = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                words.append(parts[0])
                dfs.append(int(parts[1]) if len(parts) > 1 else 0)
        return cls(words, dfs)


@dataclass(frozen=True)
class ItemCorpus:
    """Distinct word indices per item over a vocabulary of ``vocab_size``."""

    words: tuple[np.ndarray, ...]
    vocab_size: int

    def __post_init__(self):
        for i, w in enumerate(self.words):
            if len(w) and (w.min() < 0 or w.max() >= self.vocab_size):
                raise FormatError(f"item {i} has a word index outside [0, {self.vocab_size})")

    @property
    def num_items(self) -> int:
        return len(self.words)

    @cached_property
    def empty_items(self) -> tuple[int, ...]:
        return tuple(i for i, w in enumerate(self.words) if len(w) == 0)

    @property
    def total_words(self) -> int:
        return int(sum(len(w) for w in self.words))

    def subset(self, item_order: Sequence[int]) -> "ItemCorpus":
        return ItemCorpus(tuple(self.words[i] for i in item_order), self.vocab_size)


# --------------------------------------------------------------------------
# parsing


def _content_lines(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            yield lineno, line.rstrip("\n")


def parse_interactions(path: str | Path, format: str = "pairs",
                       num_items: int | None = None) -> InteractionSet:
    """Read implicit feedback.

    ``pairs``: "user item" per line (tab or space separated, '#' comments).
    Users are densified by sorted raw id; items too unless ``num_items`` is
    given, in which case raw item ids must already be integers below it.
    ``citeulike-users``: line u lists "count id id ..." for user u, item ids
    index the item text file directly.
    """
    if format == "pairs":
        raw: dict[str, set[str]] = {}
        for lineno, line in _content_lines(path):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'user item', got {line!r}")
            raw.setdefault(parts[0], set()).add(parts[1])
        if not raw:
            raise ParseError(f"{path}: no users")
        user_ids = sorted(raw, key=_id_key)
        if num_items is None:
            item_ids = sorted({i for s in raw.values() for i in s}, key=_id_key)
            imap = {r: k for k, r in enumerate(item_ids)}
            n = len(item_ids)
        else:
            imap = None
            item_ids = None
            n = num_items
        lists = []
        for u in user_ids:
            if imap is not None:
                lists.append([imap[i] for i in raw[u]])
            else:
                try:
                    lists.append([int(i) for i in raw[u]])
                except ValueError as exc:
                    raise ParseError(f"{path}: non-integer item id for user {u}") from exc
        return InteractionSet.from_lists(lists, n, user_ids=tuple(user_ids),
                                         item_ids=tuple(item_ids) if item_ids else None)

    if format == "citeulike-users":
        lists = []
        for lineno, line in _content_lines(path):
            parts = line.split()
            if not parts:
                continue
            try:
                vals = [int(p) for p in parts]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer token") from exc
            if vals[0] != len(vals) - 1:
                raise FormatError(f"{path}:{lineno}: count {vals[0]} but {len(vals) - 1} ids")
            if vals[0] == 0:
                raise FormatError(f"{path}:{lineno}: user with no interactions")
            lists.append(vals[1:])
        if not lists:
            raise ParseError(f"{path}: no users")
        n = num_items if num_items is not None else max(max(x) for x in lists) + 1
        return InteractionSet.from_lists(lists, n)

    raise ValueError(f"unknown interaction format {format!r}")


def _id_key(s: str):
    return (0, int(s), "") if s.lstrip("-").isdigit() else (1, 0, s)


def write_pairs(inter: InteractionSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, its in enumerate(inter.items):
            for i in its:
                fh.write(f"{u}\t{i}\n")


def write_citeulike_users(inter: InteractionSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for its in inter.items:
            fh.write(" ".join([str(len(its))] + [str(i) for i in its]) + "\n")


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


def parse_item_text(path: str | Path, format: str = "bow-counts",
                    vocab: Vocabulary | None = None,
                    vocab_size: int | None = None) -> ItemCorpus:
    """Per-item distinct word lists; line k of the file describes item k.

    ``bow-counts`` is LDA-C style "count idx:cnt idx:cnt ..."; counts are
    dropped. ``raw-tokens`` is free text mapped through ``vocab`` with
    out-of-vocabulary tokens discarded.
    """
    items = []
    if format == "bow-counts":
        D = vocab.size if vocab is not None else vocab_size
        for lineno, line in _content_lines(path):
            parts = line.split()
            if not parts:
                raise FormatError(f"{path}:{lineno}: empty line")
            try:
                count = int(parts[0])
                idx = [int(p.split(":", 1)[0]) for p in parts[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: malformed entry") from exc
            if count != len(idx):
                raise FormatError(f"{path}:{lineno}: count {count} but {len(idx)} entries")
            if idx and D is not None and max(idx) >= D:
                raise FormatError(f"{path}:{lineno}: word index {max(idx)} >= vocabulary size {D}")
            if idx and min(idx) < 0:
                raise FormatError(f"{path}:{lineno}: negative word index")
            items.append(np.unique(np.asarray(idx, dtype=np.int64)))
        if D is None:
            D = max((int(w.max()) + 1 for w in items if len(w)), default=0)
    elif format == "raw-tokens":
        if vocab is None:
            raise ValueError("raw-tokens format needs a vocabulary")
        D = vocab.size
        for _, line in _content_lines(path):
            idx = [vocab.index[t] for t in tokenize(line) if t in vocab.index]
            items.append(np.unique(np.asarray(idx, dtype=np.int64)))
    else:
        raise ValueError(f"unknown text format {format!r}")
    corpus = ItemCorpus(tuple(items), D)
    if corpus.empty_items:
        log.warning("%d items have no in-vocabulary words", len(corpus.empty_items))
    return corpus


def read_token_docs(path: str | Path) -> list[list[str]]:
    return [tokenize(line) for _, line in _content_lines(path)]


def write_bow_counts(docs: Sequence[Sequence[str]], vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            counts = Counter(vocab.index[t] for t in doc if t in vocab.index)
            entries = " ".join(f"{k}:{counts[k]}" for k in sorted(counts))
            fh.write(f"{len(counts)} {entries}".rstrip() + "\n")


def build_vocab(docs: Sequence[Sequence[str]], top_k: int = 8000,
                stopwords: Iterable[str] = ()) -> Vocabulary:
    """Keep the ``top_k`` words with the highest max-over-documents tf-idf.

    tf is the raw count in a document and idf = ln(num_docs / doc_freq).
    Ties are broken lexicographically.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    stop = set(stopwords)
    n_docs = len(docs)
    df: Counter = Counter()
    best: dict[str, float] = {}
    tfs = []
    for doc in docs:
        tf = Counter(t for t in doc if t not in stop)
        tfs.append(tf)
        df.update(tf.keys())
    for tf in tfs:
        for w, c in tf.items():
            score = c * math.log(n_docs / df[w])
            if score > best.get(w, -1.0):
                best[w] = score
    ranked = sorted(best, key=lambda w: (-best[w], w))
    if len(ranked) < top_k:
        log.warning("only %d distinct words available (asked for %d)", len(ranked), top_k)
    kept = ranked[:top_k]
    return Vocabulary(kept, [df[w] for w in kept])


# --------------------------------------------------------------------------
# splits and sampling


@dataclass
class LooSplit:
    """Leave-one-out split with frozen evaluation candidates.

    ``val``/``test`` map eligible users to their held-out item; the
    ``*_candidates`` map the same users to their sampled negatives.
    """

    train: InteractionSet
    val: dict[int, int]
    test: dict[int, int]
    excluded: list[int]
    seed: int
    val_candidates: dict[int, np.ndarray]
    test_candidates: dict[int, np.ndarray]
    min_interactions: int = 3

    @cached_property
    def observed(self) -> InteractionSet:
        lists = []
        for u in range(self.train.num_users):
            its = list(self.train.items[u])
            if u in self.val:
                its.append(self.val[u])
            if u in self.test:
                its.append(self.test[u])
            lists.append(its)
        return InteractionSet.from_lists(lists, self.train.num_items)

    def heldout(self, which: str) -> tuple[dict[int, int], dict[int, np.ndarray]]:
        if which == "test":
            return self.test, self.test_candidates
        if which == "val":
            return self.val, self.val_candidates
        raise ValueError(f"unknown evaluation set {which!r}")


def sample_eval_candidates(observed_items, heldout: int, num_items: int, k: int,
                           rng: np.random.Generator) -> np.ndarray:
    """``k`` distinct items the user never interacted with."""
    seen = np.union1d(np.asarray(list(observed_items), dtype=np.int64), [heldout])
    pool = np.setdiff1d(np.arange(num_items), seen, assume_unique=True)
    if len(pool) < k:
        raise ValueError(f"only {len(pool)} non-interacted items, need {k}")
    return np.sort(rng.choice(pool, size=k, replace=False))


def loo_split(inter: InteractionSet, seed: int, min_interactions: int = 3,
              num_candidates: int = 99) -> LooSplit:
    """Hold out one random test and one random validation item per user.

    Users with fewer than ``min_interactions`` items stay entirely in train
    and are excluded from evaluation.
    """
    if min_interactions < 3:
        raise ValueError("min_interactions must be >= 3 so every user keeps a train item")
    rng = np.random.default_rng(seed)
    train_lists, val, test, excluded = [], {}, {}, []
    for u, its in enumerate(inter.items):
        if len(its) < min_interactions:
            train_lists.append(its)
            excluded.append(u)
            continue
        picks = rng.choice(len(its), size=2, replace=False)
        test[u] = int(its[picks[0]])
        val[u] = int(its[picks[1]])
        train_lists.append(np.delete(its, picks))
    train = InteractionSet(inter.num_users, inter.num_items,
                           tuple(np.asarray(x, dtype=np.int64) for x in train_lists),
                           inter.user_ids, inter.item_ids)
    val_c, test_c = {}, {}
    for u in sorted(test):
        seen = inter.items[u]
        test_c[u] = sample_eval_candidates(seen, test[u], inter.num_items, num_candidates, rng)
        val_c[u] = sample_eval_candidates(seen, val[u], inter.num_items, num_candidates, rng)
    return LooSplit(train, val, test, excluded, seed, val_c, test_c, min_interactions)


def sample_train_negatives(observed: InteractionSet, users: np.ndarray, ratio: int,
                           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``ratio`` uniform negatives per positive user entry in ``users``.

    Negatives avoid everything in ``observed``. Users who interacted with
    every item get none (with a warning).
    """
    if ratio < 1:
        raise ValueError("negative ratio must be >= 1")
    n = observed.num_items
    counts = np.array([len(x) for x in observed.items])
    full = counts >= n
    users = np.repeat(np.asarray(users, dtype=np.int64), ratio)
    if full.any():
        skip = full[users]
        if skip.any():
            log.warning("%d users interacted with every item; no negatives drawn",
                        len(np.unique(users[skip])))
        users = users[~skip]
    items = rng.integers(0, n, size=len(users))
    bad = observed.contains(users, items)
    while bad.any():
        items[bad] = rng.integers(0, n, size=int(bad.sum()))
        bad[bad] = observed.contains(users[bad], items[bad])
    return users, items


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def write_split(split: LooSplit, path: str | Path) -> None:
    tr = split.train
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# lcmr leave-one-out split v1\n")
        fh.write(f"seed={split.seed}\nnum_users={tr.num_users}\nnum_items={tr.num_items}\n")
        fh.write(f"min_interactions={split.min_interactions}\n")
        fh.write("[train]\n")
        for u, its in enumerate(tr.items):
            for i in its:
                fh.write(f"{u} {i}\n")
        for name, d in (("val", split.val), ("test", split.test)):
            fh.write(f"[{name}]\n")
            for u in sorted(d):
                fh.write(f"{u} {d[u]}\n")
        fh.write("[excluded]\n")
        for u in split.excluded:
            fh.write(f"{u}\n")
        for name, d in (("val_candidates", split.val_candidates),
                        ("test_candidates", split.test_candidates)):
            fh.write(f"[{name}]\n")
            for u in sorted(d):
                fh.write(" ".join(map(str, [u, *d[u].tolist()])) + "\n")


def read_split(path: str | Path) -> LooSplit:
    header: dict[str, int] = {}
    sections: dict[str, list[list[int]]] = {}
    current = None
    for lineno, line in _content_lines(path):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            key, _, val = line.partition("=")
            header[key.strip()] = int(val)
        else:
            try:
                sections[current].append([int(x) for x in line.split()])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: malformed row") from exc
    for key in ("seed", "num_users", "num_items"):
        if key not in header:
            raise FormatError(f"{path}: missing header {key!r}")
    m, n = header["num_users"], header["num_items"]
    lists: list[list[int]] = [[] for _ in range(m)]
    for u, i in sections.get("train", []):
        lists[u].append(i)
    train = InteractionSet.from_lists(lists, n)
    val = {r[0]: r[1] for r in sections.get("val", [])}
    test = {r[0]: r[1] for r in sections.get("test", [])}
    excluded = [r[0] for r in sections.get("excluded", [])]
    vc = {r[0]: np.asarray(r[1:], dtype=np.int64) for r in sections.get("val_candidates", [])}
    tc = {r[0]: np.asarray(r[1:], dtype=np.int64) for r in sections.get("test_candidates", [])}
    return LooSplit(train, val, test, excluded, header["seed"], vc, tc,
                    header.get("min_interactions", 3))
