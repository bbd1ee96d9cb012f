"""LCMR forward computation: joint embedding, centralized and local memory
attention modules, logistic output, and the ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import ItemCorpus
from .ndgrad import (Parameter, Tape, Var, attend, concat, embed_lookup, init_gaussian,
                     sigmoid_dot)

VARIANTS = ("full", "no_local", "no_central", "embedding_only")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class LcmrConfig:
    d1: int = 100
    d2: int = 100
    hops: int = 3
    memory_size: int = 100
    vocab_size: int = 8000
    beta: float | None = None  # None -> d ** -0.5
    variant: str = "full"
    max_words_per_item: int | None = None
    init_sigma: float = 0.01

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.hops < 1 or self.memory_size < 1:
            raise ConfigurationError("hops and memory_size must be >= 1")
        if self.d1 < 1 or self.d2 < 1:
            raise ConfigurationError("embedding dims must be >= 1")
        if self.beta is not None and not self.beta > 0:
            raise ConfigurationError("beta must be positive")
        if self.uses_text and self.vocab_size < 1:
            raise ConfigurationError(f"variant {self.variant} needs a vocabulary")

    @classmethod
    def from_joint_dim(cls, d: int, **kw) -> "LcmrConfig":
        return cls(d1=d // 2, d2=d - d // 2, **kw)

    @property
    def d(self) -> int:
        return self.d1 + self.d2

    @property
    def attn_beta(self) -> float:
        return self.beta if self.beta is not None else self.d ** -0.5

    @property
    def uses_central(self) -> bool:
        return self.variant in ("full", "no_local")

    @property
    def uses_text(self) -> bool:
        return self.variant in ("full", "no_central")


@dataclass
class ForwardTrace:
    x: np.ndarray
    central_weights: list[np.ndarray] = field(default_factory=list)
    local_weights: list[np.ndarray] = field(default_factory=list)
    z_central: np.ndarray | None = None
    z_local: np.ndarray | None = None
    z: np.ndarray | None = None
    score: float = float("nan")
    empty_text: bool = False


class LcmrModel:
    kind = "lcmr"

    def __init__(self, config: LcmrConfig, num_users: int, num_items: int,
                 rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.config = c = config
        self.num_users, self.num_items = num_users, num_items
        s = c.init_sigma
        self.P = init_gaussian((num_users, c.d1), s, rng, "P")
        self.Q = init_gaussian((num_items, c.d2), s, rng, "Q")
        self.K_c: list[Parameter] = []
        self.M_c: list[Parameter] = []
        if c.uses_central:
            for hop in range(c.hops):
                self.K_c.append(init_gaussian((c.memory_size, c.d), s, rng, f"K_c{hop}"))
                self.M_c.append(init_gaussian((c.memory_size, c.d), s, rng, f"M_c{hop}"))
        self.A = self.C = None
        if c.uses_text:
            self.A = init_gaussian((c.vocab_size, c.d), s, rng, "A")
            self.C = init_gaussian((c.vocab_size, c.d), s, rng, "C")
        out_dim = 2 * c.d if c.variant == "full" else c.d
        self.h = init_gaussian((out_dim,), s, rng, "h")

    @property
    def requires_text(self) -> bool:
        return self.config.uses_text

    def parameters(self) -> list[Parameter]:
        ps = [self.P, self.Q]
        for k, m in zip(self.K_c, self.M_c):
            ps += [k, m]
        if self.A is not None:
            ps += [self.A, self.C]
        return ps + [self.h]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if state[p.name].shape != p.shape:
                raise ConfigurationError(f"shape mismatch for {p.name}: "
                                         f"{state[p.name].shape} vs {p.shape}")
            p.value[...] = state[p.name]

    def meta(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config),
                "num_users": self.num_users, "num_items": self.num_items}

    # ------------------------------------------------------------------

    def joint_embed(self, tape: Tape | None, users, items) -> Var:
        return concat(tape, embed_lookup(tape, self.P, users), embed_lookup(tape, self.Q, items))

    def centralized(self, tape: Tape | None, x: Var, trace: ForwardTrace | None = None) -> Var:
        q = x
        for K, M in zip(self.K_c, self.M_c):
            q = attend(tape, q, K, M, self.config.attn_beta)
            if trace is not None:
                trace.central_weights.append(q.weights)
        return q

    def local(self, tape: Tape | None, x: Var, word_lists: Sequence[np.ndarray],
              trace: ForwardTrace | None = None) -> Var:
        """Multi-hop attention over per-item word memories keyed by A, valued by C.

        ``x`` is (B, d) and ``word_lists`` holds B word-index arrays. Items
        without words read a zero vector.
        """
        cap = self.config.max_words_per_item
        lists = [w[:cap] if cap else w for w in word_lists]
        width = max((len(w) for w in lists), default=0)
        batch = x.shape[0]
        if width == 0:
            if trace is not None:
                trace.empty_text = True
            return Var(np.zeros((batch, self.config.d)))
        idx = np.zeros((batch, width), dtype=np.int64)
        mask = np.zeros((batch, width), dtype=bool)
        for b, w in enumerate(lists):
            idx[b, :len(w)] = w
            mask[b, :len(w)] = True
        if idx.max() >= self.config.vocab_size:
            raise IndexError(f"word index {idx.max()} >= vocabulary size {self.config.vocab_size}")
        keys = embed_lookup(tape, self.A, idx)
        memories = embed_lookup(tape, self.C, idx)
        q = x
        for _ in range(self.config.hops):
            q = attend(tape, q, keys, memories, self.config.attn_beta, mask)
            if trace is not None:
                trace.local_weights.append(q.weights)
        return q

    def _words(self, corpus: ItemCorpus | None, items: np.ndarray):
        if not self.requires_text:
            return None
        if corpus is None:
            raise ConfigurationError(f"variant {self.config.variant!r} needs item text")
        if corpus.num_items != self.num_items:
            raise ConfigurationError(f"corpus has {corpus.num_items} items, model {self.num_items}")
        return [corpus.words[i] for i in items]

    def forward_words(self, tape: Tape | None, users, items, word_lists,
                      trace: ForwardTrace | None = None) -> Var:
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        x = self.joint_embed(tape, users, items)
        variant = self.config.variant
        if variant in ("full", "no_central") and word_lists is None:
            raise ConfigurationError(f"variant {variant!r} needs item text")
        zc = self.centralized(tape, x, trace) if self.config.uses_central else None
        zl = self.local(tape, x, word_lists, trace) if self.config.uses_text else None
        if variant == "full":
            z = concat(tape, zc, zl)
        elif variant == "no_local":
            z = zc
        elif variant == "no_central":
            z = zl
        else:
            z = x
        out = sigmoid_dot(tape, self.h, z)
        if trace is not None:
            trace.x = x.value[0]
            trace.z_central = None if zc is None else zc.value[0]
            trace.z_local = None if zl is None else zl.value[0]
            trace.z = z.value[0]
            trace.score = float(out.value[0])
        return out

    def forward_batch(self, tape: Tape | None, users, items, corpus: ItemCorpus | None) -> Var:
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        return self.forward_words(tape, users, items, self._words(corpus, items))

    def forward(self, u: int, i: int, words=None) -> tuple[float, ForwardTrace]:
        """Score one pair and keep every intermediate for inspection."""
        trace = ForwardTrace(x=np.zeros(self.config.d))
        wl = None if words is None else [np.asarray(words, dtype=np.int64)]
        if wl is not None and len(wl[0]) == 0:
            trace.empty_text = True
        out = self.forward_words(None, [u], [i], wl, trace)
        return float(out.value[0]), trace

    def score_pairs(self, users, items, corpus: ItemCorpus | None = None,
                    batch_size: int = 4096) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out = np.empty(len(users))
        for s in range(0, len(users), batch_size):
            sl = slice(s, s + batch_size)
            out[sl] = self.forward_batch(None, users[sl], items[sl], corpus).value
        return out

    def score_items(self, u: int, items, corpus: ItemCorpus | None = None) -> np.ndarray:
        items = np.asarray(items, dtype=np.int64)
        return self.score_pairs(np.full(len(items), u), items, corpus)
