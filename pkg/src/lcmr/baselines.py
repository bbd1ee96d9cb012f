"""Reference recommenders run under the same protocol: ItemPOP and an MLP
over the joint user-item embedding."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .corpus import InteractionSet
from .model import ConfigurationError
from .ndgrad import Parameter, Tape, Var, concat, embed_lookup, init_gaussian, linear, relu, sigmoid_dot


class PopularityTable:
    """Non-personalised scores: number of distinct train users per item."""

    kind = "itempop"
    requires_text = False

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.int64)

    @property
    def num_items(self) -> int:
        return len(self.counts)

    def score_pairs(self, users, items, corpus=None, batch_size=None) -> np.ndarray:
        return self.counts[np.asarray(items, dtype=np.int64)].astype(np.float64)

    def score_items(self, u, items, corpus=None) -> np.ndarray:
        return self.score_pairs(None, items)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"popularity": self.counts.astype(np.float64)}

    def meta(self) -> dict:
        return {"kind": self.kind, "num_items": self.num_items}


def itempop_scores(train: InteractionSet) -> PopularityTable:
    counts = np.zeros(train.num_items, dtype=np.int64)
    for its in train.items:
        counts[its] += 1
    return PopularityTable(counts)


ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class MlpConfig:
    d1: int = 100
    d2: int = 100
    widths: tuple[int, ...] | None = None  # None -> (d // 2, d // 4)
    activation: str = "relu"
    init_sigma: float = 0.01

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.widths is not None and any(w < 1 for w in self.widths):
            raise ConfigurationError(f"layer widths must be positive: {self.widths}")

    @property
    def d(self) -> int:
        return self.d1 + self.d2

    @property
    def layer_widths(self) -> tuple[int, ...]:
        if self.widths is None:
            return (max(self.d // 2, 1), max(self.d // 4, 1))
        return tuple(self.widths)


class MlpModel:
    """Dense layers over x_ui with a logistic output (no output bias)."""

    kind = "mlp"
    requires_text = False

    def __init__(self, config: MlpConfig, num_users: int, num_items: int,
                 rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.config = c = config
        self.num_users, self.num_items = num_users, num_items
        s = c.init_sigma
        self.P = init_gaussian((num_users, c.d1), s, rng, "P")
        self.Q = init_gaussian((num_items, c.d2), s, rng, "Q")
        self.layers: list[tuple[Parameter, Parameter]] = []
        width = c.d
        for k, out in enumerate(c.layer_widths):
            w = init_gaussian((width, out), s, rng, f"W{k}")
            b = Parameter(f"b{k}", np.zeros(out))
            self.layers.append((w, b))
            width = out
        self.h = init_gaussian((width,), s, rng, "h")

    def parameters(self) -> list[Parameter]:
        ps = [self.P, self.Q]
        for w, b in self.layers:
            ps += [w, b]
        return ps + [self.h]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if state[p.name].shape != p.shape:
                raise ConfigurationError(f"shape mismatch for {p.name}")
            p.value[...] = state[p.name]

    def meta(self) -> dict:
        cfg = asdict(self.config)
        cfg["widths"] = list(self.config.layer_widths)
        return {"kind": self.kind, "config": cfg,
                "num_users": self.num_users, "num_items": self.num_items}

    def forward_batch(self, tape: Tape | None, users, items, corpus=None) -> Var:
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        z = concat(tape, embed_lookup(tape, self.P, users), embed_lookup(tape, self.Q, items))
        for w, b in self.layers:
            z = linear(tape, z, w, b)
            if self.config.activation == "relu":
                z = relu(tape, z)
        return sigmoid_dot(tape, self.h, z)

    def score_pairs(self, users, items, corpus=None, batch_size: int = 8192) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out = np.empty(len(users))
        for s in range(0, len(users), batch_size):
            out[s:s + batch_size] = self.forward_batch(None, users[s:s + batch_size],
                                                       items[s:s + batch_size]).value
        return out

    def score_items(self, u: int, items, corpus=None) -> np.ndarray:
        items = np.asarray(items, dtype=np.int64)
        return self.score_pairs(np.full(len(items), u), items)
