"""Synthetic datasets with planted group structure, for tests and sanity runs."""

from __future__ import annotations

import numpy as np

from .corpus import InteractionSet, ItemCorpus


def planted_dataset(num_users: int = 200, num_items: int = 400, num_groups: int = 2,
                    affinity: float = 10.0, interactions_per_user: int = 20,
                    words_per_group: int = 30, shared_words: int = 10,
                    words_per_item: int = 8, popularity_exponent: float = 0.5,
                    seed: int = 0) -> tuple[InteractionSet, ItemCorpus, np.ndarray, np.ndarray]:
    """Users and items each belong to one latent group.

    A user picks items of its own group ``affinity`` times more often than
    others, on top of a Zipf-like item popularity with the given exponent.
    Item text mixes group-specific words with a few shared ones. Returns the
    interactions, the corpus, and the user and item group labels.
    """
    rng = np.random.default_rng(seed)
    user_group = rng.integers(0, num_groups, size=num_users)
    item_group = np.arange(num_items) % num_groups
    rank = rng.permutation(num_items) + 1
    popularity = rank.astype(float) ** -popularity_exponent

    lists = []
    for g in user_group:
        w = popularity * np.where(item_group == g, affinity, 1.0)
        lists.append(rng.choice(num_items, size=interactions_per_user, replace=False, p=w / w.sum()))
    inter = InteractionSet.from_lists(lists, num_items)

    vocab_size = num_groups * words_per_group + shared_words
    words = []
    for g in item_group:
        own = rng.choice(words_per_group, size=words_per_item, replace=False) + g * words_per_group
        common = rng.choice(shared_words, size=2, replace=False) + num_groups * words_per_group
        words.append(np.unique(np.concatenate([own, common])))
    return inter, ItemCorpus(tuple(words), vocab_size), user_group, item_group


def random_dataset(num_users: int, num_items: int, per_user: tuple[int, int] = (5, 15),
                   vocab_size: int = 50, words_per_item: tuple[int, int] = (0, 8),
                   seed: int = 0) -> tuple[InteractionSet, ItemCorpus]:
    """Structure-free interactions and text."""
    rng = np.random.default_rng(seed)
    lists = [rng.choice(num_items, size=rng.integers(*per_user, endpoint=True), replace=False)
             for _ in range(num_users)]
    words = tuple(np.unique(rng.choice(vocab_size, size=rng.integers(*words_per_item, endpoint=True)))
                  for _ in range(num_items))
    return InteractionSet.from_lists(lists, num_items), ItemCorpus(words, vocab_size)


# Small-scale setting used by the planted-structure checks and scripts/synthetic_run.py.
# Unit-scale-ish init (0.1) matters here: at 0.01 the centralized-only variant
# sits on the flat start of the loss for all 30 epochs.
PLANTED_MODEL = dict(d=32, hops=2, memory_size=20, init_sigma=0.1)
PLANTED_TRAIN = dict(epochs=30, batch_size=32, lr=0.001)


def planted_run(variant: str = "full", epochs: int = PLANTED_TRAIN["epochs"],
                data_seed: int = 0, split_seed: int = 1, seed: int = 0):
    """Train one LCMR variant on the default planted dataset.

    Returns ``(model, best_state, history, split, corpus)``.
    """
    from .corpus import loo_split
    from .model import LcmrConfig, LcmrModel
    from .ndgrad import AdamConfig
    from .train import TrainConfig, fit

    inter, corpus, _, _ = planted_dataset(seed=data_seed)
    split = loo_split(inter, split_seed)
    m = PLANTED_MODEL
    cfg = LcmrConfig.from_joint_dim(m["d"], hops=m["hops"], memory_size=m["memory_size"],
                                    vocab_size=corpus.vocab_size, variant=variant,
                                    init_sigma=m["init_sigma"])
    model = LcmrModel(cfg, inter.num_users, inter.num_items, seed)
    tcfg = TrainConfig(epochs=epochs, batch_size=PLANTED_TRAIN["batch_size"], seed=seed,
                       adam=AdamConfig(lr=PLANTED_TRAIN["lr"]))
    best, history = fit(model, split, corpus, tcfg)
    return model, best, history, split, corpus
