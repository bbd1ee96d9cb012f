"""Mini-batch BCE training with per-epoch negative resampling and
validation-based model selection."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .baselines import MlpConfig, MlpModel, PopularityTable
from .corpus import ItemCorpus, LooSplit, epoch_rng, sample_train_negatives
from .evaluation import evaluate
from .model import LcmrConfig, LcmrModel
from .ndgrad import AdamConfig, Tape, adam_step, backward, bce_loss, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

HISTORY_HEADER = "epoch,loss,val_hr10,val_ndcg10,seconds"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    neg_ratio: int = 1
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    eval_every: int = 1
    eval_k: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.neg_ratio < 1 or self.eval_every < 1:
            raise ValueError("neg_ratio and eval_every must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_hr: float
    val_ndcg: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self):
        return len(self.records)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    @property
    def best(self) -> EpochRecord:
        return self.records[self.best_epoch - 1]


def epoch_examples(split: LooSplit, cfg: TrainConfig, epoch_idx: int):
    """Shuffled (users, items, labels) for one epoch: positives + fresh negatives."""
    rng = epoch_rng(cfg.seed, epoch_idx)
    pu, pi = split.train.pairs()
    nu, ni = sample_train_negatives(split.observed, pu, cfg.neg_ratio, rng)
    users = np.concatenate([pu, nu])
    items = np.concatenate([pi, ni])
    labels = np.concatenate([np.ones(len(pu)), np.zeros(len(nu))])
    order = rng.permutation(len(users))
    return users[order], items[order], labels[order]


def train_epoch(model, split: LooSplit, corpus: ItemCorpus | None, cfg: TrainConfig,
                epoch_idx: int) -> float:
    """One pass over S = R+ and a fresh R-; returns the example-weighted mean loss."""
    if split.train.num_users != model.num_users or split.train.num_items != model.num_items:
        raise TrainingError("model and split dimensions differ")
    users, items, labels = epoch_examples(split, cfg, epoch_idx)
    params = model.parameters()
    total = 0.0
    for s in range(0, len(users), cfg.batch_size):
        sl = slice(s, s + cfg.batch_size)
        tape = Tape()
        pred = model.forward_batch(tape, users[sl], items[sl], corpus)
        loss = bce_loss(tape, pred, labels[sl])
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss in epoch {epoch_idx}, batch starting at {s}")
        backward(tape, loss)
        adam_step(params, cfg.adam)
        total += value * len(labels[sl])
    return total / len(users)


def _better(hr, ndcg, best) -> bool:
    return best is None or (hr, ndcg) > best


def fit(model, split: LooSplit, corpus: ItemCorpus | None, cfg: TrainConfig,
        on_epoch: Callable[[int, object], None] | None = None):
    """Train for ``cfg.epochs`` epochs, keeping the best-validation weights.

    Returns ``(best_state, history)``; the model is left at the final epoch.
    Epochs without a validation pass record NaN metrics.
    """
    if not split.val:
        raise TrainingError("no eval-eligible users in the split")
    history = TrainHistory()
    best_key, best_state = None, None
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(model, split, corpus, cfg, epoch)
        hr = ndcg = float("nan")
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            rep = evaluate(model, split, corpus, cfg.eval_k, which="val")
            hr, ndcg = rep.hr, rep.ndcg
            if _better(hr, ndcg, best_key):
                best_key = (hr, ndcg)
                best_state = model.state_dict()
                history.best_epoch = epoch
        history.records.append(EpochRecord(epoch, loss, hr, ndcg, time.perf_counter() - t0))
        log.info("epoch %d loss %.5f val hr@%d %.4f ndcg %.4f", epoch, loss, cfg.eval_k, hr, ndcg)
        if on_epoch is not None:
            on_epoch(epoch, model)
    return best_state, history


def log_history(history: TrainHistory, path: str | Path, timings: bool = True) -> None:
    """CSV with one row per epoch. ``timings=False`` blanks the wall-clock
    column so that reruns give byte-identical files."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for r in history.records:
            secs = repr(r.seconds) if timings else ""
            fh.write(f"{r.epoch},{r.loss!r},{r.val_hr!r},{r.val_ndcg!r},{secs}\n")


def read_history(path: str | Path) -> TrainHistory:
    hist = TrainHistory()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != HISTORY_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            e, loss, hr, ndcg, secs = line.rstrip("\n").split(",")
            hist.records.append(EpochRecord(int(e), float(loss), float(hr), float(ndcg),
                                            float(secs) if secs else float("nan")))
    keyed = [(r.val_hr, r.val_ndcg, -r.epoch) for r in hist.records if not math.isnan(r.val_hr)]
    if keyed:
        hist.best_epoch = -max(keyed)[2]
    return hist


# --------------------------------------------------------------------------
# persistence


def save_model(path: str | Path, model, **extra) -> None:
    meta = dict(model.meta())
    meta.update(extra)
    save_checkpoint(path, model.state_dict(), meta)


def save_state(path: str | Path, model, state: dict, **extra) -> None:
    meta = dict(model.meta())
    meta.update(extra)
    save_checkpoint(path, state, meta)


def load_model(path: str | Path):
    """Rebuild whichever model a checkpoint holds; returns ``(model, meta)``."""
    meta, arrays = load_checkpoint(path)
    kind = meta.get("kind")
    if kind == "itempop":
        return PopularityTable(arrays["popularity"].astype(np.int64)), meta
    if kind == "lcmr":
        model = LcmrModel(LcmrConfig(**meta["config"]), meta["num_users"], meta["num_items"])
    elif kind == "mlp":
        cfg = dict(meta["config"])
        cfg["widths"] = tuple(cfg["widths"])
        model = MlpModel(MlpConfig(**cfg), meta["num_users"], meta["num_items"])
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    model.load_state(arrays)
    return model, meta
