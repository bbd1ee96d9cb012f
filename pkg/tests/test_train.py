import math

import numpy as np
import pytest

from lcmr.corpus import loo_split
from lcmr.evaluation import evaluate
from lcmr.model import LcmrConfig, LcmrModel
from lcmr.ndgrad import AdamConfig, Tape, backward, bce_loss
from lcmr.synthetic import planted_dataset, random_dataset
from lcmr.train import (HISTORY_HEADER, EpochRecord, TrainConfig, TrainHistory, TrainingError,
                        epoch_examples, fit, load_model, log_history, read_history, save_model,
                        save_state, train_epoch)


def tiny_setup(seed=0, variant="full"):
    inter, corpus, _, _ = planted_dataset(num_users=20, num_items=40, interactions_per_user=8,
                                          words_per_group=10, shared_words=4, words_per_item=4,
                                          seed=seed)
    split = loo_split(inter, seed, num_candidates=20)
    cfg = LcmrConfig.from_joint_dim(8, hops=2, memory_size=4, vocab_size=corpus.vocab_size,
                                    variant=variant, init_sigma=0.1)
    return LcmrModel(cfg, 20, 40, seed), split, corpus


def test_single_positive_at_half_is_ln2():
    model, split, corpus = tiny_setup()
    model.h.value[:] = 0
    tape = Tape()
    loss = bce_loss(tape, model.forward_batch(tape, [0], [0], corpus), [1])
    assert float(loss.value) == pytest.approx(math.log(2), abs=1e-12)


def test_perfect_batch_loss_small():
    model, split, corpus = tiny_setup(variant="embedding_only")
    x = np.concatenate([model.P.value[0], model.Q.value[0]])
    model.h.value[:] = 100 * x / np.dot(x, x)
    loss = bce_loss(None, model.forward_batch(None, [0, 0], [0, 0], corpus), [1, 1])
    assert float(loss.value) <= 1e-6


@pytest.mark.parametrize("ratio", [1, 2])
def test_epoch_count_law(ratio):
    _, split, _ = tiny_setup()
    users, items, labels = epoch_examples(split, TrainConfig(neg_ratio=ratio), 1)
    n_pos = split.train.num_interactions
    assert len(users) == (1 + ratio) * n_pos and labels.sum() == n_pos
    assert not split.observed.contains(users[labels == 0], items[labels == 0]).any()


def test_epoch_examples_pure_in_seed_and_epoch():
    _, split, _ = tiny_setup()
    a = epoch_examples(split, TrainConfig(seed=3), 2)
    b = epoch_examples(split, TrainConfig(seed=3), 2)
    c = epoch_examples(split, TrainConfig(seed=3), 3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[1], c[1])


def test_last_partial_batch_processed():
    model, split, corpus = tiny_setup()
    cfg = TrainConfig(batch_size=1000)
    before = model.h.value.copy()
    train_epoch(model, split, corpus, cfg, 1)
    assert model.h.step_count == 1 and not np.array_equal(before, model.h.value)


def test_tiny_planted_loss_drops():
    model, split, corpus = tiny_setup()
    cfg = TrainConfig(epochs=10, batch_size=16, adam=AdamConfig(lr=0.01))
    _, hist = fit(model, split, corpus, cfg)
    assert hist.losses[9] < hist.losses[0]


def test_epochs_one():
    model, split, corpus = tiny_setup()
    _, hist = fit(model, split, corpus, TrainConfig(epochs=1))
    assert len(hist) == 1 and hist.best_epoch == 1


def test_eval_every_leaves_gaps():
    model, split, corpus = tiny_setup()
    _, hist = fit(model, split, corpus, TrainConfig(epochs=3, eval_every=2))
    assert math.isnan(hist.records[0].val_hr)
    assert not math.isnan(hist.records[1].val_hr) and not math.isnan(hist.records[2].val_hr)


def test_fit_requires_val_users():
    inter, corpus = random_dataset(5, 20, per_user=(1, 2), seed=0)
    split = loo_split(inter, 0, num_candidates=5)
    model = LcmrModel(LcmrConfig.from_joint_dim(4, vocab_size=corpus.vocab_size), 5, 20, 0)
    with pytest.raises(TrainingError):
        fit(model, split, corpus, TrainConfig(epochs=1))


def test_dimension_mismatch():
    model, split, corpus = tiny_setup()
    other = LcmrModel(model.config, 21, 40, 0)
    with pytest.raises(TrainingError):
        train_epoch(other, split, corpus, TrainConfig(), 1)


def test_fit_deterministic(tmp_path):
    paths = []
    for k in range(2):
        model, split, corpus = tiny_setup()
        _, hist = fit(model, split, corpus, TrainConfig(epochs=3, batch_size=16))
        paths.append(tmp_path / f"h{k}.csv")
        log_history(hist, paths[-1], timings=False)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_joint_training_reaches_both_modules():
    model, split, corpus = tiny_setup()
    users, items, labels = epoch_examples(split, TrainConfig(), 1)
    tape = Tape()
    backward(tape, bce_loss(tape, model.forward_batch(tape, users[:32], items[:32], corpus),
                            labels[:32]))
    for p in model.parameters():
        assert np.abs(p.grad).sum() > 0, p.name


def test_log_history_lines_and_roundtrip(tmp_path):
    hist = TrainHistory([EpochRecord(1, 0.69314718, 0.1, 0.05, 1.5),
                         EpochRecord(2, 0.6123456789012345, float("nan"), float("nan"), 1.25),
                         EpochRecord(3, 0.5, 0.3, 0.2, 2.0)], best_epoch=3)
    log_history(hist, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0] == HISTORY_HEADER
    back = read_history(tmp_path / "h.csv")
    assert back.best_epoch == 3
    for a, b in zip(hist.records, back.records):
        assert a.epoch == b.epoch and abs(a.loss - b.loss) <= 1e-9 and abs(a.seconds - b.seconds) <= 1e-9
        assert (math.isnan(a.val_hr) and math.isnan(b.val_hr)) or abs(a.val_hr - b.val_hr) <= 1e-9


def test_log_history_without_timings(tmp_path):
    hist = TrainHistory([EpochRecord(1, 0.5, 0.1, 0.05, 3.0)], best_epoch=1)
    log_history(hist, tmp_path / "h.csv", timings=False)
    assert (tmp_path / "h.csv").read_text().splitlines()[1].endswith(",")


def test_read_history_bad_header(tmp_path):
    (tmp_path / "h.csv").write_text("a,b\n")
    with pytest.raises(ValueError):
        read_history(tmp_path / "h.csv")


def test_best_checkpoint_reproduces_metrics(tmp_path):
    model, split, corpus = tiny_setup()
    best, hist = fit(model, split, corpus, TrainConfig(epochs=4, batch_size=16))
    save_state(tmp_path / "best.ckpt", model, best, seed=0)
    loaded, meta = load_model(tmp_path / "best.ckpt")
    rep = evaluate(loaded, split, corpus, which="val")
    assert rep.hr == hist.best.val_hr and rep.ndcg == hist.best.val_ndcg
    assert meta["seed"] == 0


def test_save_load_scores_identical(tmp_path):
    model, split, corpus = tiny_setup()
    save_model(tmp_path / "m.ckpt", model)
    loaded, _ = load_model(tmp_path / "m.ckpt")
    items = np.arange(40)
    np.testing.assert_array_equal(model.score_items(3, items, corpus),
                                  loaded.score_items(3, items, corpus))


def test_planted_loss_curve_settles(planted_runs):
    _, _, hist, _, _ = planted_runs("full")
    losses = hist.losses
    assert losses[-1] < losses[4]
    for prev, cur in zip(losses[4:], losses[5:]):
        assert cur <= 1.10 * prev
