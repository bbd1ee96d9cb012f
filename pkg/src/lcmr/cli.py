"""Command-line entry point: prepare, split, train, evaluate, ablate, recommend."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus as C
from .baselines import MlpModel, itempop_scores
from .config import ConfigError, RunConfig, load_config
from .evaluation import evaluate
from .model import ConfigurationError, LcmrModel
from .train import fit, load_model, log_history, save_model, save_state

log = logging.getLogger("lcmr")

INTERACTIONS_FILE = "interactions.txt"
ITEMS_FILE = "items.dat"
VOCAB_FILE = "vocab.txt"
ABLATION_ROWS = (("LCMR", "full"), ("LCMR\\local", "no_local"), ("LCMR\\central", "no_central"))


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# prepared-corpus helpers


def load_prepared(data_dir: str | Path):
    data_dir = Path(data_dir)
    vocab = C.Vocabulary.load(data_dir / VOCAB_FILE)
    items = C.parse_item_text(data_dir / ITEMS_FILE, "bow-counts", vocab=vocab)
    inter = C.parse_interactions(data_dir / INTERACTIONS_FILE, "pairs", num_items=items.num_items)
    return inter, items, vocab


def dataset_stats(inter: C.InteractionSet, items: C.ItemCorpus) -> dict:
    return {"users": inter.num_users, "items": inter.num_items,
            "feedback": inter.num_interactions, "words": items.total_words,
            "density_pct": 100.0 * inter.density,
            "avg_words_per_item": items.total_words / max(items.num_items, 1),
            "empty_text_items": len(items.empty_items)}


def format_stats(stats: dict) -> str:
    return "\n".join([
        f"#Users               {stats['users']:,}",
        f"#Items               {stats['items']:,}",
        f"#Feedback            {stats['feedback']:,}",
        f"#Words               {stats['words']:,}",
        f"Rating Density (%)   {stats['density_pct']:.3f}",
        f"Avg. Words per Item  {stats['avg_words_per_item']:.1f}",
    ])


def _stopwords(path: str | None):
    if path:
        return Path(path).read_text(encoding="utf-8").split()
    from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS
    return ENGLISH_STOP_WORDS


def cmd_prepare(args) -> int:
    out = Path(args.out)
    if args.text_format == "raw-tokens":
        docs = C.read_token_docs(args.text)
        if not docs:
            raise UsageError(f"{args.text}: empty text corpus")
        vocab = C.build_vocab(docs, args.vocab_size, _stopwords(args.stopwords))
        counts_lines = None
    else:
        vocab = C.Vocabulary.load(args.vocab) if args.vocab else None
        counts_lines = Path(args.text).read_text(encoding="utf-8").splitlines()
        if not counts_lines:
            raise UsageError(f"{args.text}: empty text corpus")
        docs = None
    items = (C.parse_item_text(args.text, "bow-counts", vocab=vocab) if docs is None else None)
    if vocab is None:
        vocab = C.Vocabulary([f"w{k}" for k in range(items.vocab_size)])
    num_text = len(docs) if docs is not None else items.num_items

    if args.interactions_format == "citeulike-users":
        inter = C.parse_interactions(args.interactions, "citeulike-users", num_items=num_text)
        order = list(range(num_text))
    else:
        inter = C.parse_interactions(args.interactions, "pairs")
        try:
            order = [int(x) for x in inter.item_ids]
        except ValueError:
            raise UsageError("pairs item ids must be integer line numbers of the text file") from None
        if order and max(order) >= num_text:
            raise UsageError(f"item id {max(order)} has no line in {args.text}")

    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / VOCAB_FILE)
    if docs is not None:
        C.write_bow_counts([docs[k] for k in order], vocab, out / ITEMS_FILE)
    else:
        with open(out / ITEMS_FILE, "w", encoding="utf-8") as fh:
            for k in order:
                fh.write(counts_lines[k].strip() + "\n")
    C.write_pairs(inter, out / INTERACTIONS_FILE)
    with open(out / "users.map", "w", encoding="utf-8") as fh:
        for k, raw in enumerate(inter.user_ids or range(inter.num_users)):
            fh.write(f"{k}\t{raw}\n")
    with open(out / "items.map", "w", encoding="utf-8") as fh:
        for k, raw in enumerate(order):
            fh.write(f"{k}\t{raw}\n")

    inter, items, _ = load_prepared(out)
    text = format_stats(dataset_stats(inter, items))
    (out / "stats.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_split(args) -> int:
    inter, _, _ = load_prepared(args.data)
    split = C.loo_split(inter, args.seed, args.min_interactions, args.negatives)
    path = Path(args.out) if args.out else Path(args.data) / "split.txt"
    C.write_split(split, path)
    print(f"split: {len(split.test)} eval users, {len(split.excluded)} excluded, "
          f"{split.train.num_interactions} train interactions -> {path}")
    return 0


# --------------------------------------------------------------------------
# training


def load_items(data_dir: str | Path) -> C.ItemCorpus | None:
    """Item text of a prepared corpus, or None when the directory has none."""
    data_dir = Path(data_dir)
    if not (data_dir / ITEMS_FILE).exists():
        return None
    return C.parse_item_text(data_dir / ITEMS_FILE, "bow-counts",
                             vocab=C.Vocabulary.load(data_dir / VOCAB_FILE))


def _load_run_data(cfg: RunConfig):
    if not cfg.data_dir:
        raise ConfigError("data_dir: required")
    split = C.read_split(cfg.split_file)
    items = load_items(cfg.data_dir)
    if items is not None and items.num_items != split.train.num_items:
        raise ConfigurationError("split and prepared corpus disagree on the number of items")
    return split, items


def build_model(cfg: RunConfig, split: C.LooSplit, items: C.ItemCorpus | None,
                variant: str | None = None):
    m, n = split.train.num_users, split.train.num_items
    if cfg.model == "mlp":
        return MlpModel(cfg.mlp_config(), m, n, cfg.seed)
    variant = variant or cfg.variant
    if variant in ("full", "no_central") and items is None:
        raise ConfigurationError(f"variant {variant!r} needs item text")
    vocab = items.vocab_size if items is not None else 0
    return LcmrModel(cfg.lcmr_config(vocab, variant), m, n, cfg.seed)


def run_training(cfg: RunConfig, split, items, out: Path, variant: str | None = None):
    """Train one model into ``out``; returns (model at best state, history)."""
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.resolved")
    if cfg.model == "itempop":
        pop = itempop_scores(split.train)
        save_model(out / "best.ckpt", pop, seed=cfg.seed)
        return pop, None
    model = build_model(cfg, split, items, variant)
    tcfg = cfg.train_config()

    def on_epoch(epoch, mdl):
        if cfg.save_epoch_checkpoints:
            save_model(out / f"epoch-{epoch}.ckpt", mdl, seed=cfg.seed, epoch=epoch)

    best, history = fit(model, split, items, tcfg, on_epoch)
    model.load_state(best)
    rec = history.best
    save_state(out / "best.ckpt", model, best, seed=cfg.seed, epoch=history.best_epoch,
               val_hr=rec.val_hr, val_ndcg=rec.val_ndcg)
    log_history(history, out / "history.csv", timings=cfg.history_timings)
    return model, history


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    split, items = _load_run_data(cfg)
    model, history = run_training(cfg, split, items, Path(cfg.output_dir))
    if history is None:
        rep = evaluate(model, split, items, cfg.eval_k, which="val")
        print(f"itempop val hr@{cfg.eval_k}={100 * rep.hr:.2f} ndcg@{cfg.eval_k}={100 * rep.ndcg:.2f}")
    else:
        b = history.best
        print(f"best epoch {history.best_epoch}: val hr@{cfg.eval_k}={100 * b.val_hr:.2f} "
              f"ndcg@{cfg.eval_k}={100 * b.val_ndcg:.2f}")
    print(f"wrote {Path(cfg.output_dir) / 'best.ckpt'}")
    return 0


def _checked_model(ckpt, split):
    model, meta = load_model(ckpt)
    n = getattr(model, "num_items", None)
    if n != split.train.num_items:
        raise ConfigurationError(f"checkpoint has {n} items, split has {split.train.num_items}")
    users = getattr(model, "num_users", None)
    if users is not None and users != split.train.num_users:
        raise ConfigurationError(f"checkpoint has {users} users, split has {split.train.num_users}")
    return model, meta


def cmd_evaluate(args) -> int:
    split = C.read_split(args.split or Path(args.data) / "split.txt")
    model, _ = _checked_model(args.checkpoint, split)
    items = load_items(args.data) if args.data else None
    rep = evaluate(model, split, items, args.k, which=args.on)
    path = Path(args.report) if args.report else Path(args.checkpoint).with_name(f"report-{args.on}.txt")
    rep.write(path)
    print(f"hr@{args.k}={100 * rep.hr:.2f}")
    print(f"ndcg@{args.k}={100 * rep.ndcg:.2f}")
    return 0


def ablation_table(results: dict[str, tuple[float, float]]) -> list[tuple[str, float, float, float, float]]:
    """Rows of (name, hr, ndcg, hr drop %, ndcg drop %) relative to the full model."""
    full_hr, full_ndcg = results["LCMR"]
    rows = []
    for name, _ in ABLATION_ROWS:
        hr, ndcg = results[name]
        rows.append((name, hr, ndcg, (full_hr - hr) / full_hr * 100 if full_hr else float("nan"),
                     (full_ndcg - ndcg) / full_ndcg * 100 if full_ndcg else float("nan")))
    return rows


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if cfg.model != "lcmr":
        raise ConfigError("model: ablation needs model=lcmr")
    split, items = _load_run_data(cfg)
    out = Path(cfg.output_dir)
    results = {}
    for name, variant in ABLATION_ROWS:
        model, _ = run_training(cfg, split, items, out / variant, variant)
        rep = evaluate(model, split, items, cfg.eval_k, which="test")
        results[name] = (rep.hr, rep.ndcg)
    rows = ablation_table(results)
    k = cfg.eval_k
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write(f"model,hr@{k},ndcg@{k},hr_drop_pct,ndcg_drop_pct\n")
        for r in rows:
            fh.write(",".join([r[0]] + [repr(x) for x in r[1:]]) + "\n")
    print(f"{'model':<14}{'HR@' + str(k):>10}{'NDCG@' + str(k):>10}{'dHR%':>9}{'dNDCG%':>9}")
    for name, hr, ndcg, dh, dn in rows:
        print(f"{name:<14}{100 * hr:>10.2f}{100 * ndcg:>10.2f}{dh:>9.2f}{dn:>9.2f}")
    return 0


def recommend(model, split: C.LooSplit, user: int, n: int, items=None):
    if not 0 <= user < split.train.num_users:
        raise UsageError(f"unknown user {user}")
    seen = split.train.items[user]
    cand = np.setdiff1d(np.arange(split.train.num_items), seen)
    scores = model.score_items(user, cand, items)
    order = np.lexsort((cand, -scores))[:n]
    return cand[order], scores[order]


def cmd_recommend(args) -> int:
    split = C.read_split(args.split or Path(args.data) / "split.txt")
    model, _ = _checked_model(args.checkpoint, split)
    items = load_items(args.data) if getattr(model, "requires_text", False) else None
    for i, s in zip(*recommend(model, split, args.user, args.n, items)):
        print(f"{int(i)}\t{float(s)!r}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcmr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="build vocabulary and bow corpus, densify ids")
    s.add_argument("--text", required=True)
    s.add_argument("--text-format", choices=("raw-tokens", "bow-counts"), default="raw-tokens")
    s.add_argument("--vocab", help="vocabulary file for bow-counts text (one word per line)")
    s.add_argument("--interactions", required=True)
    s.add_argument("--interactions-format", choices=("pairs", "citeulike-users"), default="pairs")
    s.add_argument("--out", required=True)
    s.add_argument("--vocab-size", type=int, default=8000)
    s.add_argument("--stopwords", help="whitespace separated stopword file")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("split", help="leave-one-out split with frozen eval negatives")
    s.add_argument("data")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--min-interactions", type=int, default=3)
    s.add_argument("--negatives", type=int, default=99)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train one model from a config file")
    s.add_argument("config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="HR@K / NDCG@K of a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--data", help="prepared corpus dir (needed for text variants)")
    s.add_argument("--split")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--on", choices=("test", "val"), default="test")
    s.add_argument("--report")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="train full, no_local and no_central side by side")
    s.add_argument("config")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("recommend", help="top-n unseen items for a user")
    s.add_argument("checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--split")
    s.add_argument("--user", type=int, required=True)
    s.add_argument("--n", type=int, default=10)
    s.set_defaults(func=cmd_recommend)
    return p


def _category(exc: BaseException) -> tuple[str, int]:
    if isinstance(exc, (ConfigError, ConfigurationError)):
        return "config", 2
    if isinstance(exc, (C.ParseError, C.FormatError)):
        return "format", 3
    if isinstance(exc, OSError):
        return "io", 4
    if isinstance(exc, (UsageError, ValueError, IndexError, KeyError)):
        return "input", 5
    return "internal", 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        cat, code = _category(exc)
        msg = str(exc).replace("\n", " ")
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.strerror}: {exc.filename}"
        print(f"lcmr: error[{cat}]: {msg}", file=sys.stderr)
        if args.verbose:
            raise
        return code


if __name__ == "__main__":
    sys.exit(main())
