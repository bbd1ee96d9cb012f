"""CiteULike comparison: ItemPOP, MLP, LCMR and the two LCMR ablations.

Needs the citeulike-a release (users.dat, mult.dat, vocabulary.dat) in
--data or $LCMR_CITEULIKE_DIR. With default settings the LCMR runs take hours
on a CPU; use --epochs / --d to shorten.

    python scripts/citeulike_run.py --models itempop
    python scripts/citeulike_run.py --models itempop,mlp,full,no_central,no_local
"""

import argparse
import time
from pathlib import Path

from lcmr.baselines import MlpConfig, MlpModel, itempop_scores
from lcmr.corpus import loo_split, write_split
from lcmr.datasets import load_citeulike
from lcmr.evaluation import evaluate
from lcmr.model import LcmrConfig, LcmrModel
from lcmr.ndgrad import AdamConfig
from lcmr.train import TrainConfig, fit, log_history, save_state

# published ×100 values for reference; BPRMF and CTR are not reimplemented here
REFERENCE = {"itempop": (27.35, 18.32), "mlp": (78.02, 51.23), "full": (84.60, 61.07)}
LABELS = {"full": "LCMR", "no_local": "LCMR\\local", "no_central": "LCMR\\central"}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data")
    ap.add_argument("--out", default="runs/citeulike")
    ap.add_argument("--models", default="itempop,mlp,full,no_central,no_local")
    ap.add_argument("--split-seed", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--d", type=int, default=200)
    ap.add_argument("--hops", type=int, default=3)
    ap.add_argument("--memory-size", type=int, default=100)
    ap.add_argument("--lr", type=float, default=0.001)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inter, corpus = load_citeulike(args.data)
    print(f"users {inter.num_users}  items {inter.num_items}  feedback {inter.num_interactions}  "
          f"density {100 * inter.density:.3f}%  words/item {corpus.total_words / corpus.num_items:.1f}")
    split = loo_split(inter, args.split_seed)
    write_split(split, out / "split.txt")
    tcfg = TrainConfig(epochs=args.epochs, adam=AdamConfig(lr=args.lr), seed=args.seed)

    results = {}
    for name in args.models.split(","):
        t0 = time.perf_counter()
        if name == "itempop":
            model = itempop_scores(split.train)
        else:
            if name == "mlp":
                model = MlpModel(MlpConfig(args.d // 2, args.d - args.d // 2),
                                 inter.num_users, inter.num_items, args.seed)
            else:
                cfg = LcmrConfig.from_joint_dim(args.d, hops=args.hops, memory_size=args.memory_size,
                                                vocab_size=corpus.vocab_size, variant=name)
                model = LcmrModel(cfg, inter.num_users, inter.num_items, args.seed)
            best, hist = fit(model, split, corpus, tcfg,
                             on_epoch=lambda e, m: print(f"  {name} epoch {e}", flush=True))
            model.load_state(best)
            log_history(hist, out / f"history-{name}.csv")
            save_state(out / f"{name}.ckpt", model, best, seed=args.seed, epoch=hist.best_epoch)
        rep = evaluate(model, split, corpus)
        rep.write(out / f"report-{name}.txt")
        results[name] = (100 * rep.hr, 100 * rep.ndcg)
        print(f"{name}: HR@10 {results[name][0]:.2f}  NDCG@10 {results[name][1]:.2f}  "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)

    print(f"\n{'model':<14}{'HR@10':>8}{'NDCG@10':>9}{'ref HR':>8}{'ref NDCG':>9}")
    for name, (hr, nd) in results.items():
        ref = REFERENCE.get(name, (float("nan"), float("nan")))
        print(f"{LABELS.get(name, name):<14}{hr:>8.2f}{nd:>9.2f}{ref[0]:>8.2f}{ref[1]:>9.2f}")
    if "full" in results:
        for name in ("no_local", "no_central"):
            if name in results:
                drop = (results["full"][1] - results[name][1]) / results["full"][1] * 100
                print(f"{LABELS[name]} relative NDCG drop {drop:.2f}%")


if __name__ == "__main__":
    main()
