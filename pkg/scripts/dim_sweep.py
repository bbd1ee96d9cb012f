"""Sensitivity to the embedding size d, the number of hops L and the memory size N.

Each setting varies one of (d, L, N) around a base setting and reports test
HR@10 / NDCG@10 for the best-validation checkpoint. Runs on the planted
synthetic data by default; --citeulike switches to the real release.

    python scripts/dim_sweep.py --param d --values 8,16,32,64
"""

import argparse

from lcmr.corpus import loo_split
from lcmr.datasets import load_citeulike
from lcmr.evaluation import evaluate
from lcmr.model import LcmrConfig, LcmrModel
from lcmr.ndgrad import AdamConfig
from lcmr.synthetic import PLANTED_MODEL, PLANTED_TRAIN, planted_dataset
from lcmr.train import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--param", choices=("d", "hops", "memory_size"), default="d")
    ap.add_argument("--values", default="8,16,32,64")
    ap.add_argument("--citeulike", action="store_true")
    ap.add_argument("--data")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.citeulike:
        inter, corpus = load_citeulike(args.data)
        base = dict(d=200, hops=3, memory_size=100, init_sigma=0.01)
        train = dict(epochs=50, batch_size=128, lr=0.001)
    else:
        inter, corpus, _, _ = planted_dataset(seed=0)
        base, train = dict(PLANTED_MODEL), dict(PLANTED_TRAIN)
    if args.epochs:
        train["epochs"] = args.epochs
    split = loo_split(inter, 1)
    tcfg = TrainConfig(epochs=train["epochs"], batch_size=train["batch_size"],
                       adam=AdamConfig(lr=train["lr"]), seed=args.seed)

    print(f"{args.param:>12}{'HR@10':>8}{'NDCG@10':>9}{'best ep':>9}")
    for v in (int(x) for x in args.values.split(",")):
        s = dict(base, **{args.param: v})
        cfg = LcmrConfig.from_joint_dim(s["d"], hops=s["hops"], memory_size=s["memory_size"],
                                        vocab_size=corpus.vocab_size, init_sigma=s["init_sigma"])
        model = LcmrModel(cfg, inter.num_users, inter.num_items, args.seed)
        best, hist = fit(model, split, corpus, tcfg)
        model.load_state(best)
        rep = evaluate(model, split, corpus)
        print(f"{v:>12}{100 * rep.hr:>8.2f}{100 * rep.ndcg:>9.2f}{hist.best_epoch:>9}", flush=True)


if __name__ == "__main__":
    main()
