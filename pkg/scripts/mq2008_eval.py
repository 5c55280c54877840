"""Five-fold TSPRank evaluation on MQ2008-list (LETOR format) with top-k truncation.

Expects DATA_DIR/Fold{1..5}/{train,vali,test}.txt; reports NDCG@{3,5,10} and tau per fold.
"""
import argparse
from pathlib import Path

import numpy as np

from tsprank import metrics
from tsprank.core import BilinearModel
from tsprank.data_io import load_groups
from tsprank.learning import TrainConfig, predict, train


def evaluate(model, groups, ks=(3, 5, 10)):
    out = {f"ndcg@{k}": [] for k in ks}
    out["tau"] = []
    for g in groups:
        tour, ranks = predict(model, g)
        gold = g.normalized().gold_ranks
        gains = metrics.gains_from_ranks(gold)
        for k in ks:
            out[f"ndcg@{k}"].append(metrics.ndcg_at_k(tour, gains, min(k, g.n)))
        out["tau"].append(metrics.kendall_tau(ranks, gold))
    return {k: float(np.mean(v)) for k, v in out.items()}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("data_dir", type=Path)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--mode", choices=["local", "global"], default="global")
    p.add_argument("--encoder", choices=["identity", "linear"], default="linear")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--rank-order", choices=["ascending", "descending"], default="descending")
    p.add_argument("--tie-break", action="store_true")
    args = p.parse_args()
    per_fold = []
    for i in range(1, 6):
        fold = args.data_dir / f"Fold{i}"
        tr = load_groups(fold / "train.txt", "letor", args.rank_order, args.top_k, args.tie_break)
        dim = tr[0].dim
        va = load_groups(fold / "vali.txt", "letor", args.rank_order, args.top_k, args.tie_break, dim)
        te = load_groups(fold / "test.txt", "letor", args.rank_order, args.top_k, args.tie_break, dim)
        cfg = TrainConfig(mode=args.mode, learning_rate=args.lr, epochs=args.epochs)
        model, _ = train(BilinearModel.init(dim, args.encoder, seed=i), tr, cfg, va)
        res = evaluate(model, te)
        per_fold.append(res)
        print(f"Fold{i}: " + "  ".join(f"{k} {v:.4f}" for k, v in res.items()), flush=True)
    print("mean:  " + "  ".join(f"{k} {np.mean([r[k] for r in per_fold]):.4f}" for k in per_fold[0]))


if __name__ == "__main__":
    main()
