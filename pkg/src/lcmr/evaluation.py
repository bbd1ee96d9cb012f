"""Leave-one-out ranking evaluation with HR@K and NDCG@K."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ItemCorpus, LooSplit
from .model import ConfigurationError


def rank_of_positive(pos_score: float, neg_scores) -> int:
    """1-based rank of the positive; it loses every tie."""
    neg = np.asarray(neg_scores, dtype=np.float64)
    if not (np.isfinite(pos_score) and np.all(np.isfinite(neg))):
        raise ValueError("non-finite score")
    return 1 + int(np.count_nonzero(neg >= pos_score))


def _check_ranks(ranks) -> np.ndarray:
    r = np.asarray(ranks)
    if r.size == 0:
        raise ValueError("no ranks to aggregate")
    if np.any(r < 1):
        raise ValueError("ranks are 1-based")
    return r


def hr_at_k(ranks, k: int = 10) -> float:
    r = _check_ranks(ranks)
    return float(np.mean(r <= k))


def ndcg_contributions(ranks, k: int = 10) -> np.ndarray:
    r = np.asarray(ranks, dtype=np.float64)
    return np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)


def ndcg_at_k(ranks, k: int = 10) -> float:
    r = _check_ranks(ranks)
    return float(np.mean(ndcg_contributions(r, k)))


@dataclass
class EvalReport:
    k: int
    users: np.ndarray
    ranks: np.ndarray
    seed: int | None = None

    @property
    def hits(self) -> np.ndarray:
        return self.ranks <= self.k

    @property
    def ndcgs(self) -> np.ndarray:
        return ndcg_contributions(self.ranks, self.k)

    @property
    def hr(self) -> float:
        return hr_at_k(self.ranks, self.k)

    @property
    def ndcg(self) -> float:
        return ndcg_at_k(self.ranks, self.k)

    @property
    def num_users(self) -> int:
        return len(self.users)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"hr@{self.k}={100 * self.hr:.4f}\n")
            fh.write(f"ndcg@{self.k}={100 * self.ndcg:.4f}\n")
            fh.write(f"users={self.num_users}\n")
            if self.seed is not None:
                fh.write(f"seed={self.seed}\n")
            fh.write("user,rank,hit,ndcg\n")
            for u, r, h, g in zip(self.users, self.ranks, self.hits, self.ndcgs):
                fh.write(f"{int(u)},{int(r)},{int(h)},{float(g)!r}\n")


def read_report(path: str | Path) -> dict:
    out: dict = {"rows": []}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if "=" in line:
                key, _, val = line.partition("=")
                out[key] = float(val)
            elif line and line[0].isdigit():
                u, r, h, g = line.split(",")
                out["rows"].append((int(u), int(r), int(h), float(g)))
    return out


def rank_candidates(scores: np.ndarray) -> np.ndarray:
    """Ranks for a (users, 1 + negatives) score matrix, positive in column 0."""
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite score")
    return 1 + np.count_nonzero(scores[:, 1:] >= scores[:, :1], axis=1)


def evaluate(model, split: LooSplit, corpus: ItemCorpus | None = None, k: int = 10,
             which: str = "test", chunk_users: int = 256) -> EvalReport:
    """Rank each eligible user's held-out item among its frozen negatives.

    ``model`` needs ``score_pairs(users, items, corpus)``. Parameters are
    only read.
    """
    if getattr(model, "requires_text", False) and corpus is None:
        raise ConfigurationError("this model variant needs item text for evaluation")
    heldout, candidates = split.heldout(which)
    users = np.array(sorted(heldout), dtype=np.int64)
    if len(users) == 0:
        raise ValueError(f"no users in the {which} set")
    ranks = np.empty(len(users), dtype=np.int64)
    for s in range(0, len(users), chunk_users):
        block = users[s:s + chunk_users]
        cand = np.stack([np.concatenate([[heldout[u]], candidates[u]]) for u in block])
        scores = model.score_pairs(np.repeat(block, cand.shape[1]), cand.reshape(-1), corpus)
        ranks[s:s + len(block)] = rank_candidates(scores.reshape(cand.shape))
    return EvalReport(k, users, ranks, split.seed)
