"""Top-k ranking with seen-item masking; precision, recall and NDCG at k."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_KS = (5, 20)
METRIC_NAMES = ("recall", "precision", "ndcg")


@dataclass
class RankingMetrics:
    ks: tuple[int, ...]
    precision: dict[int, float] = field(default_factory=dict)
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    n_users_evaluated: int = 0

    def __getitem__(self, key: str) -> float:
        # "recall@20" style access
        name, k = key.split("@")
        return getattr(self, name)[int(k)]

    def flat(self) -> dict[str, float]:
        return {f"{name}@{k}": getattr(self, name)[k] for k in self.ks for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {str(k): {"precision": self.precision[k], "recall": self.recall[k], "ndcg": self.ndcg[k]}
                for k in self.ks}


def rank_top_k(scores, seen=(), k: int = 20) -> list[int]:
    """Items by descending score with seen items removed; ties go to the lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.array(scores, dtype=np.float64)
    seen = np.fromiter(seen, dtype=np.int64) if not isinstance(seen, np.ndarray) else seen
    s[seen] = -np.inf
    order = np.argsort(-s, kind="stable")
    available = s.size - np.unique(seen).size
    return order[:min(k, available)].tolist()


def precision_recall_at_k(ranked, test_items, k: int) -> tuple[float, float]:
    test = set(test_items)
    if not test:
        raise ValueError("test_items must be nonempty")
    hits = sum(1 for item in list(ranked)[:k] if item in test)
    return hits / k, hits / len(test)


def _idcg(n: int) -> float:
    return sum(1.0 / math.log2(p + 1) for p in range(1, n + 1))


def ndcg_at_k(ranked, test_items, k: int) -> float:
    """Binary-relevance NDCG with ``log2(rank + 1)`` discounts."""
    test = set(test_items)
    if not test:
        raise ValueError("test_items must be nonempty")
    dcg = sum(1.0 / math.log2(p + 1) for p, item in enumerate(list(ranked)[:k], start=1) if item in test)
    return dcg / _idcg(min(k, len(test)))


def _csr(X, shape=None) -> sp.csr_matrix:
    if hasattr(X, "to_csr"):
        X = X.to_csr()
    X = sp.csr_matrix(X, shape=shape)
    X.sort_indices()
    return X


def evaluate_model(scorer: Callable[[np.ndarray], np.ndarray], train, test,
                   ks: Sequence[int] = DEFAULT_KS, batch_size: int = 256) -> RankingMetrics:
    """Mean precision/recall/NDCG over users with a nonempty test set.

    ``scorer(users)`` returns a ``(len(users), n_items)`` score block. ``train`` and
    ``test`` are user x item matrices (or interaction logs); training items are
    masked before ranking.
    """
    test = _csr(test)
    train = _csr(train, shape=test.shape)
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive")
    kmax = ks[-1]
    test_deg = np.diff(test.indptr)
    users = np.flatnonzero(test_deg > 0)
    if users.size == 0:
        raise ValueError("no evaluable users (every test set is empty)")
    discounts = 1.0 / np.log2(np.arange(2, kmax + 2))
    idcg_table = np.concatenate([[0.0], np.cumsum(discounts)])

    per = {(name, k): np.empty(users.size) for name in METRIC_NAMES for k in ks}
    for start in range(0, users.size, batch_size):
        block = users[start:start + batch_size]
        scores = np.array(scorer(block), dtype=np.float64)
        if scores.shape != (block.size, test.shape[1]):
            raise ValueError(f"scorer returned shape {scores.shape}, expected {(block.size, test.shape[1])}")
        seen = train[block]
        rows = np.repeat(np.arange(block.size), np.diff(seen.indptr))
        scores[rows, seen.indices] = -np.inf
        top = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
        target = test[block]
        ar = np.arange(block.size)[:, None]
        hit = np.asarray(target[ar, top].todense()) > 0
        # masked items only fill the tail when k exceeds the unseen items; never hits
        hit &= ~(np.asarray(seen[ar, top].todense()) > 0)
        n_test = test_deg[block]
        for k in ks:
            h = hit[:, :k]
            hits = h.sum(axis=1)
            sl = slice(start, start + block.size)
            per[("precision", k)][sl] = hits / k
            per[("recall", k)][sl] = hits / n_test
            dcg = (h * discounts[:h.shape[1]]).sum(axis=1)
            per[("ndcg", k)][sl] = dcg / idcg_table[np.minimum(k, n_test)]

    out = RankingMetrics(ks=ks, n_users_evaluated=int(users.size))
    for k in ks:
        for name in METRIC_NAMES:
            getattr(out, name)[k] = float(np.mean(per[(name, k)]))
    return out


# -- reports ---------------------------------------------------------------------

def metrics_report(model: str, dataset: str, metrics: RankingMetrics, config_hash: str) -> dict:
    return {"model": model, "dataset": dataset, "k": metrics.to_dict(),
            "n_users": metrics.n_users_evaluated, "config_hash": config_hash}


def dumps_report(report) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def format_table(results: dict[str, RankingMetrics], dataset: str, digits: int = 5) -> str:
    """Models as rows, ``recall / precision / ndcg`` columns, one block per k."""
    names = list(results)
    ks = sorted({k for m in results.values() for k in m.ks})
    width = max(len("Dataset"), *(len(n) for n in names)) + 2
    col = digits + 6
    header = "Dataset".ljust(width) + f"{dataset}".center(3 * col)
    sub = " " * width + "".join(name.rjust(col) for name in METRIC_NAMES)
    rule = "-" * len(sub)
    lines = [header, sub, rule]
    for k in ks:
        lines.append(f"Top-{k} results")
        lines.append(rule)
        for name in names:
            m = results[name]
            if k not in m.ks:
                continue
            cells = "".join(f"{getattr(m, metric)[k]:.{digits}f}".rjust(col) for metric in METRIC_NAMES)
            lines.append(name.ljust(width) + cells)
        lines.append(rule)
    return "\n".join(lines) + "\n"


def percentage_increase(results: dict[str, RankingMetrics], baseline: str = "mfbpr") -> list[dict]:
    """Relative change of every metric against ``baseline``, in percent."""
    base = results[baseline]
    rows = []
    for name, m in results.items():
        row = {"model": name}
        for k in m.ks:
            for metric in METRIC_NAMES:
                b = getattr(base, metric)[k]
                v = getattr(m, metric)[k]
                row[f"{metric}@{k}"] = 0.0 if v == b else ((v - b) / b * 100.0 if b else math.inf)
        rows.append(row)
    return rows
