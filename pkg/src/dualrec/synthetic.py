"""Synthetic two-cluster interaction data with cluster-aligned item descriptions."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._random import substream
from .dataset import InteractionLog, ItemTextTable

_CLUSTER_WORDS = (("mystery", "detective", "crime", "murder", "clue"),
                  ("garden", "flower", "soil", "plant", "seed"))
_FILLER = ("book", "edition", "new", "great", "read", "classic", "story", "guide", "volume", "series")


@dataclass
class SyntheticDataset:
    train: InteractionLog
    test: InteractionLog
    texts: ItemTextTable
    item_cluster: np.ndarray
    item_topic: np.ndarray
    user_cluster: np.ndarray


def _weighted_pick(rng, pool, weights, size):
    w = weights[pool] / weights[pool].sum()
    return rng.choice(pool, size=size, replace=False, p=w)


def make_two_cluster_dataset(n_users: int = 200, n_items: int = 100, *, seed: int = 0,
                             noise: float = 0.05, holdout: float = 0.2, topics_per_cluster: int = 5,
                             topics_per_user: int = 2, items_per_user: int = 10,
                             topic_focus: float = 0.8, popularity_skew: float = 1.0,
                             text_noise: float = 0.0) -> SyntheticDataset:
    """Two item clusters, each split into topics; users stay inside their cluster.

    Every user prefers ``topics_per_user`` topics of its cluster and draws
    ``items_per_user`` distinct in-cluster items: a ``topic_focus`` share from the
    preferred topics, the rest from the whole cluster, always weighted by a
    Zipf-like item popularity with exponent ``popularity_skew``. ``holdout`` of each
    user's in-cluster items form the test set; a share ``noise`` of additional
    off-cluster interactions goes to training only.

    Item descriptions carry a cluster word and the item's topic tokens; with
    probability ``text_noise`` the topic tokens are swapped for a random topic of
    the same cluster. Every item is guaranteed at least one training interaction.
    """
    rng = substream(seed, "synthetic")
    half = n_items // 2
    item_cluster = np.repeat([0, 1], [half, n_items - half])
    item_topic = np.empty(n_items, dtype=np.int64)
    for c in (0, 1):
        members = np.flatnonzero(item_cluster == c)
        item_topic[members] = c * topics_per_cluster + np.arange(members.size) % topics_per_cluster
    popularity = 1.0 / np.arange(1, n_items + 1) ** popularity_skew
    popularity = popularity[rng.permutation(n_items)]

    texts = []
    for i in range(n_items):
        c, t = item_cluster[i], item_topic[i]
        if rng.random() < text_noise:
            t = c * topics_per_cluster + rng.integers(topics_per_cluster)
        words = [_CLUSTER_WORDS[c][rng.integers(len(_CLUSTER_WORDS[c]))], f"topic{t}", f"theme{t}",
                 *rng.choice(_FILLER, size=3, replace=False)]
        texts.append(" ".join(words))

    user_cluster = np.repeat([0, 1], [n_users // 2, n_users - n_users // 2])
    rng.shuffle(user_cluster)
    train_pairs, test_pairs = [], []
    for u in range(n_users):
        c = user_cluster[u]
        members = np.flatnonzero(item_cluster == c)
        topics = c * topics_per_cluster + rng.choice(topics_per_cluster, size=topics_per_user, replace=False)
        preferred = members[np.isin(item_topic[members], topics)]
        n_pref = min(preferred.size, int(round(topic_focus * items_per_user)))
        chosen = list(_weighted_pick(rng, preferred, popularity, n_pref))
        rest = np.setdiff1d(members, chosen)
        chosen += list(_weighted_pick(rng, rest, popularity, items_per_user - n_pref))
        chosen = np.array(chosen)[rng.permutation(len(chosen))]
        n_test = int(np.floor(holdout * chosen.size + 1e-9))
        test_pairs += [(u, i) for i in chosen[:n_test]]
        train_pairs += [(u, i) for i in chosen[n_test:]]
        n_noise = rng.binomial(items_per_user, noise)
        off = np.flatnonzero(item_cluster != c)
        train_pairs += [(u, i) for i in rng.choice(off, size=n_noise, replace=False)]

    # cover items that no user kept in training with one in-cluster interaction
    covered = {i for _, i in train_pairs}
    have = {(u, i) for u, i in train_pairs + test_pairs}
    for i in range(n_items):
        if i in covered:
            continue
        candidates = [u for u in np.flatnonzero(user_cluster == item_cluster[i]) if (u, i) not in have]
        u = int(rng.choice(candidates))
        train_pairs.append((u, i))
        have.add((u, i))

    user_ids = tuple(f"u{u}" for u in range(n_users))
    item_ids = tuple(f"i{i}" for i in range(n_items))
    tr = np.array(train_pairs, dtype=np.int64)
    te = np.array(test_pairs, dtype=np.int64).reshape(-1, 2)
    train = InteractionLog(tr[:, 0], tr[:, 1], user_ids, item_ids)
    test = InteractionLog(te[:, 0], te[:, 1], user_ids, item_ids)
    return SyntheticDataset(train, test, ItemTextTable(texts), item_cluster, item_topic, user_cluster)


def write_dataset_files(ds: SyntheticDataset, directory) -> tuple[Path, Path]:
    """Write all events to ``interactions.csv`` and item descriptions to ``items.tsv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    inter = directory / "interactions.csv"
    items = directory / "items.tsv"
    with inter.open("w", encoding="utf-8") as fh:
        fh.write("user,item\n")
        for log in (ds.train, ds.test):
            for u, i in log.events:
                fh.write(f"{u},{i}\n")
    with items.open("w", encoding="utf-8") as fh:
        for item_id, text in zip(ds.train.item_ids, ds.texts.texts):
            fh.write(f"{item_id}\t{text}\n")
    return inter, items


if __name__ == "__main__":
    import sys

    out = sys.argv[1] if len(sys.argv) > 1 else "synthetic_data"
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    for p in write_dataset_files(make_two_cluster_dataset(seed=seed), out):
        print(p)
