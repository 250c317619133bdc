"""Interaction ingestion, k-core filtering, per-user splitting and corpus stats."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

_USER_HEADERS = {"user", "user_id", "userid", "uid", "user_ext_id", "reviewer_id", "reviewerid"}
_ITEM_HEADERS = {"item", "item_id", "itemid", "iid", "item_ext_id", "asin", "business_id", "gmap_id"}
_TEXT_HEADERS = {"text", "title", "name", "description", "desc"}


@dataclass(frozen=True, eq=False)
class InteractionLog:
    """Deduplicated implicit-feedback events over dense user/item indices.

    ``users[e]`` and ``items[e]`` are the dense indices of event ``e``;
    ``user_ids`` / ``item_ids`` map dense indices back to the external ids.
    """

    users: np.ndarray
    items: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise ValueError("users and items must be 1-d arrays of equal length")
        if users.size and (users.min() < 0 or users.max() >= len(self.user_ids)):
            raise ValueError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= len(self.item_ids)):
            raise ValueError("item index out of range")
        users.setflags(write=False)
        items.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {u: k for k, u in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {i: k for k, i in enumerate(self.item_ids)}

    @property
    def events(self) -> list[tuple[str, str]]:
        return [(self.user_ids[u], self.item_ids[i]) for u, i in zip(self.users, self.items)]

    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def items_by_user(self) -> list[np.ndarray]:
        """Item indices of every user, in event order."""
        order = np.argsort(self.users, kind="stable")
        bounds = np.searchsorted(self.users[order], np.arange(self.n_users + 1))
        sorted_items = self.items[order]
        return [sorted_items[bounds[u]:bounds[u + 1]] for u in range(self.n_users)]

    def to_csr(self) -> sp.csr_matrix:
        """Binary user x item matrix with sorted column indices."""
        data = np.ones(len(self), dtype=np.float64)
        R = sp.csr_matrix((data, (self.users, self.items)), shape=(self.n_users, self.n_items))
        R.sum_duplicates()
        R.data[:] = 1.0
        R.sort_indices()
        return R

    def with_events(self, users, items) -> "InteractionLog":
        """Same index maps, different event subset."""
        return InteractionLog(np.asarray(users), np.asarray(items), self.user_ids, self.item_ids)

    @classmethod
    def from_pairs(cls, pairs) -> "InteractionLog":
        """Build from ``(user_id, item_id)`` pairs; duplicates collapse, indices in first-seen order."""
        user_index: dict[str, int] = {}
        item_index: dict[str, int] = {}
        seen: set[tuple[int, int]] = set()
        users, items = [], []
        for u_ext, i_ext in pairs:
            u = user_index.setdefault(str(u_ext), len(user_index))
            i = item_index.setdefault(str(i_ext), len(item_index))
            if (u, i) in seen:
                continue
            seen.add((u, i))
            users.append(u)
            items.append(i)
        return cls(np.array(users, dtype=np.int64), np.array(items, dtype=np.int64),
                   tuple(user_index), tuple(item_index))


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    density: float
    avg_text_len: float

    @classmethod
    def from_counts(cls, n_users: int, n_items: int, n_interactions: int,
                    avg_text_len: float = 0.0) -> "DatasetStats":
        if min(n_users, n_items, n_interactions) < 1:
            raise ValueError("dataset statistics need at least one user, item and interaction")
        density = n_interactions / (n_users * n_items)
        return cls(int(n_users), int(n_items), int(n_interactions), float(density), float(avg_text_len))

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_interactions": self.n_interactions,
            "density": self.density,
            "avg_text_len": self.avg_text_len,
        }


@dataclass
class ItemTextTable:
    """Description text per dense item index; items absent from the source map to ``""``."""

    texts: list[str]
    skipped: int = 0
    missing: int = field(default=0)

    def __len__(self) -> int:
        return len(self.texts)

    def __getitem__(self, item: int) -> str:
        return self.texts[item]


def _looks_like_header(fields, known) -> bool:
    return all(f.strip().lower() in names for f, names in zip(fields, known))


def _read_rows(path: Path, fmt: str | None):
    text = path.read_text(encoding="utf-8")
    if fmt is None:
        fmt = "tsv" if path.suffix.lower() in {".tsv", ".tab"} or "\t" in text.split("\n", 1)[0] else "csv"
    if fmt not in {"csv", "tsv"}:
        raise ValueError(f"unknown interaction format {fmt!r}; expected 'csv' or 'tsv'")
    delimiter = "\t" if fmt == "tsv" else ","
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not f.strip() for f in row):
            continue
        yield lineno, row


def load_interactions(path, format: str | None = None, header: bool | None = None) -> InteractionLog:
    """Read a ``user,item[,extra...]`` CSV/TSV file into an :class:`InteractionLog`.

    Extra columns (ratings, timestamps) are ignored. ``header=None`` auto-detects a
    header row by its column names (``user``/``user_id``/..., ``item``/``item_id``/...).
    """
    path = Path(path)
    pairs = []
    first = True
    for lineno, row in _read_rows(path, format):
        if first:
            first = False
            is_header = header if header is not None else _looks_like_header(
                row[:2], (_USER_HEADERS, _ITEM_HEADERS))
            if is_header:
                continue
        if len(row) < 2 or not row[0].strip() or not row[1].strip():
            raise ValueError(f"{path}:{lineno}: malformed row {row!r}; expected user and item columns")
        pairs.append((row[0].strip(), row[1].strip()))
    if not pairs:
        raise ValueError(f"{path}: no interactions")
    log = InteractionLog.from_pairs(pairs)
    logger.info("loaded %d events (%d rows) from %s: %d users, %d items",
                len(log), len(pairs), path, log.n_users, log.n_items)
    return log


def kcore_filter(log: InteractionLog, min_interactions: int = 10,
                 item_min_interactions: int | None = None) -> InteractionLog:
    """Iteratively drop users and items with fewer than ``min_interactions`` events.

    Peels both sides until a fixed point, then re-densifies the indices keeping
    the original relative order. ``item_min_interactions`` sets a separate item
    threshold (default: the same as users). The result may be empty.
    """
    item_min = min_interactions if item_min_interactions is None else item_min_interactions
    if min_interactions < 1 or item_min < 1:
        raise ValueError("min_interactions must be >= 1")
    users, items = log.users, log.items
    while True:
        u_deg = np.bincount(users, minlength=log.n_users)
        i_deg = np.bincount(items, minlength=log.n_items)
        keep = (u_deg[users] >= min_interactions) & (i_deg[items] >= item_min)
        if keep.all():
            break
        users, items = users[keep], items[keep]

    kept_users = np.unique(users)
    kept_items = np.unique(items)
    user_map = np.full(log.n_users, -1, dtype=np.int64)
    item_map = np.full(log.n_items, -1, dtype=np.int64)
    user_map[kept_users] = np.arange(kept_users.size)
    item_map[kept_items] = np.arange(kept_items.size)
    out = InteractionLog(user_map[users], item_map[items],
                         tuple(log.user_ids[u] for u in kept_users),
                         tuple(log.item_ids[i] for i in kept_items))
    logger.info("k-core(%d): %d -> %d events, %d users, %d items",
                min_interactions, len(log), len(out), out.n_users, out.n_items)
    if len(out) == 0:
        logger.warning("k-core(%d) removed every interaction", min_interactions)
    return out


def split_train_test(log: InteractionLog, train_ratio: float = 0.8, seed: int = 0,
                     *, repair_cold_items: bool = True) -> tuple[InteractionLog, InteractionLog]:
    """Per-user random split.

    Each user keeps ``max(1, floor(train_ratio * degree))`` shuffled events for
    training; the rest go to test. Both halves keep the full index maps.

    With ``repair_cold_items`` an item whose events all landed in test gets one of
    them moved back to train so the training matrix has no empty columns.
    """
    if not 0.0 < train_ratio < 1.0:
        raise ValueError("train_ratio must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train_u, train_i, test_u, test_i = [], [], [], []
    for u, items in enumerate(log.items_by_user()):
        if items.size == 0:
            continue
        shuffled = items[rng.permutation(items.size)]
        n_train = max(1, math.floor(train_ratio * items.size + 1e-9))
        train_i.append(shuffled[:n_train])
        test_i.append(shuffled[n_train:])
        train_u.append(np.full(n_train, u, dtype=np.int64))
        test_u.append(np.full(items.size - n_train, u, dtype=np.int64))

    def cat(parts):
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    tr_u, tr_i, te_u, te_i = cat(train_u), cat(train_i), cat(test_u), cat(test_i)

    if repair_cold_items and te_i.size:
        cold = np.setdiff1d(np.unique(te_i), np.unique(tr_i))
        if cold.size:
            # first test event of each cold item, in test order
            uniq, first = np.unique(te_i, return_index=True)
            first_of = dict(zip(uniq.tolist(), first.tolist()))
            move = np.array(sorted(first_of[c] for c in cold.tolist()), dtype=np.int64)
            tr_u = np.concatenate([tr_u, te_u[move]])
            tr_i = np.concatenate([tr_i, te_i[move]])
            keep = np.ones(te_i.size, dtype=bool)
            keep[move] = False
            te_u, te_i = te_u[keep], te_i[keep]
            logger.info("moved %d test events to train to cover cold items", move.size)

    return log.with_events(tr_u, tr_i), log.with_events(te_u, te_i)


def dataset_stats(log: InteractionLog, texts: ItemTextTable | None = None) -> DatasetStats:
    """Counts, density ``interactions / (users * items)`` and mean description length."""
    if len(log) == 0:
        raise ValueError("dataset_stats needs a nonempty log")
    avg = 0.0
    if texts is not None and len(texts):
        avg = float(np.mean([len(t) for t in texts.texts]))
    return DatasetStats.from_counts(log.n_users, log.n_items, len(log), avg)


def load_item_texts(path, log: InteractionLog) -> ItemTextTable:
    """Attach ``item<TAB>text`` or quoted-CSV ``item,text[,more text...]`` rows to ``log``'s items.

    Multiple text columns (e.g. name and description) are joined with a space, as
    are repeated rows for the same item. Unknown ids are skipped and counted.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read item text file {path}: {exc}") from exc
    lines = raw.splitlines()
    tab = bool(lines) and "\t" in lines[0]
    if tab:
        rows = ((n, line.split("\t")) for n, line in enumerate(lines, start=1) if line.strip())
    else:
        rows = ((n, row) for n, row in enumerate(csv.reader(lines), start=1) if row)

    parts: list[list[str]] = [[] for _ in range(log.n_items)]
    index = log.item_index
    skipped = 0
    first = True
    for _, row in rows:
        if first:
            first = False
            if row[0].strip().lower() in _ITEM_HEADERS and all(
                    f.strip().lower() in _TEXT_HEADERS for f in row[1:]):
                continue
        key = row[0].strip()
        text = " ".join(f.strip() for f in row[1:] if f.strip())
        i = index.get(key)
        if i is None:
            skipped += 1
            continue
        if text:
            parts[i].append(text)
    texts = [" ".join(p) for p in parts]
    missing = sum(1 for p in parts if not p)
    if skipped:
        logger.info("skipped %d text rows for unknown items", skipped)
    return ItemTextTable(texts, skipped=skipped, missing=missing)
