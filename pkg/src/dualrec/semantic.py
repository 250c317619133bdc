"""Item text vectors, cosine similarity and the sparse item-item similarity graph."""

from __future__ import annotations

import csv
import logging
import re
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import InteractionLog, ItemTextTable

logger = logging.getLogger(__name__)

BLVE_MAGIC = b"BLVE"
DEFAULT_TOKEN_PATTERN = r"[^\W_]+"


@dataclass(frozen=True)
class TfidfVocabulary:
    terms: dict[str, int]
    df: np.ndarray
    n_docs: int

    def __len__(self) -> int:
        return len(self.terms)


@dataclass
class ItemVectorTable:
    """One row per dense item index. ``vectors`` is a dense array or a CSR matrix."""

    vectors: np.ndarray | sp.csr_matrix
    source_tag: str
    missing: int = 0

    @property
    def n_items(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def dense(self) -> np.ndarray:
        v = self.vectors
        return v.toarray() if sp.issparse(v) else np.asarray(v)


def _as_texts(X) -> list[str]:
    if isinstance(X, ItemTextTable):
        return list(X.texts)
    if isinstance(X, str):
        raise TypeError("expected an iterable of documents, got a single string")
    return ["" if t is None else str(t) for t in X]


def tokenize(text: str, lowercase: bool = True, token_pattern: str = DEFAULT_TOKEN_PATTERN) -> list[str]:
    if lowercase:
        text = text.lower()
    return re.findall(token_pattern, text)


def _l2_normalize_rows(M: sp.csr_matrix) -> sp.csr_matrix:
    M = M.tocsr(copy=True)
    sq = np.asarray(M.multiply(M).sum(axis=1)).ravel()
    norms = np.sqrt(sq)
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    M.data *= np.repeat(scale, np.diff(M.indptr))
    return M


class TfidfItemVectorizer(TransformerMixin, BaseEstimator):
    """TF-IDF over item descriptions with smoothed idf and L2-normalized rows.

    ``tf`` is the raw term count and ``idf = ln((1 + n_docs) / (1 + df)) + 1``.
    Vocabulary columns are assigned in sorted term order.

    Parameters
    ----------
    lowercase : bool, default=True
    token_pattern : str, default=r"[^\\W_]+"
        Tokens are maximal runs of alphanumeric characters.
    min_df : int, default=1
        Terms appearing in fewer documents are dropped.
    max_features : int or None, default=None
        Keep only the most frequent terms (by total count, ties by term).
    """

    def __init__(self, lowercase=True, token_pattern=DEFAULT_TOKEN_PATTERN, min_df=1, max_features=None):
        self.lowercase = lowercase
        self.token_pattern = token_pattern
        self.min_df = min_df
        self.max_features = max_features

    def _tokens(self, X):
        return [tokenize(t, self.lowercase, self.token_pattern) for t in _as_texts(X)]

    def fit(self, X, y=None):
        docs = self._tokens(X)
        if not docs:
            raise ValueError("no documents")
        df: Counter = Counter()
        total: Counter = Counter()
        for doc in docs:
            df.update(set(doc))
            total.update(doc)
        if not df:
            raise ValueError("no tokens")
        terms = [t for t in df if df[t] >= self.min_df]
        if self.max_features is not None:
            terms.sort(key=lambda t: (-total[t], t))
            terms = terms[: self.max_features]
        if not terms:
            raise ValueError("no tokens survive min_df / max_features")
        terms.sort()
        self.vocabulary_ = {t: k for k, t in enumerate(terms)}
        self.df_ = np.array([df[t] for t in terms], dtype=np.int64)
        self.n_docs_ = len(docs)
        self.idf_ = np.log((1.0 + self.n_docs_) / (1.0 + self.df_)) + 1.0
        return self

    def transform(self, X) -> sp.csr_matrix:
        check_is_fitted(self, "vocabulary_")
        docs = self._tokens(X)
        indptr, indices, data = [0], [], []
        for doc in docs:
            counts = Counter(self.vocabulary_[t] for t in doc if t in self.vocabulary_)
            for col in sorted(counts):
                indices.append(col)
                data.append(counts[col])
            indptr.append(len(indices))
        tf = sp.csr_matrix(
            (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64),
             np.asarray(indptr, dtype=np.int64)),
            shape=(len(docs), len(self.vocabulary_)))
        tf.data *= self.idf_[tf.indices]
        return _l2_normalize_rows(tf)

    @property
    def vocabulary(self) -> TfidfVocabulary:
        check_is_fitted(self, "vocabulary_")
        return TfidfVocabulary(dict(self.vocabulary_), self.df_.copy(), self.n_docs_)


def fit_tfidf_vectors(texts, lowercase: bool = True, token_pattern: str = DEFAULT_TOKEN_PATTERN,
                      min_df: int = 1, max_features: int | None = None
                      ) -> tuple[TfidfVocabulary, ItemVectorTable]:
    vec = TfidfItemVectorizer(lowercase=lowercase, token_pattern=token_pattern,
                              min_df=min_df, max_features=max_features)
    X = vec.fit_transform(texts)
    return vec.vocabulary, ItemVectorTable(X, "tfidf")


# -- external vector files ---------------------------------------------------

def _read_blve(raw: bytes, path) -> list[tuple[str, np.ndarray]]:
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated BLVE header")
    count, dim = struct.unpack_from("<II", raw, 4)
    if dim < 1:
        raise ValueError(f"{path}: vector dimension must be >= 1")
    pos = 12
    records = []
    for _ in range(count):
        if pos + 4 > len(raw):
            raise ValueError(f"{path}: truncated BLVE record")
        (id_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        item_id = raw[pos:pos + id_len].decode("utf-8")
        pos += id_len
        end = pos + 4 * dim
        if end > len(raw):
            raise ValueError(f"{path}: truncated vector for item {item_id!r}")
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=pos)
        pos = end
        records.append((item_id, vec))
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes after {count} records")
    return records


def _read_vector_csv(text: str, path) -> list[tuple[str, np.ndarray]]:
    records = []
    dim = None
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or not "".join(row).strip():
            continue
        item_id, values = row[0].strip(), row[1:]
        try:
            # float32 storage keeps CSV and BLVE inputs bit-identical
            vec = np.array([float(v) for v in values], dtype=np.float32)
        except ValueError:
            if lineno == 1 and not records:
                continue  # header
            raise ValueError(f"{path}:{lineno}: non-numeric value for item {item_id!r}") from None
        if dim is None:
            dim = vec.size
        if vec.size != dim or dim < 1:
            raise ValueError(f"{path}:{lineno}: item {item_id!r} has dimension {vec.size}, expected {dim}")
        records.append((item_id, vec))
    return records


def load_external_vectors(path, items: InteractionLog | dict[str, int] | int) -> ItemVectorTable:
    """Load precomputed per-item vectors (CSV ``item_id,v0,v1,...`` or binary BLVE).

    Rows are aligned to dense item indices; items absent from the file get zero
    rows and are counted in ``missing``. ``items`` may be an integer when the ids
    in the file are themselves dense indices.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == BLVE_MAGIC:
        records = _read_blve(raw, path)
    else:
        records = _read_vector_csv(raw.decode("utf-8"), path)
    if not records:
        raise ValueError(f"{path}: no vectors")
    dims = {r[1].size for r in records}
    if len(dims) != 1:
        raise ValueError(f"{path}: ragged vector dimensions {sorted(dims)}")
    dim = dims.pop()

    if isinstance(items, InteractionLog):
        index, m = items.item_index, items.n_items
    elif isinstance(items, dict):
        index, m = items, len(items)
    else:
        m = int(items)
        index = {str(k): k for k in range(m)}

    table = np.zeros((m, dim), dtype=np.float64)
    seen = np.zeros(m, dtype=bool)
    unknown = 0
    for item_id, vec in records:
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"{path}: non-finite value in vector for item {item_id!r}")
        k = index.get(item_id)
        if k is None:
            unknown += 1
            continue
        if seen[k]:
            raise ValueError(f"{path}: duplicate vector for item {item_id!r}")
        seen[k] = True
        table[k] = vec
    missing = int(m - seen.sum())
    if missing or unknown:
        logger.info("external vectors: %d items missing (zero rows), %d unknown ids skipped", missing, unknown)
    return ItemVectorTable(table, "external", missing=missing)


def save_external_vectors(path, item_ids, vectors, format: str = "blve") -> None:
    """Write vectors in the binary BLVE layout or as ``item_id,v0,...`` CSV (float32 values)."""
    vectors = np.asarray(vectors, dtype=np.float32)
    item_ids = [str(i) for i in item_ids]
    if vectors.ndim != 2 or vectors.shape[0] != len(item_ids):
        raise ValueError("vectors must be (len(item_ids), dim)")
    path = Path(path)
    if format == "blve":
        chunks = [BLVE_MAGIC, struct.pack("<II", len(item_ids), vectors.shape[1])]
        for item_id, vec in zip(item_ids, vectors):
            encoded = item_id.encode("utf-8")
            chunks.append(struct.pack("<I", len(encoded)))
            chunks.append(encoded)
            chunks.append(vec.astype("<f4").tobytes())
        path.write_bytes(b"".join(chunks))
    elif format == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for item_id, vec in zip(item_ids, vectors):
                writer.writerow([item_id, *(repr(float(v)) for v in vec)])
    else:
        raise ValueError(f"unknown vector format {format!r}")


# -- similarity ----------------------------------------------------------------

def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors; 0.0 when either has zero norm."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def blend_similarities(s1, s2, alpha: float):
    """``alpha * s1 + (1 - alpha) * s2``; works on scalars and arrays."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if not (np.all(np.isfinite(s1)) and np.all(np.isfinite(s2))):
        raise ValueError("similarity scores must be finite")
    out = alpha * s1 + (1.0 - alpha) * s2
    return float(out) if out.ndim == 0 else out


def _unit_rows(vectors) -> np.ndarray | sp.csr_matrix:
    if isinstance(vectors, ItemVectorTable):
        vectors = vectors.vectors
    if sp.issparse(vectors):
        X = sp.csr_matrix(vectors, dtype=np.float64)
        if not np.all(np.isfinite(X.data)):
            raise ValueError("item vectors must be finite")
        return _l2_normalize_rows(X)
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("item vectors must be a 2-d table")
    if not np.all(np.isfinite(X)):
        raise ValueError("item vectors must be finite")
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return X * scale[:, None]


def _cosine_block(U, start: int, stop: int) -> np.ndarray:
    block = U[start:stop] @ U.T
    if sp.issparse(block):
        block = block.toarray()
    return np.asarray(block)


def _top_n_row(row: np.ndarray, top_n: int) -> np.ndarray:
    """Indices of the ``top_n`` largest positive entries, ties to the smaller index."""
    nz = np.flatnonzero(row > 0.0)
    if nz.size > top_n:
        vals = row[nz]
        kth = np.partition(vals, nz.size - top_n)[nz.size - top_n]
        nz = nz[vals >= kth]
    order = np.lexsort((nz, -row[nz]))
    return nz[order[:top_n]]


def build_similarity_matrix(vectors, top_n: int = 10, threshold: float = 0.0, *,
                            other=None, alpha: float = 0.5, block_size: int = 512,
                            return_raw: bool = False):
    """Sparse, self-loop-free, row-stochastic item-item similarity matrix.

    Raw scores are cosines (blended with ``other``'s cosines by ``alpha`` when
    given), clamped to ``[0, 1]``. Each row keeps its ``top_n`` largest scores
    strictly above ``threshold`` (ties go to the smaller item index), then is
    L1-normalized. The result need not be symmetric.

    Rows are computed in blocks of ``block_size`` against all items; the
    computation is exact.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    U = _unit_rows(vectors)
    V = None if other is None else _unit_rows(other)
    m = U.shape[0]
    if V is not None and V.shape[0] != m:
        raise ValueError("blended vector tables must cover the same items")

    rows, cols, vals = [], [], []
    for start in range(0, m, block_size):
        stop = min(start + block_size, m)
        S = _cosine_block(U, start, stop)
        if V is not None:
            S = blend_similarities(S, _cosine_block(V, start, stop), alpha)
        np.clip(S, 0.0, 1.0, out=S)
        S[np.arange(stop - start), np.arange(start, stop)] = 0.0
        S[S <= threshold] = 0.0
        for r in range(stop - start):
            keep = _top_n_row(S[r], top_n)
            if keep.size:
                rows.append(np.full(keep.size, start + r, dtype=np.int64))
                cols.append(keep)
                vals.append(S[r, keep])

    if rows:
        rows_a, cols_a, vals_a = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        rows_a = cols_a = np.empty(0, dtype=np.int64)
        vals_a = np.empty(0, dtype=np.float64)
    raw = sp.csr_matrix((vals_a, (rows_a, cols_a)), shape=(m, m))
    raw.sort_indices()
    B = raw.copy()
    # divide rather than scale by the reciprocal so subnormal rows stay finite
    sums = np.asarray(B.sum(axis=1)).ravel()
    B.data /= np.repeat(sums, np.diff(B.indptr))
    logger.info("similarity graph: %d items, %d edges, %d empty rows",
                m, B.nnz, int((np.diff(B.indptr) == 0).sum()))
    return (B, raw) if return_raw else B


class ItemSimilarityGraph(TransformerMixin, BaseEstimator):
    """Transformer from item vectors to the row-stochastic top-N similarity matrix.

    Composes after :class:`TfidfItemVectorizer` in a pipeline::

        make_pipeline(TfidfItemVectorizer(), ItemSimilarityGraph(top_n=10)).fit_transform(texts)
    """

    def __init__(self, top_n=10, threshold=0.0, block_size=512):
        self.top_n = top_n
        self.threshold = threshold
        self.block_size = block_size

    def fit(self, X, y=None):
        # stateless: only records the vector width
        self.n_features_in_ = (X.vectors if isinstance(X, ItemVectorTable) else X).shape[1]
        return self

    def transform(self, X) -> sp.csr_matrix:
        check_is_fitted(self, "n_features_in_")
        return build_similarity_matrix(X, self.top_n, self.threshold, block_size=self.block_size)
