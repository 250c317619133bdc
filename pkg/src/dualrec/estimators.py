"""scikit-learn compatible recommenders over a user x item interaction matrix.

Every estimator takes the training interactions as ``X`` (sparse or dense
``n_users x n_items``, or an :class:`~dualrec.dataset.InteractionLog`); the
semantic variants also take the item-item similarity matrix as a fit parameter::

    model = BeLightRec(embedding_dim=64, n_layers=3).fit(R_train, similarity=B)
    model.recommend([0, 1, 2], k=20)
    model.score(R_test)          # recall@20 with training items masked
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._random import substream, substream_seed
from .dataset import InteractionLog, split_train_test
from .evaluation import evaluate_model
from .graph import build_operator
from .models import (ModelConfig, forward, init_embeddings, init_layer_params, similarity_only_scores)
from .training import TrainConfig, train

logger = logging.getLogger(__name__)


def check_interactions(X, shape=None) -> sp.csr_matrix:
    """Validate ``X`` as a binary user x item matrix (CSR, sorted indices, float64)."""
    if isinstance(X, InteractionLog):
        X = X.to_csr()
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64, copy=True)
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-d interaction matrix, got shape {arr.shape}")
        X = sp.csr_matrix(arr)
    if shape is not None and X.shape != tuple(shape):
        raise ValueError(f"interaction matrix shape {X.shape} does not match {tuple(shape)}")
    X.sum_duplicates()
    if X.nnz and (not np.all(np.isfinite(X.data)) or (X.data < 0).any()):
        raise ValueError("interaction values must be finite and nonnegative")
    X.eliminate_zeros()
    X.data[:] = 1.0
    X.sort_indices()
    return X


def check_similarity(B, n_items: int) -> sp.csr_matrix:
    if B is None:
        raise ValueError("this model needs the item-item similarity matrix: fit(X, similarity=B)")
    B = sp.csr_matrix(B, dtype=np.float64)
    if B.shape != (n_items, n_items):
        raise ValueError(f"similarity matrix shape {B.shape} does not match {n_items} items")
    return B


def _carve_validation(R: sp.csr_matrix, fraction: float, seed: int):
    coo = R.tocoo()
    log = InteractionLog(coo.row, coo.col, tuple(map(str, range(R.shape[0]))),
                         tuple(map(str, range(R.shape[1]))))
    fit_log, val_log = split_train_test(log, 1.0 - fraction, seed)
    return fit_log.to_csr(), val_log.to_csr()


class _RankerMixin:
    """Ranking helpers shared by every recommender; needs ``decision_function``."""

    def recommend(self, users, k: int = 20, exclude_seen: bool = True) -> np.ndarray:
        """Top-``k`` item indices per user, ties broken by the lower item index."""
        check_is_fitted(self, "train_matrix_")
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        scores = np.array(self.decision_function(users), dtype=np.float64)
        if exclude_seen:
            seen = self.train_matrix_[users]
            rows = np.repeat(np.arange(users.size), np.diff(seen.indptr))
            scores[rows, seen.indices] = -np.inf
        return np.argsort(-scores, axis=1, kind="stable")[:, :k]

    def predict(self, users) -> np.ndarray:
        return self.recommend(users, k=20)

    def evaluate(self, X_test, ks=(5, 20)):
        check_is_fitted(self, "train_matrix_")
        X_test = check_interactions(X_test, shape=self.train_matrix_.shape)
        return evaluate_model(self.decision_function, self.train_matrix_, X_test, ks)

    def score(self, X_test, y=None) -> float:
        """Mean recall@20 on held-out interactions."""
        return self.evaluate(X_test, ks=(20,)).recall[20]


class GraphRecommender(_RankerMixin, BaseEstimator):
    """BPR-trained embedding recommender; the subclass fixes the model kind.

    Parameters
    ----------
    embedding_dim : int, default=64
    n_layers : int, default=3
        Propagation depth (ignored by :class:`BPRMF`).
    learning_rate : float, default=1e-3
    l2_lambda : float, default=1e-5
    batch_size : int, default=2048
    max_epochs : int, default=1000
    eval_every : int, default=10
        Epochs between validation passes for early stopping.
    patience : int, default=5
        Validation passes without improvement before stopping.
    validation_fraction : float, default=0.1
        Share of each user's interactions held out for early stopping when no
        explicit ``validation`` matrix is passed to :meth:`fit`. ``0`` disables
        early stopping.
    init_scale : float, default=0.1
        Standard deviation of the Gaussian layer-0 initialization.
    include_layer0 : bool, default=False
        Average layers ``0..K`` instead of ``1..K`` in the readout.
    semantic_weighting : {"degree", "weighted"}, default="degree"
    semantic_summand : {"neighbor", "self"}, default="neighbor"
    random_state : int, default=0
    """

    _kind: str = ""

    def __init__(self, embedding_dim=64, n_layers=3, learning_rate=1e-3, l2_lambda=1e-5,
                 batch_size=2048, max_epochs=1000, eval_every=10, patience=5,
                 validation_fraction=0.1, init_scale=0.1, include_layer0=False,
                 semantic_weighting="degree", semantic_summand="neighbor", random_state=0):
        self.embedding_dim = embedding_dim
        self.n_layers = n_layers
        self.learning_rate = learning_rate
        self.l2_lambda = l2_lambda
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.eval_every = eval_every
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.init_scale = init_scale
        self.include_layer0 = include_layer0
        self.semantic_weighting = semantic_weighting
        self.semantic_summand = semantic_summand
        self.random_state = random_state

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(kind=self._kind, dim=self.embedding_dim, n_layers=self.n_layers,
                           seed=self.random_state, init_scale=self.init_scale,
                           include_layer0=self.include_layer0)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, l2_lambda=self.l2_lambda,
                           batch_size=self.batch_size, max_epochs=self.max_epochs,
                           eval_every=self.eval_every, patience=self.patience, seed=self.random_state)

    def fit(self, X, y=None, similarity=None, validation=None, log=None):
        """Train on interactions ``X``.

        ``validation`` overrides the carved early-stopping split; ``log`` receives
        one dict per epoch and per evaluation.
        """
        config = self.model_config
        tconf = self.train_config
        R = check_interactions(X)
        n, m = R.shape
        B = check_similarity(similarity, m) if config.use_semantic else None
        seed = self.random_state

        if validation is not None:
            R_fit, R_val = R, check_interactions(validation, shape=R.shape)
        elif self.validation_fraction and self.validation_fraction > 0:
            R_fit, R_val = _carve_validation(R, self.validation_fraction, substream_seed(seed, "validation"))
        else:
            R_fit, R_val = R, None
        if R_val is not None and R_val.nnz == 0:
            R_val = None

        op = None
        if config.propagates:
            op = build_operator(R_fit, B, self.semantic_weighting, self.semantic_summand)
        state = init_embeddings(n, m, config.dim, substream_seed(seed, "init"), config.init_scale)
        if config.kind == "belightrec_w":
            state.weights, state.biases = init_layer_params(config.n_layers, config.dim,
                                                            substream_seed(seed, "init_w"))

        evaluate = None
        if R_val is not None:
            def evaluate(s):
                e_u, e_i = forward(s, op, config)
                metrics = evaluate_model(lambda users: e_u[users] @ e_i.T, R_fit, R_val, ks=(20,))
                return {"recall@20": metrics.recall[20], "ndcg@20": metrics.ndcg[20]}

        history, best = train(state, op, R_fit, config, tconf, evaluate=evaluate, log=log,
                              rng=substream(seed, "sampling"))
        self.history_ = history
        self.state_ = best
        self.operator_ = op
        self.fit_matrix_ = R_fit
        self.train_matrix_ = R
        self.n_users_, self.n_items_ = n, m
        self.user_embedding_, self.item_embedding_ = forward(best, op, config)
        return self

    def decision_function(self, users) -> np.ndarray:
        check_is_fitted(self, "user_embedding_")
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        return self.user_embedding_[users] @ self.item_embedding_.T


class BeLightRec(GraphRecommender):
    """Light graph convolution over interactions plus the item similarity graph."""

    _kind = "belightrec"


class LightGCN(GraphRecommender):
    """Light graph convolution over the interaction graph only."""

    _kind = "lightgcn"


class BPRMF(GraphRecommender):
    """Matrix factorization trained with BPR; no propagation."""

    _kind = "mfbpr"


class BeLightRecW(GraphRecommender):
    """Dual-signal propagation with per-layer weight matrices, biases and LeakyReLU."""

    _kind = "belightrec_w"


class SimilarityRanker(_RankerMixin, BaseEstimator):
    """Scores an item by its summed similarity to the user's training items. No training."""

    _kind = "simonly"

    def fit(self, X, y=None, similarity=None, validation=None, log=None):
        R = check_interactions(X)
        self.similarity_ = check_similarity(similarity, R.shape[1])
        self.train_matrix_ = R
        self.n_users_, self.n_items_ = R.shape
        return self

    def decision_function(self, users) -> np.ndarray:
        check_is_fitted(self, "similarity_")
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        return similarity_only_scores(self.train_matrix_[users], self.similarity_)


ESTIMATORS = {cls._kind: cls for cls in (BeLightRec, LightGCN, BPRMF, BeLightRecW, SimilarityRanker)}


def make_recommender(kind: str, **params):
    """Estimator for ``kind``; parameters the kind does not take are dropped."""
    try:
        cls = ESTIMATORS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(ESTIMATORS)}") from None
    accepted = cls._get_param_names()
    return cls(**{k: v for k, v in params.items() if k in accepted})
