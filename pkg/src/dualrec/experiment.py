"""Shared pipeline steps: similarity from a text source, per-kind runs and the ablation."""

from __future__ import annotations

import logging

import scipy.sparse as sp

from .dataset import InteractionLog, ItemTextTable
from .estimators import make_recommender
from .evaluation import RankingMetrics
from .models import KINDS
from .semantic import build_similarity_matrix, fit_tfidf_vectors, load_external_vectors

logger = logging.getLogger(__name__)

ABLATION_KINDS = ("belightrec", "lightgcn", "simonly", "mfbpr", "belightrec_w")

# desk-scale training preset for the synthetic two-cluster data
SYNTHETIC_PARAMS = dict(embedding_dim=64, n_layers=3, learning_rate=0.01, l2_lambda=1e-5,
                        batch_size=512, max_epochs=100, eval_every=5, patience=4,
                        validation_fraction=0.1)


def similarity_from_source(log: InteractionLog, source: str = "tfidf", texts: ItemTextTable | None = None,
                           vectors_path=None, alpha: float = 0.5, top_n: int = 10,
                           threshold: float = 0.0) -> sp.csr_matrix:
    """Item-item matrix from TF-IDF text vectors, external vectors, or their blend."""
    if source == "tfidf":
        _, table = fit_tfidf_vectors(texts)
        return build_similarity_matrix(table, top_n, threshold)
    if source == "external":
        return build_similarity_matrix(load_external_vectors(vectors_path, log), top_n, threshold)
    if source == "blend":
        external = load_external_vectors(vectors_path, log)
        _, tfidf = fit_tfidf_vectors(texts)
        return build_similarity_matrix(external, top_n, threshold, other=tfidf, alpha=alpha)
    raise ValueError(f"unknown text source {source!r}")


def run_kind(kind: str, train: InteractionLog, test: InteractionLog, similarity=None,
             params: dict | None = None, ks=(5, 20), validation=None, log=None):
    """Fit one model kind and evaluate it on ``test``; returns ``(metrics, estimator)``."""
    model = make_recommender(kind, **(params or {}))
    model.fit(train.to_csr(), similarity=similarity, validation=validation, log=log)
    return model.evaluate(test.to_csr(), ks=ks), model


def run_ablation(train: InteractionLog, test: InteractionLog, similarity, params: dict | None = None,
                 ks=(5, 20), kinds=ABLATION_KINDS, validation=None) -> dict[str, RankingMetrics]:
    """Every model kind on identical splits and seeds."""
    unknown = set(kinds) - set(KINDS)
    if unknown:
        raise ValueError(f"unknown model kinds {sorted(unknown)}")
    results = {}
    for kind in kinds:
        metrics, _ = run_kind(kind, train, test, similarity, params, ks, validation)
        logger.info("%s: %s", kind, {k: round(v, 5) for k, v in metrics.flat().items()})
        results[kind] = metrics
    return results
