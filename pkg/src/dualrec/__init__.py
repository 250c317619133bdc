"""Dual-signal light graph convolution recommender with baselines and ranking evaluation."""

from .dataset import (DatasetStats, InteractionLog, ItemTextTable, dataset_stats, kcore_filter,
                      load_interactions, load_item_texts, split_train_test)
from .estimators import (BPRMF, BeLightRec, BeLightRecW, LightGCN, SimilarityRanker,
                         make_recommender)
from .evaluation import RankingMetrics, evaluate_model, ndcg_at_k, precision_recall_at_k, rank_top_k
from .graph import PropagationOperator, build_operator, propagate_once
from .semantic import (ItemSimilarityGraph, TfidfItemVectorizer, blend_similarities,
                       build_similarity_matrix, cosine_similarity, load_external_vectors)

__version__ = "0.1.0"

__all__ = [
    "BPRMF", "BeLightRec", "BeLightRecW", "DatasetStats", "InteractionLog", "ItemSimilarityGraph",
    "ItemTextTable", "LightGCN", "PropagationOperator", "RankingMetrics", "SimilarityRanker",
    "TfidfItemVectorizer", "blend_similarities", "build_operator", "build_similarity_matrix",
    "cosine_similarity", "dataset_stats", "evaluate_model", "kcore_filter", "load_external_vectors",
    "load_interactions", "load_item_texts", "make_recommender", "ndcg_at_k", "precision_recall_at_k",
    "propagate_once", "rank_top_k", "split_train_test",
]
