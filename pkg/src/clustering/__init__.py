"""
聚类联邦学习（CFL）：相似度、二分、判据与参数树
"""
from src.clustering.similarity import (
    Bipartition,
    GammaResult,
    bipartition,
    cosine_similarity,
    federated_average,
    gamma_check,
    mean_update_norm,
    separation_gap,
    similarity_matrix,
    split_conditions,
    stopping_check,
    update_norms,
)
from src.clustering.tree import ClusterNode, ClusterTree

__all__ = [
    "Bipartition",
    "ClusterNode",
    "ClusterTree",
    "GammaResult",
    "bipartition",
    "cosine_similarity",
    "federated_average",
    "gamma_check",
    "mean_update_norm",
    "separation_gap",
    "similarity_matrix",
    "split_conditions",
    "stopping_check",
    "update_norms",
]
