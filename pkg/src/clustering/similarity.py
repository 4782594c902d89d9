"""
CFL 数值核心：加权联邦平均、余弦相似度、分裂/停止判据、最优二分、分离间隙

客户端更新一律用 Δw_k（本地训练前后的参数差）代替梯度。
"""
import logging
import math
from typing import List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import DegenerateUpdateError, InvalidArgumentError, SizeLimitError
from src.models import GammaReference


logger = logging.getLogger(__name__)

MAX_BIPARTITION_SIZE = 16
_MASK_CHUNK = 4096

WeightedItems = Union[Mapping[int, Tuple[np.ndarray, float]], Sequence[Tuple[np.ndarray, float]]]


class Bipartition(NamedTuple):
    c1: List[int]
    c2: List[int]
    sim_cross_max: float


class GammaResult(NamedTuple):
    passed: bool
    max_gamma: Optional[float]
    threshold: float


def federated_average(items: WeightedItems) -> np.ndarray:
    """
    Σ (D_k / D_c)·w_k

    传入字典时按客户端 id 升序累加，保证逐位可复现。
    """
    if isinstance(items, Mapping):
        ordered = [items[cid] for cid in sorted(items)]
    else:
        ordered = list(items)
    if not ordered:
        raise InvalidArgumentError("federated_average needs at least one update")

    dim = np.asarray(ordered[0][0]).shape
    total = 0.0
    acc = np.zeros(dim, dtype=np.float64)
    for vector, weight in ordered:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != dim:
            raise InvalidArgumentError(f"dimension mismatch: {vector.shape} vs {dim}")
        if weight < 0:
            raise InvalidArgumentError("weights must be non-negative")
        acc += weight * vector
        total += weight
    if total <= 0:
        raise InvalidArgumentError("total weight must be positive")
    return acc / total


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateUpdateError("cosine similarity of a zero update")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def similarity_matrix(updates: np.ndarray) -> np.ndarray:
    """行向量两两余弦相似度；严格对称，非零行的对角线为 1"""
    updates = np.asarray(updates, dtype=np.float64)
    if updates.ndim != 2:
        raise InvalidArgumentError("updates must be a matrix with one row per client")
    norms = np.linalg.norm(updates, axis=1)
    if np.any(norms == 0):
        raise DegenerateUpdateError("similarity matrix over a zero update")
    unit = updates / norms[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim = (sim + sim.T) / 2.0
    np.fill_diagonal(sim, 1.0)
    return sim


def update_norms(updates: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(updates, dtype=np.float64), axis=1)


def mean_update_norm(updates: np.ndarray) -> float:
    """‖(1/|c|) Σ Δw_k‖（不加权）"""
    return float(np.linalg.norm(np.asarray(updates, dtype=np.float64).mean(axis=0)))


def split_conditions(mean_norm: float, member_norms: Sequence[float], eps1: float, eps2: float) -> bool:
    """‖Δw_c‖ < ε1 且 max ‖Δw_k‖ > ε2（均为严格不等式）"""
    if eps1 < 0 or not eps2 > 0:
        raise InvalidArgumentError(f"need eps1 >= 0 and eps2 > 0, got ({eps1}, {eps2})")
    if len(member_norms) == 0:
        return False
    return bool(mean_norm < eps1 and max(member_norms) > eps2)


def stopping_check(member_norms: Sequence[float], eps2: float) -> bool:
    """max ‖Δw_k‖ < ε2"""
    if len(member_norms) == 0:
        raise InvalidArgumentError("stopping check needs at least one member norm")
    return bool(max(member_norms) < eps2)


def _mask_costs(sim: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """每个掩码（c2 成员位）对应的最大跨组相似度"""
    n = sim.shape[0]
    bits = ((masks[:, None] >> np.arange(n - 1)) & 1).astype(bool)
    in_c2 = np.concatenate([np.zeros((masks.shape[0], 1), dtype=bool), bits], axis=1)
    in_c1 = ~in_c2
    # per_col[m, j] = max_{i∈c1} S[i, j]
    per_col = np.where(in_c1[:, :, None], sim[None, :, :], -np.inf).max(axis=1)
    return np.where(in_c2, per_col, -np.inf).max(axis=1)


def bipartition(sim: np.ndarray, max_size: int = MAX_BIPARTITION_SIZE) -> Bipartition:
    """
    穷举全部 2^(n−1)−1 种二分，取最大跨组相似度最小者

    同值时取排序后字典序最小的 c1（因此 c1 总包含下标 0）。
    返回的是矩阵下标，由调用方映射回客户端 id。
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise InvalidArgumentError("similarity matrix must be square")
    n = sim.shape[0]
    if n < 2:
        raise InvalidArgumentError("bipartition needs at least two members")
    if n > max_size:
        raise SizeLimitError(f"exhaustive bipartition is capped at {max_size} members, got {n}")

    total = (1 << (n - 1)) - 1
    costs = np.empty(total, dtype=np.float64)
    for begin in range(0, total, _MASK_CHUNK):
        masks = np.arange(begin + 1, min(begin + _MASK_CHUNK, total) + 1, dtype=np.int64)
        costs[begin:begin + masks.shape[0]] = _mask_costs(sim, masks)

    best_cost = float(costs.min())
    best_c1: Optional[List[int]] = None
    for idx in np.flatnonzero(costs == best_cost):
        mask = int(idx) + 1
        c1 = [0] + [j for j in range(1, n) if not (mask >> (j - 1)) & 1]
        if best_c1 is None or c1 < best_c1:
            best_c1 = c1
    c2 = [j for j in range(n) if j not in best_c1]
    return Bipartition(c1=best_c1, c2=c2, sim_cross_max=best_cost)


def gamma_check(updates: np.ndarray, c1: Sequence[int], c2: Sequence[int], sim_cross_max: float,
                reference: GammaReference = GammaReference.side,
                sim: Optional[np.ndarray] = None) -> GammaResult:
    """
    max γ_k < sqrt((1 − sim_cross_max) / 2)

    γ_k = ‖ĝ_k − Δw_k‖ / ‖ĝ_k‖，ĝ_k 为 k 所在一侧的参考更新：
        side          一侧全部成员的平均更新
        neighbourhood 一侧中与 k 相似度 ≥ (1 + sim_cross_max)/2 的成员的平均更新
    参考更新为零向量时视为退化，拒绝分裂。
    """
    updates = np.asarray(updates, dtype=np.float64)
    s = float(np.clip(sim_cross_max, -1.0, 1.0))
    threshold = math.sqrt((1.0 - s) / 2.0)
    reference = GammaReference(reference)
    if reference == GammaReference.neighbourhood and sim is None:
        sim = similarity_matrix(updates)
    cutoff = (1.0 + s) / 2.0

    gammas = []
    for side in (list(c1), list(c2)):
        side_mean = updates[side].mean(axis=0)
        for k in side:
            if reference == GammaReference.neighbourhood:
                near = [j for j in side if sim[k, j] >= cutoff or j == k]
                ref = updates[near].mean(axis=0)
            else:
                ref = side_mean
            ref_norm = np.linalg.norm(ref)
            if ref_norm == 0:
                logger.warning("⚠️  γ 检验的参考更新为零向量，拒绝分裂")
                return GammaResult(passed=False, max_gamma=None, threshold=threshold)
            gammas.append(float(np.linalg.norm(ref - updates[k]) / ref_norm))

    max_gamma = max(gammas)
    return GammaResult(passed=max_gamma < threshold, max_gamma=max_gamma, threshold=threshold)


def separation_gap(sim: np.ndarray, partition: Sequence[Sequence[int]]) -> Optional[float]:
    """
    g = 组内最小相似度 − 组间最大相似度（只看不同成员对）

    单组（没有组间对）或全是单元素组（没有组内对）时返回 None。
    """
    sim = np.asarray(sim, dtype=np.float64)
    label = {}
    for gid, block in enumerate(partition):
        for idx in block:
            label[idx] = gid
    indices = sorted(label)
    within, cross = [], []
    for a_pos, i in enumerate(indices):
        for j in indices[a_pos + 1:]:
            (within if label[i] == label[j] else cross).append(sim[i, j])
    if not within or not cross:
        return None
    return float(min(within) - max(cross))