"""
客户端选择与上传调度

两阶段策略：
    1. 公平阶段：未停止簇的所有成员全部参与
    2. 贪心阶段：已停止簇只选估计总时延最小的一个成员
选中集合按估计时延升序切成若干聚合集，每个聚合集最多 N 个客户端，
后一个聚合集复用前一个聚合集释放的子信道（带宽复用）。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.edge.wireless import LatencyBreakdown
from src.errors import InvalidArgumentError
from src.models import ClientTiming, ScheduleDecision, StrategyKind
from src.utils import derive_rng


logger = logging.getLogger(__name__)

_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ClusterView:
    cluster_id: int
    members: Tuple[int, ...]
    stopped: bool = False


@dataclass
class RoundState:
    """调度器在第 r 轮可见的全部信息"""

    round_index: int
    clusters: List[ClusterView]
    latencies: Dict[int, LatencyBreakdown]
    gains: Dict[int, float]
    sample_counts: Dict[int, int]
    prev_norms: Dict[int, float] = field(default_factory=dict)

    @property
    def reachable(self) -> List[int]:
        return sorted(self.latencies)


def aggregation_count(num_selected: int, num_subchannels: int) -> int:
    """ceil(|Ω_r| / N)"""
    if num_selected < 1 or num_subchannels < 1:
        raise InvalidArgumentError(
            f"aggregation_count needs positive inputs, got ({num_selected}, {num_subchannels})"
        )
    return -(-num_selected // num_subchannels)


def build_aggregation_sets(ordered: Sequence[int], num_subchannels: int) -> List[List[int]]:
    """按顺序每 N 个切成一组，最后一组可以不满"""
    if not ordered:
        raise InvalidArgumentError("cannot build aggregation sets from an empty selection")
    if num_subchannels < 1:
        raise InvalidArgumentError("need at least one sub-channel")
    ordered = list(ordered)
    return [ordered[i:i + num_subchannels] for i in range(0, len(ordered), num_subchannels)]


def pipeline_timeline(sets: Sequence[Sequence[int]], durations: Dict[int, LatencyBreakdown],
                      num_subchannels: int) -> Tuple[List[ClientTiming], float]:
    """
    带宽复用时间线（时间相对本轮开始）

    聚合集 j 中位置 p 的客户端使用子信道 p；上传开始于
    max(自身计算结束, 聚合集 j−1 中位置 p 的客户端上传结束)。
    返回 (每个客户端的时间戳, T_r = 最大上传结束时刻)。
    """
    channel_free = [0.0] * num_subchannels
    timings: List[ClientTiming] = []
    for j, group in enumerate(sets):
        if len(group) > num_subchannels:
            raise InvalidArgumentError(f"aggregation set {j} has {len(group)} > {num_subchannels} clients")
        for p, cid in enumerate(group):
            latency = durations[cid]
            if latency.compute < 0 or latency.upload < 0:
                raise InvalidArgumentError(f"client {cid} has a negative duration")
            compute_end = latency.compute
            upload_start = max(compute_end, channel_free[p])
            upload_end = upload_start + latency.upload
            channel_free[p] = upload_end
            timings.append(ClientTiming(
                client_id=cid,
                aggregation_set=j,
                subchannel=p,
                start=0.0,
                compute_end=compute_end,
                upload_start=upload_start,
                upload_end=upload_end,
            ))
    deadline = max((t.upload_end for t in timings), default=0.0)
    return timings, deadline


def estimate_latencies(state: RoundState, noise_std: float, seed: int) -> Dict[int, float]:
    """服务器测得的近似总时延；noise_std > 0 时乘以 (1 + σ·z)"""
    totals = {cid: lat.total for cid, lat in state.latencies.items()}
    if noise_std <= 0:
        return totals
    rng = derive_rng(seed, "latency-noise", state.round_index)
    noise = rng.standard_normal(len(totals))
    return {
        cid: max(totals[cid] * (1.0 + noise_std * z), _TOLERANCE)
        for cid, z in zip(sorted(totals), noise)
    }


def _top(candidates: Sequence[int], score: Dict[int, float], n: int) -> List[int]:
    """按分数降序取前 n 个，同分取较小 id"""
    return sorted(candidates, key=lambda cid: (-score[cid], cid))[:n]


def select(strategy: StrategyKind, state: RoundState, num_subchannels: int, seed: int,
           estimates: Optional[Dict[int, float]] = None, availability: float = 1.0) -> List[int]:
    """返回本轮选中的客户端 Ω_r（未排序）"""
    strategy = StrategyKind(strategy)
    candidates = state.reachable
    if not candidates:
        raise InvalidArgumentError("no reachable client in this round")
    estimates = estimates if estimates is not None else {
        cid: lat.total for cid, lat in state.latencies.items()
    }
    n = min(num_subchannels, len(candidates))

    if strategy == StrategyKind.proposed_two_phase:
        reachable = set(candidates)
        selected: List[int] = []
        for cluster in state.clusters:
            members = [cid for cid in cluster.members if cid in reachable]
            if not members:
                continue
            if cluster.stopped:
                best = min(members, key=lambda cid: (estimates[cid], cid))
                selected.append(best)
            else:
                selected.extend(members)
        return selected

    if strategy == StrategyKind.random:
        rng = derive_rng(seed, "select", state.round_index)
        return [candidates[i] for i in rng.choice(len(candidates), size=n, replace=False)]

    if strategy == StrategyKind.best_channel:
        return _top(candidates, state.gains, n)

    if strategy == StrategyKind.best_l2norm:
        if not state.prev_norms:
            rng = derive_rng(seed, "select", state.round_index)
            return [candidates[i] for i in rng.choice(len(candidates), size=n, replace=False)]
        scores = {cid: state.prev_norms.get(cid, float("inf")) for cid in candidates}
        return _top(candidates, scores, n)

    if strategy == StrategyKind.max_samples:
        return _top(candidates, {cid: float(state.sample_counts[cid]) for cid in candidates}, n)

    if strategy == StrategyKind.max_samples_dynamic:
        rng = derive_rng(seed, "availability", state.round_index)
        draws = rng.random(len(candidates))
        available = [cid for cid, u in zip(candidates, draws) if u < availability]
        if not available:
            logger.debug("🎲 第 %d 轮无可用链路，退回全体候选", state.round_index)
            available = candidates
        scores = {cid: float(state.sample_counts[cid]) for cid in available}
        return _top(available, scores, min(num_subchannels, len(available)))

    raise InvalidArgumentError(f"unknown strategy: {strategy}")


def schedule(strategy: StrategyKind, state: RoundState, num_subchannels: int, seed: int,
             latency_noise_std: float = 0.0, availability: float = 1.0) -> ScheduleDecision:
    """选择 + 按估计时延排序 + 聚合集 + 时间线"""
    estimates = estimate_latencies(state, latency_noise_std, seed)
    chosen = select(strategy, state, num_subchannels, seed, estimates, availability)
    ordered = sorted(chosen, key=lambda cid: (estimates[cid], cid))
    sets = build_aggregation_sets(ordered, num_subchannels)
    timings, deadline = pipeline_timeline(sets, state.latencies, num_subchannels)
    logger.debug("📋 第 %d 轮调度: %s, 聚合集=%d, T_r=%.6g s",
                 state.round_index, ordered, len(sets), deadline)
    return ScheduleDecision(
        round=state.round_index,
        strategy=StrategyKind(strategy),
        selected=ordered,
        aggregation_sets=sets,
        timings=timings,
        deadline=deadline,
    )


def max_concurrent_uploads(timings: Sequence[ClientTiming]) -> int:
    """扫描线统计同一时刻的最大并发上传数（区间左闭右开）"""
    events = []
    for t in timings:
        if t.upload_end > t.upload_start:
            events.append((t.upload_start, 1))
            events.append((t.upload_end, -1))
    # 同一时刻先结束再开始
    events.sort(key=lambda e: (e[0], e[1]))
    current = peak = 0
    for _, delta in events:
        current += delta
        peak = max(peak, current)
    return peak


def audit_decision(decision: ScheduleDecision, num_subchannels: int) -> List[str]:
    """仅凭序列化的调度决策复查资源约束，返回违规描述（空列表表示通过）"""
    problems: List[str] = []
    flat = [cid for group in decision.aggregation_sets for cid in group]
    if any(len(group) > num_subchannels for group in decision.aggregation_sets):
        problems.append("aggregation set larger than the sub-channel count")
    if len(flat) != len(set(flat)):
        problems.append("aggregation sets are not disjoint")
    if flat != list(decision.selected):
        problems.append("aggregation sets do not cover the selection in order")

    by_client = {t.client_id: t for t in decision.timings}
    if set(by_client) != set(decision.selected) or len(by_client) != len(decision.timings):
        problems.append("timings do not match the selection")
    scale = max(1.0, abs(decision.deadline))
    tol = _TOLERANCE * scale
    for t in decision.timings:
        if not 0 <= t.subchannel < num_subchannels:
            problems.append(f"client {t.client_id} uses sub-channel {t.subchannel}")
        if t.upload_start < t.compute_end - tol:
            problems.append(f"client {t.client_id} uploads before finishing computation")
        if t.upload_end > decision.deadline + tol:
            problems.append(f"client {t.client_id} finishes after the round deadline")

    per_channel: Dict[int, List[ClientTiming]] = {}
    for t in decision.timings:
        per_channel.setdefault(t.subchannel, []).append(t)
    for channel, items in per_channel.items():
        items.sort(key=lambda t: t.upload_start)
        for prev, cur in zip(items, items[1:]):
            if cur.upload_start < prev.upload_end - tol:
                problems.append(f"overlapping uploads on sub-channel {channel}")

    if max_concurrent_uploads(decision.timings) > num_subchannels:
        problems.append("more concurrent uploads than sub-channels")
    if decision.timings:
        latest = max(t.upload_end for t in decision.timings)
        if abs(latest - decision.deadline) > tol:
            problems.append("deadline differs from the latest upload end")
    return problems
