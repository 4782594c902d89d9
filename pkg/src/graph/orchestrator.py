"""
CFL 仿真主循环（LangGraph 状态图）

    START ─▶ schedule ─▶ train ─▶ aggregate ─▶ maintain ─▶ record ─┐
                │                                                   │
                └──────────────▶ END ◀──────────────────────────────┘

每个节点对应一轮中的一个阶段；record 节点通过自定义流写出 RoundRecord，
调用方可以边跑边落盘。重型对象（数据集、参数树、模型）挂在 CFLSimulation
实例上，图状态只携带轮次相关的小字段。
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, TypedDict, Union

import numpy as np
from langgraph.config import get_stream_writer
from langgraph.graph import StateGraph
from langgraph.graph.state import END, START

from src.clustering import (
    ClusterTree,
    bipartition,
    federated_average,
    gamma_check,
    mean_update_norm,
    separation_gap,
    similarity_matrix,
    split_conditions,
    stopping_check,
)
from src.edge.scheduling import ClusterView, RoundState, schedule
from src.edge.wireless import EdgeNetwork
from src.errors import DegenerateUpdateError
from src.learning import (
    FederatedDataset,
    LocalUpdate,
    accuracy,
    generate,
    init_params,
    learning_rate,
    local_train,
    loss,
    param_count,
)
from src.learning.model import DataShard
from src.models import (
    ClusterEvent,
    ClusterMetrics,
    EventKind,
    ExperimentConfig,
    RoundRecord,
    ScheduleDecision,
    StopReason,
)
from src.utils import seed_sequence


logger = logging.getLogger(__name__)

RecordCallback = Callable[[RoundRecord], None]


class CachedUpdate(NamedTuple):
    round: int
    node_id: int
    delta: np.ndarray


class SimulationState(TypedDict, total=False):
    round: int
    decision: Optional[ScheduleDecision]
    cumulative_time: float
    stop_reason: Optional[str]


@dataclass
class SimulationResult:
    tree: ClusterTree
    models: Dict[str, np.ndarray]
    records: List[RoundRecord]
    stop_reason: StopReason
    dataset: FederatedDataset
    eps1: Optional[float]
    eps2: Optional[float]
    total_time: float
    wall_clock_sec: float = 0.0
    rounds_to_all_stopped: Optional[int] = None


def first_split_round(records: Sequence[Union[RoundRecord, dict]]) -> Optional[int]:
    """第一次出现 split 事件的轮次；没有分裂时返回 None"""
    rounds = []
    for record in records:
        if isinstance(record, dict):
            events, index = record.get("events", []), record["round"]
            kinds = [e["kind"] for e in events]
        else:
            index = record.round
            kinds = [e.kind for e in record.events]
        if EventKind.split in kinds or EventKind.split.value in kinds:
            rounds.append(index)
    return min(rounds) if rounds else None


def _pooled(shards: Sequence[DataShard]) -> DataShard:
    return DataShard(
        np.concatenate([s.features for s in shards]),
        np.concatenate([s.labels for s in shards]),
        shards[0].distribution_id,
    )


class CFLSimulation:
    """一次完整的 CFL 实验"""

    def __init__(self, cfg: ExperimentConfig, dataset: Optional[FederatedDataset] = None,
                 on_record: Optional[RecordCallback] = None):
        self.cfg = cfg
        self.seed = cfg.seed
        self.dataset = dataset or generate(cfg.data, cfg.seed, hidden_dim=cfg.model.hidden_dim)
        self.spec = self.dataset.spec
        self.sizes = self.dataset.train_sizes
        self.network = EdgeNetwork.from_config(
            cfg.wireless, self.sizes, param_count(self.spec), cfg.training.epochs, cfg.seed
        )
        self.tree = ClusterTree(self.dataset.client_ids, init_params(self.spec, seed_sequence(cfg.seed, "init")))
        self.on_record = on_record

        self.records: List[RoundRecord] = []
        self.prev_norms: Dict[int, float] = {}
        self.update_cache: Dict[int, CachedUpdate] = {}
        self.eps1: Optional[float] = cfg.clustering.eps1
        self.eps2: Optional[float] = cfg.clustering.eps2
        self.rounds_to_all_stopped: Optional[int] = None

        # 单轮暂存
        self._updates: Dict[int, LocalUpdate] = {}
        self._trained_under: Dict[int, int] = {}
        self._events: List[ClusterEvent] = []

    # 节点

    def schedule_node(self, state: SimulationState) -> SimulationState:
        r = state["round"] + 1
        channels = self.network.channels(r)
        round_state = RoundState(
            round_index=r,
            clusters=[ClusterView(leaf.node_id, leaf.members, leaf.stopped) for leaf in self.tree.leaves()],
            latencies=self.network.latencies(channels),
            gains={cid: ch.gain for cid, ch in channels.items()},
            sample_counts=self.sizes,
            prev_norms=dict(self.prev_norms),
        )
        decision = schedule(
            self.cfg.strategy,
            round_state,
            self.cfg.wireless.num_subchannels,
            self.seed,
            latency_noise_std=self.cfg.wireless.latency_noise_std,
            availability=self.cfg.wireless.availability,
        )
        cumulative = state.get("cumulative_time", 0.0)
        budget = self.cfg.time_budget
        if budget is not None and cumulative + decision.deadline > budget:
            logger.info("⏱️  第 %d 轮需要 %.6g s，超出剩余预算 %.6g s，丢弃本轮并结束",
                        r, decision.deadline, budget - cumulative)
            return {"decision": None, "stop_reason": StopReason.time_budget.value}
        return {"round": r, "decision": decision, "cumulative_time": cumulative + decision.deadline}

    def _train_one(self, cid: int, r: int, model: np.ndarray, lr: float) -> LocalUpdate:
        training = self.cfg.training
        return local_train(
            model,
            self.dataset.train[cid],
            self.spec,
            training.epochs,
            training.batch_size,
            lr,
            seed_sequence(self.seed, "train", cid, r),
        )

    def train_node(self, state: SimulationState) -> SimulationState:
        r = state["round"]
        decision = state["decision"]
        leaf_of = self.tree.leaf_of()
        training = self.cfg.training
        lr = learning_rate(training.learning_rate, training.lr_schedule, training.lr_decay, r - 1)
        selected = sorted(decision.selected)
        self._trained_under = {cid: leaf_of[cid] for cid in selected}

        def job(cid):
            return self._train_one(cid, r, self.tree.node(self._trained_under[cid]).model, lr)

        workers = self.cfg.parallel_workers
        if workers > 0 and len(selected) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(job, selected))
        else:
            results = [job(cid) for cid in selected]
        self._updates = dict(zip(selected, results))
        return {"round": r}

    def aggregate_node(self, state: SimulationState) -> SimulationState:
        by_leaf: Dict[int, Dict[int, tuple]] = {}
        for cid, update in self._updates.items():
            by_leaf.setdefault(self._trained_under[cid], {})[cid] = (update.params, float(self.sizes[cid]))
        for node_id in sorted(by_leaf):
            self.tree.node(node_id).model = federated_average(by_leaf[node_id])
        return {"round": state["round"]}

    def _resolve_thresholds(self, norms: Sequence[float]) -> None:
        clustering = self.cfg.clustering
        if self.eps1 is None:
            self.eps1 = clustering.eps1_factor * float(np.mean(norms))
        if self.eps2 is None:
            self.eps2 = clustering.eps2_factor * self.eps1
        if self.eps2 <= 0:
            # 首轮更新全为零时 ε2 无意义，取一个极小正数
            self.eps2 = np.finfo(np.float64).tiny
        logger.info("📏 阈值: ε1=%.6g, ε2=%.6g", self.eps1, self.eps2)

    def _consider_split(self, r: int, node_id: int, members: List[int], updates: np.ndarray) -> None:
        node = self.tree.node(node_id)
        clustering = self.cfg.clustering
        try:
            sim = similarity_matrix(updates)
        except DegenerateUpdateError:
            logger.warning("⚠️  第 %d 轮簇 %d 存在零更新，跳过分裂", r, node_id)
            self._events.append(ClusterEvent(kind=EventKind.split_rejected, round=r, cluster_id=node_id,
                                             members=list(node.members), reason="degenerate_update"))
            return

        split = bipartition(sim, clustering.max_bipartition_size)
        gamma = gamma_check(updates, split.c1, split.c2, split.sim_cross_max,
                            reference=clustering.gamma_reference, sim=sim)
        gap = separation_gap(sim, [split.c1, split.c2])
        if not gamma.passed:
            logger.warning("🚫 第 %d 轮簇 %d 的分裂被 γ 检验拒绝: max γ=%s, 阈值=%.4f",
                           r, node_id, gamma.max_gamma, gamma.threshold)
            self._events.append(ClusterEvent(
                kind=EventKind.split_rejected, round=r, cluster_id=node_id, members=list(node.members),
                sim_cross_max=split.sim_cross_max, max_gamma=gamma.max_gamma, separation_gap=gap,
                reason="gamma",
            ))
            return

        left, right = self.tree.split(node_id, [members[i] for i in split.c1], [members[i] for i in split.c2], r)
        self._events.append(ClusterEvent(
            kind=EventKind.split, round=r, cluster_id=node_id, members=list(node.members),
            children=[left.node_id, right.node_id], sim_cross_max=split.sim_cross_max,
            max_gamma=gamma.max_gamma, separation_gap=gap,
        ))

    def split_evidence(self, node_id: int, r: int) -> Optional[Dict[int, np.ndarray]]:
        """
        簇内每个成员可用于分裂检验的更新

        成员的缓存更新必须在当前簇模型下算出，且轮龄不超过 max_update_age；
        任一成员缺少这样的更新时返回 None（本轮不做分裂检验）。
        """
        max_age = self.cfg.clustering.max_update_age
        evidence = {}
        for cid in sorted(self.tree.node(node_id).members):
            cached = self.update_cache.get(cid)
            if cached is None or cached.node_id != node_id or r - cached.round > max_age:
                return None
            evidence[cid] = cached.delta
        return evidence

    def maintain_node(self, state: SimulationState) -> SimulationState:
        r = state["round"]
        self._events = []
        norms = {cid: float(np.linalg.norm(u.delta)) for cid, u in self._updates.items()}
        if self.eps1 is None or self.eps2 is None:
            self._resolve_thresholds(list(norms.values()))
        for cid, update in self._updates.items():
            self.update_cache[cid] = CachedUpdate(r, self._trained_under[cid], update.delta)

        trained: Dict[int, List[int]] = {}
        for cid in sorted(self._updates):
            trained.setdefault(self._trained_under[cid], []).append(cid)

        for node_id in sorted(trained):
            node = self.tree.node(node_id)
            if node.stopped or not node.is_leaf:
                continue
            participant_norms = [norms[cid] for cid in trained[node_id]]
            evidence = self.split_evidence(node_id, r)
            should_split = False
            if evidence is not None and len(evidence) >= 2:
                members = list(evidence)
                updates = np.stack([evidence[cid] for cid in members])
                mean_norm = mean_update_norm(updates)
                member_norms = np.linalg.norm(updates, axis=1).tolist()
                logger.debug("🔍 簇 %d: ‖Δw_c‖=%.6g, max‖Δw_k‖=%.6g", node_id, mean_norm, max(member_norms))
                should_split = split_conditions(mean_norm, member_norms, self.eps1, self.eps2)
            elif evidence is None:
                logger.debug("🔍 簇 %d: 成员更新不全，本轮不做分裂检验", node_id)

            if should_split:
                self._consider_split(r, node_id, members, updates)
            elif len(self.tree.leaves()) > 1 and stopping_check(participant_norms, self.eps2):
                self.tree.stop(node_id, r)
                self._events.append(ClusterEvent(kind=EventKind.stop, round=r, cluster_id=node_id,
                                                 members=list(node.members)))

        for cid in self._updates:
            self.prev_norms[cid] = norms[cid]
        if self.rounds_to_all_stopped is None and self.tree.all_stopped():
            self.rounds_to_all_stopped = r
        return {"round": r}

    def _cluster_metrics(self, r: int) -> List[ClusterMetrics]:
        evaluate = r % self.cfg.eval_every == 0
        metrics = []
        for leaf in self.tree.leaves():
            members = list(leaf.members)
            participants = [cid for cid in members if cid in self._updates]
            entry = ClusterMetrics(cluster_id=leaf.node_id, status=leaf.status,
                                   members=members, participants=participants)
            if participants:
                member_norms = [float(np.linalg.norm(self._updates[cid].delta)) for cid in participants]
                entry.max_update_norm = max(member_norms)
                entry.mean_update_norm = mean_update_norm(
                    np.stack([self._updates[cid].delta for cid in participants])
                )
            if evaluate:
                entry.train_loss = loss(leaf.model, _pooled([self.dataset.train[c] for c in members]), self.spec)
                entry.test_accuracy = accuracy(leaf.model, _pooled([self.dataset.test[c] for c in members]), self.spec)
                entry.client_accuracy = {
                    cid: accuracy(leaf.model, self.dataset.test[cid], self.spec) for cid in members
                }
            metrics.append(entry)
        return metrics

    def record_node(self, state: SimulationState) -> SimulationState:
        r = state["round"]
        decision = state["decision"]
        deltas = np.stack([self._updates[cid].delta for cid in sorted(self._updates)])
        record = RoundRecord(
            round=r,
            selected=list(decision.selected),
            aggregation_set_count=len(decision.aggregation_sets),
            deadline=decision.deadline,
            cumulative_time=state["cumulative_time"],
            mean_update_norm=mean_update_norm(deltas),
            max_update_norm=float(np.linalg.norm(deltas, axis=1).max()),
            eps1=self.eps1,
            eps2=self.eps2,
            clusters=self._cluster_metrics(r),
            events=list(self._events),
            schedule=decision,
            tree=self.tree.snapshot(),
        )
        self.records.append(record)
        if self.on_record is not None:
            self.on_record(record)
        writer = get_stream_writer()
        if writer:
            writer({"type": "round", "round": r})

        leaves = self.tree.leaves()
        logger.info("🔁 第 %d 轮: |Ω|=%d, 聚合集=%d, T_r=%.6g s, 累计=%.6g s, 叶子=%d (停止 %d)",
                    r, len(decision.selected), record.aggregation_set_count, decision.deadline,
                    record.cumulative_time, len(leaves), sum(1 for leaf in leaves if leaf.stopped))

        if self.tree.all_stopped():
            return {"stop_reason": StopReason.all_stopped.value}
        if r >= self.cfg.rounds:
            return {"stop_reason": StopReason.max_rounds.value}
        return {"round": r}

    # 路由

    def _route_start(self, state: SimulationState) -> str:
        return "schedule" if self.cfg.rounds > 0 else END

    def _route_after_schedule(self, state: SimulationState) -> str:
        return END if state.get("stop_reason") else "train"

    def _route_after_record(self, state: SimulationState) -> str:
        return END if state.get("stop_reason") else "schedule"

    def build_graph(self):
        graph = StateGraph(SimulationState)
        graph.add_node("schedule", self.schedule_node)
        graph.add_node("train", self.train_node)
        graph.add_node("aggregate", self.aggregate_node)
        graph.add_node("maintain", self.maintain_node)
        graph.add_node("record", self.record_node)

        graph.add_conditional_edges(START, self._route_start, ["schedule", END])
        graph.add_conditional_edges("schedule", self._route_after_schedule, ["train", END])
        graph.add_edge("train", "aggregate")
        graph.add_edge("aggregate", "maintain")
        graph.add_edge("maintain", "record")
        graph.add_conditional_edges("record", self._route_after_record, ["schedule", END])
        return graph.compile()

    def run(self) -> SimulationResult:
        started = time.perf_counter()
        logger.info("🚀 开始仿真: 策略=%s, seed=%d, K=%d, R_max=%d",
                    self.cfg.strategy.value, self.seed, self.dataset.num_clients, self.cfg.rounds)
        app = self.build_graph()
        initial: SimulationState = {"round": 0, "decision": None, "cumulative_time": 0.0, "stop_reason": None}
        final: Dict[str, Any] = dict(initial)
        config = {"recursion_limit": 5 * (self.cfg.rounds + 2) + 10}
        for mode, chunk in app.stream(initial, config, stream_mode=["custom", "values"]):
            if mode == "values":
                final = chunk

        stop_reason = StopReason(final.get("stop_reason") or StopReason.max_rounds.value)
        elapsed = time.perf_counter() - started
        logger.info("✅ 仿真结束: %d 轮, 原因=%s, 叶子划分=%s, 用时 %.2f s",
                    len(self.records), stop_reason.value, self.tree.partition(), elapsed)
        return SimulationResult(
            tree=self.tree,
            models=self.tree.final_models(),
            records=self.records,
            stop_reason=stop_reason,
            dataset=self.dataset,
            eps1=self.eps1,
            eps2=self.eps2,
            total_time=final.get("cumulative_time", 0.0),
            wall_clock_sec=elapsed,
            rounds_to_all_stopped=self.rounds_to_all_stopped,
        )


def run(cfg: ExperimentConfig, dataset: Optional[FederatedDataset] = None,
        on_record: Optional[RecordCallback] = None) -> SimulationResult:
    return CFLSimulation(cfg, dataset=dataset, on_record=on_record).run()
