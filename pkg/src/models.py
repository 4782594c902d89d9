"""
数据模型定义
"""
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


# Enums
class StrategyKind(str, Enum):
    proposed_two_phase = "proposed_two_phase"
    random = "random"
    best_channel = "best_channel"
    best_l2norm = "best_l2norm"
    max_samples = "max_samples"
    max_samples_dynamic = "max_samples_dynamic"


class ClusterStatus(str, Enum):
    active = "active"
    stopped = "stopped"


class SizeLaw(str, Enum):
    power_law = "power_law"
    uniform = "uniform"


class LRSchedule(str, Enum):
    constant = "constant"
    decay = "decay"


class GammaReference(str, Enum):
    side = "side"
    neighbourhood = "neighbourhood"


class EventKind(str, Enum):
    split = "split"
    split_rejected = "split_rejected"
    stop = "stop"


class RunStatus(str, Enum):
    running = "running"
    completed = "completed"
    failed = "failed"


class StopReason(str, Enum):
    all_stopped = "all_stopped"
    max_rounds = "max_rounds"
    time_budget = "time_budget"


# 实验配置
class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Section):
    num_clients: int = Field(15, ge=1, description="K")
    num_groups: int = Field(3, ge=1, description="M_true, 真实分布组数")
    num_classes: int = Field(10, ge=2)
    input_dim: int = Field(20, ge=1)
    classes_per_client: int = Field(2, ge=1)
    size_law: SizeLaw = SizeLaw.power_law
    power_law_exponent: float = Field(1.5, gt=0)
    min_samples: int = Field(64, ge=2)
    max_samples: int = Field(2048, ge=2)
    class_separation: float = Field(3.0, gt=0)
    noise_std: float = Field(1.0, gt=0)
    train_fraction: float = Field(0.8, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.num_groups > self.num_clients:
            raise ValueError("num_groups must not exceed num_clients")
        if self.classes_per_client > self.num_classes:
            raise ValueError("classes_per_client must not exceed num_classes")
        if self.min_samples > self.max_samples:
            raise ValueError("min_samples must not exceed max_samples")
        return self


class ModelConfig(_Section):
    hidden_dim: int = Field(0, ge=0, description="0 表示多项逻辑回归")


class TrainingConfig(_Section):
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(0.01, gt=0)
    lr_schedule: LRSchedule = LRSchedule.constant
    lr_decay: float = Field(0.0, ge=0)


class ClusteringConfig(_Section):
    eps1: Optional[float] = Field(None, ge=0, description="None 表示相对模式")
    eps2: Optional[float] = Field(None, gt=0)
    eps1_factor: float = Field(0.4, gt=0)
    eps2_factor: float = Field(1.6, gt=0)
    gamma_reference: GammaReference = GammaReference.neighbourhood
    max_update_age: int = Field(0, ge=0, description="分裂检验可使用的成员缓存更新的最大轮龄，0 表示只用本轮更新")
    max_bipartition_size: int = Field(16, ge=2, le=16)


class WirelessConfig(_Section):
    bandwidth_hz: float = Field(1e7, gt=0)
    num_subchannels: int = Field(10, ge=1)
    noise_power_w: float = Field(1e-6, gt=0)
    g0_db: float = -35.0
    d0_m: float = Field(2.0, gt=0)
    distance_min_m: float = Field(20.0, gt=0)
    distance_max_m: float = Field(100.0, gt=0)
    power_min_dbm: float = -10.0
    power_max_dbm: float = 20.0
    cpu_freq_min_hz: float = Field(1e9, gt=0)
    cpu_freq_max_hz: float = Field(9e9, gt=0)
    cycles_per_sample: float = Field(20.0, gt=0)
    model_size_bits: Optional[float] = Field(None, ge=0, description="None 表示 32 bit × 参数个数")
    latency_noise_std: float = Field(0.0, ge=0)
    availability: float = Field(0.7, gt=0, le=1, description="max_samples_dynamic 的链路可用概率")

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.distance_min_m > self.distance_max_m:
            raise ValueError("distance_min_m must not exceed distance_max_m")
        if self.power_min_dbm > self.power_max_dbm:
            raise ValueError("power_min_dbm must not exceed power_max_dbm")
        if self.cpu_freq_min_hz > self.cpu_freq_max_hz:
            raise ValueError("cpu_freq_min_hz must not exceed cpu_freq_max_hz")
        return self


class ExperimentConfig(_Section):
    seed: int = Field(7, ge=0, lt=2 ** 64)
    rounds: int = Field(200, ge=0, description="R_max")
    time_budget: Optional[float] = Field(None, gt=0, description="T_tot（秒），None 表示不限")
    strategy: StrategyKind = StrategyKind.proposed_two_phase
    eval_every: int = Field(1, ge=1)
    parallel_workers: int = Field(0, ge=0, description="0 表示串行训练")
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    clustering: ClusteringConfig = Field(default_factory=ClusteringConfig)
    wireless: WirelessConfig = Field(default_factory=WirelessConfig)

    @model_validator(mode="after")
    def _check_batch_fits(self):
        # D_k ∈ [b, D_max]，D_k 为训练部分的样本数
        smallest = int(round(self.data.min_samples * self.data.train_fraction))
        if smallest < self.training.batch_size:
            raise ValueError(
                f"the smallest training shard ({smallest} samples from data.min_samples="
                f"{self.data.min_samples}) must hold at least training.batch_size ({self.training.batch_size})"
            )
        return self


# 调度
class ClientTiming(BaseModel):
    client_id: int
    aggregation_set: int
    subchannel: int
    start: float
    compute_end: float
    upload_start: float
    upload_end: float


class ScheduleDecision(BaseModel):
    round: int
    strategy: StrategyKind
    selected: List[int]
    aggregation_sets: List[List[int]]
    timings: List[ClientTiming]
    deadline: float


# 聚类
class ClusterEvent(BaseModel):
    kind: EventKind
    round: int
    cluster_id: int
    members: List[int]
    children: List[int] = Field(default_factory=list)
    sim_cross_max: Optional[float] = None
    max_gamma: Optional[float] = None
    separation_gap: Optional[float] = None
    reason: Optional[str] = None


class TreeNodeSnapshot(BaseModel):
    node_id: int
    parent: Optional[int]
    children: List[int]
    members: List[int]
    status: ClusterStatus
    created_round: int
    stopped_round: Optional[int] = None


class ClusterMetrics(BaseModel):
    cluster_id: int
    status: ClusterStatus
    members: List[int]
    participants: List[int]
    mean_update_norm: Optional[float] = None
    max_update_norm: Optional[float] = None
    train_loss: Optional[float] = None
    test_accuracy: Optional[float] = None
    client_accuracy: Optional[Dict[int, float]] = None


class RoundRecord(BaseModel):
    round: int
    selected: List[int]
    aggregation_set_count: int
    deadline: float
    cumulative_time: float
    mean_update_norm: float
    max_update_norm: float
    eps1: Optional[float] = None
    eps2: Optional[float] = None
    clusters: List[ClusterMetrics]
    events: List[ClusterEvent]
    schedule: ScheduleDecision
    tree: List[TreeNodeSnapshot]


# 结果
class AccuracyReport(BaseModel):
    models: List[str]
    clients: List[int]
    matrix: List[List[float]] = Field(description="matrix[i][j] = 模型 i 在客户端 j 测试集上的准确率")
    best_accuracy: Dict[int, float]
    best_model: Dict[int, str]
    gap: float


class RunSummary(BaseModel):
    strategy: StrategyKind
    seed: int
    rounds_completed: int
    stop_reason: StopReason
    first_split_round: Optional[int]
    rounds_to_all_stopped: Optional[int]
    total_simulated_time: float
    eps1: Optional[float]
    eps2: Optional[float]
    adjusted_rand_index: float
    leaf_partition: List[List[int]]
    ground_truth: List[List[int]]
    tree: List[TreeNodeSnapshot]
    accuracy: AccuracyReport


class RunManifest(BaseModel):
    run_id: str
    status: RunStatus
    seed: int
    code_version: str
    config: ExperimentConfig
    artifacts: Dict[str, str]
    wall_clock_sec: float
    error: Optional[str] = None


# 收敛界
class BoundParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(1.0, gt=0, description="强凸常数")
    beta: float = Field(1.8, gt=0, description="光滑常数")
    rho2: Optional[float] = Field(None, gt=0, description="梯度二阶矩上界，None 表示实测")
    tau: int = Field(5, ge=1, description="每轮本地步数")
    heterogeneity: Optional[float] = Field(None, ge=0, description="异质性常数，None 表示实测")
    lr_schedule: LRSchedule = LRSchedule.constant
    lr_decay: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check_constants(self):
        if self.alpha > self.beta:
            raise ValueError("alpha must not exceed beta")
        return self


class BoundRoundRow(BaseModel):
    round: int
    empirical: float
    bound: float
    loss_gap: float
    loss_bound: float


class BoundReport(BaseModel):
    params: BoundParams
    rho2: float
    heterogeneity: float
    seeds: int
    rounds: int
    slack: float
    violations: int
    violating_rounds: List[int]
    optimal_gap: float
    rows: List[BoundRoundRow]
