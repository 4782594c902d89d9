"""
无线边缘网络：信道/时延模型与客户端调度
"""
from src.edge.wireless import (
    BandwidthPlan,
    ChannelState,
    ClientProfile,
    EdgeNetwork,
    LatencyBreakdown,
    channel_gain,
    compute_latency,
    data_rate,
    db_to_linear,
    dbm_to_watts,
    round_deadline,
    sample_profiles,
    total_latency,
    upload_latency,
)
from src.edge.scheduling import (
    ClusterView,
    RoundState,
    aggregation_count,
    audit_decision,
    build_aggregation_sets,
    pipeline_timeline,
    schedule,
    select,
)

__all__ = [
    "BandwidthPlan",
    "ChannelState",
    "ClientProfile",
    "ClusterView",
    "EdgeNetwork",
    "LatencyBreakdown",
    "RoundState",
    "aggregation_count",
    "audit_decision",
    "build_aggregation_sets",
    "channel_gain",
    "compute_latency",
    "data_rate",
    "db_to_linear",
    "dbm_to_watts",
    "pipeline_timeline",
    "round_deadline",
    "sample_profiles",
    "schedule",
    "select",
    "total_latency",
    "upload_latency",
]
