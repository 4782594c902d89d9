"""
无线边缘物理层：路径损耗、OFDMA 子信道、上传/计算/总时延、轮次截止时间
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, NamedTuple, Optional

from src.errors import InvalidArgumentError, UnreachableClientError
from src.models import WirelessConfig
from src.utils import derive_rng


logger = logging.getLogger(__name__)

BITS_PER_PARAM = 32


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    distance_m: float
    power_w: float
    cpu_freq_hz: float
    cycles_per_sample: float
    num_samples: int
    model_size_bits: float

    def __post_init__(self):
        for name in ("distance_m", "power_w", "cpu_freq_hz", "cycles_per_sample"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive for client {self.client_id}")
        if self.num_samples < 1:
            raise InvalidArgumentError(f"client {self.client_id} has no samples")
        if self.model_size_bits < 0:
            raise InvalidArgumentError("model_size_bits must be non-negative")


@dataclass(frozen=True)
class ChannelState:
    gain: float
    noise_power_w: float


@dataclass(frozen=True)
class BandwidthPlan:
    """N 个等宽子信道，每个参与者同一时刻最多占一个（λ_k = 1/N）"""

    bandwidth_hz: float
    num_subchannels: int

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise InvalidArgumentError("bandwidth must be positive")
        if self.num_subchannels < 1:
            raise InvalidArgumentError("need at least one sub-channel")

    @property
    def subchannel_hz(self) -> float:
        return self.bandwidth_hz / self.num_subchannels


class LatencyBreakdown(NamedTuple):
    compute: float
    upload: float

    @property
    def total(self) -> float:
        return self.compute + self.upload


def channel_gain(profile: ClientProfile, round_index: int, seed: int,
                 g0_db: float = -35.0, d0_m: float = 2.0, fading: Optional[float] = None) -> float:
    """|h|² = g0·(d0/d)^4·X，X ~ Exp(1) 取自 (seed, "channel", client, round) 随机流"""
    if fading is None:
        fading = float(derive_rng(seed, "channel", profile.client_id, round_index).exponential(1.0))
    return db_to_linear(g0_db) * (d0_m / profile.distance_m) ** 4 * fading


def data_rate(bandwidth_hz: float, power_w: float, gain: float, noise_w: float) -> float:
    """r = λB·ln(1 + P·g/N0)，单位 nats/s"""
    if not bandwidth_hz > 0:
        raise InvalidArgumentError(f"bandwidth must be positive, got {bandwidth_hz}")
    if power_w < 0 or gain < 0:
        raise InvalidArgumentError("power and gain must be non-negative")
    if not noise_w > 0:
        raise InvalidArgumentError(f"noise power must be positive, got {noise_w}")
    return bandwidth_hz * math.log1p(power_w * gain / noise_w)


def upload_latency(model_size_bits: float, rate: float) -> float:
    if model_size_bits < 0:
        raise InvalidArgumentError("model size must be non-negative")
    if not rate > 0:
        raise UnreachableClientError(f"upload rate is {rate}, client cannot reach the server")
    return model_size_bits / rate


def compute_latency(epochs: int, cycles_per_sample: float, num_samples: int, cpu_freq_hz: float) -> float:
    """E·φ·D_k / f_k"""
    if epochs < 1 or not cycles_per_sample > 0 or num_samples < 1 or not cpu_freq_hz > 0:
        raise InvalidArgumentError("compute latency inputs must all be positive")
    return epochs * cycles_per_sample * num_samples / cpu_freq_hz


def total_latency(profile: ClientProfile, channel: ChannelState, plan: BandwidthPlan,
                  epochs: int) -> LatencyBreakdown:
    try:
        rate = data_rate(plan.subchannel_hz, profile.power_w, channel.gain, channel.noise_power_w)
        upload = upload_latency(profile.model_size_bits, rate)
    except UnreachableClientError as e:
        raise UnreachableClientError(str(e), client_id=profile.client_id) from e
    compute = compute_latency(epochs, profile.cycles_per_sample, profile.num_samples, profile.cpu_freq_hz)
    return LatencyBreakdown(compute=compute, upload=upload)


def round_deadline(latencies: Iterable[float]) -> float:
    """T_r：最慢参与者的时延"""
    values = list(latencies)
    if not values:
        raise InvalidArgumentError("round deadline needs a non-empty selection")
    return max(values)


def model_size_bits(cfg: WirelessConfig, num_params: int) -> float:
    if cfg.model_size_bits is not None:
        return float(cfg.model_size_bits)
    return float(BITS_PER_PARAM * num_params)


def sample_profiles(cfg: WirelessConfig, sample_counts: Dict[int, int], size_bits: float,
                    seed: int) -> Dict[int, ClientProfile]:
    """距离 U[d_lo, d_hi]，发射功率按 dBm 均匀，CPU 频率 U[f_min, f_max]"""
    profiles = {}
    for cid in sorted(sample_counts):
        rng = derive_rng(seed, "profile", cid)
        profiles[cid] = ClientProfile(
            client_id=cid,
            distance_m=float(rng.uniform(cfg.distance_min_m, cfg.distance_max_m)),
            power_w=dbm_to_watts(float(rng.uniform(cfg.power_min_dbm, cfg.power_max_dbm))),
            cpu_freq_hz=float(rng.uniform(cfg.cpu_freq_min_hz, cfg.cpu_freq_max_hz)),
            cycles_per_sample=cfg.cycles_per_sample,
            num_samples=int(sample_counts[cid]),
            model_size_bits=size_bits,
        )
    return profiles


class EdgeNetwork:
    """一次实验的无线环境：固定的客户端画像 + 每轮重新生成的信道"""

    def __init__(self, cfg: WirelessConfig, profiles: Dict[int, ClientProfile], epochs: int, seed: int):
        self.cfg = cfg
        self.profiles = profiles
        self.epochs = epochs
        self.seed = seed
        self.plan = BandwidthPlan(cfg.bandwidth_hz, cfg.num_subchannels)

    @classmethod
    def from_config(cls, cfg: WirelessConfig, sample_counts: Dict[int, int], num_params: int,
                    epochs: int, seed: int) -> "EdgeNetwork":
        profiles = sample_profiles(cfg, sample_counts, model_size_bits(cfg, num_params), seed)
        return cls(cfg, profiles, epochs, seed)

    @property
    def client_ids(self):
        return sorted(self.profiles)

    def channels(self, round_index: int) -> Dict[int, ChannelState]:
        return {
            cid: ChannelState(
                gain=channel_gain(p, round_index, self.seed, self.cfg.g0_db, self.cfg.d0_m),
                noise_power_w=self.cfg.noise_power_w,
            )
            for cid, p in sorted(self.profiles.items())
        }

    def latencies(self, channels: Dict[int, ChannelState]) -> Dict[int, LatencyBreakdown]:
        """不可达（速率为 0）的客户端不出现在结果中，由调度器排除"""
        result = {}
        for cid, channel in channels.items():
            try:
                result[cid] = total_latency(self.profiles[cid], channel, self.plan, self.epochs)
            except UnreachableClientError:
                logger.warning("📡 客户端 %d 本轮不可达，已排除", cid)
        return result
