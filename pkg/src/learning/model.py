"""
模型核心

多项逻辑回归（hidden_dim == 0）或单隐层 ReLU MLP，softmax 输出，交叉熵损失。
参数统一展平为一维 float64 向量（ParamVector），布局：
    逻辑回归: W (C×d), b (C)
    MLP:      W1 (H×d), b1 (H), W2 (C×H), b2 (C)
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

from src.errors import InvalidArgumentError
from src.models import LRSchedule


logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1:
            raise InvalidArgumentError(f"input_dim must be positive, got {self.input_dim}")
        if self.num_classes < 2:
            raise InvalidArgumentError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.hidden_dim < 0:
            raise InvalidArgumentError(f"hidden_dim must be non-negative, got {self.hidden_dim}")
        if self.activation != "relu":
            raise InvalidArgumentError(f"unsupported activation: {self.activation}")


@dataclass(frozen=True)
class DataShard:
    """一个客户端的本地数据（D_k × d 特征 + 标签 + 真实分布编号 I(k)）"""

    features: np.ndarray
    labels: np.ndarray
    distribution_id: int = 0

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise InvalidArgumentError("features must be a 2-D matrix")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise InvalidArgumentError("labels must be a vector with one entry per sample")
        if features.shape[0] < 1:
            raise InvalidArgumentError("a shard needs at least one sample")
        if not np.all(np.isfinite(features)):
            raise InvalidArgumentError("features must be finite")
        if np.any(labels < 0):
            raise InvalidArgumentError("labels must be non-negative class ids")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    def check_for(self, spec: ModelSpec) -> None:
        if self.features.shape[1] != spec.input_dim:
            raise InvalidArgumentError(
                f"shard has {self.features.shape[1]} features, model expects {spec.input_dim}"
            )
        if int(self.labels.max()) >= spec.num_classes:
            raise InvalidArgumentError("label out of range for the model's class count")


class LocalUpdate(NamedTuple):
    params: np.ndarray
    delta: np.ndarray
    steps: int


def param_count(spec: ModelSpec) -> int:
    d, c, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    if h == 0:
        return c * d + c
    return h * d + h + c * h + c


def check_params(params, spec: ModelSpec) -> np.ndarray:
    """校验参数向量维度与有限性，返回 float64 视图"""
    values = np.asarray(params, dtype=np.float64)
    expected = param_count(spec)
    if values.ndim != 1 or values.shape[0] != expected:
        raise InvalidArgumentError(
            f"parameter vector has shape {values.shape}, model expects ({expected},)"
        )
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("parameter vector contains NaN or Inf")
    return values


def init_params(spec: ModelSpec, seed: Optional[SeedLike] = None) -> np.ndarray:
    """逻辑回归从零开始；MLP 隐层使用 He 初始化（需要 seed）"""
    if spec.hidden_dim == 0:
        return np.zeros(param_count(spec), dtype=np.float64)
    rng = np.random.default_rng(seed)
    d, c, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    w1 = rng.normal(0.0, math.sqrt(2.0 / d), size=(h, d))
    w2 = rng.normal(0.0, math.sqrt(2.0 / h), size=(c, h))
    return np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)])


def _unpack(params: np.ndarray, spec: ModelSpec):
    d, c, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    if h == 0:
        return params[: c * d].reshape(c, d), params[c * d:]
    i = 0
    w1 = params[i:i + h * d].reshape(h, d)
    i += h * d
    b1 = params[i:i + h]
    i += h
    w2 = params[i:i + c * h].reshape(c, h)
    i += c * h
    return w1, b1, w2, params[i:]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _logits(params: np.ndarray, features: np.ndarray, spec: ModelSpec):
    if spec.hidden_dim == 0:
        w, b = _unpack(params, spec)
        return features @ w.T + b, None
    w1, b1, w2, b2 = _unpack(params, spec)
    pre = features @ w1.T + b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ w2.T + b2, (pre, hidden)


def _loss_and_grad(params: np.ndarray, features: np.ndarray, labels: np.ndarray,
                   spec: ModelSpec) -> Tuple[float, np.ndarray]:
    n = features.shape[0]
    logits, cache = _logits(params, features, spec)
    log_probs = _log_softmax(logits)
    rows = np.arange(n)
    value = float(-log_probs[rows, labels].mean())

    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    dlogits /= n

    if spec.hidden_dim == 0:
        dw = dlogits.T @ features
        db = dlogits.sum(axis=0)
        return value, np.concatenate([dw.ravel(), db])

    pre, hidden = cache
    _, _, w2, _ = _unpack(params, spec)
    dw2 = dlogits.T @ hidden
    db2 = dlogits.sum(axis=0)
    dpre = (dlogits @ w2) * (pre > 0.0)
    dw1 = dpre.T @ features
    db1 = dpre.sum(axis=0)
    return value, np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])


def loss(params, shard: DataShard, spec: ModelSpec) -> float:
    """F_k(W)：分片上的平均交叉熵"""
    values = check_params(params, spec)
    shard.check_for(spec)
    logits, _ = _logits(values, shard.features, spec)
    log_probs = _log_softmax(logits)
    return float(-log_probs[np.arange(shard.size), shard.labels].mean())


def gradient(params, shard: DataShard, spec: ModelSpec) -> np.ndarray:
    """∇F_k(W)：loss 对参数的解析梯度"""
    values = check_params(params, spec)
    shard.check_for(spec)
    _, grad = _loss_and_grad(values, shard.features, shard.labels, spec)
    return grad


def predict(params, features: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """argmax 预测；平局取最小类别号"""
    values = check_params(params, spec)
    logits, _ = _logits(values, np.asarray(features, dtype=np.float64), spec)
    return np.argmax(logits, axis=1)


def accuracy(params, shard: DataShard, spec: ModelSpec) -> float:
    shard.check_for(spec)
    predictions = predict(params, shard.features, spec)
    return float(np.mean(predictions == shard.labels))


def local_update_count(epochs: int, num_samples: int, batch_size: int) -> int:
    """E · ceil(D_k / b)：每个 epoch 末尾允许一个不满的批次"""
    for name, value in (("epochs", epochs), ("num_samples", num_samples), ("batch_size", batch_size)):
        if int(value) != value or value < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {value}")
    return int(epochs) * -(-int(num_samples) // int(batch_size))


def learning_rate(base: float, schedule: LRSchedule = LRSchedule.constant,
                  decay: float = 0.0, round_index: int = 0) -> float:
    """η_r：constant 或 η_0 / (1 + κ·r)"""
    if base <= 0:
        raise InvalidArgumentError(f"learning rate must be positive, got {base}")
    if LRSchedule(schedule) == LRSchedule.decay:
        return base / (1.0 + decay * round_index)
    return base


def local_train(params, shard: DataShard, spec: ModelSpec, epochs: int, batch_size: int,
                lr: float, seed: SeedLike) -> LocalUpdate:
    """
    本地小批量 SGD

    每个 epoch 用 seed 派生的随机流打乱样本，按 batch_size 切分（最后一批可不满），
    共执行 local_update_count(E, D_k, b) 步。Δw = new_params − params。
    """
    start = check_params(params, spec)
    shard.check_for(spec)
    if lr < 0:
        raise InvalidArgumentError(f"learning rate must be non-negative, got {lr}")
    expected_steps = local_update_count(epochs, shard.size, batch_size)

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    current = start.copy()
    steps = 0
    for _ in range(epochs):
        order = rng.permutation(shard.size)
        for begin in range(0, shard.size, batch_size):
            batch = order[begin:begin + batch_size]
            _, grad = _loss_and_grad(current, shard.features[batch], shard.labels[batch], spec)
            current = current - lr * grad
            steps += 1

    if steps != expected_steps:
        raise RuntimeError(f"local step count {steps} != expected {expected_steps}")
    if not np.all(np.isfinite(current)):
        raise InvalidArgumentError("local training diverged (non-finite parameters)")
    return LocalUpdate(params=current, delta=current - start, steps=steps)
