"""
合成联邦数据集

所有客户端共享同一个高斯混合特征源（classes_per_client 个分量），
每个真实分布组通过自己的标签映射把分量映射到类别，从而得到彼此不一致的
标签条件分布；同组客户端的分布完全相同（仅有采样噪声）。
客户端 k 属于第 k % M 组。
"""
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from src.errors import InvalidArgumentError
from src.learning.model import DataShard, ModelSpec
from src.models import DataConfig, SizeLaw
from src.utils import derive_rng, write_json


logger = logging.getLogger(__name__)

DATASET_FORMAT = "edge-cfl-dataset"
DATASET_VERSION = 1
_ENUMERATION_LIMIT = 20000


@dataclass
class FederatedDataset:
    spec: ModelSpec
    train: Dict[int, DataShard]
    test: Dict[int, DataShard]
    ground_truth_groups: List[List[int]]
    group_labels: List[List[int]] = field(default_factory=list)

    def __post_init__(self):
        if set(self.train) != set(self.test):
            raise InvalidArgumentError("train and test shards must cover the same clients")
        seen = [c for group in self.ground_truth_groups for c in group]
        if sorted(seen) != sorted(self.train) or len(seen) != len(set(seen)):
            raise InvalidArgumentError("ground_truth_groups must partition the client ids")
        for gid, group in enumerate(self.ground_truth_groups):
            for client in group:
                if self.train[client].distribution_id != gid:
                    raise InvalidArgumentError(f"client {client} is not labelled with group {gid}")

    @property
    def client_ids(self) -> List[int]:
        return sorted(self.train)

    @property
    def num_clients(self) -> int:
        return len(self.train)

    @property
    def shards(self) -> Dict[int, Tuple[DataShard, DataShard]]:
        return {cid: (self.train[cid], self.test[cid]) for cid in self.client_ids}

    @property
    def train_sizes(self) -> Dict[int, int]:
        """D_k：用于加权平均与计算时延"""
        return {cid: self.train[cid].size for cid in self.client_ids}

    @property
    def total_samples(self) -> int:
        return sum(self.train_sizes.values())

    def group_of(self, client_id: int) -> int:
        return self.train[client_id].distribution_id

    def ground_truth_labels(self) -> List[int]:
        return [self.group_of(cid) for cid in self.client_ids]


def _group_label_maps(num_groups: int, num_classes: int, per_client: int,
                      rng: np.random.Generator) -> List[List[int]]:
    """每组一个有序标签元组（源分量 j -> 类别）；组数允许时标签集合两两不同"""
    subsets = math.comb(num_classes, per_client)
    if subsets >= num_groups:
        if subsets <= _ENUMERATION_LIMIT:
            pool = list(itertools.combinations(range(num_classes), per_client))
            picks = [pool[i] for i in rng.choice(len(pool), size=num_groups, replace=False)]
        else:
            chosen = set()
            picks = []
            while len(picks) < num_groups:
                candidate = tuple(sorted(rng.choice(num_classes, size=per_client, replace=False).tolist()))
                if candidate not in chosen:
                    chosen.add(candidate)
                    picks.append(candidate)
        return [rng.permutation(np.array(labels)).tolist() for labels in picks]

    orderings = math.perm(num_classes, per_client)
    if orderings < num_groups:
        raise InvalidArgumentError(
            f"cannot build {num_groups} distinct label mappings from "
            f"{per_client} of {num_classes} classes"
        )
    # 标签集合不够用时退化为同一集合上的不同排列
    pool = list(itertools.permutations(range(num_classes), per_client))
    return [list(pool[i]) for i in rng.choice(len(pool), size=num_groups, replace=False)]


def _sample_sizes(cfg: DataConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.size_law == SizeLaw.power_law:
        raw = cfg.min_samples * (1.0 + rng.pareto(cfg.power_law_exponent, size=cfg.num_clients))
        sizes = np.floor(raw).astype(np.int64)
    else:
        sizes = rng.integers(cfg.min_samples, cfg.max_samples + 1, size=cfg.num_clients)
    return np.clip(sizes, cfg.min_samples, cfg.max_samples)


def split(shard: DataShard, train_fraction: float, seed=None) -> Tuple[DataShard, DataShard]:
    """
    按标签分层的训练/测试划分

    训练集总数 round(n·f) 夹到 [1, n−1]，再按最大余数法分配到各标签，
    因此每个标签的比例误差不超过 1 个样本。
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = shard.size
    if n < 2:
        raise InvalidArgumentError("a shard needs at least two samples to be split")

    total_train = min(max(int(round(n * train_fraction)), 1), n - 1)
    classes, counts = np.unique(shard.labels, return_counts=True)
    exact = counts * total_train / n
    quotas = np.floor(exact).astype(np.int64)
    remainder = exact - quotas
    # 余数大的先补，同余数按类别号
    for idx in sorted(range(len(classes)), key=lambda i: (-remainder[i], classes[i])):
        if quotas.sum() >= total_train:
            break
        quotas[idx] += 1

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label, quota in zip(classes, quotas):
        members = np.flatnonzero(shard.labels == label)
        members = members[rng.permutation(members.shape[0])]
        train_idx.append(members[:quota])
        test_idx.append(members[quota:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))

    def take(indices):
        return DataShard(shard.features[indices], shard.labels[indices], shard.distribution_id)

    return take(train_idx), take(test_idx)


def generate(cfg: DataConfig, seed: int, hidden_dim: int = 0) -> FederatedDataset:
    """按配置生成非独立同分布、不均衡的联邦数据集（同一 seed 结果逐位相同）"""
    if cfg.num_groups < 1 or cfg.num_clients < cfg.num_groups:
        raise InvalidArgumentError(
            f"need num_clients >= num_groups >= 1, got K={cfg.num_clients}, M={cfg.num_groups}"
        )
    if cfg.classes_per_client > cfg.num_classes:
        raise InvalidArgumentError("classes_per_client must not exceed num_classes")

    spec = ModelSpec(input_dim=cfg.input_dim, num_classes=cfg.num_classes, hidden_dim=hidden_dim)
    label_maps = _group_label_maps(cfg.num_groups, cfg.num_classes, cfg.classes_per_client,
                                   derive_rng(seed, "labels"))
    means = derive_rng(seed, "mixture").normal(
        0.0, cfg.class_separation, size=(cfg.classes_per_client, cfg.input_dim)
    )
    sizes = _sample_sizes(cfg, derive_rng(seed, "sizes"))

    train: Dict[int, DataShard] = {}
    test: Dict[int, DataShard] = {}
    groups: List[List[int]] = [[] for _ in range(cfg.num_groups)]
    for client in range(cfg.num_clients):
        group = client % cfg.num_groups
        groups[group].append(client)
        rng = derive_rng(seed, "data", client)
        n = int(sizes[client])
        components = rng.integers(0, cfg.classes_per_client, size=n)
        features = means[components] + cfg.noise_std * rng.standard_normal((n, cfg.input_dim))
        labels = np.asarray(label_maps[group], dtype=np.int64)[components]
        full = DataShard(features, labels, distribution_id=group)
        train[client], test[client] = split(full, cfg.train_fraction, derive_rng(seed, "split", client))

    dataset = FederatedDataset(spec=spec, train=train, test=test,
                               ground_truth_groups=groups, group_labels=label_maps)
    logger.info("🧪 生成数据集: K=%d, M=%d, D=%d, 标签映射=%s",
                cfg.num_clients, cfg.num_groups, dataset.total_samples, label_maps)
    return dataset


def _shard_to_dict(shard: DataShard) -> dict:
    return {"features": shard.features.tolist(), "labels": shard.labels.tolist()}


def save_dataset(dataset: FederatedDataset, path) -> Path:
    """导出为纯数值数组的 JSON（结构见 README）"""
    payload = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "spec": {
            "input_dim": dataset.spec.input_dim,
            "num_classes": dataset.spec.num_classes,
            "hidden_dim": dataset.spec.hidden_dim,
        },
        "ground_truth_groups": dataset.ground_truth_groups,
        "group_labels": dataset.group_labels,
        "clients": [
            {
                "client_id": cid,
                "distribution_id": dataset.group_of(cid),
                "train": _shard_to_dict(dataset.train[cid]),
                "test": _shard_to_dict(dataset.test[cid]),
            }
            for cid in dataset.client_ids
        ],
    }
    return write_json(path, payload)


def load_dataset(path) -> FederatedDataset:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != DATASET_FORMAT or payload.get("version") != DATASET_VERSION:
        raise InvalidArgumentError(f"{path} is not a version {DATASET_VERSION} dataset file")

    spec = ModelSpec(**payload["spec"])
    train: Dict[int, DataShard] = {}
    test: Dict[int, DataShard] = {}
    for entry in payload["clients"]:
        cid = int(entry["client_id"])
        gid = int(entry["distribution_id"])
        for target, key in ((train, "train"), (test, "test")):
            part = entry[key]
            features = np.asarray(part["features"], dtype=np.float64).reshape(-1, spec.input_dim)
            target[cid] = DataShard(features, np.asarray(part["labels"], dtype=np.int64), gid)
    return FederatedDataset(
        spec=spec,
        train=train,
        test=test,
        ground_truth_groups=[list(map(int, g)) for g in payload["ground_truth_groups"]],
        group_labels=payload.get("group_labels", []),
    )
