"""
工具函数
"""
import csv
import json
import uuid
import zlib
from pathlib import Path
from typing import Any, Iterable, List, Sequence

import numpy as np


SEED_MASK = (1 << 64) - 1


def generate_run_id() -> str:
    """生成运行ID"""
    return f"run_{uuid.uuid4().hex[:16]}"


def tag_code(tag: str) -> int:
    """模块标签 -> 稳定的32位整数（跨进程不变，不能用内置 hash）"""
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(master_seed: int, tag: str, *ids: int) -> np.random.SeedSequence:
    """
    随机流划分方案

    每个随机流由 (主种子, 模块标签, 客户端ID, 轮次...) 唯一确定:
        SeedSequence([master & (2^64-1), crc32(tag), id_1, id_2, ...])
    与执行顺序无关，因此串行/并行结果一致。
    """
    entropy = [int(master_seed) & SEED_MASK, tag_code(tag)]
    for value in ids:
        if value < 0:
            raise ValueError(f"stream ids must be non-negative, got {value}")
        entropy.append(int(value))
    return np.random.SeedSequence(entropy)


def derive_rng(master_seed: int, tag: str, *ids: int) -> np.random.Generator:
    """按划分方案得到独立的 numpy Generator"""
    return np.random.default_rng(seed_sequence(master_seed, tag, *ids))


def write_json(path: Path, payload: Any) -> Path:
    """写 JSON 文件（排序键，保证字节级可复现）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """写 CSV 文件，None 写成空字符串"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if value is None else value for value in row])
    return path


def read_csv(path: Path) -> List[dict]:
    """读 CSV 为字典列表"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
