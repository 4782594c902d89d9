"""
结果报表：准确率矩阵、ARI、运行摘要、事件日志与指标 CSV
"""
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from sklearn.metrics import adjusted_rand_score

from src.graph.orchestrator import SimulationResult, first_split_round
from src.learning import FederatedDataset, ModelSpec, accuracy
from src.models import AccuracyReport, ExperimentConfig, RoundRecord, RunSummary
from src.utils import write_csv, write_json


logger = logging.getLogger(__name__)

EVENTS_FILE = "events.jsonl"
SUMMARY_FILE = "summary.json"
METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.json"


def accuracy_report(models: Dict[str, np.ndarray], dataset: FederatedDataset,
                    spec: Optional[ModelSpec] = None) -> AccuracyReport:
    """
    每个最终模型在每个客户端测试集上的准确率

    best_accuracy[k] 为客户端 k 在所有模型中的最高准确率（同分取先出现的模型），
    gap = max_k best − min_k best。
    """
    spec = spec or dataset.spec
    names = list(models)
    clients = dataset.client_ids
    matrix = [[accuracy(models[name], dataset.test[cid], spec) for cid in clients] for name in names]

    best_accuracy: Dict[int, float] = {}
    best_model: Dict[int, str] = {}
    for j, cid in enumerate(clients):
        i = int(np.argmax([row[j] for row in matrix]))
        best_accuracy[cid] = matrix[i][j]
        best_model[cid] = names[i]
    values = list(best_accuracy.values())
    return AccuracyReport(
        models=names,
        clients=clients,
        matrix=matrix,
        best_accuracy=best_accuracy,
        best_model=best_model,
        gap=float(max(values) - min(values)),
    )


def adjusted_rand_index(partition: List[List[int]], truth: List[List[int]]) -> float:
    def labels(blocks):
        return {cid: gid for gid, block in enumerate(blocks) for cid in block}

    predicted, expected = labels(partition), labels(truth)
    clients = sorted(expected)
    return float(adjusted_rand_score([expected[c] for c in clients], [predicted[c] for c in clients]))


def build_summary(cfg: ExperimentConfig, result: SimulationResult) -> RunSummary:
    report = accuracy_report(result.models, result.dataset)
    partition = result.tree.partition()
    truth = result.dataset.ground_truth_groups
    return RunSummary(
        strategy=cfg.strategy,
        seed=cfg.seed,
        rounds_completed=len(result.records),
        stop_reason=result.stop_reason,
        first_split_round=first_split_round(result.records),
        rounds_to_all_stopped=result.rounds_to_all_stopped,
        total_simulated_time=result.total_time,
        eps1=result.eps1,
        eps2=result.eps2,
        adjusted_rand_index=adjusted_rand_index(partition, truth),
        leaf_partition=partition,
        ground_truth=truth,
        tree=result.tree.snapshot(),
        accuracy=report,
    )


def record_line(record: RoundRecord) -> str:
    """JSONL 中的一行（排序键，保证逐字节可复现）"""
    return json.dumps(record.model_dump(mode="json"), sort_keys=True, ensure_ascii=False)


class EventLog:
    """逐轮追加写 events.jsonl，中途失败时已写的轮次保留在磁盘上"""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", encoding="utf-8")
        self.count = 0

    def __call__(self, record: RoundRecord) -> None:
        self._file.write(record_line(record) + "\n")
        self._file.flush()
        self.count += 1

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_events(path: Path) -> List[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def metric_rows(records: Iterable[RoundRecord]) -> List[Tuple[int, str, float]]:
    """(round, metric, value) 三元组，供绘图使用"""
    rows: List[Tuple[int, str, float]] = []
    for record in records:
        r = record.round
        rows.extend([
            (r, "num_selected", len(record.selected)),
            (r, "aggregation_sets", record.aggregation_set_count),
            (r, "deadline", record.deadline),
            (r, "cumulative_time", record.cumulative_time),
            (r, "mean_update_norm", record.mean_update_norm),
            (r, "max_update_norm", record.max_update_norm),
            (r, "num_leaves", len(record.clusters)),
        ])
        if record.eps1 is not None:
            rows.append((r, "eps1", record.eps1))
        if record.eps2 is not None:
            rows.append((r, "eps2", record.eps2))
        for gap in (e.separation_gap for e in record.events if e.separation_gap is not None):
            rows.append((r, "separation_gap", gap))
        for cluster in record.clusters:
            prefix = f"cluster-{cluster.cluster_id}"
            for name in ("train_loss", "test_accuracy", "mean_update_norm", "max_update_norm"):
                value = getattr(cluster, name)
                if value is not None:
                    rows.append((r, f"{prefix}.{name}", value))
    return rows


def write_run_outputs(out_dir: Path, summary: RunSummary, records: Iterable[RoundRecord]) -> Dict[str, str]:
    out_dir = Path(out_dir)
    write_json(out_dir / SUMMARY_FILE, summary.model_dump(mode="json"))
    write_csv(out_dir / METRICS_FILE, ["round", "metric", "value"], metric_rows(records))
    return {
        "events": EVENTS_FILE,
        "summary": SUMMARY_FILE,
        "metrics": METRICS_FILE,
    }
