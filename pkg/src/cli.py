"""
命令行入口

    python run.py run      --config cfg.json [--out DIR] [--seed S] [--strategy NAME] [--set a.b=v ...] [--eval-every N]
    python run.py compare  --config cfg.json --strategies proposed_two_phase,random --seeds 1,2,3 [--jobs J]
    python run.py bound    [--alpha A --beta B --tau T ... --seeds S --rounds R]
    python run.py serve

退出码：0 成功；1 运行中失败（已写出的日志保留）；2 配置无效。
日志级别可用 --log-level 或环境变量 CFL_LOG_LEVEL 设置。
"""
import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml
from pydantic import ValidationError

from src import __version__
from src.analysis.bound import (
    bound_product_sum,
    bound_trajectory,
    empirical_check,
    make_quadratic_problem,
    step_size,
    zeta1_grid_findings,
    zeta2_readings,
)
from src.analysis.reports import (
    EVENTS_FILE,
    MANIFEST_FILE,
    EventLog,
    build_summary,
    write_run_outputs,
)
from src.config import config, setup_logging
from src.database import RunHistoryDB, db_manager
from src.errors import ConfigError
from src.graph.orchestrator import run as run_simulation
from src.models import (
    BoundParams,
    ExperimentConfig,
    LRSchedule,
    RunManifest,
    RunStatus,
    RunSummary,
    StrategyKind,
)
from src.utils import generate_run_id, write_csv, write_json


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

COMPARISON_COLUMNS = [
    "strategy", "seed", "status", "first_split_round", "accuracy_gap", "rounds_to_all_stopped",
    "total_simulated_time", "adjusted_rand_index", "rounds_completed", "stop_reason",
]
_NUMERIC_COLUMNS = COMPARISON_COLUMNS[3:9]


# 配置加载

def _key_line(text: str, loc: Sequence[Any]) -> Optional[int]:
    """在 JSON 文本中定位某个键所在的行号（JSON 是 YAML 的子集，用 yaml.compose 取位置）"""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                if key_node.value == str(part):
                    line, node = key_node.start_mark.line + 1, value_node
                    break
            else:
                return line
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def apply_override(data: Dict[str, Any], assignment: str) -> None:
    """--set a.b=value，value 按 YAML 标量解析"""
    if "=" not in assignment:
        raise ConfigError([f"--set {assignment}: expected key=value"])
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError([f"--set {assignment}: empty key"])
    target = data
    for part in parts[:-1]:
        child = target.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError([f"--set {assignment}: '{part}' is not a section"])
        target = child
    target[parts[-1]] = yaml.safe_load(raw) if raw.strip() else None


def load_experiment_config(path: Optional[str], overrides: Sequence[str] = (),
                           strategy: Optional[str] = None, seed: Optional[int] = None,
                           eval_every: Optional[int] = None) -> ExperimentConfig:
    """读取 JSON 实验配置并校验；所有问题汇总成带行号的诊断信息抛出 ConfigError"""
    text, source = "{}", "<defaults>"
    if path:
        source = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError([f"{source}: cannot read config: {e.strerror}"]) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"{source}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}"]) from e
    if not isinstance(data, dict):
        raise ConfigError([f"{source}:1: the config must be a JSON object"])

    for assignment in overrides:
        apply_override(data, assignment)
    if strategy is not None:
        data["strategy"] = strategy
    if seed is not None:
        data["seed"] = seed
    if eval_every is not None:
        data["eval_every"] = eval_every

    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        diagnostics = []
        for error in e.errors():
            loc = [p for p in error["loc"]]
            dotted = ".".join(str(p) for p in loc) or "<root>"
            line = _key_line(text, loc)
            where = f"{source}:{line}" if line is not None else f"{source}"
            message = "unknown key" if error["type"] == "extra_forbidden" else error["msg"]
            diagnostics.append(f"{where}: {dotted}: {message}")
        raise ConfigError(diagnostics) from e


# 单次运行

@dataclass
class RunOutcome:
    exit_code: int
    run_id: str
    out_dir: Path
    summary: Optional[RunSummary]
    manifest: RunManifest


def _register(run_id: str, **fields) -> None:
    """运行历史入库；数据库不可用时只记录警告"""
    try:
        db_manager.init_db()
        with db_manager.get_session() as session:
            if RunHistoryDB.get_by_id(session, run_id):
                RunHistoryDB.update(session, run_id, **fields)
            else:
                RunHistoryDB.create(session, id=run_id, **fields)
    except Exception as e:
        logger.warning("⚠️  运行历史写入失败: %s", e)


def execute_run(cfg: ExperimentConfig, out_dir: Path, run_id: Optional[str] = None,
                kind: str = "run", register: bool = True) -> RunOutcome:
    """跑一次仿真并写出 events.jsonl / summary.json / metrics.csv / manifest.json"""
    run_id = run_id or generate_run_id()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started_at = datetime.now()
    started = time.perf_counter()
    if register:
        _register(run_id, kind=kind, strategy=cfg.strategy.value, seed=cfg.seed, status=RunStatus.running.value,
                  output_dir=str(out_dir), started_at=started_at, config_json=cfg.model_dump_json())

    artifacts = {"events": EVENTS_FILE}
    summary = None
    error = None
    try:
        with EventLog(out_dir / EVENTS_FILE) as event_log:
            result = run_simulation(cfg, on_record=event_log)
        summary = build_summary(cfg, result)
        artifacts = write_run_outputs(out_dir, summary, result.records)
        status, exit_code = RunStatus.completed, EXIT_OK
    except Exception as e:
        logger.exception("❌ 运行失败: %s", e)
        status, exit_code, error = RunStatus.failed, EXIT_RUNTIME, f"{type(e).__name__}: {e}"

    elapsed = time.perf_counter() - started
    manifest = RunManifest(
        run_id=run_id,
        status=status,
        seed=cfg.seed,
        code_version=__version__,
        config=cfg,
        artifacts=artifacts,
        wall_clock_sec=elapsed,
        error=error,
    )
    write_json(out_dir / MANIFEST_FILE, manifest.model_dump(mode="json"))

    if register:
        fields = dict(status=status.value, ended_at=datetime.now(), duration_sec=elapsed, error=error)
        if summary is not None:
            fields.update(
                rounds_completed=summary.rounds_completed,
                first_split_round=summary.first_split_round,
                rounds_to_all_stopped=summary.rounds_to_all_stopped,
                accuracy_gap=summary.accuracy.gap,
                adjusted_rand_index=summary.adjusted_rand_index,
                simulated_time=summary.total_simulated_time,
            )
        _register(run_id, **fields)
    return RunOutcome(exit_code, run_id, out_dir, summary, manifest)


def cmd_run(args) -> int:
    try:
        cfg = load_experiment_config(args.config, args.set or [], args.strategy, args.seed, args.eval_every)
    except ConfigError as e:
        for line in e.diagnostics:
            print(f"❌ {line}", file=sys.stderr)
        return EXIT_CONFIG

    run_id = generate_run_id()
    out_dir = Path(args.out) if args.out else Path(config.runs_path) / run_id
    outcome = execute_run(cfg, out_dir, run_id=run_id)
    if outcome.summary is not None:
        s = outcome.summary
        logger.info("📄 %s: 首次分裂=%s, ARI=%.3f, 准确率差距=%.3f, 输出=%s",
                    run_id, s.first_split_round, s.adjusted_rand_index, s.accuracy.gap, out_dir)
    return outcome.exit_code


# 对比实验

def _cell_worker(cfg_json: str, out_dir: str, log_level: str) -> dict:
    setup_logging(level=log_level)
    cfg = ExperimentConfig.model_validate_json(cfg_json)
    outcome = execute_run(cfg, Path(out_dir), kind="compare", register=False)
    return {
        "exit_code": outcome.exit_code,
        "run_id": outcome.run_id,
        "manifest": outcome.manifest.model_dump(mode="json"),
        "summary": outcome.summary.model_dump(mode="json") if outcome.summary else None,
    }


def _comparison_row(strategy: str, seed: int, cell: dict) -> Dict[str, Any]:
    summary = cell["summary"]
    if summary is None:
        return {"strategy": strategy, "seed": seed, "status": RunStatus.failed.value}
    return {
        "strategy": strategy,
        "seed": seed,
        "status": RunStatus.completed.value,
        "first_split_round": summary["first_split_round"],
        "accuracy_gap": summary["accuracy"]["gap"],
        "rounds_to_all_stopped": summary["rounds_to_all_stopped"],
        "total_simulated_time": summary["total_simulated_time"],
        "adjusted_rand_index": summary["adjusted_rand_index"],
        "rounds_completed": summary["rounds_completed"],
        "stop_reason": summary["stop_reason"],
    }


def summarize_comparison(rows: List[Dict[str, Any]]) -> Dict[str, Any]:
    """每个策略各数值列的均值/标准差（总体标准差，忽略缺失值）"""
    result: Dict[str, Any] = {}
    for strategy in dict.fromkeys(row["strategy"] for row in rows):
        subset = [row for row in rows if row["strategy"] == strategy]
        stats: Dict[str, Any] = {"cells": len(subset),
                                 "failed": sum(1 for row in subset if row["status"] != "completed")}
        for column in _NUMERIC_COLUMNS:
            values = [row.get(column) for row in subset if row.get(column) is not None]
            stats[column] = {
                "n": len(values),
                "mean": float(np.mean(values)) if values else None,
                "std": float(np.std(values)) if values else None,
            }
        result[strategy] = stats
    return result


def _parse_list(raw: Optional[Sequence[str]], cast) -> List:
    items = []
    for chunk in raw or []:
        items.extend(cast(part.strip()) for part in chunk.split(",") if part.strip())
    return items


def cmd_compare(args) -> int:
    try:
        base = load_experiment_config(args.config, args.set or [], None, None, args.eval_every)
        strategies = [StrategyKind(s).value for s in _parse_list(args.strategies, str)] or \
            [StrategyKind.proposed_two_phase.value, StrategyKind.random.value]
        seeds = _parse_list(args.seeds, int) or [base.seed]
        cells = [(s, seed) for s in strategies for seed in seeds]
        cell_configs = {
            cell: base.model_copy(update={"strategy": StrategyKind(cell[0]), "seed": cell[1]})
            for cell in dict.fromkeys(cells)
        }
        for cfg in cell_configs.values():
            ExperimentConfig.model_validate(cfg.model_dump())
    except (ConfigError, ValueError) as e:
        diagnostics = e.diagnostics if isinstance(e, ConfigError) else [str(e)]
        for line in diagnostics:
            print(f"❌ {line}", file=sys.stderr)
        return EXIT_CONFIG

    out_root = Path(args.out) if args.out else Path(config.runs_path) / generate_run_id()
    out_root.mkdir(parents=True, exist_ok=True)
    logger.info("🧮 对比实验: %d 个策略 × %d 个种子 -> %s", len(strategies), len(seeds), out_root)

    level = logging.getLevelName(logging.getLogger().level)
    jobs = []
    for (strategy, seed), cfg in cell_configs.items():
        cell_dir = out_root / strategy / f"seed-{seed}"
        jobs.append(((strategy, seed), (cfg.model_dump_json(), str(cell_dir), level)))

    results: Dict[tuple, dict] = {}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {cell: pool.submit(_cell_worker, *payload) for cell, payload in jobs}
            for cell, future in futures.items():
                results[cell] = future.result()
    else:
        for cell, payload in jobs:
            results[cell] = _cell_worker(*payload)

    # 子进程不写数据库，统一在这里登记
    for (strategy, seed), cell in results.items():
        summary = cell["summary"]
        manifest = cell["manifest"]
        fields = dict(kind="compare", strategy=strategy, seed=seed, status=manifest["status"],
                      output_dir=str(out_root / strategy / f"seed-{seed}"), started_at=datetime.now(),
                      ended_at=datetime.now(), duration_sec=manifest["wall_clock_sec"], error=manifest["error"],
                      config_json=json.dumps(manifest["config"], sort_keys=True))
        if summary is not None:
            fields.update(rounds_completed=summary["rounds_completed"],
                          first_split_round=summary["first_split_round"],
                          rounds_to_all_stopped=summary["rounds_to_all_stopped"],
                          accuracy_gap=summary["accuracy"]["gap"],
                          adjusted_rand_index=summary["adjusted_rand_index"],
                          simulated_time=summary["total_simulated_time"])
        _register(cell["run_id"], **fields)

    rows = [_comparison_row(strategy, seed, results[(strategy, seed)]) for strategy, seed in cells]
    write_csv(out_root / "comparison.csv", COMPARISON_COLUMNS,
              [[row.get(c) for c in COMPARISON_COLUMNS] for row in rows])
    write_json(out_root / "comparison_summary.json", {
        "strategies": strategies,
        "seeds": seeds,
        "by_strategy": summarize_comparison(rows),
    })
    failed = sum(1 for row in rows if row["status"] != "completed")
    logger.info("📊 对比完成: %d 行, 失败 %d", len(rows), failed)
    return EXIT_RUNTIME if failed else EXIT_OK


# 收敛界

def cmd_bound(args) -> int:
    taus = _parse_list(args.tau, int) or [1, 5, 10]
    try:
        params_by_tau = {
            tau: BoundParams(alpha=args.alpha, beta=args.beta, tau=tau, rho2=args.rho2,
                             heterogeneity=args.heterogeneity_constant,
                             lr_schedule=LRSchedule(args.schedule), lr_decay=args.decay)
            for tau in taus
        }
    except ValueError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out) if args.out else Path(config.runs_path) / f"bound_{generate_run_id()[4:]}"
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        problem = make_quadratic_problem(args.clients, args.dim, args.alpha, args.beta,
                                         args.heterogeneity, args.noise, seed=args.seed)
        csv_rows, reports = [], []
        for tau, params in params_by_tau.items():
            report = empirical_check(problem, params, args.rounds, args.seeds, slack=args.slack,
                                     base_seed=args.seed)
            w0_dist = report.rows[0].bound
            recursive = bound_trajectory(w0_dist, report.params, args.rounds)
            direct = bound_product_sum(w0_dist, report.params, args.rounds)
            scale = np.maximum(np.abs(direct), np.finfo(np.float64).tiny)
            eta_0 = step_size(args.alpha, tau)
            eta_last = step_size(args.alpha, tau, max(args.rounds - 1, 0), params.lr_schedule, params.lr_decay)
            entry = report.model_dump(mode="json")
            entry["form_max_relative_difference"] = float(np.max(np.abs(recursive - direct) / scale))
            entry["zeta2_readings_last_round"] = zeta2_readings(args.alpha, eta_last, tau, report.rho2,
                                                            report.heterogeneity, eta_0)
            reports.append(entry)
            csv_rows.extend([tau, row.round, row.empirical, row.bound, row.loss_gap, row.loss_bound]
                            for row in report.rows)

        write_csv(out_dir / "bound.csv", ["tau", "round", "empirical", "bound", "loss_gap", "loss_bound"], csv_rows)
        write_json(out_dir / "bound_report.json", {
            "code_version": __version__,
            "reports": reports,
            "total_violations": sum(r["violations"] for r in reports),
            "zeta1_findings": zeta1_grid_findings([args.alpha, args.beta], taus),
        })
    except Exception as e:
        logger.exception("❌ 收敛界验证失败: %s", e)
        return EXIT_RUNTIME
    logger.info("📈 收敛界报告: %s", out_dir)
    return EXIT_OK


# 服务

def cmd_serve(args) -> int:
    import uvicorn

    print("=" * 60)
    print("📡 EdgeCFL Simulation Service")
    print("=" * 60)
    print("\n📋 配置信息:")
    print(f"   - 主机: {config.server_host}")
    print(f"   - 端口: {config.server_port}")
    print(f"   - 热重载: {config.server_reload}")
    print(f"   - 日志级别: {config.log_level}")
    print(f"   - 数据库: {config.database_url}")
    print("\n📝 API 文档:")
    print(f"   - Swagger UI: http://localhost:{config.server_port}/docs")
    print("\n" + "=" * 60 + "\n")

    uvicorn.run(
        "src.server:app",
        host=args.host or config.server_host,
        port=args.port or config.server_port,
        reload=config.server_reload,
        log_level=config.log_level.lower(),
        timeout_keep_alive=120,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="run.py", description="EdgeCFL 无线边缘聚类联邦学习仿真器")
    parser.add_argument("--log-level", default=None, help="日志级别（默认取 CFL_LOG_LEVEL 或 config.yaml）")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config", default=None, help="JSON 实验配置文件（缺省使用内置默认值）")
        p.add_argument("--out", default=None, help="输出目录（默认 storage.runs_path 下新建）")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="覆盖配置项，可重复，如 --set data.num_clients=10")
        p.add_argument("--eval-every", type=int, default=None, help="每隔多少轮在测试集上评估一次")

    p_run = sub.add_parser("run", help="单次仿真")
    experiment_flags(p_run)
    p_run.add_argument("--seed", type=int, default=None, help="主种子（64 位无符号整数）")
    p_run.add_argument("--strategy", default=None, choices=[s.value for s in StrategyKind])
    p_run.set_defaults(handler=cmd_run)

    p_cmp = sub.add_parser("compare", help="策略 × 种子 的对比实验")
    experiment_flags(p_cmp)
    p_cmp.add_argument("--strategies", action="append", help="逗号分隔，可重复")
    p_cmp.add_argument("--seeds", action="append", help="逗号分隔，可重复")
    p_cmp.add_argument("--jobs", type=int, default=1, help="并行进程数")
    p_cmp.set_defaults(handler=cmd_compare)

    p_bound = sub.add_parser("bound", help="二次型问题上验证收敛界")
    p_bound.add_argument("--out", default=None)
    p_bound.add_argument("--alpha", type=float, default=1.0)
    p_bound.add_argument("--beta", type=float, default=1.8)
    p_bound.add_argument("--tau", action="append", help="本地步数，逗号分隔或重复（默认 1,5,10）")
    p_bound.add_argument("--seeds", type=int, default=50)
    p_bound.add_argument("--rounds", type=int, default=100)
    p_bound.add_argument("--dim", type=int, default=10)
    p_bound.add_argument("--clients", type=int, default=10)
    p_bound.add_argument("--noise", type=float, default=0.1, help="梯度噪声标准差 σ")
    p_bound.add_argument("--heterogeneity", type=float, default=0.5, help="各客户端最优点 c_k 的离散程度")
    p_bound.add_argument("--heterogeneity-constant", type=float, default=None, help="𝔉，缺省为实测值")
    p_bound.add_argument("--rho2", type=float, default=None, help="ϱ²，缺省为实测值")
    p_bound.add_argument("--slack", type=float, default=1.05)
    p_bound.add_argument("--schedule", default=LRSchedule.constant.value, choices=[s.value for s in LRSchedule])
    p_bound.add_argument("--decay", type=float, default=0.0)
    p_bound.add_argument("--seed", type=int, default=0)
    p_bound.set_defaults(handler=cmd_bound)

    p_serve = sub.add_parser("serve", help="启动 HTTP 服务")
    p_serve.add_argument("--host", default=None)
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(level=args.log_level)
    return args.handler(args)
