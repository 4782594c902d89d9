"""
仿真运行相关API
"""
import json
import logging
import re
from pathlib import Path as FsPath
from typing import Optional

import aiofiles
from fastapi import APIRouter, BackgroundTasks, HTTPException, Path
from pydantic import BaseModel, Field
from sse_starlette.sse import EventSourceResponse

from src.analysis.reports import EVENTS_FILE, MANIFEST_FILE, SUMMARY_FILE
from src.cli import execute_run
from src.config import config
from src.database import RunHistoryDB, db_manager
from src.models import ExperimentConfig, RunStatus, StrategyKind
from src.utils import generate_run_id


logger = logging.getLogger(__name__)

router = APIRouter()

_RUN_ID = re.compile(r"^[A-Za-z0-9_\-]{1,64}$")


class RunRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    strategy: Optional[StrategyKind] = None
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)


def _run_dir(run_id: str) -> FsPath:
    """优先用数据库里登记的输出目录，否则为 storage.runs_path/<run_id>"""
    if not _RUN_ID.match(run_id):
        raise HTTPException(status_code=400, detail="Invalid run id")
    try:
        with db_manager.get_session() as session:
            record = RunHistoryDB.get_by_id(session, run_id)
            if record and record.output_dir:
                return FsPath(record.output_dir)
    except RuntimeError:
        pass
    return FsPath(config.runs_path) / run_id


def _read_json(path: FsPath) -> Optional[dict]:
    if not path.exists():
        return None
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


@router.post("/runs", summary="提交一次仿真", status_code=202)
async def submit_run(request: RunRequest, background_tasks: BackgroundTasks):
    """
    提交仿真，在后台执行

    返回 runId，用 GET /runs/{id} 查询结果，GET /runs/{id}/events 回放逐轮日志。
    """
    update = {}
    if request.strategy is not None:
        update["strategy"] = request.strategy
    if request.seed is not None:
        update["seed"] = request.seed
    cfg = request.config.model_copy(update=update)

    run_id = generate_run_id()
    out_dir = FsPath(config.runs_path) / run_id
    background_tasks.add_task(execute_run, cfg, out_dir, run_id)
    logger.info("📥 接收仿真 %s: 策略=%s, seed=%d", run_id, cfg.strategy.value, cfg.seed)
    return {"runId": run_id, "status": RunStatus.running.value, "outputDir": str(out_dir)}


@router.get("/runs/{run_id}", summary="获取运行结果")
async def get_run(run_id: str = Path(..., description="运行ID")):
    """返回 manifest 与 summary；运行尚未结束时 summary 为空"""
    run_dir = _run_dir(run_id)
    manifest = _read_json(run_dir / MANIFEST_FILE)
    if manifest is None:
        if (run_dir / EVENTS_FILE).exists():
            return {"runId": run_id, "status": RunStatus.running.value, "manifest": None, "summary": None}
        raise HTTPException(status_code=404, detail="Run not found")
    return {
        "runId": run_id,
        "status": manifest["status"],
        "manifest": manifest,
        "summary": _read_json(run_dir / SUMMARY_FILE),
    }


async def replay_events(path: FsPath):
    """逐行读取 events.jsonl，按 SSE 事件发出"""
    async with aiofiles.open(path, "r", encoding="utf-8") as f:
        async for line in f:
            line = line.strip()
            if line:
                yield {"event": "round", "data": line}
    yield {"event": "end", "data": "{}"}


@router.get("/runs/{run_id}/events", summary="回放逐轮事件日志（SSE）")
async def get_run_events(run_id: str = Path(..., description="运行ID")):
    path = _run_dir(run_id) / EVENTS_FILE
    if not path.exists():
        raise HTTPException(status_code=404, detail="Run not found")
    return EventSourceResponse(replay_events(path))
