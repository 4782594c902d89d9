"""
HTTP 接口测试（TestClient，临时数据库与输出目录）
"""
import asyncio
import json
from datetime import datetime

import pytest
from fastapi.testclient import TestClient

from src.api.runs import replay_events
from src.config import Config
from src.database import RunHistoryDB


@pytest.fixture
def client(tmp_path, monkeypatch, temp_db):
    monkeypatch.setattr(Config, "runs_path", property(lambda self: str(tmp_path / "runs")))
    from src.server import app

    with TestClient(app) as test_client:
        yield test_client


def test_root_and_health(client):
    assert client.get("/").json()["status"] == "running"
    health = client.get("/health").json()
    assert health["status"] == "healthy"
    assert health["services"]["database"] == "operational"


def test_submit_and_fetch_run(client, tiny_config_dict):
    response = client.post("/runs", json={"config": tiny_config_dict, "strategy": "random", "seed": 8})
    assert response.status_code == 202
    run_id = response.json()["runId"]

    # TestClient 在返回前已执行完后台任务
    result = client.get(f"/runs/{run_id}").json()
    assert result["status"] == "completed"
    assert result["summary"]["strategy"] == "random"
    assert result["summary"]["seed"] == 8
    assert result["manifest"]["artifacts"]["events"] == "events.jsonl"

    history = client.get("/history").json()
    assert [item["id"] for item in history] == [run_id]
    assert history[0]["status"] == "completed"
    assert client.get(f"/history/{run_id}").json()["roundsCompleted"] == 2

    stats = client.get("/history/statistics").json()
    assert stats["total_runs"] == 1
    assert stats["by_strategy"]["random"]["runs"] == 1

    assert client.delete(f"/history/{run_id}").json()["success"] is True
    assert client.get(f"/history/{run_id}").status_code == 404


def test_clear_history(client, temp_db):
    with temp_db.get_session() as session:
        for seed in (1, 2):
            RunHistoryDB.create(session, strategy="random", seed=seed, status="completed", started_at=datetime.now())
    assert client.delete("/history").json() == {"success": True, "deleted": 2}
    assert client.get("/history").json() == []
    assert client.delete("/history").json()["deleted"] == 0


def test_invalid_config_rejected(client):
    response = client.post("/runs", json={"config": {"data": {"bogus": 1}}})
    assert response.status_code == 422


def test_unknown_run(client):
    assert client.get("/runs/run_doesnotexist").status_code == 404
    assert client.get("/runs/run_doesnotexist/events").status_code == 404
    assert client.get("/runs/bad!id").status_code == 400


def test_replay_events_streams_each_line(tmp_path):
    path = tmp_path / "events.jsonl"
    path.write_text('{"round": 1}\n{"round": 2}\n', encoding="utf-8")

    async def collect():
        return [event async for event in replay_events(path)]

    events = asyncio.run(collect())
    assert [e["event"] for e in events] == ["round", "round", "end"]
    assert json.loads(events[1]["data"]) == {"round": 2}
