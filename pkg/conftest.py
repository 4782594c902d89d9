"""
测试公共夹具：小规模配置与临时数据库
"""
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.database import DatabaseManager  # noqa: E402
from src.models import DataConfig, ExperimentConfig, TrainingConfig  # noqa: E402


TINY_DATA = dict(
    num_clients=6,
    num_groups=2,
    num_classes=4,
    input_dim=5,
    classes_per_client=2,
    min_samples=20,
    max_samples=40,
)


@pytest.fixture
def tiny_data_config() -> DataConfig:
    return DataConfig(**TINY_DATA)


@pytest.fixture
def tiny_experiment() -> ExperimentConfig:
    """几轮就能跑完的实验配置"""
    return ExperimentConfig(
        seed=3,
        rounds=3,
        data=DataConfig(**TINY_DATA),
        training=TrainingConfig(epochs=2, batch_size=8, learning_rate=0.05),
    )


@pytest.fixture
def tiny_config_dict() -> dict:
    return {
        "seed": 3,
        "rounds": 2,
        "data": dict(TINY_DATA),
        "training": {"epochs": 1, "batch_size": 8, "learning_rate": 0.05},
    }


@pytest.fixture
def temp_db(tmp_path, monkeypatch) -> DatabaseManager:
    """所有模块共用的临时 SQLite 数据库"""
    manager = DatabaseManager(f"sqlite:///{tmp_path / 'history.db'}", echo=False)
    manager.init_db()
    for target in ("src.cli.db_manager", "src.api.runs.db_manager",
                   "src.api.history.db_manager", "src.server.db_manager"):
        monkeypatch.setattr(target, manager)
    return manager
