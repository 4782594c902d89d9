"""
本地学习：模型、损失/梯度、小批量 SGD 与合成联邦数据集
"""
from src.learning.model import (
    DataShard,
    LocalUpdate,
    ModelSpec,
    accuracy,
    check_params,
    gradient,
    init_params,
    learning_rate,
    local_train,
    local_update_count,
    loss,
    param_count,
    predict,
)
from src.learning.data import (
    FederatedDataset,
    generate,
    load_dataset,
    save_dataset,
    split,
)

__all__ = [
    "DataShard",
    "FederatedDataset",
    "LocalUpdate",
    "ModelSpec",
    "accuracy",
    "check_params",
    "generate",
    "gradient",
    "init_params",
    "learning_rate",
    "load_dataset",
    "local_train",
    "local_update_count",
    "loss",
    "param_count",
    "predict",
    "save_dataset",
    "split",
]
