"""
合成联邦数据集测试
"""
import numpy as np
import pytest
from scipy.stats import chi2_contingency

from src.errors import InvalidArgumentError
from src.learning import DataShard, generate, load_dataset, save_dataset, split
from src.models import DataConfig, SizeLaw


def test_ground_truth_groups_round_robin():
    dataset = generate(DataConfig(num_clients=15, num_groups=3), seed=1)
    assert dataset.ground_truth_groups == [
        [0, 3, 6, 9, 12],
        [1, 4, 7, 10, 13],
        [2, 5, 8, 11, 14],
    ]
    assert [len(g) for g in dataset.ground_truth_groups] == [5, 5, 5]
    assert dataset.ground_truth_labels()[:4] == [0, 1, 2, 0]


def test_groups_get_distinct_label_sets(tiny_data_config):
    dataset = generate(tiny_data_config, seed=4)
    label_sets = [frozenset(labels) for labels in dataset.group_labels]
    assert len(set(label_sets)) == tiny_data_config.num_groups
    for cid in dataset.client_ids:
        seen = set(dataset.train[cid].labels.tolist()) | set(dataset.test[cid].labels.tolist())
        assert seen <= set(dataset.group_labels[dataset.group_of(cid)])


def test_permutation_fallback_when_label_sets_run_out():
    cfg = DataConfig(num_clients=4, num_groups=2, num_classes=2, classes_per_client=2,
                     min_samples=10, max_samples=20)
    dataset = generate(cfg, seed=0)
    first, second = dataset.group_labels
    assert sorted(first) == sorted(second) == [0, 1]
    assert first != second


def test_infeasible_group_count_rejected():
    cfg = DataConfig(num_clients=3, num_groups=3, num_classes=2, classes_per_client=2,
                     min_samples=10, max_samples=20)
    with pytest.raises(InvalidArgumentError):
        generate(cfg, seed=0)


@pytest.mark.parametrize("law", [SizeLaw.power_law, SizeLaw.uniform])
def test_sizes_respect_bounds(law):
    cfg = DataConfig(num_clients=12, num_groups=2, size_law=law, min_samples=30, max_samples=90)
    dataset = generate(cfg, seed=9)
    for cid in dataset.client_ids:
        total = dataset.train[cid].size + dataset.test[cid].size
        assert 30 <= total <= 90


def test_generation_is_deterministic(tiny_data_config):
    a = generate(tiny_data_config, seed=12)
    b = generate(tiny_data_config, seed=12)
    c = generate(tiny_data_config, seed=13)
    for cid in a.client_ids:
        assert np.array_equal(a.train[cid].features, b.train[cid].features)
        assert np.array_equal(a.test[cid].labels, b.test[cid].labels)
    first = a.client_ids[0]
    assert a.train[first].features.shape != c.train[first].features.shape or \
        not np.array_equal(a.train[first].features, c.train[first].features)


def test_same_group_clients_share_label_distribution():
    """同组客户端只存在采样噪声，标签计数不应显著不同"""
    dataset = generate(DataConfig(num_clients=4, num_groups=2, min_samples=400, max_samples=400), seed=21)
    group = dataset.ground_truth_groups[0]
    labels = sorted(dataset.group_labels[0])
    table = [[int(np.sum(dataset.train[cid].labels == label)) for label in labels] for cid in group]
    _, p_value, _, _ = chi2_contingency(table)
    assert p_value > 1e-4


def test_split_counts():
    shard = DataShard(np.arange(200.0).reshape(100, 2), np.zeros(100, dtype=int))
    train, test = split(shard, 0.8, seed=0)
    assert (train.size, test.size) == (80, 20)

    tiny = DataShard(np.zeros((2, 1)), np.array([0, 1]))
    train, test = split(tiny, 0.99, seed=0)
    assert (train.size, test.size) == (1, 1)


def test_split_is_stratified():
    labels = np.array([0] * 6 + [1] * 4)
    shard = DataShard(np.arange(10.0).reshape(10, 1), labels)
    train, test = split(shard, 0.5, seed=3)
    assert sorted(train.labels.tolist()) == [0, 0, 0, 1, 1]
    assert sorted(test.labels.tolist()) == [0, 0, 0, 1, 1]
    merged = sorted(train.features.ravel().tolist() + test.features.ravel().tolist())
    assert merged == list(range(10))


def test_split_rejects_bad_fraction():
    shard = DataShard(np.zeros((4, 1)), np.zeros(4, dtype=int))
    with pytest.raises(InvalidArgumentError):
        split(shard, 1.0)
    with pytest.raises(InvalidArgumentError):
        split(DataShard(np.zeros((1, 1)), np.zeros(1, dtype=int)), 0.5)


def test_save_and_load(tmp_path, tiny_data_config):
    dataset = generate(tiny_data_config, seed=2)
    path = save_dataset(dataset, tmp_path / "dataset.json")
    loaded = load_dataset(path)
    assert loaded.spec == dataset.spec
    assert loaded.ground_truth_groups == dataset.ground_truth_groups
    for cid in dataset.client_ids:
        np.testing.assert_array_equal(loaded.train[cid].features, dataset.train[cid].features)
        np.testing.assert_array_equal(loaded.test[cid].labels, dataset.test[cid].labels)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.json"
    path.write_text('{"format": "something-else", "version": 1}', encoding="utf-8")
    with pytest.raises(InvalidArgumentError):
        load_dataset(path)
