"""
CFL 数值核心与参数树测试
"""
import itertools
import math

import numpy as np
import pytest

from src.clustering import (
    ClusterTree,
    bipartition,
    cosine_similarity,
    federated_average,
    gamma_check,
    mean_update_norm,
    separation_gap,
    similarity_matrix,
    split_conditions,
    stopping_check,
)
from src.errors import DegenerateUpdateError, InvalidArgumentError, SizeLimitError
from src.models import ClusterStatus, GammaReference


def _brute_force(sim):
    """独立的穷举：枚举所有包含 0 的 c1，取最大跨组相似度最小者，同值取字典序最小"""
    n = sim.shape[0]
    best = None
    for size in range(1, n):
        for rest in itertools.combinations(range(1, n), size - 1):
            c1 = [0] + list(rest)
            c2 = [j for j in range(n) if j not in c1]
            cost = max(sim[i, j] for i in c1 for j in c2)
            if best is None or cost < best[0] or (cost == best[0] and c1 < best[1]):
                best = (cost, c1, c2)
    return best


def _block_similarity(blocks, within=1.0, cross=-1.0):
    n = sum(len(b) for b in blocks)
    sim = np.full((n, n), cross)
    for block in blocks:
        for i in block:
            for j in block:
                sim[i, j] = within
    np.fill_diagonal(sim, 1.0)
    return sim


def test_federated_average_examples():
    np.testing.assert_allclose(federated_average([(np.array([1.0, 3.0]), 5), (np.array([3.0, 1.0]), 5)]), [2, 2])
    np.testing.assert_allclose(federated_average([(np.array([0.0, 0.0]), 1), (np.array([4.0, 4.0]), 3)]), [3, 3])
    np.testing.assert_allclose(federated_average({7: (np.array([1.5, -2.0]), 9)}), [1.5, -2.0])


def test_federated_average_rejects_mismatch():
    with pytest.raises(InvalidArgumentError):
        federated_average([(np.zeros(2), 1), (np.zeros(3), 1)])
    with pytest.raises(InvalidArgumentError):
        federated_average([])


def test_federated_average_mapping_order_is_fixed():
    rng = np.random.default_rng(0)
    items = {cid: (rng.standard_normal(50), float(rng.integers(1, 100))) for cid in range(8)}
    reversed_items = {cid: items[cid] for cid in reversed(list(items))}
    assert np.array_equal(federated_average(items), federated_average(reversed_items))


def test_cosine_similarity_examples():
    v = np.array([1.0, 2.0, -0.5])
    assert cosine_similarity(v, v) == pytest.approx(1.0)
    assert cosine_similarity(v, -v) == pytest.approx(-1.0)
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    with pytest.raises(DegenerateUpdateError):
        cosine_similarity(v, np.zeros(3))


def test_cosine_similarity_scale_invariant():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(20), rng.standard_normal(20)
    assert abs(cosine_similarity(3.0 * a, 0.25 * b) - cosine_similarity(a, b)) < 1e-12


def test_similarity_matrix_is_symmetric_with_unit_diagonal():
    updates = np.random.default_rng(2).standard_normal((6, 10))
    sim = similarity_matrix(updates)
    assert np.array_equal(sim, sim.T)
    assert np.all(np.diag(sim) == 1.0)
    assert np.all(np.abs(sim) <= 1.0)
    assert sim[0, 3] == pytest.approx(cosine_similarity(updates[0], updates[3]))


def test_split_conditions():
    assert split_conditions(0.0, [0.0, 0.0], eps1=0.4, eps2=1.6) is False
    assert split_conditions(0.0, [5.0, 5.0], eps1=0.4, eps2=1.6) is True
    assert split_conditions(0.4, [5.0, 5.0], eps1=0.4, eps2=1.6) is False
    assert split_conditions(0.1, [1.6, 1.6], eps1=0.4, eps2=1.6) is False
    with pytest.raises(InvalidArgumentError):
        split_conditions(0.1, [1.0], eps1=0.4, eps2=0.0)


def test_stopping_check():
    assert stopping_check([0.0, 0.0], eps2=0.1) is True
    assert stopping_check([0.05, 0.1], eps2=0.1) is False
    with pytest.raises(InvalidArgumentError):
        stopping_check([], eps2=0.1)


def test_mean_update_norm_of_opposite_updates_is_zero():
    assert mean_update_norm(np.array([[1.0, 2.0], [-1.0, -2.0]])) == 0.0


def test_bipartition_block_example():
    result = bipartition(_block_similarity([[0, 1], [2, 3]]))
    assert (result.c1, result.c2) == ([0, 1], [2, 3])
    assert result.sim_cross_max == -1.0


def test_bipartition_all_similar_has_cross_max_one():
    result = bipartition(np.ones((4, 4)))
    assert result.sim_cross_max == 1.0
    assert result.c1 == [0]


def test_bipartition_matches_brute_force():
    rng = np.random.default_rng(3)
    for trial in range(60):
        n = int(rng.integers(2, 9))
        if trial % 2:
            # 离散取值制造大量同值
            raw = rng.choice([-1.0, -0.5, 0.0, 0.5, 1.0], size=(n, n))
        else:
            raw = rng.uniform(-1, 1, size=(n, n))
        sim = np.triu(raw, 1)
        sim = sim + sim.T
        np.fill_diagonal(sim, 1.0)
        cost, c1, c2 = _brute_force(sim)
        result = bipartition(sim)
        assert result.sim_cross_max == cost
        assert result.c1 == c1
        assert result.c2 == c2


def test_bipartition_invariant_under_rescaling():
    updates = np.random.default_rng(4).standard_normal((7, 5))
    a = bipartition(similarity_matrix(updates))
    b = bipartition(similarity_matrix(updates * np.arange(1, 8)[:, None]))
    assert (a.c1, a.c2) == (b.c1, b.c2)


def test_bipartition_size_limit():
    with pytest.raises(SizeLimitError):
        bipartition(np.eye(17))
    with pytest.raises(InvalidArgumentError):
        bipartition(np.eye(1))


def test_gamma_identical_updates():
    updates = np.tile(np.array([1.0, 2.0]), (3, 1))
    result = gamma_check(updates, [0], [1, 2], sim_cross_max=0.5)
    assert result.passed and result.max_gamma == 0.0
    assert not gamma_check(updates, [0], [1, 2], sim_cross_max=1.0).passed


@pytest.mark.parametrize("reference", [GammaReference.side, GammaReference.neighbourhood])
def test_gamma_two_group_case_passes(reference):
    updates = np.array([[1.0, 0.01], [1.0, -0.01], [-1.0, 0.01], [-1.0, -0.01]])
    split = bipartition(similarity_matrix(updates))
    assert (split.c1, split.c2) == ([0, 1], [2, 3])
    result = gamma_check(updates, split.c1, split.c2, split.sim_cross_max, reference=reference)
    assert result.threshold == pytest.approx(1.0, abs=1e-3)
    assert result.passed
    assert result.max_gamma < 0.05


def test_gamma_zero_reference_rejects():
    updates = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    result = gamma_check(updates, [0, 1], [2], sim_cross_max=0.0)
    assert not result.passed
    assert result.max_gamma is None


def test_separation_gap_examples():
    sim = _block_similarity([[0, 1], [2, 3]])
    assert separation_gap(sim, [[0, 1], [2, 3]]) == 2.0
    assert separation_gap(sim, [[0, 1, 2, 3]]) is None
    assert separation_gap(sim, [[0], [1], [2], [3]]) is None


def test_separation_gap_matches_scan():
    rng = np.random.default_rng(5)
    raw = rng.uniform(-1, 1, (6, 6))
    sim = np.triu(raw, 1) + np.triu(raw, 1).T
    np.fill_diagonal(sim, 1.0)
    partition = [[0, 2, 4], [1, 3, 5]]
    within = [sim[i, j] for block in partition for i in block for j in block if i < j]
    cross = [sim[i, j] for i in partition[0] for j in partition[1]]
    assert separation_gap(sim, partition) == pytest.approx(min(within) - max(cross))


def test_gamma_reference_on_three_groups():
    """三组更新两两成 120°：混合两组的一侧用整侧均值做参考时 γ = √3，分裂永远被拒"""
    angles = np.deg2rad([90.0, 90.0, 210.0, 210.0, 330.0, 330.0])
    updates = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    sim = similarity_matrix(updates)
    c1, c2 = [0, 1], [2, 3, 4, 5]
    cross = max(sim[i, j] for i in c1 for j in c2)
    assert cross == pytest.approx(-0.5)

    side = gamma_check(updates, c1, c2, cross, reference=GammaReference.side)
    assert side.max_gamma == pytest.approx(math.sqrt(3.0))
    assert not side.passed

    near = gamma_check(updates, c1, c2, cross, reference=GammaReference.neighbourhood, sim=sim)
    assert near.passed
    assert near.max_gamma == pytest.approx(0.0, abs=1e-12)


class TestClusterTree:
    def test_split_copies_parent_model(self):
        tree = ClusterTree([3, 1, 2, 0], np.array([1.0, 2.0]))
        left, right = tree.split(0, [0, 2], [3, 1], round_index=4)
        assert left.members == (0, 2) and right.members == (1, 3)
        assert np.array_equal(left.model, tree.root.model)
        left.model[0] = 99.0
        assert tree.root.model[0] == 1.0
        assert tree.partition() == [[0, 2], [1, 3]]
        assert left.created_round == 4 and left.parent == 0

    def test_split_rejects_bad_partitions(self):
        tree = ClusterTree(range(4), np.zeros(2))
        with pytest.raises(InvalidArgumentError):
            tree.split(0, [0, 1], [1, 2, 3], 1)
        with pytest.raises(InvalidArgumentError):
            tree.split(0, [], [0, 1, 2, 3], 1)
        tree.split(0, [0, 1], [2, 3], 1)
        with pytest.raises(InvalidArgumentError):
            tree.split(0, [0, 1], [2, 3], 2)

    def test_stopped_leaf_cannot_split(self):
        tree = ClusterTree(range(4), np.zeros(2))
        left, right = tree.split(0, [0, 1], [2, 3], 1)
        tree.stop(left.node_id, 5)
        assert left.status == ClusterStatus.stopped and left.stopped_round == 5
        assert [leaf.node_id for leaf in tree.active_leaves()] == [right.node_id]
        with pytest.raises(InvalidArgumentError):
            tree.split(left.node_id, [0], [1], 6)
        tree.stop(right.node_id, 6)
        assert tree.all_stopped()

    def test_final_models(self):
        tree = ClusterTree(range(3), np.zeros(2))
        assert list(tree.final_models()) == ["cluster-0"]
        tree.split(0, [0], [1, 2], 1)
        assert sorted(tree.final_models()) == ["cluster-1", "cluster-2", "conventional"]

    def test_leaf_of_and_snapshot(self):
        tree = ClusterTree(range(4), np.zeros(2))
        tree.split(0, [0, 3], [1, 2], 2)
        assert tree.leaf_of() == {0: 1, 3: 1, 1: 2, 2: 2}
        snapshot = tree.snapshot()
        assert [node.node_id for node in snapshot] == [0, 1, 2]
        assert snapshot[0].children == [1, 2]
