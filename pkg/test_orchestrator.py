"""
CFL 主循环与结果报表测试（小规模）
"""
import numpy as np
import pytest

from src.analysis.reports import (
    EventLog,
    accuracy_report,
    adjusted_rand_index,
    build_summary,
    metric_rows,
    read_events,
    record_line,
)
from src.edge import audit_decision
from src.graph.orchestrator import CFLSimulation, first_split_round, run
from src.learning import LocalUpdate, generate, init_params
from src.models import EventKind, StopReason, StrategyKind, TrainingConfig


def _lines(cfg):
    return [record_line(r) for r in run(cfg).records]


def test_zero_rounds_produces_no_records(tiny_experiment):
    result = run(tiny_experiment.model_copy(update={"rounds": 0}))
    assert result.records == []
    assert result.stop_reason == StopReason.max_rounds
    assert list(result.models) == ["cluster-0"]


def test_time_budget_drops_round_that_does_not_fit(tiny_experiment):
    result = run(tiny_experiment.model_copy(update={"time_budget": 1e-12}))
    assert result.records == []
    assert result.stop_reason == StopReason.time_budget
    assert result.total_time == 0.0


def test_runs_requested_rounds(tiny_experiment):
    result = run(tiny_experiment)
    assert [r.round for r in result.records] == [1, 2, 3]
    assert result.stop_reason in (StopReason.max_rounds, StopReason.all_stopped)
    assert result.eps1 is not None and result.eps2 == pytest.approx(1.6 * result.eps1)
    times = [r.cumulative_time for r in result.records]
    assert times == sorted(times)
    assert times[-1] == pytest.approx(sum(r.deadline for r in result.records))


def test_single_distribution_never_splits(tiny_experiment):
    cfg = tiny_experiment.model_copy(update={
        "data": tiny_experiment.data.model_copy(update={"num_groups": 1}),
    })
    result = run(cfg)
    assert first_split_round(result.records) is None
    assert result.tree.partition() == [list(range(6))]


def test_every_round_respects_resource_constraints(tiny_experiment):
    cfg = tiny_experiment.model_copy(update={"rounds": 4})
    result = run(cfg)
    n = cfg.wireless.num_subchannels
    for record in result.records:
        assert audit_decision(record.schedule, n) == []
        leaves = [sorted(node.members) for node in record.tree if not node.children]
        assert sorted(c for leaf in leaves for c in leaf) == list(range(6))


def test_proposed_selects_everyone_before_any_stop(tiny_experiment):
    result = run(tiny_experiment)
    for record in result.records:
        if any(e.kind == EventKind.stop for e in record.events):
            break
        assert sorted(record.selected) == list(range(6))


def test_serial_and_parallel_logs_are_identical(tiny_experiment):
    serial = _lines(tiny_experiment)
    assert serial == _lines(tiny_experiment)
    assert serial == _lines(tiny_experiment.model_copy(update={"parallel_workers": 3}))


def test_different_seed_changes_log(tiny_experiment):
    assert _lines(tiny_experiment) != _lines(tiny_experiment.model_copy(update={"seed": 4}))


def test_record_callback_and_event_log(tmp_path, tiny_experiment):
    path = tmp_path / "events.jsonl"
    with EventLog(path) as log:
        result = run(tiny_experiment, on_record=log)
    assert log.count == len(result.records)
    events = read_events(path)
    assert [e["round"] for e in events] == [1, 2, 3]
    assert first_split_round(events) == first_split_round(result.records)


def test_metrics_are_evaluated_every_n_rounds(tiny_experiment):
    result = run(tiny_experiment.model_copy(update={"eval_every": 2}))
    evaluated = [r.round for r in result.records if r.clusters[0].test_accuracy is not None]
    assert evaluated == [2]
    names = {name for _, name, _ in metric_rows(result.records)}
    assert {"deadline", "cumulative_time", "mean_update_norm", "num_leaves"} <= names


def test_first_split_round_lookup():
    records = [
        {"round": 1, "events": []},
        {"round": 5, "events": [{"kind": "split"}]},
        {"round": 7, "events": [{"kind": "split"}]},
    ]
    assert first_split_round(records) == 5
    assert first_split_round(records[:1]) is None


def test_accuracy_report_shape(tiny_data_config):
    dataset = generate(tiny_data_config, seed=0)
    models = {"cluster-0": init_params(dataset.spec), "conventional": init_params(dataset.spec)}
    report = accuracy_report(models, dataset)
    assert report.models == ["cluster-0", "conventional"]
    assert len(report.matrix) == 2 and len(report.matrix[0]) == dataset.num_clients
    assert set(report.best_model.values()) == {"cluster-0"}
    values = list(report.best_accuracy.values())
    assert report.gap == pytest.approx(max(values) - min(values))


def test_adjusted_rand_index():
    assert adjusted_rand_index([[2, 3], [0, 1]], [[0, 1], [2, 3]]) == 1.0
    assert adjusted_rand_index([[0, 1, 2, 3]], [[0, 1], [2, 3]]) == 0.0


def test_summary_from_run(tiny_experiment):
    result = run(tiny_experiment)
    summary = build_summary(tiny_experiment, result)
    assert summary.rounds_completed == 3
    assert summary.ground_truth == [[0, 2, 4], [1, 3, 5]]
    assert summary.leaf_partition == result.tree.partition()
    assert 0.0 <= summary.accuracy.gap <= 1.0


def test_custom_dataset_is_used(tiny_experiment, tiny_data_config):
    dataset = generate(tiny_data_config, seed=99)
    simulation = CFLSimulation(tiny_experiment, dataset=dataset)
    assert simulation.dataset is dataset
    assert np.array_equal(simulation.tree.root.model, init_params(dataset.spec))


def test_time_budget_keeps_exactly_the_rounds_that_fit(tiny_experiment):
    deadlines = [r.deadline for r in run(tiny_experiment).records]
    budget = deadlines[0] + deadlines[1] + 0.5 * deadlines[2]
    result = run(tiny_experiment.model_copy(update={"time_budget": budget}))
    assert [r.round for r in result.records] == [1, 2]
    assert result.stop_reason == StopReason.time_budget
    assert result.total_time <= budget


def test_weighted_training_loss_settles(tiny_experiment):
    # 每个客户端训练集恰好一个满批次，本地训练是确定性的梯度下降
    cfg = tiny_experiment.model_copy(update={
        "rounds": 30,
        "data": tiny_experiment.data.model_copy(update={"num_groups": 1, "min_samples": 40, "max_samples": 40}),
        "training": TrainingConfig(epochs=2, batch_size=32, learning_rate=0.05),
    })
    result = run(cfg)
    sizes = result.dataset.train_sizes
    total = sum(sizes.values())
    weighted = [
        sum(c.train_loss * sum(sizes[cid] for cid in c.members) for c in record.clusters) / total
        for record in result.records
    ]
    window = weighted[-10:]
    assert len(window) == 10
    for before, after in zip(window, window[1:]):
        assert after <= before + 1e-3


def test_stopped_cluster_contributes_one_member(tiny_experiment):
    simulation = CFLSimulation(tiny_experiment)
    left, _ = simulation.tree.split(0, [0, 2, 4], [1, 3, 5], 1)
    simulation.tree.stop(left.node_id, 1)

    decision = simulation.schedule_node({"round": 1, "cumulative_time": 0.0})["decision"]
    selected = set(decision.selected)
    assert len(decision.selected) == 4
    assert {1, 3, 5} <= selected
    latencies = simulation.network.latencies(simulation.network.channels(2))
    fastest = min([0, 2, 4], key=lambda cid: (latencies[cid].total, cid))
    assert selected & {0, 2, 4} == {fastest}


def _opposite_updates(simulation, clients):
    """组 0 (偶数 id) 与组 1 (奇数 id) 的更新方向相反"""
    direction = np.zeros(simulation.tree.root.model.shape[0])
    direction[0] = 1.0
    return {cid: direction if cid % 2 == 0 else -direction for cid in clients}


def _maintain(simulation, r, deltas):
    leaf_of = simulation.tree.leaf_of()
    simulation._updates = {
        cid: LocalUpdate(simulation.tree.node(leaf_of[cid]).model + delta, delta, 1)
        for cid, delta in deltas.items()
    }
    simulation._trained_under = {cid: leaf_of[cid] for cid in deltas}
    simulation.maintain_node({"round": r})
    return [event.kind for event in simulation._events]


def test_split_needs_an_update_from_every_member(tiny_experiment):
    simulation = CFLSimulation(tiny_experiment)
    simulation.eps1, simulation.eps2 = 0.5, 0.5

    assert _maintain(simulation, 1, _opposite_updates(simulation, [0, 1, 2, 3])) == []
    assert simulation.split_evidence(0, 1) is None
    assert simulation.tree.partition() == [list(range(6))]

    assert _maintain(simulation, 2, _opposite_updates(simulation, range(6))) == [EventKind.split]
    assert simulation.tree.partition() == [[0, 2, 4], [1, 3, 5]]


@pytest.mark.parametrize("max_age, expected", [(0, []), (1, [EventKind.split])])
def test_cached_updates_within_age_complete_the_evidence(tiny_experiment, max_age, expected):
    cfg = tiny_experiment.model_copy(update={
        "clustering": tiny_experiment.clustering.model_copy(update={"max_update_age": max_age}),
    })
    simulation = CFLSimulation(cfg)
    simulation.eps1, simulation.eps2 = 0.5, 0.5
    _maintain(simulation, 1, _opposite_updates(simulation, [0, 1, 2, 3]))
    assert _maintain(simulation, 2, _opposite_updates(simulation, [4, 5])) == expected


@pytest.mark.parametrize("strategy", [StrategyKind.random, StrategyKind.best_channel, StrategyKind.max_samples])
def test_partial_participation_never_splits_the_root(tiny_experiment, strategy):
    cfg = tiny_experiment.model_copy(update={
        "rounds": 6,
        "strategy": strategy,
        "wireless": tiny_experiment.wireless.model_copy(update={"num_subchannels": 3}),
    })
    result = run(cfg)
    assert all(len(r.selected) == 3 for r in result.records)
    assert first_split_round(result.records) is None
    assert result.tree.partition() == [list(range(6))]
