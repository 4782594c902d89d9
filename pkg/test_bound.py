"""
收敛界公式与二次型经验验证测试
"""
import numpy as np
import pytest

from src.analysis.bound import (
    bound_product_sum,
    bound_trajectory,
    empirical_check,
    make_quadratic_problem,
    step_size,
    zeta1,
    zeta1_grid_findings,
    zeta2,
    zeta2_readings,
)
from src.models import BoundParams, LRSchedule


def test_zeta1_examples():
    assert zeta1(1.0, 0.1, 10) == pytest.approx(0.09)
    assert zeta1(2.0, 0.3, 1) == pytest.approx(1 - 2.0 * 0.3)
    assert zeta1(1.0, 0.0, 7) == 1.0


def test_zeta2_examples():
    assert zeta2(1.0, 0.2, 1, rho2=3.0, heterogeneity=5.0) == pytest.approx(0.04 * 3.0)
    assert zeta2(1.0, 0.0, 6, rho2=3.0, heterogeneity=5.0) == 0.0
    assert zeta2(1.0, 0.1, 2, rho2=1.0, heterogeneity=0.0) == pytest.approx(0.06919)


def test_zeta2_readings():
    same = zeta2_readings(1.0, 0.1, 2, 1.0, 0.0, eta_0=0.1)
    assert same["eta_t"] == pytest.approx(same["eta_0"])
    differ = zeta2_readings(1.0, 0.05, 4, 1.0, 2.0, eta_0=0.25)
    assert differ["eta_t"] != pytest.approx(differ["eta_0"])


def test_step_size():
    assert step_size(2.0, 5) == pytest.approx(0.1)
    assert step_size(1.0, 4, round_index=3, schedule=LRSchedule.decay, decay=0.5) == pytest.approx(0.25 / 2.5)


def test_bound_starts_at_initial_distance():
    params = BoundParams(tau=5)
    assert bound_trajectory(3.5, params, 0, rho2=1.0, heterogeneity=0.0).tolist() == [3.5]


def test_geometric_decay_without_noise_term():
    params = BoundParams(alpha=1.0, beta=1.8, tau=5)
    values = bound_trajectory(4.0, params, 10, rho2=0.0, heterogeneity=0.0)
    z = zeta1(1.0, 0.2, 5)
    np.testing.assert_allclose(values, [4.0 * z ** r for r in range(11)], rtol=1e-12)
    assert np.all(np.diff(values) <= 0)


@pytest.mark.parametrize("schedule,decay", [(LRSchedule.constant, 0.0), (LRSchedule.decay, 0.3)])
def test_recursive_and_product_sum_forms_agree(schedule, decay):
    rng = np.random.default_rng(0)
    for _ in range(10):
        alpha = float(rng.uniform(0.5, 2.0))
        params = BoundParams(alpha=alpha, beta=alpha * 2, tau=int(rng.integers(1, 12)),
                             lr_schedule=schedule, lr_decay=decay)
        rho2, hetero, w0 = rng.uniform(0.1, 5.0, size=3)
        a = bound_trajectory(w0, params, 40, rho2=rho2, heterogeneity=hetero)
        b = bound_product_sum(w0, params, 40, rho2=rho2, heterogeneity=hetero)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


def test_unresolved_constants_rejected():
    with pytest.raises(ValueError):
        bound_trajectory(1.0, BoundParams(), 3)


def test_single_local_step_grid_point_is_reported():
    findings = zeta1_grid_findings([1.0], [1, 5])
    assert {"alpha": 1.0, "tau": 1, "eta": 1.0, "zeta1": 0.0} in findings
    assert all(f["tau"] == 1 for f in findings)


def test_identical_clients_have_zero_optimal_gap():
    problem = make_quadratic_problem(4, 3, heterogeneity=0.0, seed=1)
    assert problem.optimal_gap() == pytest.approx(0.0, abs=1e-12)
    assert problem.heterogeneity() == pytest.approx(0.0, abs=1e-12)


def test_quadratic_curvature_matches_constants():
    problem = make_quadratic_problem(3, 4, alpha=1.0, beta=1.8, seed=2)
    for matrix in problem.A:
        eigenvalues = np.linalg.eigvalsh(matrix)
        assert eigenvalues.min() == pytest.approx(1.0)
        assert eigenvalues.max() == pytest.approx(1.8)


def test_deterministic_identical_clients_stay_under_bound():
    problem = make_quadratic_problem(4, 3, heterogeneity=0.0, noise_std=0.0, seed=3)
    report = empirical_check(problem, BoundParams(tau=5), rounds=15, seeds=1, slack=1.0)
    assert report.violations == 0
    assert report.rows[0].empirical == pytest.approx(report.rows[0].bound)


def test_heterogeneous_noisy_problem_has_no_violations():
    problem = make_quadratic_problem(5, 4, heterogeneity=0.5, noise_std=0.1, seed=4)
    report = empirical_check(problem, BoundParams(tau=5), rounds=20, seeds=5)
    assert report.violations == 0
    assert report.heterogeneity == pytest.approx(problem.heterogeneity())
    assert len(report.rows) == 21
    assert all(row.loss_bound == pytest.approx(0.9 * row.bound) for row in report.rows)
