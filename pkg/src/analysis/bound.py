"""
收敛界与经验验证

ζ1(t) = 1 − αη_t(𝒯 − η_t(𝒯 − 1))
ζ2(t) = (1 + α(1 − ηζ1))·η_t²·ϱ²·𝒯(𝒯−1)(2𝒯−1)/6 + η_t²(𝒯² + 𝒯 − 1)ϱ² + 2ηζ1(𝒯 − 1)𝔉
b(r+1) = ζ1(r)·b(r) + ζ2(r)，b(0) = ‖W0 − W*‖²

ζ2 中不带下标的 η 默认取 η_t；eta_base 给出另一种读法（η := η_0）。
经验验证在二次型联邦问题上进行：F_k(W) = ½(W − c_k)ᵀA_k(W − c_k)，
A_k 的特征值恰好覆盖 [α, β]，因此常数都是精确已知的。
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.stats import ortho_group

from src.errors import InvalidArgumentError
from src.models import BoundParams, BoundReport, BoundRoundRow, LRSchedule
from src.utils import derive_rng


logger = logging.getLogger(__name__)

VIOLATION_RTOL = 1e-12


def zeta1(alpha: float, eta: float, tau: int) -> float:
    return 1.0 - alpha * eta * (tau - eta * (tau - 1))


def zeta2(alpha: float, eta: float, tau: int, rho2: float, heterogeneity: float,
          eta_base: Optional[float] = None) -> float:
    eta_plain = eta if eta_base is None else eta_base
    z1 = zeta1(alpha, eta, tau)
    drift = (1.0 + alpha * (1.0 - eta_plain * z1)) * eta ** 2 * rho2 * tau * (tau - 1) * (2 * tau - 1) / 6.0
    noise = eta ** 2 * (tau ** 2 + tau - 1) * rho2
    hetero = 2.0 * eta_plain * z1 * (tau - 1) * heterogeneity
    return drift + noise + hetero


def zeta2_readings(alpha: float, eta_t: float, tau: int, rho2: float, heterogeneity: float,
                   eta_0: float) -> Dict[str, float]:
    """不带下标的 η 的两种读法"""
    return {
        "eta_t": zeta2(alpha, eta_t, tau, rho2, heterogeneity),
        "eta_0": zeta2(alpha, eta_t, tau, rho2, heterogeneity, eta_base=eta_0),
    }


def step_size(alpha: float, tau: int, round_index: int = 0,
              schedule: LRSchedule = LRSchedule.constant, decay: float = 0.0) -> float:
    """η_r = 1/(α𝒯)，decay 时再除以 (1 + κ·r)"""
    base = 1.0 / (alpha * tau)
    if LRSchedule(schedule) == LRSchedule.decay:
        return base / (1.0 + decay * round_index)
    return base


def _zetas(params: BoundParams, rounds: int, rho2: float, heterogeneity: float,
           eta_base: Optional[float]):
    z1, z2 = [], []
    for t in range(rounds):
        eta = step_size(params.alpha, params.tau, t, params.lr_schedule, params.lr_decay)
        z1.append(zeta1(params.alpha, eta, params.tau))
        z2.append(zeta2(params.alpha, eta, params.tau, rho2, heterogeneity, eta_base))
    return z1, z2


def _resolve(params: BoundParams, rho2: Optional[float], heterogeneity: Optional[float]):
    rho2 = params.rho2 if rho2 is None else rho2
    heterogeneity = params.heterogeneity if heterogeneity is None else heterogeneity
    if rho2 is None or heterogeneity is None:
        raise InvalidArgumentError("rho2 and heterogeneity must be configured or measured")
    return rho2, heterogeneity


def bound_trajectory(w0_dist: float, params: BoundParams, rounds: int, rho2: Optional[float] = None,
                     heterogeneity: Optional[float] = None, eta_base: Optional[float] = None) -> np.ndarray:
    """递推形式，返回 b(0..R)"""
    rho2, heterogeneity = _resolve(params, rho2, heterogeneity)
    z1, z2 = _zetas(params, rounds, rho2, heterogeneity, eta_base)
    values = [float(w0_dist)]
    for a, c in zip(z1, z2):
        values.append(a * values[-1] + c)
    return np.array(values)


def bound_product_sum(w0_dist: float, params: BoundParams, rounds: int, rho2: Optional[float] = None,
                      heterogeneity: Optional[float] = None, eta_base: Optional[float] = None) -> np.ndarray:
    """乘积-求和的直接形式：(Π ζ1)·b0 + Σ_{t'} ζ2(t')·Π_{t>t'} ζ1(t)"""
    rho2, heterogeneity = _resolve(params, rho2, heterogeneity)
    z1, z2 = _zetas(params, rounds, rho2, heterogeneity, eta_base)
    values = [float(w0_dist)]
    for r in range(1, rounds + 1):
        total = float(np.prod(z1[:r])) * w0_dist
        for t_prime in range(r):
            total += z2[t_prime] * float(np.prod(z1[t_prime + 1:r]))
        values.append(total)
    return np.array(values)


def zeta1_grid_findings(alphas: Iterable[float], taus: Iterable[int],
                        eta_fractions: Sequence[float] = (0.25, 0.5, 1.0)) -> List[dict]:
    """0 < η ≤ 1/(α𝒯) 的网格上，ζ1 落在 (0, 1) 之外的点（作为发现报告，不视为失败）"""
    findings = []
    for alpha in alphas:
        for tau in taus:
            for fraction in eta_fractions:
                eta = fraction / (alpha * tau)
                value = zeta1(alpha, eta, tau)
                if not 0.0 < value < 1.0:
                    findings.append({"alpha": alpha, "tau": tau, "eta": eta, "zeta1": value})
    return findings


@dataclass
class QuadraticProblem:
    """F_k(W) = ½(W − c_k)ᵀA_k(W − c_k)，全局目标为各客户端等权平均"""

    A: np.ndarray
    c: np.ndarray
    alpha: float
    beta: float
    noise_std: float = 0.0

    @property
    def num_clients(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def optimum(self) -> np.ndarray:
        """W* = (Σ A_k)^{-1} Σ A_k c_k"""
        return np.linalg.solve(self.A.sum(axis=0), np.einsum("kij,kj->i", self.A, self.c))

    def client_grads(self, w: np.ndarray) -> np.ndarray:
        """w 为 (K, d) 每客户端各自的参数，或 (d,) 共享参数"""
        w = np.broadcast_to(w, self.c.shape)
        return np.einsum("kij,kj->ki", self.A, w - self.c)

    def client_losses(self, w: np.ndarray) -> np.ndarray:
        diff = np.broadcast_to(w, self.c.shape) - self.c
        return 0.5 * np.einsum("ki,kij,kj->k", diff, self.A, diff)

    def global_loss(self, w: np.ndarray) -> float:
        return float(self.client_losses(w).mean())

    def heterogeneity(self) -> float:
        """max_k (F_k(W*) − F_k*)，F_k* = 0"""
        return float(self.client_losses(self.optimum).max())

    def optimal_gap(self) -> float:
        """g = F(W*) − (1/|m|) Σ F_k*"""
        return self.global_loss(self.optimum)


def make_quadratic_problem(num_clients: int, dim: int, alpha: float = 1.0, beta: float = 1.8,
                           heterogeneity: float = 0.0, noise_std: float = 0.0,
                           seed: int = 0) -> QuadraticProblem:
    """A_k = Q_k diag(linspace(α, β)) Q_kᵀ；c_k = c0 + heterogeneity·z_k"""
    if num_clients < 1 or dim < 1:
        raise InvalidArgumentError("need at least one client and one dimension")
    if not 0 < alpha <= beta:
        raise InvalidArgumentError(f"need 0 < alpha <= beta, got ({alpha}, {beta})")
    rng = derive_rng(seed, "quadratic")
    eigenvalues = np.linspace(alpha, beta, dim) if dim > 1 else np.array([alpha])
    matrices = []
    for _ in range(num_clients):
        q = ortho_group.rvs(dim, random_state=rng) if dim > 1 else np.ones((1, 1))
        a = q @ np.diag(eigenvalues) @ q.T
        matrices.append((a + a.T) / 2.0)
    center = rng.standard_normal(dim)
    offsets = heterogeneity * rng.standard_normal((num_clients, dim))
    return QuadraticProblem(A=np.stack(matrices), c=center + offsets, alpha=alpha, beta=beta,
                            noise_std=noise_std)


def _simulate(problem: QuadraticProblem, params: BoundParams, rounds: int, seed: int):
    """全员参与的 FedAvg，W0 = 0；返回每轮 ‖W − W*‖²、全局损失与实测梯度二阶矩上界"""
    optimum = problem.optimum
    sigma2_d = problem.noise_std ** 2 * problem.dim
    w_global = np.zeros(problem.dim)
    dist = [float(np.sum((w_global - optimum) ** 2))]
    losses = [problem.global_loss(w_global)]
    rho2 = float(np.max(np.sum(problem.client_grads(w_global) ** 2, axis=1))) + sigma2_d

    for r in range(rounds):
        eta = step_size(params.alpha, params.tau, r, params.lr_schedule, params.lr_decay)
        noise = derive_rng(seed, "bound-noise", r).standard_normal((params.tau, problem.num_clients, problem.dim))
        local = np.tile(w_global, (problem.num_clients, 1))
        for step in range(params.tau):
            grads = problem.client_grads(local)
            rho2 = max(rho2, float(np.max(np.sum(grads ** 2, axis=1))) + sigma2_d)
            local = local - eta * (grads + problem.noise_std * noise[step])
        w_global = local.mean(axis=0)
        rho2 = max(rho2, float(np.max(np.sum(problem.client_grads(w_global) ** 2, axis=1))) + sigma2_d)
        dist.append(float(np.sum((w_global - optimum) ** 2)))
        losses.append(problem.global_loss(w_global))
    return np.array(dist), np.array(losses), rho2


def empirical_check(problem: QuadraticProblem, params: BoundParams, rounds: int, seeds: int,
                    slack: float = 1.05, base_seed: int = 0) -> BoundReport:
    """
    多个种子下的平均 ‖W(r) − W*‖² 与界 b(r) 对比

    ϱ² 未配置时取所有种子、轮次、客户端、本地步（含每轮全局模型）上
    ‖∇F_k(W)‖² + σ²d 的最大值；𝔉 未配置时取 max_k F_k(W*)。
    """
    if seeds < 1 or rounds < 0:
        raise InvalidArgumentError("need at least one seed and a non-negative round count")
    runs = [_simulate(problem, params, rounds, base_seed + s) for s in range(seeds)]
    empirical = np.mean([run[0] for run in runs], axis=0)
    loss_gap = np.mean([run[1] for run in runs], axis=0) - problem.global_loss(problem.optimum)

    rho2 = params.rho2 if params.rho2 is not None else max(run[2] for run in runs)
    rho2 = max(rho2, np.finfo(np.float64).tiny)
    heterogeneity = params.heterogeneity if params.heterogeneity is not None else problem.heterogeneity()

    w0_dist = float(np.sum(problem.optimum ** 2))
    bound = bound_trajectory(w0_dist, params, rounds, rho2, heterogeneity)
    loss_bound = problem.beta / 2.0 * bound

    violating = [r for r in range(rounds + 1)
                 if empirical[r] > slack * bound[r] * (1.0 + VIOLATION_RTOL)]
    if violating:
        logger.warning("⚠️  𝒯=%d 时有 %d 轮超出界: %s", params.tau, len(violating), violating[:10])
    else:
        logger.info("✅ 𝒯=%d: %d 个种子、%d 轮内无违反", params.tau, seeds, rounds)

    rows = [
        BoundRoundRow(round=r, empirical=float(empirical[r]), bound=float(bound[r]),
                      loss_gap=float(loss_gap[r]), loss_bound=float(loss_bound[r]))
        for r in range(rounds + 1)
    ]
    resolved = params.model_copy(update={"rho2": rho2, "heterogeneity": heterogeneity})
    return BoundReport(
        params=resolved,
        rho2=rho2,
        heterogeneity=heterogeneity,
        seeds=seeds,
        rounds=rounds,
        slack=slack,
        violations=len(violating),
        violating_rounds=violating,
        optimal_gap=problem.optimal_gap(),
        rows=rows,
    )
