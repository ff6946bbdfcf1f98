"""Brute-force verification of the signed-entry decomposition.

On instances small enough to grid (two policy entries, or decision dimension
at most two), the minimum of the nonconvex optimistic objective can be found
by dense enumeration. The decomposition's re-evaluated minimum must match it:
the grid minimum can only sit above the true minimum (discretization), and
the solver can only sit above by its own tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import CostFamily, CostKind
from .dap import UnrolledModel, rho_dim
from .estimation import GramTracker
from .optimism import OptimisticProblem, solve_optimistic_min
from .sco import DecisionSet, ScoInstance, ScoState, _solve_optimistic_action
from .system import RngStream

__all__ = [
    "GapReport",
    "random_control_instance",
    "control_grid_gap",
    "random_sco_instance",
    "sco_grid_gap",
]


@dataclass
class GapReport:
    relaxation_min: float
    grid_min: float

    @property
    def gap(self) -> float:
        return self.relaxation_min - self.grid_min


def random_control_instance(seed: int, window_len: int = 8, alpha: float | None = None):
    """A small d_x = d_u = 1, H = 2 optimistic problem with a randomized epoch state."""
    rng = RngStream(seed, 101)
    gen = rng.generator
    h, d_x, d_u = 2, 1, 1
    p = rho_dim(h, d_x, d_u)
    family = CostFamily(
        CostKind.NORM_TARGET, d_x + d_u,
        target_radius=1.0, target_center=gen.uniform(-0.5, 0.5, size=2),
    )
    z_window = family.sample_z_batch(window_len, rng.spawn("z"))
    w_lags = gen.uniform(-1.0, 1.0, size=(window_len, 2 * h, d_x))
    psi = UnrolledModel(gen.uniform(-0.8, 0.8, size=(d_x, p)), h, d_x, d_u)
    gram = GramTracker(p, 1.0 + gen.uniform(0.0, 2.0))
    for _ in range(6):
        gram.update(gen.uniform(-1.0, 1.0, size=p))
    return OptimisticProblem(
        family=family,
        z_window=z_window,
        w_lags=w_lags,
        psi=psi,
        gram=gram,
        alpha=float(gen.uniform(0.2, 2.0)) if alpha is None else alpha,
        w_bound=1.0,
        r_m=1.0,
    )


def _eval_policy_grid(problem: OptimisticProblem, pts: np.ndarray) -> np.ndarray:
    """Exact nonconvex objective at each two-entry policy point."""
    d_u, h, d_x = problem.d_u, problem.h, problem.d_x
    m_stack = pts.reshape(-1, d_u, h * d_x)
    vals = problem.cost_sum(m_stack)
    for i in range(m_stack.shape[0]):
        vals[i] -= problem.bonus_norm(m_stack[i])
    return vals


def control_grid_gap(
    problem: OptimisticProblem, grid_points: int = 101, budget: int = 20_000
) -> GapReport:
    """Compare the 2m-subproblem minimum against dense-grid enumeration over
    the two policy entries (requires d_u * H * d_x == 2).

    The stated grid is scanned first; the minimizer's cell is then refined by
    two local enumeration passes so the oracle's own discretization error sits
    well below the comparison tolerance.
    """
    h, d_x, d_u = problem.h, problem.d_x, problem.d_u
    if d_u * h * d_x != 2:
        raise ValueError("grid oracle only covers two-entry policies")
    axis = np.linspace(-problem.r_m, problem.r_m, grid_points)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    pts = pts[np.linalg.norm(pts, axis=1) <= problem.r_m]
    vals = _eval_policy_grid(problem, pts)
    best = float(vals.min())
    spacing = axis[1] - axis[0]
    # refine around the leading coarse cells; the nonconvex bonus can carve
    # several valleys whose coarse samples are nearly tied
    for seed_pt in pts[np.argsort(vals)[:8]]:
        center, width = seed_pt, spacing
        for _ in range(2):
            local = np.linspace(-1.5 * width, 1.5 * width, 41)
            l1, l2 = np.meshgrid(local, local, indexing="ij")
            cand = center[None, :] + np.stack([l1.ravel(), l2.ravel()], axis=1)
            nrm = np.maximum(np.linalg.norm(cand, axis=1, keepdims=True), 1e-300)
            cand = np.where(nrm > problem.r_m, cand * (problem.r_m / nrm), cand)
            lv = _eval_policy_grid(problem, cand)
            center = cand[int(np.argmin(lv))]
            best = min(best, float(lv.min()))
            width = local[1] - local[0]
    policy = solve_optimistic_min(problem, budget)
    return GapReport(problem.full_objective(policy), best)


def random_sco_instance(seed: int, d_a: int = 2, d_y: int = 2, rounds: int = 10):
    """A tiny hidden-transform instance with a short synthetic history."""
    rng = RngStream(seed, 202)
    gen = rng.generator
    from .system import NoiseKind, NoiseModel

    q = gen.standard_normal((d_y, d_a))
    q /= np.linalg.norm(q, 2) * (1 + 1e-12)
    loss = CostFamily(
        CostKind.NORM_TARGET, d_y,
        target_radius=1.0, target_center=gen.uniform(-0.5, 0.5, size=d_y),
    )
    inst = ScoInstance(q, DecisionSet("ball", d_a, 2.0), 1.0,
                       NoiseModel(NoiseKind.SCALED_RADEMACHER, d_y, 1.0), loss)
    lam = inst.decision_set.r_a**2
    state = ScoState(d_a, d_y, lam, capacity=rounds + 1, z_dim=d_y)
    for z in loss.sample_z_batch(rounds, rng.spawn("hist-z")):
        a = inst.decision_set.project(gen.uniform(-1.0, 1.0, size=d_a))
        y = q @ a + gen.uniform(-0.3, 0.3, size=d_y)
        state.observe(a, y, z)
    return inst, state


def sco_grid_gap(
    inst: ScoInstance,
    state: ScoState,
    alpha: float,
    grid_points: int = 201,
    budget: int = 20_000,
) -> GapReport:
    """Dense-grid minimum of the nonconvex action objective vs the 2 d_a solve."""
    d_a = inst.d_a
    if d_a > 2:
        raise ValueError("grid oracle only covers d_a <= 2")
    half = inst.decision_set.r_a / 2.0
    axis = np.linspace(-half, half, grid_points)
    if d_a == 1:
        pts = axis[:, None]
    else:
        g1, g2 = np.meshgrid(axis, axis, indexing="ij")
        pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    if inst.decision_set.kind == "ball":
        pts = pts[np.linalg.norm(pts, axis=1) <= half]
    z_hist = state.z_history
    whiten = state.gram.inv_sqrt()

    def eval_actions(actions: np.ndarray) -> np.ndarray:
        q_pts = actions @ state.q_hat.T
        out = inst.loss.batch_values(z_hist[None, :, :], q_pts[:, None, :]).sum(axis=1)
        return out - alpha * np.max(np.abs(actions @ whiten.T), axis=1)

    vals = eval_actions(pts)
    grid_min = float(vals.min())
    spacing = axis[1] - axis[0]
    for seed_pt in pts[np.argsort(vals)[:8]]:
        center, width = seed_pt, spacing
        for _ in range(2):
            local = np.linspace(-1.5 * width, 1.5 * width, 41)
            if d_a == 1:
                cand = center[None, :] + local[:, None]
            else:
                l1, l2 = np.meshgrid(local, local, indexing="ij")
                cand = center[None, :] + np.stack([l1.ravel(), l2.ravel()], axis=1)
            cand = inst.decision_set.project_stack(cand)
            lv = eval_actions(cand)
            center = cand[int(np.argmin(lv))]
            grid_min = min(grid_min, float(lv.min()))
            width = local[1] - local[0]
    a = _solve_optimistic_action(state, inst, alpha, budget, np.zeros(d_a), None, batch=10**9)
    if z_hist.shape[0]:
        val = float(
            inst.loss.batch_values(z_hist[None, :, :], (state.q_hat @ a)[None, None, :]).sum()
        )
    else:
        val = 0.0
    val -= alpha * float(np.max(np.abs(whiten @ a)))
    return GapReport(val, grid_min)
