"""Stochastic convex optimization against a hidden linear transform.

The zero-memory specialization of the control problem: play a in a convex set,
suffer mu(Q* a) in expectation, observe y = Q* a + noise, and learn Q* by ridge
regression. Actions minimize the optimistic lower bound
    sum_{s<t} l_s(Qhat_t a) - alpha ||V_t^{-1/2} a||_inf,
solved through 2 d_a convex subproblems (one per signed whitened coordinate)
exactly as in the full controller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .costs import CostFamily
from .estimation import GramTracker
from .records import RunRecord
from .system import NoiseModel, RngStream, sample_noise_batch

__all__ = [
    "DecisionSet",
    "ScoInstance",
    "ScoState",
    "ScoConfig",
    "sco_theory_parameters",
    "sco_alpha_formula",
    "sco_step",
    "run_sco",
    "sco_pseudo_regret",
    "pseudo_regret_report",
    "sandwich_check",
    "SandwichReport",
]


@dataclass(frozen=True)
class DecisionSet:
    """Ball or box of diameter r_a centered at the origin."""

    kind: str
    dim: int
    r_a: float

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ValueError("decision set kind must be 'ball' or 'box'")
        if self.r_a <= 0:
            raise ValueError("diameter must be positive")

    def project(self, a: np.ndarray) -> np.ndarray:
        if self.kind == "ball":
            r = self.r_a / 2.0
            nrm = np.linalg.norm(a)
            return a * (r / nrm) if nrm > r else a
        half = self.r_a / (2.0 * math.sqrt(self.dim))
        return np.clip(a, -half, half)

    def project_stack(self, a_stack: np.ndarray) -> np.ndarray:
        """Project rows in place-free vectorized form."""
        if self.kind == "ball":
            r = self.r_a / 2.0
            nrm = np.sqrt(np.einsum("ki,ki->k", a_stack, a_stack))[:, None]
            return a_stack * np.minimum(1.0, r / np.maximum(nrm, 1e-300))
        half = self.r_a / (2.0 * math.sqrt(self.dim))
        return np.clip(a_stack, -half, half)


@dataclass(frozen=True)
class ScoInstance:
    q_star: np.ndarray
    decision_set: DecisionSet
    r_q: float
    noise: NoiseModel
    loss: CostFamily

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q_star, dtype=float))
        if np.linalg.norm(q, 2) > self.r_q * (1 + 1e-9):
            raise ValueError("operator norm of q_star exceeds r_q")
        if q.shape[1] != self.decision_set.dim:
            raise ValueError("q_star column count must match the decision dimension")
        if self.noise.dim != q.shape[0] or self.loss.dim != q.shape[0]:
            raise ValueError("noise / loss dimension must match d_y")
        object.__setattr__(self, "q_star", q)

    @property
    def d_y(self) -> int:
        return self.q_star.shape[0]

    @property
    def d_a(self) -> int:
        return self.q_star.shape[1]


class ScoState:
    """Gram matrix, ridge estimate of the transform, and the revealed losses."""

    def __init__(self, d_a: int, d_y: int, lam: float, capacity: int = 64, z_dim: int | None = None):
        self.gram = GramTracker(d_a, lam)
        self.cross = np.zeros((d_a, d_y))
        self.q_hat = np.zeros((d_y, d_a))
        self._z = np.zeros((capacity, z_dim if z_dim is not None else d_y))
        self.t = 1  # round about to be played

    @property
    def z_history(self) -> np.ndarray:
        return self._z[: self.t - 1]

    def push_z(self, z: np.ndarray) -> None:
        if self.t - 1 >= self._z.shape[0]:
            grown = np.zeros((2 * self._z.shape[0], self._z.shape[1]))
            grown[: self._z.shape[0]] = self._z
            self._z = grown
        self._z[self.t - 1] = z

    def observe(self, a: np.ndarray, y_next: np.ndarray, z: np.ndarray) -> None:
        """Rank-1 updates after playing a and seeing y_{t+1} and the round's loss."""
        self.push_z(z)
        self.gram.update(a)
        self.cross += np.outer(a, y_next)
        self.q_hat = self.gram.solve(self.cross).T
        self.t += 1


@dataclass
class ScoConfig:
    horizon: int
    alpha: float
    lam: float
    budget: int = 80
    batch: int = 32
    alpha_scale: float = 1.0

    @property
    def effective_alpha(self) -> float:
        return self.alpha * self.alpha_scale


def sco_alpha_formula(inst: ScoInstance, t: int, delta: float) -> float:
    """alpha = sqrt(d_a) (W d_y sqrt(8 ln(2 t / delta)) + sqrt(2) r_a r_q)."""
    w = inst.noise.w_bound
    return math.sqrt(inst.d_a) * (
        w * inst.d_y * math.sqrt(8.0 * math.log(2.0 * t / delta))
        + math.sqrt(2.0) * inst.decision_set.r_a * inst.r_q
    )


def sco_theory_parameters(inst: ScoInstance, t: int, delta: float) -> tuple[float, float]:
    """(lambda, alpha) of the simplified-setting guarantee; gates on its horizon bound."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    r_a = inst.decision_set.r_a
    d_q = 3.0 * inst.r_q * r_a + inst.noise.w_bound * inst.d_y * math.sqrt(
        8.0 * math.log(4.0 * t / delta)
    )
    floor = max(inst.loss.sigma_c, 64.0 * d_q**2)
    if t < floor:
        raise ValueError(
            f"horizon {t} violates the simplified-setting requirement "
            f"t >= max(sigma_l, 64 D_q^2) = {floor:g}"
        )
    return r_a**2, sco_alpha_formula(inst, t, delta)


def _solve_optimistic_action(
    state: ScoState,
    inst: ScoInstance,
    alpha: float,
    budget: int,
    a_init: np.ndarray,
    rng: RngStream | None,
    batch: int,
) -> np.ndarray:
    """2 d_a signed-coordinate convex solves plus exact re-evaluation."""
    d_a = inst.d_a
    dset = inst.decision_set
    z_hist = state.z_history
    s_len = z_hist.shape[0]
    whiten = state.gram.inv_sqrt()
    q_hat = state.q_hat
    # bonus gradients, one constant row per (chi, k) in lexicographic order
    bonus = np.concatenate([-alpha * chi * whiten for chi in (-1.0, 1.0)], axis=0)
    k_sub = bonus.shape[0]
    a_stack = np.repeat(a_init[None], k_sub, axis=0)
    g_est = np.full(k_sub, 1e-12)
    avg = np.zeros_like(a_stack)
    tail = max(1, budget // 2)
    sqrt_n = math.sqrt(budget)
    use_minibatch = s_len > batch and rng is not None
    gen = rng.generator if use_minibatch else None
    q_hat_t = q_hat.T
    for it in range(budget):
        if s_len:
            zb = z_hist[gen.integers(0, s_len, size=batch)] if use_minibatch else z_hist
            scale = s_len / zb.shape[0]
            q_pts = a_stack @ q_hat_t
            gl = inst.loss.batch_subgradients(zb[None, :, :], q_pts[:, None, :])
            grad = scale * gl.sum(axis=1) @ q_hat + bonus
        else:
            grad = bonus.copy()
        g_est = np.maximum(g_est, np.sqrt(np.einsum("ki,ki->k", grad, grad)))
        a_stack = dset.project_stack(a_stack - (dset.r_a / (g_est * sqrt_n))[:, None] * grad)
        if it >= budget - tail:
            avg += a_stack
    avg = dset.project_stack(avg / tail)
    # exact objective at every candidate, ties to the first (chi, k)
    if s_len:
        vals = inst.loss.batch_values(z_hist[None, :, :], (avg @ q_hat.T)[:, None, :]).sum(axis=1)
    else:
        vals = np.zeros(k_sub)
    vals -= alpha * np.max(np.abs(avg @ whiten.T), axis=1)
    return avg[int(np.argmin(vals))]


def sco_step(
    state: ScoState,
    inst: ScoInstance,
    alpha: float,
    budget: int,
    z_t: np.ndarray,
    w_t: np.ndarray,
    rng: RngStream | None = None,
    batch: int = 32,
    a_init: np.ndarray | None = None,
) -> tuple[np.ndarray, ScoState]:
    """Play the optimistic minimizer, then fold in the round's observations.

    z_t is this round's revealed loss realization and w_t the observation
    noise; both enter the state only after the action is chosen.
    """
    if a_init is None:
        a_init = np.zeros(inst.d_a)
    a = _solve_optimistic_action(state, inst, alpha, budget, a_init, rng, batch)
    y_next = inst.q_star @ a + np.asarray(w_t, dtype=float)
    state.observe(a, y_next, np.asarray(z_t, dtype=float))
    return a, state


def run_sco(inst: ScoInstance, cfg: ScoConfig, rng: RngStream) -> RunRecord:
    """Full Algorithm-2 run; the record reuses the controller schema with
    epoch/subepoch columns fixed at zero and no disturbance estimates."""
    t_max = cfg.horizon
    d_a, d_y = inst.d_a, inst.d_y
    w_trace = sample_noise_batch(inst.noise, t_max, rng.spawn("observation-noise"))
    z_trace = inst.loss.sample_z_batch(t_max, rng.spawn("loss-draws"))
    solver_rng = rng.spawn("subgradient-batches")

    state = ScoState(d_a, d_y, cfg.lam, capacity=max(64, t_max), z_dim=z_trace.shape[1])
    actions = np.zeros((t_max, d_a))
    ys = np.zeros((t_max + 1, d_y))
    cost = np.zeros(t_max)
    harmonic = np.zeros(t_max)
    logdet = np.zeros(t_max)
    ridge_tr = np.zeros(t_max)
    alpha = cfg.effective_alpha
    a_prev = np.zeros(d_a)
    for t in range(1, t_max + 1):
        k = t - 1
        delta_mat = inst.q_star - state.q_hat
        ridge_tr[k] = float(np.trace(delta_mat @ state.gram.v @ delta_mat.T))
        a, _ = sco_step(
            state, inst, alpha, cfg.budget, z_trace[k], w_trace[k],
            rng=solver_rng, batch=cfg.batch, a_init=a_prev,
        )
        actions[k] = a
        a_prev = a
        cost[k] = inst.loss.value(z_trace[k], inst.q_star @ a)
        ys[t] = inst.q_star @ a + w_trace[k]
        # V_t (pre-update) against a_t: recover the pre-update quadratic form
        harmonic[k] = _pre_update_quad(state.gram, a)
        logdet[k] = state.gram.logdet

    zeros_i = np.zeros(t_max, dtype=int)
    return RunRecord(
        t=np.arange(1, t_max + 1),
        epoch=zeros_i.copy(),
        subepoch=zeros_i.copy(),
        cost=cost,
        action_norm=np.linalg.norm(actions, axis=1),
        state_norm=np.linalg.norm(ys[1:], axis=1),
        noise_err=np.full(t_max, np.nan),
        logdet_v=logdet,
        policy_switches=zeros_i.copy(),
        harmonic=harmonic,
        noise_trace=w_trace,
        z_trace=z_trace,
        w_hat=np.zeros((t_max, d_y)),
        states=ys,
        actions=actions,
        epoch_starts=[],
        subepoch_starts=[],
        meta={"cfg": cfg, "kind": "sco", "final_state": state, "ridge_tr": ridge_tr},
    )


def _pre_update_quad(gram: GramTracker, a: np.ndarray) -> float:
    """a^T V_t^{-1} a where V_{t+1} = V_t + a a^T is what the tracker now holds.

    Sherman-Morrison in reverse: with q = a^T V_{t+1}^{-1} a, the pre-update
    form is q / (1 - q).
    """
    q = gram.quad_form_inv(a)
    return q / max(1.0 - q, 1e-12)


@dataclass
class PseudoRegretReport:
    total: float
    curve: np.ndarray
    comparator: np.ndarray
    mu_comparator: float


def pseudo_regret_report(
    record: RunRecord,
    inst: ScoInstance,
    mc_samples: int,
    rng: RngStream,
    comparator_budget: int = 600,
) -> PseudoRegretReport:
    """Pseudo-regret of a completed run against the best fixed action.

    One frozen z-sample defines the mu estimate for both the trajectory and
    the comparator optimization, so sampling asymmetry cannot push the regret
    negative beyond solver tolerance.
    """
    z_frozen = inst.loss.sample_z_batch(mc_samples, rng)
    dset = inst.decision_set

    def mu_hat_many(points: np.ndarray) -> np.ndarray:
        out = np.empty(points.shape[0])
        for lo in range(0, points.shape[0], 1024):
            chunk = points[lo : lo + 1024]
            out[lo : lo + 1024] = inst.loss.batch_values(
                z_frozen[None, :, :], chunk[:, None, :]
            ).mean(axis=1)
        return out

    traj_mu = mu_hat_many(record.actions @ inst.q_star.T)
    a = np.zeros(inst.d_a)
    g_est = 1e-12
    best_a, best_val = a.copy(), float(mu_hat_many((inst.q_star @ a)[None])[0])
    sqrt_n = math.sqrt(comparator_budget)
    for _ in range(comparator_budget):
        gl = inst.loss.batch_subgradients(z_frozen, np.broadcast_to(inst.q_star @ a, z_frozen.shape))
        grad = inst.q_star.T @ gl.mean(axis=0)
        g_est = max(g_est, float(np.linalg.norm(grad)))
        a = dset.project(a - (dset.r_a / (g_est * sqrt_n)) * grad)
        val = float(mu_hat_many((inst.q_star @ a)[None])[0])
        if val < best_val:
            best_val, best_a = val, a.copy()
    curve = np.cumsum(traj_mu - best_val)
    return PseudoRegretReport(float(curve[-1]), curve, best_a, best_val)


def sco_pseudo_regret(
    record: RunRecord, inst: ScoInstance, mc_samples: int, rng: RngStream
) -> float:
    return pseudo_regret_report(record, inst, mc_samples, rng).total


@dataclass
class SandwichReport:
    confidence_holds: bool
    confidence_margin: float
    n_violations: int
    lower_slack: np.ndarray
    upper_slack: np.ndarray


def sandwich_check(
    state: ScoState,
    inst: ScoInstance,
    alpha: float,
    probe_points: np.ndarray,
    mc_samples: int,
    rng: RngStream,
) -> SandwichReport:
    """Verify the optimism sandwich at probe actions, within MC tolerance.

    Uses the true transform (test-only privilege) to check the confidence
    condition sqrt(d_a) ||Qhat - Q*||_V <= alpha and then
    Lbar(a) <= mu(Q* a) <= Lbar(a) + 2 alpha sqrt(a^T V^{-1} a).
    Reports, never raises.
    """
    probes = np.atleast_2d(np.asarray(probe_points, dtype=float))
    delta_mat = inst.q_star - state.q_hat
    v_weighted = np.linalg.norm(delta_mat @ state.gram.chol, 2)
    margin = alpha - math.sqrt(inst.d_a) * v_weighted
    z_frozen = inst.loss.sample_z_batch(mc_samples, rng)

    def mu_and_err(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vals = inst.loss.batch_values(z_frozen[None, :, :], points[:, None, :])
        return vals.mean(axis=1), vals.std(axis=1, ddof=1) / math.sqrt(mc_samples)

    mu_true, err_true = mu_and_err(probes @ inst.q_star.T)
    mu_est, err_est = mu_and_err(probes @ state.q_hat.T)
    whiten = state.gram.inv_sqrt()
    bonus = alpha * np.max(np.abs(probes @ whiten.T), axis=1)
    lower = mu_est - bonus
    width = 2.0 * alpha * np.sqrt(np.einsum("ij,ij->i", probes, state.gram.solve(probes.T).T))
    tol = 3.0 * (err_true + err_est)
    lower_slack = mu_true - lower          # should be >= -tol
    upper_slack = lower + width - mu_true  # should be >= -tol
    violations = int(np.sum((lower_slack < -tol) | (upper_slack < -tol)))
    return SandwichReport(margin >= 0.0, float(margin), violations, lower_slack, upper_slack)
