"""The optimistic control loop: epochs, subepochs, estimation, and action choice.

Each step plays the frozen subepoch policy on estimated disturbances, refreshes
the one-step model by recursive ridge regression, recovers the disturbance by a
projected residual, and grows the Gram matrix of regressors. An epoch ends when
the Gram determinant doubles (the unrolled model is then re-fit and the policy
reset); inside an epoch, subepochs double in length and each one starts by
solving the optimistic cost minimization over the previous subepoch's window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .costs import CostFamily
from .dap import DapPolicy, UnrolledModel, rho_dim
from .estimation import GramTracker, RlsState, det_doubled, estimate_noise, estimate_psi
from .optimism import OptimisticProblem, solve_optimistic_min
from .records import RunRecord
from .system import RngStream, SystemSpec, sample_noise_batch, step

__all__ = [
    "ControllerConfig",
    "EpochState",
    "ControlRunError",
    "theory_memory",
    "theory_parameters",
    "parameters_for_memory",
    "run_controller",
    "run_fixed_policy",
]


class ControlRunError(RuntimeError):
    """Numerical failure inside a run; carries the step index and state snapshot."""

    def __init__(self, step_index: int, state: "EpochState", cause: BaseException):
        super().__init__(f"run aborted at step {step_index}: {cause}")
        self.step_index = step_index
        self.state = state
        self.cause = cause


@dataclass
class ControllerConfig:
    """Resolved run parameters; alpha is the theory value, alpha_scale rescales it."""

    horizon: int
    h: int
    alpha: float
    lambda_w: float
    lambda_psi: float
    r_m: float
    w_bound: float
    alpha_scale: float = 1.0
    budget: int = 2000
    batch: int = 256

    def __post_init__(self):
        if self.h < 2:
            raise ValueError("memory h must be >= 2")
        for name in ("horizon", "alpha", "lambda_w", "lambda_psi", "r_m", "w_bound",
                     "alpha_scale", "budget", "batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def effective_alpha(self) -> float:
        return self.alpha * self.alpha_scale


@dataclass
class EpochState:
    """Cursor into the epoch/subepoch schedule plus the per-epoch frozen objects."""

    i: int
    j: int
    tau_i: int
    tau_ij: int
    gram_at_epoch_start: GramTracker
    psi_epoch: UnrolledModel
    current_policy: DapPolicy
    policy_switch_count: int = 0


def parameters_for_memory(
    sys: SystemSpec,
    r_m: float,
    t: int,
    delta: float,
    h: int,
    alpha_scale: float = 1.0,
    budget: int = 2000,
    batch: int = 256,
) -> ControllerConfig:
    """Instantiate the regularizers and optimism weight for a given memory h.

    lambda_w = 5 kappa^2 W^2 r_m^2 r_b^2 h / gamma, lambda_psi = 2 W^2 r_m^2 h^2,
    and alpha = 30 W r_m r_b kappa^2 (d_x + d_u) h^2
                sqrt(d_x gamma^-3 (d_x^2 kappa^2 + d_u r_b^2) ln(12 t / delta)).
    """
    if h < 2:
        raise ValueError("memory h must be >= 2")
    kappa, gamma, w, r_b = sys.kappa, sys.gamma, sys.w_bound, sys.r_b
    d_x, d_u = sys.d_x, sys.d_u
    lambda_w = 5.0 * kappa**2 * w**2 * r_m**2 * r_b**2 * h / gamma
    lambda_psi = 2.0 * w**2 * r_m**2 * h**2
    alpha = (
        30.0 * w * r_m * r_b * kappa**2 * (d_x + d_u) * h**2
        * math.sqrt(d_x * gamma**-3 * (d_x**2 * kappa**2 + d_u * r_b**2) * math.log(12 * t / delta))
    )
    return ControllerConfig(
        horizon=t, h=h, alpha=alpha, lambda_w=lambda_w, lambda_psi=lambda_psi,
        r_m=r_m, w_bound=w, alpha_scale=alpha_scale, budget=budget, batch=batch,
    )


def theory_memory(gamma: float, t: int) -> int:
    """h = max(2, ceil(ln(t) / gamma)); the guard keeps exact integers from
    rounding up on the last bit."""
    return max(2, math.ceil(math.log(t) / gamma - 1e-9))


def theory_parameters(
    sys: SystemSpec,
    r_m: float,
    t: int,
    delta: float,
    alpha_scale: float = 1.0,
    budget: int = 2000,
    batch: int = 256,
) -> ControllerConfig:
    """Parameter choices of the main guarantee at memory theory_memory(gamma, t).

    The memory formula is stated without rounding; we round up and floor at 2
    because the schedule's first subepochs have length 2h.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if t < 64 * r_m**2:
        raise ValueError(
            f"horizon {t} violates the guarantee's requirement t >= 64 r_m^2 = {64 * r_m**2:g}"
        )
    return parameters_for_memory(
        sys, r_m, t, delta, theory_memory(sys.gamma, t), alpha_scale, budget, batch
    )


def _lag_rows(pad: np.ndarray, steps: np.ndarray, offset: int, lags: int) -> np.ndarray:
    """pad rows for steps-minus-lag, lag = 1..lags; shape (len(steps), lags, d)."""
    idx = (np.asarray(steps) + offset)[:, None] - np.arange(1, lags + 1)[None, :]
    return pad[idx]


def run_controller(
    sys: SystemSpec, costs: CostFamily, cfg: ControllerConfig, rng: RngStream
) -> RunRecord:
    """Execute one full run and return its record (traces included).

    The decision path sees disturbances only through observed states; the true
    noise trace is consumed by the plant and logged for later comparator use.
    """
    t_max, h = cfg.horizon, cfg.h
    d_x, d_u = sys.d_x, sys.d_u
    if costs.dim != d_x + d_u:
        raise ValueError("cost family dimension must be d_x + d_u")
    p_dim = rho_dim(h, d_x, d_u)
    pad = 2 * h  # index offset so lags before step 1 read zero rows

    w_trace = sample_noise_batch(sys.noise, t_max, rng.spawn("plant-noise"))
    z_trace = costs.sample_z_batch(t_max, rng.spawn("cost-draws"))
    solver_rng = rng.spawn("subgradient-batches")

    rls = RlsState(d_x + d_u, d_x, cfg.lambda_w)
    gram = GramTracker(p_dim, cfg.lambda_psi)
    state = EpochState(
        i=1, j=1, tau_i=1, tau_ij=1,
        gram_at_epoch_start=gram.copy(),
        psi_epoch=UnrolledModel(np.zeros((d_x, p_dim)), h, d_x, d_u),
        current_policy=DapPolicy.zero(h, d_x, d_u, cfg.r_m),
    )

    w_hat_pad = np.zeros((t_max + pad, d_x))
    u_pad = np.zeros((t_max + pad, d_u))
    rhos = np.zeros((t_max, p_dim))
    states = np.zeros((t_max + 1, d_x))
    cols = {name: np.zeros(t_max) for name in
            ("cost", "action_norm", "state_norm", "noise_err", "logdet_v", "harmonic")}
    epoch_col = np.zeros(t_max, dtype=int)
    subepoch_col = np.zeros(t_max, dtype=int)
    switch_col = np.zeros(t_max, dtype=int)
    epoch_starts = [1]
    subepoch_starts: list[tuple[int, int, int]] = [(1, 1, 1)]

    x = states[0]
    for t in range(1, t_max + 1):
        k = t - 1
        w_lag = w_hat_pad[k + pad - 1 : k + pad - 1 - h : -1].reshape(-1)
        u = state.current_policy.m @ w_lag
        u_pad[k + pad] = u
        w_t = w_trace[k]
        x_next = step(sys, x, u, w_t)
        states[t] = x_next
        cols["cost"][k] = costs.value(z_trace[k], x, u)
        cols["action_norm"][k] = np.linalg.norm(u)
        cols["state_norm"][k] = np.linalg.norm(x)
        epoch_col[k] = state.i
        subepoch_col[k] = state.j

        rls.update(np.concatenate([x, u]), x_next)
        ab = rls.solve()

        # regressor rho_t = (u_{t+1-H}..u_t, w_hat_{t+1-H}..w_hat_{t-1})
        u_part = u_pad[k + pad - h + 1 : k + pad + 1].reshape(-1)
        w_part = w_hat_pad[k + pad - h + 1 : k + pad].reshape(-1)
        rho = np.concatenate([u_part, w_part])
        rhos[k] = rho
        cols["harmonic"][k] = gram.quad_form_inv(rho)
        gram.update(rho)
        cols["logdet_v"][k] = gram.logdet

        w_hat = estimate_noise(ab, x, u, x_next, cfg.w_bound)
        w_hat_pad[k + pad] = w_hat
        cols["noise_err"][k] = np.linalg.norm(w_t - w_hat)

        if det_doubled(gram, state.gram_at_epoch_start):
            state.i += 1
            state.j = 2
            state.tau_i = t + 1
            state.tau_ij = state.tau_i + 2 * h
            state.current_policy = DapPolicy.zero(h, d_x, d_u, cfg.r_m)
            state.policy_switch_count += 1
            state.gram_at_epoch_start = gram.copy()
            psi = estimate_psi(rhos[:t], states[1 : t + 1], cfg.lambda_psi)
            state.psi_epoch = UnrolledModel(psi, h, d_x, d_u)
            epoch_starts.append(state.tau_i)
            subepoch_starts.append((state.i, 2, state.tau_ij))

        if t + 1 - state.tau_i > 2 * (state.tau_ij - state.tau_i):
            prev_start = state.tau_ij
            state.j += 1
            state.tau_ij = t + 1
            window = np.arange(prev_start, t + 1)
            problem = OptimisticProblem(
                family=costs,
                z_window=z_trace[prev_start - 1 : t],
                w_lags=_lag_rows(w_hat_pad, window, pad - 1, 2 * h),
                psi=state.psi_epoch,
                gram=state.gram_at_epoch_start,
                alpha=cfg.effective_alpha,
                w_bound=cfg.w_bound,
                r_m=cfg.r_m,
            )
            try:
                state.current_policy = solve_optimistic_min(
                    problem, cfg.budget, m_init=state.current_policy.m,
                    rng=solver_rng, batch=cfg.batch,
                )
            except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
                raise ControlRunError(t, state, exc) from exc
            state.policy_switch_count += 1
            subepoch_starts.append((state.i, state.j, state.tau_ij))

        switch_col[k] = state.policy_switch_count
        x = x_next

    return RunRecord(
        t=np.arange(1, t_max + 1),
        epoch=epoch_col,
        subepoch=subepoch_col,
        cost=cols["cost"],
        action_norm=cols["action_norm"],
        state_norm=cols["state_norm"],
        noise_err=cols["noise_err"],
        logdet_v=cols["logdet_v"],
        policy_switches=switch_col,
        harmonic=cols["harmonic"],
        noise_trace=w_trace,
        z_trace=z_trace,
        w_hat=w_hat_pad[pad:],
        states=states,
        actions=u_pad[pad:],
        epoch_starts=epoch_starts,
        subepoch_starts=subepoch_starts,
        meta={"cfg": cfg, "d_x": d_x, "d_u": d_u},
    )


def run_fixed_policy(
    sys: SystemSpec,
    costs: CostFamily,
    policy: DapPolicy,
    noise_trace: np.ndarray,
    cost_trace: np.ndarray,
) -> np.ndarray:
    """Re-simulate a fixed policy on recorded randomness; returns its cost sequence.

    The comparator class acts on the true disturbances by definition, so the
    lag windows here read the recorded noise trace (zeros before step 1).
    """
    noise_trace = np.atleast_2d(np.asarray(noise_trace, dtype=float))
    t_max = noise_trace.shape[0]
    if np.atleast_2d(cost_trace).shape[0] != t_max:
        raise ValueError("noise and cost traces must have equal length")
    d_x = noise_trace.shape[1]
    h = policy.h
    pad = np.vstack([np.zeros((h, d_x)), noise_trace])
    # lag stack (w_{t-1}, ..., w_{t-H}) per step, matching the block layout
    lag = np.stack([pad[h + 1 - l - 1 : h + t_max - l] for l in range(1, h + 1)], axis=1)
    u_all = lag.reshape(t_max, -1) @ policy.m.T
    xs = np.zeros((t_max, d_x))
    a_mat, b_mat = sys.a_star, sys.b_star
    x = np.zeros(d_x)
    for t in range(t_max - 1):
        x = a_mat @ x + b_mat @ u_all[t] + noise_trace[t]
        xs[t + 1] = x
    pts = np.concatenate([xs, u_all], axis=1)
    return costs.batch_values(np.atleast_2d(cost_trace), pts)
