"""Regret accounting, hindsight comparators, baselines, and suite orchestration.

Regret is measured against the best disturbance action policy in hindsight on
the identical noise and cost realization; both algorithms in a cell therefore
share one comparator. The explore-then-commit baseline reimplements the
classic two-phase strategy the optimistic controller improves on.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .controller import ControllerConfig, run_controller, run_fixed_policy
from .costs import CostFamily, CostKind
from .dap import DapPolicy, UnrolledModel, exact_unrolled_model, rho_dim
from .estimation import GramTracker, RlsState, estimate_noise, estimate_psi
from .optimism import OptimisticProblem, solve_optimistic_min
from .records import ExperimentSummary, RunRecord
from .sco import DecisionSet, ScoConfig, ScoInstance, pseudo_regret_report, run_sco
from .system import (
    NoiseKind,
    NoiseModel,
    RngStream,
    SystemSpec,
    make_strongly_stable_system,
    sample_noise_batch,
    step,
)

__all__ = [
    "best_dap_in_hindsight",
    "compute_regret",
    "baseline_explore_then_commit",
    "run_experiment_suite",
    "SuiteCell",
    "check_run_invariants",
    "disturbance_error_bound",
    "epoch_count_bound",
    "subepoch_count_bound",
    "ridge_confidence_bound",
    "psi_confidence_diagnostic",
    "hindsight_objective",
]


# -- hindsight comparator ----------------------------------------------------

def _lag_matrix(noise_trace: np.ndarray, h: int) -> np.ndarray:
    """(T, h d_x) rows of (w_{t-1}, ..., w_{t-h}), zeros before step 1."""
    t_max, d_x = noise_trace.shape
    pad = np.vstack([np.zeros((h, d_x)), noise_trace])
    return np.concatenate([pad[h - l : h - l + t_max] for l in range(1, h + 1)], axis=1)


def hindsight_objective(
    record: RunRecord, sys: SystemSpec, costs: CostFamily, policy: DapPolicy
) -> float:
    """Total realized cost of a fixed policy on the recorded randomness."""
    seq = run_fixed_policy(sys, costs, policy, record.noise_trace, record.z_trace)
    return float(seq.sum())


def _decay_length(sys: SystemSpec, tol: float = 1e-14) -> int:
    """Steps until kappa (1-gamma)^k drops below tol."""
    if sys.gamma >= 1.0:
        return 1
    return max(1, math.ceil(math.log(tol / sys.kappa) / math.log(1.0 - sys.gamma)))


def _forward_states(sys: SystemSpec, drive: np.ndarray, k_trunc: int) -> np.ndarray:
    """x_{t+1} = A x_t + drive_t from rest, as a truncated stable convolution."""
    t_max, d_x = drive.shape
    xs = np.zeros((t_max + 1, d_x))
    term = drive
    for i in range(1, min(k_trunc, t_max) + 1):
        xs[i:] += term[: t_max - i + 1]
        term = term @ sys.a_star.T
    return xs


def best_dap_in_hindsight(
    record: RunRecord,
    sys: SystemSpec,
    costs: CostFamily,
    h: int,
    r_m: float,
    budget: int = 250,
) -> DapPolicy:
    """Projected subgradient minimization of the re-simulated realized cost.

    The trajectory map M -> (x_t, u_t) is affine; each iterate needs one
    forward pass and one adjoint pass, both computed as convolutions against
    powers of A truncated where strong stability makes them numerically zero.
    The best iterate is re-scored exactly before returning.
    """
    w = record.noise_trace
    z = record.z_trace
    t_max, d_x = w.shape
    d_u = sys.d_u
    a_mat, b_mat = sys.a_star, sys.b_star
    k_trunc = _decay_length(sys)
    lag = _lag_matrix(w, h)
    m = np.zeros((d_u, h * d_x))
    g_est = 1e-12
    sqrt_n = math.sqrt(budget)
    iterates = [m.copy()]
    for _ in range(budget):
        u_all = lag @ m.T
        xs = _forward_states(sys, u_all @ b_mat.T + w, k_trunc)
        pts = np.concatenate([xs[:-1], u_all], axis=1)
        g = costs.batch_subgradients(z, pts)
        gx, gu = g[:, :d_x], g[:, d_x:]
        # adjoint: lam_t = gx_t + A^T lam_{t+1}, again a truncated convolution
        lam_adj = gx.copy()
        term = gx
        for i in range(1, min(k_trunc, t_max) + 1):
            term = term @ a_mat
            lam_adj[: t_max - i] += term[i:]
        grad_u = gu.copy()
        grad_u[:-1] += lam_adj[1:] @ b_mat
        grad = grad_u.T @ lag
        g_est = max(g_est, float(np.linalg.norm(grad)))
        m_next = m - (r_m / (g_est * sqrt_n)) * grad
        nrm = np.linalg.norm(m_next)
        m = m_next * (r_m / nrm) if nrm > r_m else m_next
        iterates.append(m.copy())
    # score a small pool of late iterates exactly and keep the winner
    pool = iterates[:: max(1, budget // 8)] + [iterates[-1]]
    best_m, best_val = None, np.inf
    for cand in pool:
        policy = DapPolicy(cand, h, r_m)
        val = float(run_fixed_policy(sys, costs, policy, w, z).sum())
        if val < best_val:
            best_val, best_m = val, cand
    return DapPolicy(best_m, h, r_m)


def compute_regret(record: RunRecord, comparator_costs: np.ndarray) -> np.ndarray:
    """Prefix sums of realized cost minus comparator cost."""
    comparator_costs = np.asarray(comparator_costs, dtype=float)
    if comparator_costs.shape[0] != record.horizon:
        raise ValueError("comparator sequence length mismatch")
    return np.cumsum(record.cost - comparator_costs)


# -- explore-then-commit baseline ---------------------------------------------

def baseline_explore_then_commit(
    sys: SystemSpec,
    costs: CostFamily,
    cfg: ControllerConfig,
    explore_fraction: float,
    rng: RngStream,
) -> RunRecord:
    """Random actions for a prefix, one model fit, one greedy policy, then hold.

    Exploration actions are uniform on the ball of radius r_m W sqrt(h) (the
    action magnitude a policy in the class could produce); the committed
    policy solves the same surrogate objective with no exploration bonus.
    """
    if not 0 < explore_fraction < 1:
        raise ValueError("explore_fraction must lie in (0, 1)")
    t_max, h = cfg.horizon, cfg.h
    d_x, d_u = sys.d_x, sys.d_u
    p_dim = rho_dim(h, d_x, d_u)
    pad = 2 * h
    n_explore = max(1, int(round(explore_fraction * t_max)))

    w_trace = sample_noise_batch(sys.noise, t_max, rng.spawn("plant-noise"))
    z_trace = costs.sample_z_batch(t_max, rng.spawn("cost-draws"))
    gen = rng.spawn("exploration").generator
    solver_rng = rng.spawn("subgradient-batches")

    raw = gen.standard_normal((n_explore, d_u))
    raw /= np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-300)
    radii = gen.uniform(0.0, 1.0, size=(n_explore, 1)) ** (1.0 / d_u)
    u_explore = raw * radii * (cfg.r_m * cfg.w_bound * math.sqrt(h))

    rls = RlsState(d_x + d_u, d_x, cfg.lambda_w)
    gram = GramTracker(p_dim, cfg.lambda_psi)
    w_hat_pad = np.zeros((t_max + pad, d_x))
    u_pad = np.zeros((t_max + pad, d_u))
    rhos = np.zeros((t_max, p_dim))
    states = np.zeros((t_max + 1, d_x))
    cols = {name: np.zeros(t_max) for name in
            ("cost", "action_norm", "state_norm", "noise_err", "logdet_v", "harmonic")}
    policy = DapPolicy.zero(h, d_x, d_u, cfg.r_m)
    switches = np.zeros(t_max, dtype=int)
    epochs = np.ones(t_max, dtype=int)
    subepochs = np.ones(t_max, dtype=int)

    x = states[0]
    for t in range(1, t_max + 1):
        k = t - 1
        if t <= n_explore:
            u = u_explore[k]
        else:
            w_lag = w_hat_pad[k + pad - 1 : k + pad - 1 - h : -1].reshape(-1)
            u = policy.m @ w_lag
        u_pad[k + pad] = u
        x_next = step(sys, x, u, w_trace[k])
        states[t] = x_next
        cols["cost"][k] = costs.value(z_trace[k], x, u)
        cols["action_norm"][k] = np.linalg.norm(u)
        cols["state_norm"][k] = np.linalg.norm(x)
        rls.update(np.concatenate([x, u]), x_next)
        ab = rls.solve()
        u_part = u_pad[k + pad - h + 1 : k + pad + 1].reshape(-1)
        w_part = w_hat_pad[k + pad - h + 1 : k + pad].reshape(-1)
        rho = np.concatenate([u_part, w_part])
        rhos[k] = rho
        cols["harmonic"][k] = gram.quad_form_inv(rho)
        gram.update(rho)
        cols["logdet_v"][k] = gram.logdet
        w_hat = estimate_noise(ab, x, u, x_next, cfg.w_bound)
        w_hat_pad[k + pad] = w_hat
        cols["noise_err"][k] = np.linalg.norm(w_trace[k] - w_hat)

        if t == n_explore and t < t_max:
            psi = estimate_psi(rhos[:t], states[1 : t + 1], cfg.lambda_psi)
            window = np.arange(1, t + 1)
            idx = (window + pad - 1)[:, None] - np.arange(1, 2 * h + 1)[None, :]
            problem = OptimisticProblem(
                family=costs,
                z_window=z_trace[:t],
                w_lags=w_hat_pad[idx],
                psi=UnrolledModel(psi, h, d_x, d_u),
                gram=gram.copy(),
                alpha=0.0,
                w_bound=cfg.w_bound,
                r_m=cfg.r_m,
            )
            policy = solve_optimistic_min(
                problem, cfg.budget, rng=solver_rng, batch=cfg.batch
            )
            subepochs[k + 1 :] = 2
            switches[k:] = 1
        x = x_next

    return RunRecord(
        t=np.arange(1, t_max + 1),
        epoch=epochs,
        subepoch=subepochs,
        cost=cols["cost"],
        action_norm=cols["action_norm"],
        state_norm=cols["state_norm"],
        noise_err=cols["noise_err"],
        logdet_v=cols["logdet_v"],
        policy_switches=switches,
        harmonic=cols["harmonic"],
        noise_trace=w_trace,
        z_trace=z_trace,
        w_hat=w_hat_pad[pad:],
        states=states,
        actions=u_pad[pad:],
        epoch_starts=[1],
        subepoch_starts=[(1, 1, 1), (1, 2, n_explore + 1)],
        meta={"cfg": cfg, "kind": "etc", "n_explore": n_explore, "d_x": d_x, "d_u": d_u},
    )


# -- theory-side bounds used as empirical ceilings -----------------------------

def disturbance_error_bound(sys: SystemSpec, r_m: float, h: int, t: int, delta: float) -> float:
    """C_w: the high-probability ceiling on sqrt(sum ||w_t - w_hat_t||^2)."""
    return (
        10.0 * sys.w_bound * sys.kappa * r_m * sys.r_b / sys.gamma
        * math.sqrt(
            h * (sys.d_x + sys.d_u)
            * (sys.d_x**2 * sys.kappa**2 + sys.d_u * sys.r_b**2)
            * math.log(t / delta)
        )
    )


def epoch_count_bound(d_x: int, d_u: int, h: int, t: int) -> float:
    return 2.0 * (d_x + d_u) * h * math.log(t)


def subepoch_count_bound(t: int) -> float:
    return 2.0 * math.log(t)


def harmonic_bound(dim: int, t: int) -> float:
    return 5.0 * dim * math.log(t)


def ridge_confidence_bound(w: float, d_y: int, t: int, delta: float, r_a: float, r_q: float) -> float:
    return 8.0 * w**2 * d_y**2 * math.log(t / delta) + 2.0 * r_a**2 * r_q**2


def check_run_invariants(record: RunRecord, cfg: ControllerConfig | None = None) -> list[str]:
    """Invariants every benchmark run must satisfy; returns violation messages."""
    problems = []
    t_max = record.horizon
    if t_max >= 4:
        p_dim = None
        if cfg is not None and "d_x" in record.meta:
            p_dim = rho_dim(cfg.h, record.meta["d_x"], record.meta["d_u"])
        elif record.meta.get("kind") == "sco":
            p_dim = record.actions.shape[1]
        if p_dim is not None:
            cap = harmonic_bound(p_dim, t_max)
            if record.harmonic_sum > cap:
                problems.append(
                    f"harmonic sum {record.harmonic_sum:.3f} exceeds 5 p log T = {cap:.3f}"
                )
    if cfg is not None and record.meta.get("kind") != "sco":
        d_x, d_u = record.meta["d_x"], record.meta["d_u"]
        if record.n_epochs > epoch_count_bound(d_x, d_u, cfg.h, t_max):
            problems.append(f"epoch count {record.n_epochs} exceeds its ceiling")
        if record.max_subepochs > subepoch_count_bound(t_max):
            problems.append(f"subepoch count {record.max_subepochs} exceeds 2 log T")
        w_hat_norms = np.linalg.norm(record.w_hat, axis=1)
        if np.any(w_hat_norms > cfg.w_bound * (1 + 1e-9)):
            problems.append("a disturbance estimate escaped the W ball")
    return problems


def psi_confidence_diagnostic(
    record: RunRecord, sys: SystemSpec, cfg: ControllerConfig, delta: float = 0.1
) -> tuple[np.ndarray, np.ndarray]:
    """Oracle check of the unrolled-model confidence inequality at epoch starts.

    Returns (lhs, rhs) per epoch start: tr(Delta^T V Delta) and its ceiling
    16 W^2 d_x^2 log(T/delta) + 4 lambda_psi ||Psi*||_F^2 + 2 sum ||e_s||^2,
    with the bias e_s measured exactly as x_{s+1} - Psi* rho_s - w_s.
    """
    h = cfg.h
    d_x, d_u = record.meta["d_x"], record.meta["d_u"]
    pad = 2 * h
    t_max = record.horizon
    psi_star = exact_unrolled_model(sys, h).psi
    u_pad = np.vstack([np.zeros((pad, d_u)), record.actions])
    w_pad = np.vstack([np.zeros((pad, d_x)), record.w_hat])
    rhos = np.zeros((t_max, rho_dim(h, d_x, d_u)))
    for t in range(1, t_max + 1):
        k = t - 1
        u_part = u_pad[k + pad - h + 1 : k + pad + 1].reshape(-1)
        w_part = w_pad[k + pad - h + 1 : k + pad].reshape(-1)
        rhos[k] = np.concatenate([u_part, w_part])
    bias = record.states[1:] - rhos @ psi_star.T - record.noise_trace
    bias_sq = np.concatenate([[0.0], np.cumsum(np.einsum("ij,ij->i", bias, bias))])
    base = 16.0 * cfg.w_bound**2 * d_x**2 * math.log(t_max / delta) + 4.0 * cfg.lambda_psi * float(
        np.sum(psi_star**2)
    )
    lhs, rhs = [], []
    for tau in record.epoch_starts[1:]:
        n = tau - 1  # data available: s = 1..tau-1
        psi_t = estimate_psi(rhos[:n], record.states[1 : n + 1], cfg.lambda_psi)
        v = cfg.lambda_psi * np.eye(rhos.shape[1]) + rhos[:n].T @ rhos[:n]
        delta_mat = psi_star - psi_t
        lhs.append(float(np.trace(delta_mat @ v @ delta_mat.T)))
        rhs.append(base + 2.0 * bias_sq[n])
    return np.array(lhs), np.array(rhs)


# -- suite orchestration -------------------------------------------------------

@dataclass
class SuiteCell:
    """One (T, seed) grid cell; algorithms run on shared randomness."""

    horizon: int
    seed: int
    algorithms: tuple[str, ...]
    sys: SystemSpec | None
    costs: CostFamily | None
    cfg: ControllerConfig | None
    explore_fraction: float = 0.15
    comparator_budget: int = 250
    sco_inst: ScoInstance | None = None
    sco_cfg: ScoConfig | None = None
    mc_samples: int = 4000


def _run_cell(cell: SuiteCell) -> list[tuple[ExperimentSummary, RunRecord]]:
    out: list[tuple[ExperimentSummary, RunRecord]] = []
    comparator_seq = None
    etc_regret = math.nan
    records: dict[str, RunRecord] = {}
    timings: dict[str, float] = {}
    for algo in cell.algorithms:
        start = time.perf_counter()
        root = RngStream(cell.seed, cell.horizon)
        if algo == "ofu":
            records[algo] = run_controller(cell.sys, cell.costs, cell.cfg, root)
        elif algo == "etc":
            records[algo] = baseline_explore_then_commit(
                cell.sys, cell.costs, cell.cfg, cell.explore_fraction, root
            )
        elif algo == "sco":
            records[algo] = run_sco(cell.sco_inst, cell.sco_cfg, root)
        else:
            raise ValueError(f"unknown algorithm {algo!r}")
        timings[algo] = (time.perf_counter() - start) * 1000.0
    control_algos = [a for a in cell.algorithms if a in ("ofu", "etc")]
    if control_algos:
        ref = records[control_algos[0]]
        best = best_dap_in_hindsight(
            ref, cell.sys, cell.costs, cell.cfg.h, cell.cfg.r_m, cell.comparator_budget
        )
        comparator_seq = run_fixed_policy(
            cell.sys, cell.costs, best, ref.noise_trace, ref.z_trace
        )
    finals: dict[str, float] = {}
    for algo in cell.algorithms:
        rec = records[algo]
        if algo == "sco":
            rep = pseudo_regret_report(
                rec, cell.sco_inst, cell.mc_samples, RngStream(987654321, cell.horizon)
            )
            rec.comparator_costs = np.full(rec.horizon, rep.mu_comparator)
            rec.cum_regret = rep.curve
            finals[algo] = rep.total
        else:
            rec.comparator_costs = comparator_seq
            rec.cum_regret = compute_regret(rec, comparator_seq)
            finals[algo] = float(rec.cum_regret[-1])
    if "etc" in finals:
        etc_regret = finals["etc"]
    for algo in cell.algorithms:
        rec = records[algo]
        out.append(
            (
                ExperimentSummary(
                    algo=algo,
                    horizon=cell.horizon,
                    seed=cell.seed,
                    final_regret=finals[algo],
                    regret_vs_etc_baseline=(finals[algo] - etc_regret)
                    if not math.isnan(etc_regret)
                    else math.nan,
                    epochs=rec.n_epochs,
                    max_subepochs=rec.max_subepochs,
                    noise_err_sum=rec.noise_err_sq_sum,
                    harmonic_sum=rec.harmonic_sum,
                    wallclock_ms=timings[algo],
                ),
                rec,
            )
        )
    return out


def run_experiment_suite(
    cells: list[SuiteCell], parallel: int = 1
) -> list[tuple[ExperimentSummary, RunRecord]]:
    """Execute every cell; results come back in deterministic cell order.

    Per-cell failures are recorded as summaries with NaN metrics so the rest
    of the grid still completes.
    """
    results: list[list[tuple[ExperimentSummary, RunRecord]]] = []
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_cell_safe, cells))
    else:
        results = [_run_cell_safe(cell) for cell in cells]
    return [item for group in results for item in group]


def _run_cell_safe(cell: SuiteCell) -> list[tuple[ExperimentSummary, RunRecord]]:
    try:
        return _run_cell(cell)
    except Exception as exc:  # noqa: BLE001 - suite must survive cell failures
        summaries = []
        for algo in cell.algorithms:
            summaries.append(
                (
                    ExperimentSummary(
                        algo=f"{algo}!failed:{type(exc).__name__}",
                        horizon=cell.horizon,
                        seed=cell.seed,
                        final_regret=math.nan,
                        regret_vs_etc_baseline=math.nan,
                        epochs=0,
                        max_subepochs=0,
                        noise_err_sum=math.nan,
                        harmonic_sum=math.nan,
                        wallclock_ms=math.nan,
                    ),
                    None,
                )
            )
        return summaries


# -- default benchmark instances ------------------------------------------------

def default_scalar_system(seed: int = 20240501) -> SystemSpec:
    return make_strongly_stable_system(
        d_x=1, d_u=1, kappa=1.0, gamma=0.5, r_b=1.0, rng=RngStream(seed, 11)
    )


def default_d2_system(seed: int = 20240502) -> SystemSpec:
    return make_strongly_stable_system(
        d_x=2, d_u=1, kappa=2.0, gamma=0.4, r_b=1.0, rng=RngStream(seed, 13)
    )


def default_cost(sys: SystemSpec, offset: float = 0.6) -> CostFamily:
    dim = sys.d_x + sys.d_u
    center = np.full(dim, offset / math.sqrt(dim))
    return CostFamily(CostKind.NORM_TARGET, dim, target_radius=1.0, target_center=center,
                      work_radius=6.0)


def default_sco_instance(
    d_a: int = 2, d_y: int = 2, seed: int = 20240503, offset: float = 0.8
) -> ScoInstance:
    gen = RngStream(seed, 17).generator
    q = gen.standard_normal((d_y, d_a))
    q *= 1.0 / (np.linalg.norm(q, 2) * (1 + 1e-12))
    center = np.full(d_y, offset / math.sqrt(d_y))
    loss = CostFamily(CostKind.NORM_TARGET, d_y, target_radius=1.0, target_center=center,
                      work_radius=6.0)
    noise = NoiseModel(NoiseKind.SCALED_RADEMACHER, d_y, 1.0)
    return ScoInstance(q, DecisionSet("ball", d_a, 2.0), 1.0, noise, loss)
