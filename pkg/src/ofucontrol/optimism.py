"""Optimistic cost minimization over disturbance action policies.

The subepoch objective
    sum_s c_s(x_s(M), u_s(M)) - alpha W ||V^{-1/2} P(M)||_inf
is nonconvex through the subtracted max-norm, but since
||X||_inf = max_{chi, k} chi * X_k, minimizing it equals taking the best of
2m convex problems, one per signed entry of the whitened operator. Each is
solved by projected subgradient descent on the Frobenius ball, candidates
are re-evaluated under the exact objective, and the argmin wins with a
lexicographic (chi, k) tie-break.

Subproblems whose bonus entry does not depend on M at all (the whitener does
not mix any banded row into that entry, e.g. V = lambda I with an identity
block entry) collapse into a single cost-only solve; more generally,
subproblems are grouped by their exact bonus gradient so duplicated work is
solved once. With alpha = 0 everything collapses to one convex problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import CostFamily
from .dap import DapPolicy, UnrolledModel, build_p_matrix, rho_dim
from .estimation import GramTracker
from .system import RngStream

__all__ = ["SubproblemIndex", "OptimisticProblem", "solve_subproblem", "solve_optimistic_min"]

FULL_BATCH_CAP = 256


@dataclass(frozen=True)
class SubproblemIndex:
    """Sign chi in {-1, +1} and linear entry index k into V^{-1/2} P(M)."""

    chi: int
    k: int

    def row_col(self, n_cols: int) -> tuple[int, int]:
        return self.k // n_cols, self.k % n_cols

    @staticmethod
    def enumerate(m: int) -> list["SubproblemIndex"]:
        return [SubproblemIndex(chi, k) for chi in (-1, 1) for k in range(m)]


@dataclass
class OptimisticProblem:
    """One subepoch's optimistic minimization instance.

    Window data references estimated disturbances only: `w_lags[s, l - 1]`
    holds w_hat_{step - l} for lags l = 1..2H (zeros before step 1), and
    `z_window` holds the per-step cost realizations.
    """

    family: CostFamily
    z_window: np.ndarray
    w_lags: np.ndarray
    psi: UnrolledModel
    gram: GramTracker
    alpha: float
    w_bound: float
    r_m: float
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        h, d_x, d_u = self.psi.h, self.psi.d_x, self.psi.d_u
        self.z_window = np.atleast_2d(np.asarray(self.z_window, dtype=float))
        if self.z_window.shape[0] == 0:
            self.z_window = self.z_window.reshape(0, self.family.dim)
        self.w_lags = np.asarray(self.w_lags, dtype=float).reshape(-1, 2 * h, d_x)
        if self.w_lags.shape[0] != self.z_window.shape[0]:
            raise ValueError("z window and noise lag window lengths disagree")
        if self.gram.dim != rho_dim(h, d_x, d_u):
            raise ValueError("gram dimension does not match the policy class")

    # -- derived geometry, computed once ------------------------------------

    @property
    def h(self) -> int:
        return self.psi.h

    @property
    def d_x(self) -> int:
        return self.psi.d_x

    @property
    def d_u(self) -> int:
        return self.psi.d_u

    @property
    def window_len(self) -> int:
        return self.z_window.shape[0]

    @property
    def n_cols(self) -> int:
        return (2 * self.h - 1) * self.d_x

    @property
    def m(self) -> int:
        return self.gram.dim * self.n_cols

    def _whiten(self) -> np.ndarray:
        if "whiten" not in self._cache:
            self._cache["whiten"] = self.gram.inv_sqrt()
        return self._cache["whiten"]

    def _psi_u(self) -> np.ndarray:
        # (H, d_x, d_u) stack of the unrolled model's action blocks
        if "psi_u" not in self._cache:
            self._cache["psi_u"] = np.stack([self.psi.u_block(r) for r in range(self.h)])
        return self._cache["psi_u"]

    def _wflat(self) -> np.ndarray:
        if "wflat" not in self._cache:
            self._cache["wflat"] = self.w_lags.reshape(self.window_len, -1)
        return self._cache["wflat"]

    def _xconst(self) -> np.ndarray:
        # Psi's noise blocks applied to the lagged w_hat, plus w_hat_{s-1}
        if "xconst" not in self._cache:
            h, d_x = self.h, self.d_x
            out = self.w_lags[:, 0, :].copy()
            for q in range(h - 1):
                out += self.w_lags[:, h - q - 1, :] @ self.psi.w_block(q).T
            self._cache["xconst"] = out
        return self._cache["xconst"]

    def _wshift(self) -> np.ndarray:
        # (S, H, H d_x): row r is the action-window stack for u_{s-H+r}
        if "wshift" not in self._cache:
            h, d_x = self.h, self.d_x
            wf = self._wflat()
            self._cache["wshift"] = np.stack(
                [wf[:, (h - r) * d_x : (2 * h - r) * d_x] for r in range(h)], axis=1
            )
        return self._cache["wshift"]

    def bonus_entry_gradient(self, idx: SubproblemIndex) -> np.ndarray:
        """Gradient of M -> (V^{-1/2} P(M))_k, a constant (d_u, H d_x) matrix."""
        h, d_x, d_u = self.h, self.d_x, self.d_u
        s_mat = self._whiten()
        a, b = idx.row_col(self.n_cols)
        cb, jj = b // d_x, b % d_x
        grad = np.zeros((d_u, h * d_x))
        for r in range(max(0, cb - h + 1), min(h - 1, cb) + 1):
            blk = h - (cb - r)
            grad[:, (blk - 1) * d_x + jj] += s_mat[a, r * d_u : (r + 1) * d_u]
        return grad

    # -- objective pieces ----------------------------------------------------

    def _surrogate_points(self, m_stack: np.ndarray, rows: np.ndarray | None) -> np.ndarray:
        """Stacked (x_s(M), u_s(M)) for each candidate M and window row."""
        wf = self._wflat()
        wshift = self._wshift()
        xconst = self._xconst()
        if rows is not None:
            wf, wshift, xconst = wf[rows], wshift[rows], xconst[rows]
        h, d_x = self.h, self.d_x
        u = np.einsum("kij,bj->kbi", m_stack, wf[:, : h * d_x])
        ushift = np.einsum("kij,brj->kbri", m_stack, wshift)
        x = np.einsum("rdi,kbri->kbd", self._psi_u(), ushift) + xconst[None, :, :]
        return np.concatenate([x, u], axis=2)

    def cost_sum(self, m_stack: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Window cost sums for a (K, d_u, H d_x) stack of parameter matrices."""
        if self.window_len == 0:
            return np.zeros(m_stack.shape[0])
        z = self.z_window if rows is None else self.z_window[rows]
        pts = self._surrogate_points(m_stack, rows)
        return self.family.batch_values(z[None, :, :], pts).sum(axis=1)

    def cost_subgradient(self, m_stack: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Subgradient of the (selected-row) cost sum for each stacked M."""
        k = m_stack.shape[0]
        if self.window_len == 0:
            return np.zeros_like(m_stack)
        z = self.z_window if rows is None else self.z_window[rows]
        wf = self._wflat() if rows is None else self._wflat()[rows]
        wshift = self._wshift() if rows is None else self._wshift()[rows]
        h, d_x = self.h, self.d_x
        pts = self._surrogate_points(m_stack, rows)
        g = self.family.batch_subgradients(z[None, :, :], pts)
        gx, gu = g[:, :, :d_x], g[:, :, d_x:]
        grad = np.einsum("kbi,bj->kij", gu, wf[:, : h * d_x])
        pullback = np.einsum("rdi,kbd->kbri", self._psi_u(), gx)
        grad += np.einsum("kbri,brj->kij", pullback, wshift)
        return grad

    def bonus_norm(self, policy_m: np.ndarray) -> float:
        """alpha W ||V^{-1/2} P(M)||_inf, the exact exploration bonus."""
        pol = DapPolicy(policy_m, self.h, self.r_m * (1 + 1e-9))
        whitened = self._whiten() @ build_p_matrix(pol)
        return float(self.alpha * self.w_bound * np.max(np.abs(whitened)))

    def full_objective(self, policy: DapPolicy) -> float:
        """The exact nonconvex objective: cost sum minus the max-norm bonus."""
        return float(self.cost_sum(policy.m[None])[0]) - self.bonus_norm(policy.m)

    def fixed_entry_objective(self, idx: SubproblemIndex, policy: DapPolicy) -> float:
        """Convex surrogate where the bonus locks onto signed entry (chi, k)."""
        pol_m = policy.m
        whitened = self._whiten() @ build_p_matrix(policy)
        entry = whitened[idx.row_col(self.n_cols)]
        cost = float(self.cost_sum(pol_m[None])[0])
        return cost - self.alpha * self.w_bound * idx.chi * float(entry)

    def fixed_entry_subgradient(self, idx: SubproblemIndex, policy: DapPolicy) -> np.ndarray:
        grad = self.cost_subgradient(policy.m[None])[0]
        grad -= self.alpha * self.w_bound * idx.chi * self.bonus_entry_gradient(idx)
        return grad


def _project_fro(m_stack: np.ndarray, radius: float) -> np.ndarray:
    norms = np.sqrt(np.einsum("kij,kij->k", m_stack, m_stack))
    scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return m_stack * scale[:, None, None]


def _psgd(
    problem: OptimisticProblem,
    bonus_grads: np.ndarray,
    budget: int,
    m_init: np.ndarray,
    rng: RngStream | None,
    batch: int,
) -> np.ndarray:
    """Batched projected subgradient descent; returns suffix-averaged iterates.

    Step size r_m / (G sqrt(n)) with G an online max-gradient-norm estimate.
    Windows longer than the batch cap use seeded minibatches, so runs remain
    deterministic for a fixed stream.
    """
    s_len = problem.window_len
    k = bonus_grads.shape[0]
    m_stack = np.repeat(m_init[None], k, axis=0)
    use_minibatch = s_len > batch and rng is not None
    gen = rng.generator if use_minibatch else None
    g_est = np.full(k, 1e-12)
    avg = np.zeros_like(m_stack)
    tail = max(1, budget // 2)
    sqrt_n = np.sqrt(budget)
    for it in range(budget):
        if use_minibatch:
            rows = gen.integers(0, s_len, size=batch)
            grad = problem.cost_subgradient(m_stack, rows) * (s_len / batch)
        else:
            grad = problem.cost_subgradient(m_stack)
        grad += bonus_grads
        g_norm = np.sqrt(np.einsum("kij,kij->k", grad, grad))
        g_est = np.maximum(g_est, g_norm)
        eta = problem.r_m / (g_est * sqrt_n)
        m_stack = _project_fro(m_stack - eta[:, None, None] * grad, problem.r_m)
        if it >= budget - tail:
            avg += m_stack
    return avg / tail


def solve_subproblem(
    problem: OptimisticProblem,
    idx: SubproblemIndex,
    budget: int,
    m_init: np.ndarray | None = None,
    rng: RngStream | None = None,
    batch: int = FULL_BATCH_CAP,
) -> tuple[DapPolicy, float]:
    """Minimize one signed-entry convex surrogate; returns (policy, value)."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if m_init is None:
        m_init = np.zeros((problem.d_u, problem.h * problem.d_x))
    bonus = -problem.alpha * problem.w_bound * idx.chi * problem.bonus_entry_gradient(idx)
    m_avg = _psgd(problem, bonus[None], budget, m_init, rng, batch)[0]
    policy = DapPolicy(_project_fro(m_avg[None], problem.r_m)[0], problem.h, problem.r_m)
    return policy, problem.fixed_entry_objective(idx, policy)


def solve_optimistic_min(
    problem: OptimisticProblem,
    budget: int,
    m_init: np.ndarray | None = None,
    rng: RngStream | None = None,
    batch: int = FULL_BATCH_CAP,
    diagnostics: list | None = None,
) -> DapPolicy:
    """Solve all 2m signed-entry problems and return the exact-objective argmin.

    Subproblems are grouped by their (constant) bonus gradient and each group
    is solved once; every group's candidate is then re-scored under the exact
    max-norm objective so solver noise cannot promote a spurious winner. Ties
    go to the smallest (chi, k) in enumeration order. Pass a list as
    `diagnostics` to collect one record per solved group.
    """
    if m_init is None:
        m_init = np.zeros((problem.d_u, problem.h * problem.d_x))
    indices = SubproblemIndex.enumerate(problem.m)
    scale = problem.alpha * problem.w_bound
    groups: dict[bytes, int] = {}
    bonus_list: list[np.ndarray] = []
    first_index: list[SubproblemIndex] = []
    group_size: list[int] = []
    for idx in indices:
        g = -scale * idx.chi * problem.bonus_entry_gradient(idx)
        key = g.tobytes()
        if key not in groups:
            groups[key] = len(bonus_list)
            bonus_list.append(g)
            first_index.append(idx)
            group_size.append(0)
        group_size[groups[key]] += 1
    m_avg = _psgd(problem, np.stack(bonus_list), budget, m_init, rng, batch)
    m_avg = _project_fro(m_avg, problem.r_m)
    costs = problem.cost_sum(m_avg)
    # groups were discovered in enumeration order, so scanning realizes the
    # smallest-(chi, k) tie-break
    best_pos, best_val = 0, np.inf
    for gi in range(len(bonus_list)):
        val = float(costs[gi]) - problem.bonus_norm(m_avg[gi])
        if diagnostics is not None:
            grad_norm = float(np.linalg.norm(problem.cost_subgradient(m_avg[gi][None])[0] + bonus_list[gi]))
            diagnostics.append(
                {
                    "chi": first_index[gi].chi,
                    "k": first_index[gi].k,
                    "members": group_size[gi],
                    "exact_value": val,
                    "grad_norm": grad_norm,
                }
            )
        if val < best_val:
            best_val, best_pos = val, gi
    return DapPolicy(m_avg[best_pos], problem.h, problem.r_m)
