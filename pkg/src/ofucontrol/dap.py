"""Disturbance action policies and their bounded-memory algebra.

A policy is a matrix M = [M^[1] ... M^[H]] acting on the last H disturbances,
u_t = sum_h M^[h] w_{t-h}. The block operator P(M) stacks the H most recent
actions over the H-1 most recent disturbances, so that the regressor
rho_t = P(M) w_{t+1-2H:t-1}, and the unrolled model Psi maps rho to the next
state up to a geometrically small remainder.

Noise windows are arrays of shape (len, d_x) ordered by increasing time;
entries for steps before t = 1 are zero vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .system import SystemSpec

__all__ = [
    "DapPolicy",
    "UnrolledModel",
    "build_p_matrix",
    "dap_action",
    "dap_rho",
    "surrogate_state",
    "exact_unrolled_model",
    "rho_dim",
]


def rho_dim(h: int, d_x: int, d_u: int) -> int:
    return h * d_u + (h - 1) * d_x


@dataclass(frozen=True)
class DapPolicy:
    """Parameter matrix m of shape (d_u, H d_x) with ||m||_F <= r_m."""

    m: np.ndarray
    h: int
    r_m: float

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.m, dtype=float))
        if self.h < 1:
            raise ValueError("memory h must be >= 1")
        if m.shape[1] % self.h != 0:
            raise ValueError("column count must be a multiple of h")
        if np.linalg.norm(m) > self.r_m * (1 + 1e-9):
            raise ValueError("Frobenius norm exceeds r_m")
        object.__setattr__(self, "m", m)

    @property
    def d_u(self) -> int:
        return self.m.shape[0]

    @property
    def d_x(self) -> int:
        return self.m.shape[1] // self.h

    def block(self, h: int) -> np.ndarray:
        """M^[h] for h in 1..H."""
        d = self.d_x
        return self.m[:, (h - 1) * d : h * d]

    @staticmethod
    def zero(h: int, d_x: int, d_u: int, r_m: float) -> "DapPolicy":
        return DapPolicy(np.zeros((d_u, h * d_x)), h, r_m)


@dataclass(frozen=True)
class UnrolledModel:
    """Matrix psi of shape (d_x, H d_u + (H-1) d_x) acting on rho."""

    psi: np.ndarray
    h: int
    d_x: int
    d_u: int

    def __post_init__(self):
        psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        expected = (self.d_x, rho_dim(self.h, self.d_x, self.d_u))
        if psi.shape != expected:
            raise ValueError(f"psi shape {psi.shape} != {expected}")
        object.__setattr__(self, "psi", psi)

    def u_block(self, r: int) -> np.ndarray:
        """Column block multiplying u_{t-H+r} for r in 0..H-1."""
        return self.psi[:, r * self.d_u : (r + 1) * self.d_u]

    def w_block(self, q: int) -> np.ndarray:
        """Column block multiplying w_{t-H+q} for q in 0..H-2."""
        off = self.h * self.d_u
        return self.psi[:, off + q * self.d_x : off + (q + 1) * self.d_x]


def _window(window: np.ndarray, length: int, d_x: int) -> np.ndarray:
    win = np.atleast_2d(np.asarray(window, dtype=float))
    if win.shape != (length, d_x):
        raise ValueError(f"noise window shape {win.shape} != ({length}, {d_x})")
    return win


def dap_action(policy: DapPolicy, window: np.ndarray) -> np.ndarray:
    """u_t = sum_h M^[h] w_{t-h}; window rows are w_{t-H} .. w_{t-1}."""
    win = _window(window, policy.h, policy.d_x)
    # stacking w_{t-1}, w_{t-2}, ... lines up with the [M^[1] ... M^[H]] layout
    return policy.m @ win[::-1].reshape(-1)


def dap_rho(policy: DapPolicy, window: np.ndarray) -> np.ndarray:
    """Regressor (u_{t+1-H} .. u_t, w_{t+1-H} .. w_{t-1}) from w_{t+1-2H} .. w_{t-1}.

    Computed directly from dap_action; equals build_p_matrix(policy) applied
    to the stacked window.
    """
    h, d_x = policy.h, policy.d_x
    win = _window(window, 2 * h - 1, d_x)
    parts = [dap_action(policy, win[r : r + h]) for r in range(h)]
    parts.append(win[h:].reshape(-1))
    return np.concatenate(parts)


def build_p_matrix(policy: DapPolicy) -> np.ndarray:
    """Materialize the banded operator P(M) with the shifted identity tail."""
    h, d_x, d_u = policy.h, policy.d_x, policy.d_u
    rows = rho_dim(h, d_x, d_u)
    cols = (2 * h - 1) * d_x
    p = np.zeros((rows, cols))
    for r in range(h):
        for c in range(r, r + h):
            blk = policy.block(h - (c - r))
            p[r * d_u : (r + 1) * d_u, c * d_x : (c + 1) * d_x] = blk
    for k in range(h - 1):
        i = h * d_u + k * d_x
        j = (h + k) * d_x
        p[i : i + d_x, j : j + d_x] = np.eye(d_x)
    return p


def surrogate_state(policy: DapPolicy, psi: UnrolledModel, window: np.ndarray) -> np.ndarray:
    """x_t(M; Psi, w) = Psi rho_{t-1}(M; w) + w_{t-1}; window is w_{t-2H} .. w_{t-1}."""
    h, d_x = policy.h, policy.d_x
    win = _window(window, 2 * h, d_x)
    if psi.h != h or psi.d_x != d_x or psi.d_u != policy.d_u:
        raise ValueError("psi and policy dimensions disagree")
    return psi.psi @ dap_rho(policy, win[:-1]) + win[-1]


def exact_unrolled_model(sys: SystemSpec, h: int) -> UnrolledModel:
    """Psi_star = [A^{H-1}B, ..., AB, B, A^{H-1}, ..., A] from the true plant."""
    if h < 1:
        raise ValueError("memory h must be >= 1")
    d_x, d_u = sys.d_x, sys.d_u
    powers = [np.eye(d_x)]
    for _ in range(h - 1):
        powers.append(sys.a_star @ powers[-1])
    u_blocks = [powers[h - 1 - r] @ sys.b_star for r in range(h)]
    w_blocks = [powers[h - 1 - q] for q in range(h - 1)]
    psi = np.concatenate(u_blocks + w_blocks, axis=1) if w_blocks else np.concatenate(u_blocks, axis=1)
    return UnrolledModel(psi, h, d_x, d_u)
