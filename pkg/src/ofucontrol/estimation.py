"""Regularized least squares, disturbance recovery, and Gram tracking.

The Gram matrix V_t = lambda I + sum_s rho_s rho_s^T drives both the epoch
schedule (determinant doubling) and the confidence geometry (its inverse
square root whitens the exploration bonus). V only ever grows by rank-1
terms, so we keep a Cholesky factor updated in O(p^2) and read the log
determinant off its diagonal.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "GramTracker",
    "RlsState",
    "estimate_noise",
    "estimate_psi",
    "det_doubled",
    "whitened_bonus_matrix",
    "cholesky_rank1_update",
]

_EIG_FLOOR = 1e-12


def cholesky_rank1_update(chol: np.ndarray, x: np.ndarray) -> np.ndarray:
    """In-place lower-triangular update so that L L^T gains x x^T."""
    x = x.copy()
    n = x.shape[0]
    for k in range(n):
        lkk = chol[k, k]
        r = np.hypot(lkk, x[k])
        c = r / lkk
        s = x[k] / lkk
        chol[k, k] = r
        if k + 1 < n:
            chol[k + 1 :, k] = (chol[k + 1 :, k] + s * x[k + 1 :]) / c
            x[k + 1 :] = c * x[k + 1 :] - s * chol[k + 1 :, k]
    return chol


class GramTracker:
    """V = lambda I + sum rho rho^T with Cholesky factor and tracked logdet."""

    def __init__(self, dim: int, lam: float):
        if lam <= 0:
            raise ValueError("regularizer must be positive")
        self.dim = dim
        self.lam = lam
        self.v = lam * np.eye(dim)
        self.chol = np.sqrt(lam) * np.eye(dim)
        self.logdet = dim * np.log(lam)
        self._inv_sqrt: np.ndarray | None = None

    def update(self, rho: np.ndarray) -> "GramTracker":
        rho = np.asarray(rho, dtype=float).reshape(-1)
        if rho.shape[0] != self.dim:
            raise ValueError("regressor dimension mismatch")
        self.v += np.outer(rho, rho)
        try:
            cholesky_rank1_update(self.chol, rho)
            diag = np.diag(self.chol)
            if not np.all(np.isfinite(diag)) or np.any(diag <= 0):
                raise FloatingPointError
        except FloatingPointError:
            self.chol = np.linalg.cholesky(self.v)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        self._inv_sqrt = None
        return self

    def quad_form_inv(self, rho: np.ndarray) -> float:
        """rho^T V^{-1} rho via one triangular solve."""
        y = scipy.linalg.solve_triangular(self.chol, rho, lower=True, check_finite=False)
        return float(y @ y)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """V^{-1} b for a vector or matrix right-hand side."""
        return scipy.linalg.cho_solve((self.chol, True), b, check_finite=False)

    def inv_sqrt(self) -> np.ndarray:
        """Symmetric principal V^{-1/2}, cached until the next update."""
        if self._inv_sqrt is None:
            evals, evecs = np.linalg.eigh(self.v)
            evals = np.maximum(evals, _EIG_FLOOR)
            self._inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
        return self._inv_sqrt

    def copy(self) -> "GramTracker":
        dup = GramTracker(self.dim, self.lam)
        dup.v = self.v.copy()
        dup.chol = self.chol.copy()
        dup.logdet = self.logdet
        return dup

    def recomputed_logdet(self) -> float:
        return float(np.linalg.slogdet(self.v)[1])


def det_doubled(g_now: GramTracker, g_epoch_start: GramTracker) -> bool:
    """True iff det(V_now) strictly exceeds twice det(V_epoch_start).

    A hair of slack keeps exact doubling (a strict-inequality boundary) from
    flipping on the last bit of the tracked log determinant.
    """
    if g_now.dim != g_epoch_start.dim:
        raise ValueError("tracker dimensions differ")
    return g_now.logdet - g_epoch_start.logdet > np.log(2.0) + 1e-9


def whitened_bonus_matrix(g: GramTracker, p_matrix: np.ndarray) -> np.ndarray:
    """V^{-1/2} P(M), the whitened operator the exploration bonus maximizes over."""
    p_matrix = np.atleast_2d(p_matrix)
    if p_matrix.shape[0] != g.dim:
        raise ValueError("row dimension of p_matrix must match the tracker")
    return g.inv_sqrt() @ p_matrix


class RlsState:
    """Recursive ridge regression: argmin sum ||theta z - y||^2 + lam ||theta||_F^2.

    Gram and cross terms are accumulated rank-1; solve() returns the exact
    ridge solution over everything seen so far (a (out_dim, in_dim) matrix).
    """

    def __init__(self, in_dim: int, out_dim: int, lam: float):
        if lam <= 0:
            raise ValueError("regularizer must be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.lam = lam
        self.chol = np.sqrt(lam) * np.eye(in_dim)
        self.cross = np.zeros((in_dim, out_dim))
        self.count = 0

    def update(self, z: np.ndarray, y: np.ndarray) -> "RlsState":
        z = np.asarray(z, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if z.shape[0] != self.in_dim or y.shape[0] != self.out_dim:
            raise ValueError("regressor or target dimension mismatch")
        cholesky_rank1_update(self.chol, z)
        self.cross += np.outer(z, y)
        self.count += 1
        return self

    def solve(self) -> np.ndarray:
        sol = scipy.linalg.cho_solve((self.chol, True), self.cross, check_finite=False)
        return sol.T


def estimate_noise(
    ab: np.ndarray, x: np.ndarray, u: np.ndarray, x_next: np.ndarray, w_bound: float
) -> np.ndarray:
    """Projected residual w_hat = Pi_{||.|| <= W}[x_next - A x - B u].

    ab is the stacked (A B) estimate of shape (d_x, d_x + d_u).
    """
    z = np.concatenate([np.asarray(x, dtype=float).reshape(-1), np.asarray(u, dtype=float).reshape(-1)])
    r = np.asarray(x_next, dtype=float).reshape(-1) - ab @ z
    nrm = np.linalg.norm(r)
    if nrm > w_bound:
        r = r * (w_bound / nrm)
    return r


def estimate_psi(rhos: np.ndarray, targets: np.ndarray, lambda_psi: float) -> np.ndarray:
    """Exact ridge solution Psi = argmin sum ||Psi rho_s - x_{s+1}||^2 + lam ||Psi||_F^2.

    rhos has shape (n, p), targets (n, d_x); an empty history returns zeros.
    """
    rhos = np.atleast_2d(np.asarray(rhos, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    p = rhos.shape[1]
    d = targets.shape[1]
    if rhos.shape[0] == 0:
        return np.zeros((d, p))
    if rhos.shape[0] != targets.shape[0]:
        raise ValueError("history lengths disagree")
    gram = lambda_psi * np.eye(p) + rhos.T @ rhos
    cross = rhos.T @ targets
    chol = np.linalg.cholesky(gram)
    return scipy.linalg.cho_solve((chol, True), cross, check_finite=False).T
