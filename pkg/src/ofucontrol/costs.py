"""Stochastic convex cost families, jointly 1-Lipschitz in (x, u).

Each family draws an i.i.d. realization z per round and evaluates a convex
1-Lipschitz function of the stacked point p = (x, u) (or of q directly in
the hidden-transform setting). The stochastic part is bounded: on the
working ball, |c(p; z) - E c(p; z')| <= sigma_c.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .system import RngStream

__all__ = ["CostKind", "CostFamily"]


class CostKind(Enum):
    NORM_TARGET = "norm_target"
    HUBER_QUADRATIC = "huber_quadratic"
    RANDOM_LINEAR = "random_linear"


@dataclass(frozen=True)
class CostFamily:
    """A stochastic convex cost c(p; z) over points p of dimension `dim`.

    norm_target      c = ||p - z||,  z uniform on center + ball(target_radius)
    huber_quadratic  c = huber(||p - z||; knee) / max(1, knee), same z law;
                     quadratic inside the knee, affine outside, so it stays
                     1-Lipschitz for every knee value
    random_linear    c = <theta, p>,  theta uniform on ball(coeff_radius),
                     coeff_radius <= 1 keeps the Lipschitz bound
    """

    kind: CostKind
    dim: int
    target_radius: float = 1.0
    target_center: np.ndarray | None = None
    huber_knee: float = 1.0
    coeff_radius: float = 1.0
    work_radius: float = 1.0
    sigma_c: float = field(init=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("cost dim must be >= 1")
        center = self.target_center
        center = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        if center.shape != (self.dim,):
            raise ValueError("target_center must have shape (dim,)")
        object.__setattr__(self, "target_center", center)
        if self.kind is CostKind.NORM_TARGET:
            sig = 2.0 * self.target_radius
        elif self.kind is CostKind.HUBER_QUADRATIC:
            if self.huber_knee <= 0:
                raise ValueError("huber_knee must be positive")
            sig = 2.0 * self.target_radius * min(1.0, self.huber_knee)
        else:
            if not 0 <= self.coeff_radius <= 1:
                raise ValueError("coeff_radius must lie in [0, 1] to keep 1-Lipschitzness")
            sig = 2.0 * self.coeff_radius * self.work_radius
        object.__setattr__(self, "sigma_c", float(sig))

    # -- randomness ---------------------------------------------------------

    def sample_z_batch(self, n: int, rng: RngStream) -> np.ndarray:
        """n i.i.d. cost realizations as rows (targets or linear coefficients)."""
        gen = rng.generator
        raw = gen.standard_normal((n, self.dim))
        raw /= np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-300)
        radii = gen.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / self.dim)
        ball = raw * radii
        if self.kind is CostKind.RANDOM_LINEAR:
            return ball * self.coeff_radius
        return self.target_center + ball * self.target_radius

    def sample_z(self, rng: RngStream) -> np.ndarray:
        return self.sample_z_batch(1, rng)[0]

    # -- evaluation ---------------------------------------------------------

    def batch_values(self, z: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Evaluate c(p_i; z_i) rowwise; z and p broadcast on leading axes."""
        if self.kind is CostKind.RANDOM_LINEAR:
            return np.sum(z * p, axis=-1)
        v = p - z
        r = np.sqrt(np.einsum("...i,...i->...", v, v))
        if self.kind is CostKind.NORM_TARGET:
            return r
        knee = self.huber_knee
        quad = 0.5 * r**2
        lin = knee * (r - 0.5 * knee)
        return np.where(r <= knee, quad, lin) / max(1.0, knee)

    def batch_subgradients(self, z: np.ndarray, p: np.ndarray) -> np.ndarray:
        """A subdifferential element at each row; norm never exceeds 1.

        Norm kinks (p == z) return the zero vector, a valid and
        deterministic choice (0 / max(r, tiny) is exactly zero there).
        """
        if self.kind is CostKind.RANDOM_LINEAR:
            return np.broadcast_to(z, np.broadcast_shapes(z.shape, p.shape)).copy()
        v = p - z
        r = np.sqrt(np.einsum("...i,...i->...", v, v))[..., None]
        if self.kind is CostKind.NORM_TARGET:
            return v / np.maximum(r, 1e-300)
        knee = self.huber_knee
        scale = np.minimum(1.0, knee / np.maximum(r, 1e-300)) / max(1.0, knee)
        return v * scale

    def value(self, z: np.ndarray, x: np.ndarray, u: np.ndarray | None = None) -> float:
        p = self._stack(x, u)
        return float(self.batch_values(np.asarray(z, dtype=float), p))

    def subgradient(
        self, z: np.ndarray, x: np.ndarray, u: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Subgradient split into (state part, action part)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        p = self._stack(x, u)
        g = self.batch_subgradients(np.asarray(z, dtype=float), p)
        return g[: x.shape[0]], g[x.shape[0] :]

    def expected_cost_mc(
        self,
        x: np.ndarray,
        u: np.ndarray | None,
        n_samples: int,
        rng: RngStream,
    ) -> tuple[float, float]:
        """Monte-Carlo estimate of E_z c(p; z); returns (mean, stderr)."""
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        p = self._stack(x, u)
        vals = self.batch_values(self.sample_z_batch(n_samples, rng), p[None, :])
        stderr = float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
        return float(vals.mean()), stderr

    def _stack(self, x: np.ndarray, u: np.ndarray | None) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        p = x if u is None else np.concatenate([x, np.asarray(u, dtype=float).reshape(-1)])
        if p.shape[0] != self.dim:
            raise ValueError(f"point dim {p.shape[0]} does not match family dim {self.dim}")
        return p
