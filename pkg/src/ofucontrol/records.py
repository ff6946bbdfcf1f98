"""Per-run trajectory records and suite summary rows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["RunRecord", "ExperimentSummary"]


@dataclass
class RunRecord:
    """Everything one run produced: per-step rows plus the raw traces.

    Traces (true noises, cost realizations) are retained so hindsight
    comparators can be re-simulated on the identical randomness. Comparator
    columns stay None until a comparator pass fills them in.
    """

    t: np.ndarray
    epoch: np.ndarray
    subepoch: np.ndarray
    cost: np.ndarray
    action_norm: np.ndarray
    state_norm: np.ndarray
    noise_err: np.ndarray
    logdet_v: np.ndarray
    policy_switches: np.ndarray
    harmonic: np.ndarray
    noise_trace: np.ndarray
    z_trace: np.ndarray
    w_hat: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    epoch_starts: list[int]
    subepoch_starts: list[tuple[int, int, int]]
    meta: dict = field(default_factory=dict)
    comparator_costs: np.ndarray | None = None
    cum_regret: np.ndarray | None = None

    def __post_init__(self):
        n = self.t.shape[0]
        for name in ("epoch", "subepoch", "cost", "action_norm", "state_norm",
                     "noise_err", "logdet_v", "policy_switches", "harmonic"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"column {name} length != {n}")
        if not np.all(np.diff(self.t) == 1):
            raise ValueError("t must be 1..T")
        if np.any(np.diff(self.epoch) < 0) or np.any(np.diff(self.policy_switches) < 0):
            raise ValueError("epoch ids and switch counts must be non-decreasing")

    @property
    def horizon(self) -> int:
        return int(self.t.shape[0])

    @property
    def n_epochs(self) -> int:
        return int(self.epoch[-1]) if self.horizon else 0

    @property
    def max_subepochs(self) -> int:
        return int(self.subepoch.max()) if self.horizon else 0

    @property
    def harmonic_sum(self) -> float:
        return float(self.harmonic.sum())

    @property
    def noise_err_sq_sum(self) -> float:
        return float(np.sum(self.noise_err**2))


@dataclass
class ExperimentSummary:
    """One suite cell result; every derived number is recomputable from the run CSV."""

    algo: str
    horizon: int
    seed: int
    final_regret: float
    regret_vs_etc_baseline: float
    epochs: int
    max_subepochs: int
    noise_err_sum: float
    harmonic_sum: float
    wallclock_ms: float
