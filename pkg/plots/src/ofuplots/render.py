"""Figure rendering from benchmark CSV outputs.

Consumes only the published CSV schemas (per-run files and the suite summary)
and never imports the solver package. Three figure kinds:

regret_curve    cumulative regret vs step, one line per run plus median band
loglog_scaling  median final regret vs horizon on log axes with fitted slope
epoch_timeline  epoch and subepoch boundaries across one run
"""

from __future__ import annotations

import csv
import glob as globlib
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["PlotSpec", "render", "fit_loglog_slope", "read_run_file", "read_summary_file"]

RUN_COLUMNS = [
    "t", "epoch", "subepoch", "cost", "comparator_cost", "cum_regret",
    "noise_err_sq", "logdet_v", "policy_switches",
]
SUMMARY_COLUMNS = [
    "algo", "T", "seed", "final_regret", "regret_vs_etc_baseline",
    "epochs", "max_subepochs", "noise_err_sum", "harmonic_sum",
]

KINDS = ("regret_curve", "loglog_scaling", "epoch_timeline")


@dataclass(frozen=True)
class PlotSpec:
    input_glob: str
    output_path: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown plot kind {self.kind!r}; choose from {KINDS}")


def _read_csv(path: str, expected_header: list[str]) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise ValueError(f"{path}: header {header} does not match the run schema")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected_header):
                raise ValueError(f"{path}: malformed row {lineno} ({len(row)} fields)")
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return header, rows


def read_run_file(path: str) -> dict[str, np.ndarray]:
    _, rows = _read_csv(path, RUN_COLUMNS)
    data = np.array(rows, dtype=float)
    return {name: data[:, i] for i, name in enumerate(RUN_COLUMNS)}


def read_summary_file(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: header does not match the summary schema")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(
                    {
                        "algo": row["algo"],
                        "T": int(row["T"]),
                        "seed": int(row["seed"]),
                        "final_regret": float(row["final_regret"]),
                    }
                )
            except ValueError as exc:
                raise ValueError(f"{path}: malformed row {lineno}: {exc}") from exc
    return out


def fit_loglog_slope(horizons: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of log(value) against log(horizon)."""
    coeffs = np.polyfit(np.log(np.asarray(horizons, dtype=float)),
                        np.log(np.asarray(values, dtype=float)), 1)
    return float(coeffs[0]), float(coeffs[1])


def _resolve_inputs(spec: PlotSpec) -> list[str]:
    paths = sorted(globlib.glob(spec.input_glob))
    if not paths:
        raise FileNotFoundError(f"no inputs match {spec.input_glob!r}")
    return paths


def _render_regret_curve(paths: list[str], ax) -> None:
    curves = []
    for path in paths:
        data = read_run_file(path)
        ax.plot(data["t"], data["cum_regret"], lw=0.8, alpha=0.55, label=Path(path).stem)
        curves.append(data["cum_regret"])
    lengths = {c.shape[0] for c in curves}
    if len(lengths) == 1 and len(curves) > 1:
        stack = np.vstack(curves)
        med = np.median(stack, axis=0)
        lo, hi = np.percentile(stack, [25, 75], axis=0)
        t = np.arange(1, med.shape[0] + 1)
        ax.plot(t, med, color="black", lw=1.8, label="median")
        ax.fill_between(t, lo, hi, color="black", alpha=0.15, linewidth=0)
    ax.set_xlabel("step")
    ax.set_ylabel("cumulative regret")
    if len(paths) <= 12:
        ax.legend(fontsize=6)


def _render_loglog(paths: list[str], ax) -> None:
    rows = []
    for path in paths:
        rows.extend(read_summary_file(path))
    by_algo: dict[str, dict[int, list[float]]] = {}
    for row in rows:
        by_algo.setdefault(row["algo"], {}).setdefault(row["T"], []).append(row["final_regret"])
    for algo, groups in sorted(by_algo.items()):
        horizons = np.array(sorted(groups))
        medians = np.array([np.median(groups[t]) for t in horizons])
        keep = medians > 0
        ax.loglog(horizons, medians, "o-", label=algo)
        if keep.sum() >= 2:
            slope, intercept = fit_loglog_slope(horizons[keep], medians[keep])
            fit = np.exp(intercept) * horizons**slope
            ax.loglog(horizons, fit, "--", lw=0.9,
                      label=f"{algo} fit: slope {slope:.3f}")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("median final regret")
    ax.legend(fontsize=7)


def _render_epoch_timeline(paths: list[str], ax) -> None:
    data = read_run_file(paths[0])
    t = data["t"]
    ax.step(t, data["epoch"], where="post", label="epoch")
    ax.step(t, data["subepoch"], where="post", label="subepoch", alpha=0.7)
    switches = np.flatnonzero(np.diff(data["policy_switches"]) > 0) + 1
    for s in switches:
        ax.axvline(t[s], color="gray", lw=0.4, alpha=0.4)
    ax.set_xlabel("step")
    ax.set_ylabel("schedule index")
    ax.legend(fontsize=7)


def render(spec: PlotSpec) -> str:
    """Render the figure and return the output path. Deterministic per input."""
    paths = _resolve_inputs(spec)
    fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=140)
    try:
        if spec.kind == "regret_curve":
            _render_regret_curve(paths, ax)
        elif spec.kind == "loglog_scaling":
            _render_loglog(paths, ax)
        else:
            _render_epoch_timeline(paths, ax)
        fig.tight_layout()
        fig.savefig(spec.output_path, metadata={"Software": "ofuplots"})
    finally:
        plt.close(fig)
    return spec.output_path
