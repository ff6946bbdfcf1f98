"""Experiment configuration, CSV persistence, and command-line entry points.

Config files are INI text (sections of key = value pairs). Unknown keys are
rejected, defaults are filled in, and every module precondition is validated
before a run starts. Exit codes: 0 ok, 2 config error, 3 invariant violation,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bench
from .controller import ControlRunError, ControllerConfig, parameters_for_memory, theory_parameters
from .costs import CostFamily, CostKind
from .oracle import control_grid_gap, random_control_instance, random_sco_instance, sco_grid_gap
from .records import ExperimentSummary, RunRecord
from .sco import DecisionSet, ScoConfig, ScoInstance, sco_alpha_formula, sco_theory_parameters
from .system import NoiseKind, NoiseModel, RngStream, SystemSpec, make_strongly_stable_system

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "serialize_config",
    "write_run_csv",
    "read_run_csv",
    "write_summary_csv",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_NUMERIC = 4

_REQUIRED = object()

# section -> key -> (converter, default); _REQUIRED means the user must set it
_SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "seed": (int, 1),
        "out_dir": (str, "runs"),
    },
    "system": {
        "d_x": (int, _REQUIRED),
        "d_u": (int, _REQUIRED),
        "kappa": (float, 1.0),
        "gamma": (float, 0.5),
        "r_b": (float, 1.0),
        "w_bound": (float, 1.0),
        "noise": (str, "scaled_rademacher"),
        "noise_sigma": (float, 1.0),
        "gen_seed": (int, 20240501),
        # explicit plant matrices, row-major; empty means generate from the
        # certificate parameters above
        "a_star": ("list_float", []),
        "b_star": ("list_float", []),
    },
    "cost": {
        "family": (str, "norm_target"),
        "target_radius": (float, 1.0),
        "target_offset": (float, 0.6),
        "huber_knee": (float, 1.0),
        "coeff_radius": (float, 1.0),
        "work_radius": (float, 6.0),
    },
    "controller": {
        "horizon": (int, _REQUIRED),
        "delta": (float, 0.1),
        "r_m": (float, 1.0),
        "alpha_scale": (float, 1.0),
        "budget": (int, 2000),
        "batch": (int, 256),
        "h": (int, 0),  # 0 = use the theory memory
    },
    "suite": {
        "t_grid": ("list_int", [256, 1024, 4096, 16384]),
        "seeds": (int, 10),
        "algorithms": ("list_str", ["ofu", "etc"]),
        "parallel": (int, 1),
        "explore_fraction": (float, 0.15),
        "comparator_budget": (int, 250),
    },
    "sco": {
        "d_a": (int, 2),
        "d_y": (int, 2),
        "r_a": (float, 2.0),
        "r_q": (float, 1.0),
        "decision_set": (str, "ball"),
        "budget": (int, 80),
        "batch": (int, 32),
        "alpha_scale": (float, 1.0),
        "mc_samples": (int, 4000),
        "enforce_horizon": (str, "false"),
        "gen_seed": (int, 20240503),
        "target_offset": (float, 0.8),
    },
}


@dataclass
class ExperimentConfig:
    """Validated, fully defaulted experiment description."""

    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.values == other.values


def _convert(section: str, key: str, conv, raw: str):
    try:
        if conv == "list_int":
            return [int(tok) for tok in raw.replace(",", " ").split()]
        if conv == "list_float":
            return [float(tok) for tok in raw.replace(",", " ").split()]
        if conv == "list_str":
            return [tok for tok in raw.replace(",", " ").split()]
        return conv(raw)
    except ValueError as exc:
        raise ValueError(f"{section}.{key}: cannot parse {raw!r}") from exc


def parse_config(path: str | Path) -> ExperimentConfig:
    """Read, convert, default, and validate an experiment config file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown config key {section}.{key}")
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, (conv, default) in keys.items():
            if parser.has_option(section, key):
                values[section][key] = _convert(section, key, conv, parser.get(section, key))
            elif default is _REQUIRED:
                raise ValueError(f"missing required config key {section}.{key}")
            else:
                values[section][key] = default if not isinstance(default, list) else list(default)
    cfg = ExperimentConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    sysc = cfg["system"]
    if sysc["kappa"] < 1:
        raise ValueError("system.kappa: strong stability requires kappa >= 1")
    if not 0 < sysc["gamma"] <= 1:
        raise ValueError("system.gamma must lie in (0, 1]")
    if sysc["r_b"] <= 0 or sysc["w_bound"] <= 0:
        raise ValueError("system.r_b and system.w_bound must be positive")
    if sysc["noise"] not in [k.value for k in NoiseKind]:
        raise ValueError(f"system.noise: unknown kind {sysc['noise']!r}")
    if sysc["a_star"] or sysc["b_star"]:
        if len(sysc["a_star"]) != sysc["d_x"] ** 2:
            raise ValueError("system.a_star must hold d_x * d_x row-major entries")
        if len(sysc["b_star"]) != sysc["d_x"] * sysc["d_u"]:
            raise ValueError("system.b_star must hold d_x * d_u row-major entries")
    if cfg["cost"]["family"] not in [k.value for k in CostKind]:
        raise ValueError(f"cost.family: unknown kind {cfg['cost']['family']!r}")
    ctrl = cfg["controller"]
    if ctrl["horizon"] < 1:
        raise ValueError("controller.horizon must be >= 1")
    if not 0 < ctrl["delta"] < 1:
        raise ValueError("controller.delta must lie in (0, 1)")
    if ctrl["h"] != 0 and ctrl["h"] < 2:
        raise ValueError("controller.h must be 0 (theory) or >= 2")
    if cfg["suite"]["seeds"] < 1 or cfg["suite"]["parallel"] < 1:
        raise ValueError("suite.seeds and suite.parallel must be >= 1")
    for algo in cfg["suite"]["algorithms"]:
        if algo not in ("ofu", "etc", "sco"):
            raise ValueError(f"suite.algorithms: unknown algorithm {algo!r}")
    if cfg["sco"]["decision_set"] not in ("ball", "box"):
        raise ValueError("sco.decision_set must be 'ball' or 'box'")


def serialize_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Write a config back out; a parse round-trip reproduces it exactly."""
    parser = configparser.ConfigParser()
    for section, keys in cfg.values.items():
        parser[section] = {}
        for key, value in keys.items():
            if isinstance(value, list):
                parser[section][key] = ", ".join(str(v) for v in value)
            else:
                parser[section][key] = str(value)
    with open(path, "w", newline="\n") as fh:
        parser.write(fh)


# -- builders -----------------------------------------------------------------

def build_system(cfg: ExperimentConfig) -> SystemSpec:
    sysc = cfg["system"]
    if sysc["a_star"]:
        from .system import NoiseModel, verify_strong_stability

        d_x, d_u = sysc["d_x"], sysc["d_u"]
        a = np.array(sysc["a_star"], dtype=float).reshape(d_x, d_x)
        b = np.array(sysc["b_star"], dtype=float).reshape(d_x, d_u)
        if not verify_strong_stability(a, sysc["kappa"], sysc["gamma"], 50):
            raise ValueError("system.a_star fails the (kappa, gamma) stability certificate")
        noise = NoiseModel(NoiseKind(sysc["noise"]), d_x, sysc["w_bound"], sysc["noise_sigma"])
        return SystemSpec(a, b, sysc["kappa"], sysc["gamma"], sysc["w_bound"], sysc["r_b"], noise)
    return make_strongly_stable_system(
        d_x=sysc["d_x"],
        d_u=sysc["d_u"],
        kappa=sysc["kappa"],
        gamma=sysc["gamma"],
        r_b=sysc["r_b"],
        rng=RngStream(sysc["gen_seed"], 11),
        w_bound=sysc["w_bound"],
        noise_kind=NoiseKind(sysc["noise"]),
        base_sigma=sysc["noise_sigma"],
    )


def system_to_config_values(sys_spec: SystemSpec) -> dict[str, object]:
    """[system] section values embedding the plant matrices row-major."""
    return {
        "d_x": sys_spec.d_x,
        "d_u": sys_spec.d_u,
        "kappa": sys_spec.kappa,
        "gamma": sys_spec.gamma,
        "r_b": sys_spec.r_b,
        "w_bound": sys_spec.w_bound,
        "noise": sys_spec.noise.kind.value,
        "noise_sigma": sys_spec.noise.base_sigma,
        "gen_seed": 0,
        "a_star": [float(v) for v in sys_spec.a_star.reshape(-1)],
        "b_star": [float(v) for v in sys_spec.b_star.reshape(-1)],
    }


def build_cost(cfg: ExperimentConfig, dim: int) -> CostFamily:
    costc = cfg["cost"]
    center = np.full(dim, costc["target_offset"] / math.sqrt(dim))
    return CostFamily(
        CostKind(costc["family"]),
        dim,
        target_radius=costc["target_radius"],
        target_center=center,
        huber_knee=costc["huber_knee"],
        coeff_radius=costc["coeff_radius"],
        work_radius=costc["work_radius"],
    )


def build_controller(cfg: ExperimentConfig, sys_spec: SystemSpec, horizon: int | None = None) -> ControllerConfig:
    ctrl = cfg["controller"]
    t = horizon if horizon is not None else ctrl["horizon"]
    common = dict(
        alpha_scale=ctrl["alpha_scale"], budget=ctrl["budget"], batch=ctrl["batch"]
    )
    if ctrl["h"] == 0:
        return theory_parameters(sys_spec, ctrl["r_m"], t, ctrl["delta"], **common)
    return parameters_for_memory(sys_spec, ctrl["r_m"], t, ctrl["delta"], ctrl["h"], **common)


def build_sco_instance(cfg: ExperimentConfig) -> ScoInstance:
    scoc = cfg["sco"]
    gen = RngStream(scoc["gen_seed"], 17).generator
    q = gen.standard_normal((scoc["d_y"], scoc["d_a"]))
    q *= scoc["r_q"] / (np.linalg.norm(q, 2) * (1 + 1e-12))
    dim = scoc["d_y"]
    center = np.full(dim, scoc["target_offset"] / math.sqrt(dim))
    costc = cfg["cost"]
    loss = CostFamily(
        CostKind(costc["family"]), dim,
        target_radius=costc["target_radius"], target_center=center,
        huber_knee=costc["huber_knee"], coeff_radius=costc["coeff_radius"],
        work_radius=costc["work_radius"],
    )
    noise = NoiseModel(
        NoiseKind(cfg["system"]["noise"]), dim, cfg["system"]["w_bound"],
        cfg["system"]["noise_sigma"],
    )
    return ScoInstance(q, DecisionSet(scoc["decision_set"], scoc["d_a"], scoc["r_a"]), scoc["r_q"], noise, loss)


def build_sco_config(cfg: ExperimentConfig, inst: ScoInstance, horizon: int | None = None) -> ScoConfig:
    scoc = cfg["sco"]
    t = horizon if horizon is not None else cfg["controller"]["horizon"]
    delta = cfg["controller"]["delta"]
    if scoc["enforce_horizon"].lower() in ("true", "1", "yes"):
        lam, alpha = sco_theory_parameters(inst, t, delta)
    else:
        lam, alpha = inst.decision_set.r_a**2, sco_alpha_formula(inst, t, delta)
    return ScoConfig(
        horizon=t, alpha=alpha, lam=lam,
        budget=scoc["budget"], batch=scoc["batch"], alpha_scale=scoc["alpha_scale"],
    )


# -- CSV persistence -----------------------------------------------------------

_RUN_COLUMNS = [
    "t", "epoch", "subepoch", "cost", "comparator_cost", "cum_regret",
    "noise_err_sq", "logdet_v", "policy_switches",
]


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def write_run_csv(record: RunRecord, path: str | Path) -> None:
    """One header row plus one row per step, 12 significant digits, LF endings."""
    path = Path(path)
    comp = record.comparator_costs
    regret = record.cum_regret
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(_RUN_COLUMNS) + "\n")
            for k in range(record.horizon):
                row = [
                    str(int(record.t[k])),
                    str(int(record.epoch[k])),
                    str(int(record.subepoch[k])),
                    _fmt(record.cost[k]),
                    _fmt(comp[k]) if comp is not None else "nan",
                    _fmt(regret[k]) if regret is not None else "nan",
                    _fmt(record.noise_err[k] ** 2),
                    _fmt(record.logdet_v[k]),
                    str(int(record.policy_switches[k])),
                ]
                fh.write(",".join(row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write run CSV at {path}: {exc}") from exc


def read_run_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Read a run CSV back into column arrays (floats; ids as ints)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _RUN_COLUMNS:
            raise ValueError(f"unexpected run CSV header in {path}")
        rows = [line for line in reader]
    data = np.array(rows, dtype=float)
    out = {name: data[:, i] for i, name in enumerate(_RUN_COLUMNS)}
    for name in ("t", "epoch", "subepoch", "policy_switches"):
        out[name] = out[name].astype(int)
    return out


_SUMMARY_COLUMNS = [
    "algo", "T", "seed", "final_regret", "regret_vs_etc_baseline",
    "epochs", "max_subepochs", "noise_err_sum", "harmonic_sum",
]


def write_summary_csv(summaries: list[ExperimentSummary], path: str | Path) -> None:
    """Deterministic suite summary; wallclock goes to a sidecar timings file.

    Re-running an identical config reproduces this file byte for byte, which
    would be impossible with timing data inline.
    """
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(_SUMMARY_COLUMNS) + "\n")
        for s in summaries:
            fh.write(
                ",".join(
                    [
                        s.algo, str(s.horizon), str(s.seed), _fmt(s.final_regret),
                        _fmt(s.regret_vs_etc_baseline), str(s.epochs),
                        str(s.max_subepochs), _fmt(s.noise_err_sum), _fmt(s.harmonic_sum),
                    ]
                )
                + "\n"
            )


def write_timings_csv(summaries: list[ExperimentSummary], path: str | Path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("algo,T,seed,wallclock_ms\n")
        for s in summaries:
            fh.write(f"{s.algo},{s.horizon},{s.seed},{s.wallclock_ms:.3f}\n")


# -- commands -------------------------------------------------------------------

def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.out:
        cfg["experiment"]["out_dir"] = args.out
    if getattr(args, "seeds", None):
        cfg["suite"]["seeds"] = args.seeds
    if getattr(args, "parallel", None):
        cfg["suite"]["parallel"] = args.parallel
    if getattr(args, "alpha_scale", None):
        cfg["controller"]["alpha_scale"] = args.alpha_scale
        cfg["sco"]["alpha_scale"] = args.alpha_scale
    if getattr(args, "grid", None):
        cfg["suite"]["t_grid"] = [int(tok) for tok in args.grid.replace(",", " ").split()]
    return cfg


def _cmd_run(cfg: ExperimentConfig) -> int:
    sys_spec = build_system(cfg)
    costs = build_cost(cfg, sys_spec.d_x + sys_spec.d_u)
    ctrl = build_controller(cfg, sys_spec)
    out_dir = Path(cfg["experiment"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    violations = []
    for seed_off in range(cfg["suite"]["seeds"]):
        seed = cfg["experiment"]["seed"] + seed_off
        record = bench.run_controller(sys_spec, costs, ctrl, RngStream(seed, ctrl.horizon))
        best = bench.best_dap_in_hindsight(
            record, sys_spec, costs, ctrl.h, ctrl.r_m, cfg["suite"]["comparator_budget"]
        )
        record.comparator_costs = bench.run_fixed_policy(
            sys_spec, costs, best, record.noise_trace, record.z_trace
        )
        record.cum_regret = bench.compute_regret(record, record.comparator_costs)
        write_run_csv(record, out_dir / f"ofu_T{ctrl.horizon}_seed{seed}.csv")
        violations += bench.check_run_invariants(record, ctrl)
    if violations:
        for msg in violations:
            print(f"invariant violation: {msg}", file=_sys.stderr)
        return EXIT_INVARIANT
    print(f"wrote {cfg['suite']['seeds']} run file(s) to {out_dir}")
    return EXIT_OK


def _cmd_sco(cfg: ExperimentConfig) -> int:
    inst = build_sco_instance(cfg)
    sco_cfg = build_sco_config(cfg, inst)
    out_dir = Path(cfg["experiment"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    violations = []
    from .sco import pseudo_regret_report, run_sco

    for seed_off in range(cfg["suite"]["seeds"]):
        seed = cfg["experiment"]["seed"] + seed_off
        record = run_sco(inst, sco_cfg, RngStream(seed, sco_cfg.horizon))
        rep = pseudo_regret_report(
            record, inst, cfg["sco"]["mc_samples"], RngStream(987654321, sco_cfg.horizon)
        )
        record.comparator_costs = np.full(record.horizon, rep.mu_comparator)
        record.cum_regret = rep.curve
        write_run_csv(record, out_dir / f"sco_T{sco_cfg.horizon}_seed{seed}.csv")
        violations += bench.check_run_invariants(record)
    if violations:
        for msg in violations:
            print(f"invariant violation: {msg}", file=_sys.stderr)
        return EXIT_INVARIANT
    print(f"wrote {cfg['suite']['seeds']} run file(s) to {out_dir}")
    return EXIT_OK


def _cmd_suite(cfg: ExperimentConfig) -> int:
    out_dir = Path(cfg["experiment"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    algos = tuple(cfg["suite"]["algorithms"])
    cells = []
    needs_control = any(a in ("ofu", "etc") for a in algos)
    sys_spec = build_system(cfg) if needs_control else None
    for t in cfg["suite"]["t_grid"]:
        for seed_off in range(cfg["suite"]["seeds"]):
            seed = cfg["experiment"]["seed"] + seed_off
            cell = bench.SuiteCell(
                horizon=t,
                seed=seed,
                algorithms=algos,
                sys=sys_spec,
                costs=build_cost(cfg, sys_spec.d_x + sys_spec.d_u) if needs_control else None,
                cfg=build_controller(cfg, sys_spec, t) if needs_control else None,
                explore_fraction=cfg["suite"]["explore_fraction"],
                comparator_budget=cfg["suite"]["comparator_budget"],
                mc_samples=cfg["sco"]["mc_samples"],
            )
            if "sco" in algos:
                inst = build_sco_instance(cfg)
                cell.sco_inst = inst
                cell.sco_cfg = build_sco_config(cfg, inst, t)
            cells.append(cell)
    results = bench.run_experiment_suite(cells, cfg["suite"]["parallel"])
    summaries = [s for s, _ in results]
    violations = []
    for summary, record in results:
        if record is None:
            continue
        base = summary.algo
        write_run_csv(record, out_dir / f"{base}_T{summary.horizon}_seed{summary.seed}.csv")
        ctrl_cfg = record.meta.get("cfg") if base in ("ofu", "etc") else None
        violations += bench.check_run_invariants(
            record, ctrl_cfg if isinstance(ctrl_cfg, ControllerConfig) else None
        )
    write_summary_csv(summaries, out_dir / "summary.csv")
    write_timings_csv(summaries, out_dir / "timings.csv")
    failed = [s for s in summaries if "!failed" in s.algo]
    if failed:
        for s in failed:
            print(f"cell failed: {s.algo} T={s.horizon} seed={s.seed}", file=_sys.stderr)
        return EXIT_NUMERIC
    if violations:
        for msg in violations:
            print(f"invariant violation: {msg}", file=_sys.stderr)
        return EXIT_INVARIANT
    print(f"wrote summary for {len(summaries)} runs to {out_dir / 'summary.csv'}")
    return EXIT_OK


def _cmd_oracle(instances: int) -> int:
    worst_control, worst_sco = 0.0, 0.0
    for i in range(instances):
        rep = control_grid_gap(random_control_instance(1000 + i))
        worst_control = max(worst_control, abs(rep.gap))
        inst, state = random_sco_instance(2000 + i)
        rep2 = sco_grid_gap(inst, state, alpha=1.0 + 0.2 * i)
        worst_sco = max(worst_sco, abs(rep2.gap))
    print(f"worst |relaxation - grid| gap: control {worst_control:.2e}, sco {worst_sco:.2e}")
    if worst_control > 1e-3 or worst_sco > 1e-3:
        print("grid oracle disagreement above tolerance", file=_sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ofucontrol")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sco", "suite"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seeds", type=int, default=None)
        p.add_argument("--parallel", type=int, default=None)
        p.add_argument("--alpha-scale", dest="alpha_scale", type=float, default=None)
        p.add_argument("--grid", default=None)
    p_oracle = sub.add_parser("oracle")
    p_oracle.add_argument("--instances", type=int, default=20)
    args = parser.parse_args(argv)

    if args.command == "oracle":
        return _cmd_oracle(args.instances)
    try:
        cfg = _apply_overrides(parse_config(args.config), args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return _cmd_run(cfg)
        if args.command == "sco":
            return _cmd_sco(cfg)
        return _cmd_suite(cfg)
    except ControlRunError as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
