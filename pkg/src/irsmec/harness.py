"""Command-line experiments: channel files, feasibility sweeps and ratio optimization.

Every subcommand writes CSV files plus ``manifest.json`` into the output
directory. Results are deterministic functions of the config and seeds.

Exit codes: 0 success, 2 bad configuration, 3 solver failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, qcqp
from .chanmodel import (ChannelFileError, SystemGeometry, calibrated_geometry, generate_channels,
                        paper_geometry, save_channels)
from .econ import OffloadEconomy, TaskProfile, derive_economy, ratio_objective
from .feasibility import (FeasibilityOptions, SolverFailure, feasibility_check, random_phase,
                          sweep_outcomes)
from .signal import rates
from .sumratio import SumRatioOptions, optimize

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
MODES = ("none", "random", "optimized")
STREAM_TRACE_START = 2  # rng stream tags, combined with the seed
STREAM_OPT_START = 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    geometry: dict = field(default_factory=dict)
    preset: str = "calibrated"     # calibrated | paper
    n_elements: list[int] = field(default_factory=lambda: [30])
    rate_min: float = 2.1
    rate_max: float = 2.9
    rate_step: float = 0.1
    floor: float = 1.0             # common floor for the optimize experiment
    trials: int = 50
    seed: int = 0
    economy: dict = field(default_factory=lambda: {"A": 1.0, "C": 0.0})
    profiles: list[dict] = field(default_factory=list)
    feasibility: dict = field(default_factory=dict)
    sumratio: dict = field(default_factory=dict)
    qcqp: dict = field(default_factory=dict)
    workers: int = 1
    out: str = "results"

    def validate(self) -> None:
        if self.rate_min > self.rate_max:
            raise ConfigError("rate_min must not exceed rate_max")
        if self.rate_step <= 0:
            raise ConfigError("rate_step must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.preset not in ("calibrated", "paper"):
            raise ConfigError(f"unknown geometry preset {self.preset!r}")
        if not self.n_elements or any(n < 0 for n in self.n_elements):
            raise ConfigError("n_elements must be a non-empty list of counts >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def floors(self) -> np.ndarray:
        n = int(np.floor((self.rate_max - self.rate_min) / self.rate_step + 1e-9)) + 1
        return np.round(self.rate_min + self.rate_step * np.arange(n), 10)

    def geometry_for(self, n: int) -> SystemGeometry:
        extra = dict(self.geometry)
        if "user_positions" in extra:
            extra["user_positions"] = tuple(tuple(map(float, p)) for p in extra["user_positions"])
        for key in ("ap_position", "irs_position"):
            if key in extra:
                extra[key] = tuple(map(float, extra[key]))
        make = calibrated_geometry if self.preset == "calibrated" else paper_geometry
        try:
            geo = make(n, **extra)
            geo.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad geometry: {exc}") from exc
        return geo

    def solver_options(self) -> qcqp.SolverOptions:
        return _build(qcqp.SolverOptions, self.qcqp, "qcqp")

    def feasibility_options(self) -> FeasibilityOptions:
        opts = _build(FeasibilityOptions, self.feasibility, "feasibility")
        return replace(opts, solver=self.solver_options())

    def sumratio_options(self) -> SumRatioOptions:
        opts = _build(SumRatioOptions, self.sumratio, "sumratio")
        return replace(opts, solver=self.solver_options(), feasibility=self.feasibility_options())

    def economy_for(self, K: int) -> OffloadEconomy:
        floors = np.full(K, float(self.floor))
        if self.profiles:
            if len(self.profiles) != K:
                raise ConfigError(f"{len(self.profiles)} task profiles for {K} users")
            try:
                return derive_economy([TaskProfile(**p) for p in self.profiles], floors)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad task profile: {exc}") from exc
        A = float(self.economy.get("A", 1.0))
        C = float(self.economy.get("C", 0.0))
        return OffloadEconomy(np.full(K, C), np.full(K, A), floors)


def _build(cls, values: dict, section: str):
    names = {f.name for f in fields(cls)} - {"solver", "feasibility"}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {section} options: {sorted(unknown)}")
    return cls(**values)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "n_elements" in data and isinstance(data["n_elements"], int):
        data["n_elements"] = [data["n_elements"]]
    return ExperimentConfig(**data)


# -- output helpers ----------------------------------------------------------

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, seeds, files, notes=()):
    manifest = {
        "command": command,
        "config": asdict(cfg),
        "seeds": [int(s) for s in seeds],
        "outputs": sorted(files),
        "versions": {"irsmec": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": sys.version.split()[0]},
        "notes": list(notes),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _seeds(cfg: ExperimentConfig):
    return [cfg.seed + i for i in range(cfg.trials)]


def _map(fn, jobs, workers: int):
    if workers == 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


# -- subcommands -------------------------------------------------------------

def cmd_gen_channels(cfg: ExperimentConfig, out: Path) -> list[str]:
    files = []
    for n in cfg.n_elements:
        geo = cfg.geometry_for(n)
        for seed in _seeds(cfg):
            name = f"channels_N{n}_seed{seed}.txt"
            save_channels(generate_channels(geo, seed), out / name)
            files.append(name)
    write_manifest(out, "gen-channels", cfg, _seeds(cfg), files)
    return files


def cmd_feas_trace(cfg: ExperimentConfig, out: Path) -> list[str]:
    """One realization, common random start, feasibility check at every floor of the sweep."""
    n = cfg.n_elements[0]
    ch = generate_channels(cfg.geometry_for(n), cfg.seed)
    phi0 = random_phase(ch.N, np.random.default_rng([cfg.seed, STREAM_TRACE_START]))
    opts = cfg.feasibility_options()
    rows, summary = [], []
    for floor in cfg.floors():
        res = feasibility_check(ch, np.full(ch.K, floor), opts, start=phi0)
        for it, (alpha, r) in enumerate(zip(res.alpha_trace, res.rate_trace)):
            rows.append([floor, it, alpha, *r])
        summary.append([floor, int(res.feasible), res.iterations, res.alpha_trace[-1]])
    rate_cols = [f"rate_{k}" for k in range(ch.K)]
    write_csv(out / "feas_trace.csv", ["floor", "iteration", "alpha", *rate_cols], rows)
    write_csv(out / "feas_trace_summary.csv", ["floor", "feasible", "iterations", "alpha"],
              summary)
    files = ["feas_trace.csv", "feas_trace_summary.csv"]
    write_manifest(out, "feas-trace", cfg, [cfg.seed], files,
                   [f"N={n}; every floor starts from one random phase vector"])
    return files


def _prob_trial(cfg: ExperimentConfig, n: int, seed: int):
    geo = cfg.geometry_for(n)
    opts = cfg.feasibility_options()
    floors = cfg.floors()
    out = sweep_outcomes(geo, floors, seed, opts)
    return [(n, floor, seed, {m: bool(out[m][i]) for m in MODES})
            for i, floor in enumerate(floors)]


def cmd_feas_prob(cfg: ExperimentConfig, out: Path) -> list[str]:
    jobs = [(cfg, n, s) for n in cfg.n_elements for s in _seeds(cfg)]
    results = [row for chunk in _map(_prob_trial, jobs, cfg.workers) for row in chunk]
    results.sort(key=lambda r: (r[0], r[1], r[2]))
    trial_rows = [[n, floor, seed, *(int(o[m]) for m in MODES)] for n, floor, seed, o in results]
    agg = {}
    for n, floor, _, o in results:
        for m in MODES:
            agg.setdefault((n, floor, m), []).append(o[m])
    rows = [[n, floor, m, int(sum(v)), len(v), float(np.mean(v))]
            for (n, floor, m), v in sorted(agg.items(), key=lambda kv: (kv[0][0], kv[0][1],
                                                                       MODES.index(kv[0][2])))]
    write_csv(out / "feas_prob.csv", ["N", "floor", "mode", "feasible", "trials", "probability"],
              rows)
    write_csv(out / "feas_prob_trials.csv", ["N", "floor", "seed", *MODES], trial_rows)
    files = ["feas_prob.csv", "feas_prob_trials.csv"]
    write_manifest(out, "feas-prob", cfg, _seeds(cfg), files, [
        "realization i uses channel seed seed+i",
        "random and optimized modes share fresh phase draws per (realization, restart)",
        "random mode counts a realization feasible if any draw of the batch meets the floor",
        "optimized mode certifies every common floor of the sweep from one run per draw",
    ])
    return files


def _opt_trial(cfg: ExperimentConfig, n: int, seed: int):
    ch = generate_channels(cfg.geometry_for(n), seed)
    econ = cfg.economy_for(ch.K)
    opts = cfg.sumratio_options()
    rnd = random_phase(ch.N, np.random.default_rng([seed, 1]))
    random_obj = ratio_objective(econ, rates(ch, rnd))
    feas = feasibility_check(ch, econ.floors, opts.feasibility,
                             rng=np.random.default_rng([seed, STREAM_OPT_START]))
    if not feas.feasible:
        return n, seed, None, random_obj
    res = optimize(ch, econ, opts=opts, phi0=feas.phi)
    return n, seed, res, random_obj


def cmd_optimize(cfg: ExperimentConfig, out: Path) -> list[str]:
    jobs = [(cfg, n, s) for n in cfg.n_elements for s in _seeds(cfg)]
    results = sorted(_map(_opt_trial, jobs, cfg.workers), key=lambda r: (r[0], r[1]))
    K = cfg.geometry_for(cfg.n_elements[0]).users
    trace, summary = [], []
    for n, seed, res, random_obj in results:
        if res is None:
            summary.append([n, seed, "infeasible-start", random_obj, "", "", "", "", "", "",
                            *[""] * K])
            continue
        exps = [""] + res.step_exponents
        for t, row in enumerate(zip(res.objective_trace, res.delta_trace, res.min_slack_trace,
                                    res.inner_iterations, exps)):
            trace.append([n, seed, t, *row])
        summary.append([n, seed, res.status, random_obj, res.start_objective, res.objective,
                        res.earning, res.delta_trace[-1], res.outer_iterations,
                        float(np.min(res.rates)), *res.rates])
    write_csv(out / "optimize_trace.csv",
              ["N", "seed", "t", "objective", "delta", "min_rate_slack", "inner_iterations",
               "step_exponent"], trace)
    write_csv(out / "optimize_summary.csv",
              ["N", "seed", "status", "random_objective", "start_objective", "objective",
               "earning", "delta", "outer_iterations", "min_rate",
               *[f"rate_{k}" for k in range(K)]], summary)
    files = ["optimize_trace.csv", "optimize_summary.csv"]
    write_manifest(out, "optimize", cfg, _seeds(cfg), files, [
        "random_objective evaluates one unoptimized random phase draw",
        "earning is sum_k (C_k - A_k / R_k) at the final rates",
    ])
    return files


COMMANDS = {
    "gen-channels": cmd_gen_channels,
    "feas-trace": cmd_feas_trace,
    "feas-prob": cmd_feas_prob,
    "optimize": cmd_optimize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irsmec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--out")
        p.add_argument("--n-elements", type=int, nargs="+")
        p.add_argument("--rate-min", type=float)
        p.add_argument("--rate-max", type=float)
        p.add_argument("--rate-step", type=float)
        p.add_argument("--floor", type=float, help="common rate floor for optimize")
        p.add_argument("--workers", type=int)
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {k: getattr(args, k) for k in
                 ("seed", "trials", "out", "n_elements", "rate_min", "rate_max", "rate_step",
                  "floor", "workers") if getattr(args, k) is not None}
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        # surface option errors before any work starts
        cfg.sumratio_options()
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, qcqp.NonConvexError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ChannelFileError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print("\n".join(str(out / f) for f in files))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
