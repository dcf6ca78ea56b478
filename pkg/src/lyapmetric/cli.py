"""Command-line interface.

Subcommands: ``oracle``, ``evaluate``, ``optimize``, ``verify``, ``bochi``.
Every subcommand reads an optional JSON config with one section per
concern; unknown keys are rejected. Exit status is 0 on success, 2 on
configuration or input errors and 1 on numerical failures.
"""

import argparse
import contextlib
import csv
import dataclasses
import io
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import metric_field as mf
from .dynamics import invariant_weights, system_from_dict
from .exceptions import DimensionMismatch, LyapMetricError, NotInMetricSpace
from .objective import evaluate_objective, format_float, sigma_iterate
from .optimizer import OptimizerConfig, descend
from .oracle import lyapunov_vector
from .tolerances import DEFAULT_TOLERANCES
from .verify import SUITES, run_suites

__all__ = ["main", "load_config", "RunConfig", "ConfigError"]


class ConfigError(Exception):
    """Invalid configuration or input file."""


@dataclasses.dataclass
class GridSection:
    n: int = 16


@dataclasses.dataclass
class MeasureSection:
    mode: str = "lebesgue"
    orbit_length: int = 1_000_000
    burn_in: int = 1000
    seed: int = 0


@dataclasses.dataclass
class OracleSection:
    n_steps: int = 10_000
    samples: int = 64
    seed: int = 0
    transient: int = 100


@dataclasses.dataclass
class EvaluateSection:
    with_oracle: bool = False


@dataclasses.dataclass
class BochiSection:
    N: list = dataclasses.field(default_factory=lambda: [1, 2, 4, 8, 16])
    max_iter: int = 2000


@dataclasses.dataclass
class VerifySection:
    suites: list = None
    trials: int = None
    seed: int = 0


@dataclasses.dataclass
class InputSection:
    metric: str = None


@dataclasses.dataclass
class OutputSection:
    dir: str = None
    metric: str = "metric.json"
    trace: str = "trace.csv"
    summary: str = "summary.json"


_OPTIMIZER_FIELDS = {f.name for f in dataclasses.fields(OptimizerConfig)}


@dataclasses.dataclass
class RunConfig:
    """Validated contents of a config file."""

    system: dict = dataclasses.field(default_factory=lambda: {"kind": "automorphism", "matrix": [[2, 1], [1, 1]]})
    grid: GridSection = dataclasses.field(default_factory=GridSection)
    measure: MeasureSection = dataclasses.field(default_factory=MeasureSection)
    oracle: OracleSection = dataclasses.field(default_factory=OracleSection)
    optimizer: dict = dataclasses.field(default_factory=dict)
    evaluate: EvaluateSection = dataclasses.field(default_factory=EvaluateSection)
    bochi: BochiSection = dataclasses.field(default_factory=BochiSection)
    verify: VerifySection = dataclasses.field(default_factory=VerifySection)
    input: InputSection = dataclasses.field(default_factory=InputSection)
    output: OutputSection = dataclasses.field(default_factory=OutputSection)
    tolerances: dict = dataclasses.field(default_factory=dict)

    def build_system(self):
        try:
            return system_from_dict(self.system)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(_message(exc)) from None

    def optimizer_config(self):
        try:
            return OptimizerConfig(**self.optimizer)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"optimizer: {_message(exc)}") from None

    def tolerance_profile(self):
        try:
            return DEFAULT_TOLERANCES.with_overrides(self.tolerances)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"tolerances: {_message(exc)}") from None


def _message(exc):
    return exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)


_SECTION_TYPES = {
    "grid": GridSection,
    "measure": MeasureSection,
    "oracle": OracleSection,
    "evaluate": EvaluateSection,
    "bochi": BochiSection,
    "verify": VerifySection,
    "input": InputSection,
    "output": OutputSection,
}


def _typed_section(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'")
    return cls(**data)


def load_config(path=None, seed=None):
    """Read and validate a config file; ``seed`` overrides every seed field."""
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = RunConfig()
    for key, value in raw.items():
        if key in _SECTION_TYPES:
            setattr(cfg, key, _typed_section(key, _SECTION_TYPES[key], value))
        elif key == "system":
            if not isinstance(value, dict):
                raise ConfigError("section 'system' must be an object")
            cfg.system = dict(value)
        elif key == "optimizer":
            unknown = [k for k in value if k not in _OPTIMIZER_FIELDS]
            if unknown:
                raise ConfigError(f"unknown key 'optimizer.{unknown[0]}'")
            cfg.optimizer = dict(value)
        elif key == "tolerances":
            cfg.tolerances = dict(value)
        else:
            raise ConfigError(f"unknown key '{key}'")
    if seed is not None:
        cfg.measure.seed = cfg.oracle.seed = cfg.verify.seed = int(seed)
        cfg.optimizer["seed"] = int(seed)
    if int(cfg.grid.n) < 2:
        raise ConfigError("grid.n must be >= 2")
    cfg.build_system()
    cfg.optimizer_config()
    cfg.tolerance_profile()
    return cfg


# ---------------------------------------------------------------------------
# helpers


def _weights(cfg, system):
    m = cfg.measure
    try:
        return invariant_weights(system, int(cfg.grid.n), m.mode, m.orbit_length, m.burn_in, m.seed)
    except ValueError as exc:
        raise ConfigError(f"measure: {exc}") from None


def _oracle(cfg, system, weights):
    o = cfg.oracle
    return lyapunov_vector(system, weights, o.n_steps, o.samples, o.seed, o.transient)


def _emit(text, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(data):
    return json.dumps(data, indent=2) + "\n"


def _load_metric(path, cfg, system):
    if not path:
        raise ConfigError("no metric file given (use --metric or input.metric)")
    try:
        g = mf.MetricField.from_json(path, cfg.tolerance_profile())
    except FileNotFoundError:
        raise ConfigError(f"metric file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"metric file is not valid JSON: {exc}") from None
    except NotInMetricSpace as exc:
        raise ConfigError(f"metric is not in M_omega: {exc}") from None
    except DimensionMismatch as exc:
        raise ConfigError(f"metric file: {exc}") from None
    if g.n != int(cfg.grid.n) or g.d != system.dim:
        raise ConfigError(f"grid mismatch: metric has n={g.n}, d={g.d}; config has n={cfg.grid.n}, d={system.dim}")
    return g


# ---------------------------------------------------------------------------
# commands


def cmd_oracle(cfg, args):
    system = cfg.build_system()
    est = _oracle(cfg, system, _weights(cfg, system))
    _emit(_json(est.to_dict()), args.out)
    return 0


def cmd_evaluate(cfg, args):
    system = cfg.build_system()
    g = _load_metric(args.metric or cfg.input.metric, cfg, system)
    w = _weights(cfg, system)
    est = _oracle(cfg, system, w) if cfg.evaluate.with_oracle else None
    report = evaluate_objective(system, g, w, est)
    _emit(report.to_csv() if args.format == "csv" else _json(report.to_dict()), args.out)
    return 0


def cmd_optimize(cfg, args):
    system = cfg.build_system()
    opt = cfg.optimizer_config()
    w = _weights(cfg, system)
    est = _oracle(cfg, system, w)
    g0 = mf.flat_metric(int(cfg.grid.n), system.dim)
    if args.metric or cfg.input.metric:
        g0 = _load_metric(args.metric or cfg.input.metric, cfg, system)
    g, trace = descend(system, g0, w, opt, est)
    out_dir = args.out or cfg.output.dir or "."
    os.makedirs(out_dir, exist_ok=True)
    g.to_json(os.path.join(out_dir, cfg.output.metric))
    trace.to_csv(os.path.join(out_dir, cfg.output.trace))
    final = trace.rows[-1]
    summary = {
        "system": system.to_dict(),
        "n": int(cfg.grid.n),
        "status": trace.status,
        "iterations": trace.iterations,
        "initial_s_partial": [float(v) for v in trace.rows[0]["s_partial"]],
        "final_s_partial": [float(v) for v in final["s_partial"]],
        "oracle_lambda": [float(v) for v in est.lambda_],
        "gap_to_oracle": [float(v) for v in final["gap"]],
        "grad_norm": float(final["grad_norm"]),
    }
    summary.update({f"gap_{i + 1}": v for i, v in enumerate(summary["gap_to_oracle"])})
    text = _json(summary)
    with open(os.path.join(out_dir, cfg.output.summary), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    if trace.status == "stalled":
        print("numerical failure: line search stalled; partial outputs written", file=sys.stderr)
        return 1
    return 0


def cmd_verify(cfg, args):
    names = args.suite or cfg.verify.suites
    try:
        results = run_suites(names, seed=cfg.verify.seed, trials=cfg.verify.trials, tolerances=cfg.tolerance_profile())
    except KeyError as exc:
        raise ConfigError(_message(exc)) from None
    table = "".join(r.row() + "\n" for r in results)
    sys.stdout.write(table)
    if args.out:
        _emit(_json([dataclasses.asdict(r) for r in results]), args.out)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failing properties: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_bochi(cfg, args):
    system = cfg.build_system()
    n = int(cfg.grid.n)
    w = _weights(cfg, system)
    est = _oracle(cfg, system, w)
    g0 = mf.flat_metric(n, system.dim)
    d = system.dim
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["N"] + [f"s_{i + 1}" for i in range(d)] + [f"gap_{i + 1}" for i in range(d)] + ["bochi_excess"])
    for N in cfg.bochi.N:
        gN = mf.bochi_sequence(system, g0, int(N), max_iter=cfg.bochi.max_iter)
        report = evaluate_objective(system, gN, w, est, keep_cells=True)
        lhs = np.cumsum(report.per_cell_sigma, -1)
        rhs = np.cumsum(sigma_iterate(system, g0, int(N)) / int(N), -1)
        excess = max(float(np.max(lhs[:, :-1] - rhs[:, :-1], initial=0.0)), float(np.abs(lhs[:, -1] - rhs[:, -1]).max()))
        out.writerow(
            [int(N)]
            + [format_float(v) for v in report.s_partial]
            + [format_float(v) for v in report.gap_to_oracle]
            + [format_float(excess)]
        )
    _emit(buf.getvalue(), args.out)
    return 0


COMMANDS = {
    "oracle": cmd_oracle,
    "evaluate": cmd_evaluate,
    "optimize": cmd_optimize,
    "verify": cmd_verify,
    "bochi": cmd_bochi,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--out", metavar="PATH", help="output file (output directory for optimize)")
    common.add_argument("--seed", type=int, metavar="U64", help="override every seed in the config")
    common.add_argument("--threads", type=int, metavar="N", help="cap on numerical library threads")
    parser = argparse.ArgumentParser(prog="lyapmetric", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("oracle", parents=[common], help="QR estimate of the Lyapunov vector")
    ev = sub.add_parser("evaluate", parents=[common], help="objective report for a metric file")
    ev.add_argument("--metric", metavar="PATH", help="metric JSON file")
    ev.add_argument("--format", choices=("json", "csv"), default="json")
    op = sub.add_parser("optimize", parents=[common], help="geodesic descent from the flat metric")
    op.add_argument("--metric", metavar="PATH", help="start from this metric instead of the flat one")
    ve = sub.add_parser("verify", parents=[common], help="run the property suites")
    ve.add_argument("--suite", action="append", choices=sorted(SUITES), metavar="NAME", help="run only this suite")
    sub.add_parser("bochi", parents=[common], help="objective of barycentric pullback metrics over an N schedule")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return 2
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        cfg = load_config(args.config, args.seed)
        with limits:
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LyapMetricError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
