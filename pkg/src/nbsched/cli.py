"""Command-line front end.

Every invocation that gets past config validation writes into its own run
directory ``<out>/<subcommand>-<run id>``. The run id is a content hash of the
config, subcommand, seeds and options, so repeating a command reproduces the
same id; an existing directory is never reused (a ``-2``, ``-3`` ... suffix is
added instead).

Exit codes: 0 ok, 2 config error, 3 instability, 4 under-sampled horizon,
5 validation tolerance exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from nbsched import __version__, analytic, explorer, report, sim
from nbsched.config import ConfigError, config_to_dict, load_config, validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3
EXIT_UNDERSAMPLED = 4
EXIT_TOLERANCE = 5

OUT_ENV = "NBSCHED_OUT"
TRACE_COLUMNS = ["session", "class", "direction", "event", "t", "t_end", "power_state", "power_w", "energy_j"]
VALIDATE_COLUMNS = ["class", "metric", "analytic", "simulation", "ci_low", "ci_high", "deviation", "within"]


class Unstable(Exception):
    pass


def run_id(subcommand, config_dict, seeds=(), options=None):
    blob = json.dumps({"subcommand": subcommand, "config": config_dict, "seeds": list(seeds),
                       "options": options or {}}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    run_id: str
    subcommand: str
    config: dict
    seeds: tuple = ()
    options: dict = field(default_factory=dict)
    started: str = field(default_factory=_now)
    finished: str | None = None
    status: str = "running"
    exit_code: int | None = None
    outputs: list = field(default_factory=list)
    tool_version: str = __version__

    def document(self):
        return report._clean_tree({
            "schema_version": report.SCHEMA_VERSION,
            "kind": "manifest",
            "run_id": self.run_id,
            "subcommand": self.subcommand,
            "tool_version": self.tool_version,
            "started": self.started,
            "finished": self.finished,
            "status": self.status,
            "exit_code": self.exit_code,
            "seeds": list(self.seeds),
            "options": self.options,
            "config": self.config,
            "outputs": list(self.outputs),
        })


class Run:
    """A run directory with its manifest; artifacts are registered as written."""

    def __init__(self, out_root, manifest):
        self.manifest = manifest
        root = Path(out_root)
        root.mkdir(parents=True, exist_ok=True)
        base = f"{manifest.subcommand}-{manifest.run_id}"
        k = 1
        while True:
            path = root / (base if k == 1 else f"{base}-{k}")
            try:
                path.mkdir()
                break
            except FileExistsError:
                k += 1
        self.dir = path
        self._write_manifest()

    def _write_manifest(self):
        (self.dir / "manifest.json").write_text(report.dumps_json(self.manifest.document()))

    def write(self, name, text):
        target = self.dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
        self.manifest.outputs.append(name)
        return target

    def finalize(self, code):
        self.manifest.finished = _now()
        self.manifest.exit_code = code
        self.manifest.status = "complete" if code == EXIT_OK else "failed"
        self._write_manifest()
        return code


def _err(msg):
    print(msg, file=sys.stderr)


def parse_seeds(tokens):
    seeds = []
    for tok in tokens:
        for part in str(tok).split(","):
            part = part.strip()
            if not part:
                continue
            if ".." in part:
                lo, hi = part.split("..")
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
    if not seeds:
        raise ValueError("at least one seed is required")
    return seeds


def _apply_overrides(cfg, pairs):
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects PARAM=VALUE, got {pair!r}")
        param, value = pair.split("=", 1)
        try:
            v = explorer.parse_axis_values(param.strip(), {"values": [value.strip()]})[0]
            cfg = explorer.apply_param(cfg, param.strip(), v)
        except explorer.SweepError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def _load_checked(args):
    """Load, override and validate the config; raise ConfigError or Unstable."""
    cfg = _apply_overrides(load_config(args.config), getattr(args, "set", None))
    outcome = validate(cfg)
    if outcome.violations and not outcome.only_stability:
        raise ConfigError("; ".join(str(v) for v in outcome.violations if v.kind == "config"),
                          outcome.violations)
    if outcome.violations:
        raise Unstable("; ".join(map(str, outcome.violations)))
    try:
        analytic.evaluate(cfg)
    except analytic.StabilityError as exc:
        raise Unstable(str(exc)) from exc
    return cfg


def _write_report(run, stem, rows, columns, doc, fmt):
    if fmt in ("csv", "both"):
        run.write(f"{stem}.csv", report.rows_to_csv(rows, columns))
    if fmt in ("json", "both"):
        run.write(f"{stem}.json", report.dumps_json(doc))


def _sim_report(cfg, seeds, horizon, warmup, workers):
    if len(seeds) == 1:
        return sim.run(cfg, seeds[0], horizon, warmup)
    return sim.run_replicated(cfg, seeds, horizon, warmup, workers=workers)


# ---------------------------------------------------------------------------
# subcommands

def cmd_analytic(args):
    cfg = _load_checked(args)
    rep = analytic.evaluate(cfg)
    run = Run(args.out, RunManifest(run_id("analytic", config_to_dict(cfg)), "analytic", config_to_dict(cfg)))
    _write_report(run, "analytic", report.analytic_rows(rep), report.ANALYTIC_COLUMNS,
                  report.analytic_document(rep), args.format)
    print(run.dir)
    return run.finalize(EXIT_OK)


def cmd_simulate(args):
    cfg = _load_checked(args)
    seeds = parse_seeds(args.seeds)
    options = {"horizon": args.horizon, "warmup": args.warmup, "trace": args.trace}
    snapshot = config_to_dict(cfg)
    run = Run(args.out, RunManifest(run_id("simulate", snapshot, seeds, options), "simulate", snapshot,
                                    tuple(seeds), options))
    try:
        rep = _sim_report(cfg, seeds, args.horizon, args.warmup, args.workers)
    except sim.UnderSampledError as exc:
        _err(f"under-sampled: {exc}")
        return run.finalize(EXIT_UNDERSAMPLED)
    _write_report(run, "simulation", report.sim_rows(rep), report.SIM_COLUMNS, report.sim_document(rep),
                  args.format)
    if args.trace:
        events, _ = sim.trace(cfg, seeds[0], args.horizon, warmup=0.0)
        _write_trace(run, events, args.format)
    print(run.dir)
    return run.finalize(EXIT_OK)


def _write_trace(run, events, fmt):
    if fmt in ("csv", "both"):
        run.write("trace.csv", report.rows_to_csv(events, TRACE_COLUMNS))
    if fmt in ("json", "both"):
        # line-delimited: one event object per line
        lines = [json.dumps(report._clean_tree(e), allow_nan=False) for e in events]
        run.write("trace.jsonl", "".join(line + "\n" for line in lines))


def cmd_trace(args):
    cfg = _load_checked(args)
    options = {"horizon": args.horizon, "sessions": args.session, "limit": args.limit}
    snapshot = config_to_dict(cfg)
    run = Run(args.out, RunManifest(run_id("trace", snapshot, [args.seed], options), "trace", snapshot,
                                    (args.seed,), options))
    if args.session:
        selector = set(args.session)
    elif args.limit is not None:
        selector = (lambda s: s.id < args.limit)
    else:
        selector = None
    events, _ = sim.trace(cfg, args.seed, args.horizon, session_filter=selector)
    _write_trace(run, events, args.format)
    print(run.dir)
    return run.finalize(EXIT_OK)


def cmd_sweep(args):
    try:
        spec = explorer.load_spec(args.spec)
        if args.config:
            spec = explorer.SweepSpec(_apply_overrides(load_config(args.config), args.set), spec.axes,
                                      spec.evaluator, spec.metrics, spec.classes)
            spec.check()
        elif args.set:
            spec = explorer.SweepSpec(_apply_overrides(spec.base, args.set), spec.axes,
                                      spec.evaluator, spec.metrics, spec.classes)
    except explorer.SweepError as exc:
        raise ConfigError(str(exc)) from exc
    options = {"spec": yaml.safe_load(Path(args.spec).read_text())}
    snapshot = config_to_dict(spec.base)
    seeds = spec.evaluator.seeds if isinstance(spec.evaluator, explorer.SimulationEvaluator) else ()
    run = Run(args.out, RunManifest(run_id("sweep", snapshot, seeds, options), "sweep", snapshot,
                                    tuple(seeds), options))
    try:
        result = explorer.sweep(spec, workers=args.workers)
    except explorer.AllInfeasibleError as exc:
        _err(str(exc))
        return run.finalize(EXIT_UNSTABLE)
    if args.format in ("csv", "both"):
        run.write("sweep.csv", report.rows_to_csv(explorer.long_rows(result), explorer.long_columns(result)))
    if args.format in ("json", "both"):
        run.write("sweep.json", report.dumps_json(explorer.summary_document(result)))
    if len(spec.axes) <= 2:
        for j in spec.class_indices:
            for m in spec.metrics:
                run.write(f"matrix/{m}_class{j}.dat", explorer.matrix_text(result, m, j))
    for op in result.optima:
        where = ", ".join(f"{k}={v:g}" for k, v in zip(result.params, op.coords))
        print(f"class {op.cls} {'max' if op.metric in explorer.MAXIMIZE else 'min'} {op.metric} = "
              f"{op.value:.6g} at {where}")
    print(run.dir)
    return run.finalize(EXIT_OK)


def deviation_rows(an_report, sim_report, classes, tolerance):
    rows = []
    for j in classes:
        a = an_report.for_class(j)
        s = sim_report.for_class(j)
        for metric in ("D_u", "D_d", "L"):
            ref = getattr(a, metric)
            est = getattr(s, metric)
            dev = (est.mean - ref) / ref if ref else math.nan
            ok = not math.isnan(dev) and abs(dev) <= tolerance
            rows.append({"class": j, "metric": metric, "analytic": ref, "simulation": est.mean,
                         "ci_low": est.ci_low, "ci_high": est.ci_high, "deviation": dev, "within": int(ok)})
    return rows


def cmd_validate(args):
    cfg = _load_checked(args)
    seeds = parse_seeds(args.seeds)
    classes = args.classes or [j for j, c in enumerate(cfg.classes, start=1) if c.fraction > 0]
    options = {"horizon": args.horizon, "warmup": args.warmup, "tolerance": args.tolerance,
               "classes": classes}
    snapshot = config_to_dict(cfg)
    run = Run(args.out, RunManifest(run_id("validate", snapshot, seeds, options), "validate", snapshot,
                                    tuple(seeds), options))
    an_rep = analytic.evaluate(cfg)
    try:
        sim_rep = _sim_report(cfg, seeds, args.horizon, args.warmup, args.workers)
    except sim.UnderSampledError as exc:
        _err(f"under-sampled: {exc}")
        return run.finalize(EXIT_UNDERSAMPLED)
    rows = deviation_rows(an_rep, sim_rep, classes, args.tolerance)
    doc = report._clean_tree({"schema_version": report.SCHEMA_VERSION, "kind": "validation",
                              "tolerance": args.tolerance, "rows": rows})
    _write_report(run, "validation", rows, VALIDATE_COLUMNS, doc, args.format)
    print(f"{'class':>5} {'metric':>6} {'analytic':>12} {'simulation':>12} {'deviation':>10}")
    for r in rows:
        flag = "" if r["within"] else "  exceeds"
        print(f"{r['class']:>5} {r['metric']:>6} {r['analytic']:>12.5g} {r['simulation']:>12.5g} "
              f"{r['deviation']:>+10.2%}{flag}")
    print(run.dir)
    ok = all(r["within"] for r in rows)
    if not ok:
        _err(f"deviation exceeds tolerance {args.tolerance:.2%}")
    return run.finalize(EXIT_OK if ok else EXIT_TOLERANCE)


# ---------------------------------------------------------------------------
# argument parsing

def _duration(text):
    from nbsched.units import UnitError, parse_quantity

    try:
        return parse_quantity(text, "duration")
    except UnitError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=os.environ.get(OUT_ENV, "runs"),
                        help=f"output root (default ${OUT_ENV} or ./runs)")
    common.add_argument("--format", choices=("csv", "json", "both"), default="both")
    common.add_argument("--set", action="append", metavar="PARAM=VALUE",
                        help="override a parameter, e.g. t=200ms or f_1=0.9 (repeatable)")

    with_config = argparse.ArgumentParser(add_help=False, parents=[common])
    with_config.add_argument("--config", default="table1.cfg", help="config path or bundled name")

    def sim_opts(seeds, horizon, warmup):
        # a fresh parent per subcommand: argparse shares Action objects with parents
        opts = argparse.ArgumentParser(add_help=False)
        opts.add_argument("--seeds", nargs="+", default=[seeds], help="seeds, e.g. 1 2 3 or 1..5")
        opts.add_argument("--horizon", type=_duration, default=horizon)
        opts.add_argument("--warmup", type=_duration, default=warmup,
                          help="default 10%% of the horizon" if warmup is None else None)
        opts.add_argument("--workers", type=int, default=1)
        return opts

    parser = argparse.ArgumentParser(prog="nbsched", description="NB-IoT access scheduling model and simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", parents=[with_config], help="closed-form latencies, energies and lifetimes")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("simulate", parents=[with_config, sim_opts("1..3", 3600.0, None)], help="discrete-event simulation")
    p.add_argument("--trace", action="store_true", help="also write the event log of the first seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="parameter sweep from a YAML spec")
    p.add_argument("spec", help="sweep spec file")
    p.add_argument("--config", default=None, help="replace the sweep file's base config")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", parents=[with_config, sim_opts("1..5", 7200.0, 600.0)], help="analytic versus simulation")
    p.add_argument("--tolerance", type=float, default=0.15, help="relative tolerance (0.15 = 15%%)")
    p.add_argument("--classes", type=int, nargs="+", default=None, help="1-based classes to compare")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("trace", parents=[with_config], help="per-session event log")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--horizon", type=_duration, default=600.0)
    p.add_argument("--session", type=int, nargs="+", default=None, help="session ids to keep")
    p.add_argument("--limit", type=int, default=None, help="keep the first N sessions")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if hasattr(args, "seeds"):
            parse_seeds(args.seeds)
        return args.func(args)
    except (Unstable, analytic.StabilityError) as exc:
        msg = str(exc)
        _err(msg if msg.startswith("unstable") else f"unstable: {msg}")
        return EXIT_UNSTABLE
    except (ConfigError, explorer.SweepError, FileNotFoundError, ValueError) as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG

if __name__ == "__main__":
    sys.exit(main())
