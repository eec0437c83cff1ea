"""Parameter sweeps over the scheduling knobs and extraction of operating points.

Parameters are addressed by short paths:

``t``         NPRACH period of every class (``t_2`` for class 2 only)
``d``         NPDCCH period
``c_j``       repetitions of class j
``f_j``       fraction of class j; the other fractions are rescaled to keep the sum at 1
``S``, ``N``  sessions per day, device count
``tau``, ``u`` NPRACH unit and control transmission time
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from nbsched import analytic, sim
from nbsched.config import ConfigError, load_config, resolve_config_path, validate
from nbsched.report import SCHEMA_VERSION, _clean_tree
from nbsched.units import UnitError, parse_quantity

METRICS = ("D_u", "D_d", "L")
MAXIMIZE = {"L"}


class SweepError(ValueError):
    pass


class AllInfeasibleError(SweepError):
    """Every grid point failed validation or a stability check."""


def _split_param(param):
    name, _, idx = param.partition("_")
    return name, (int(idx) if idx else None)


def param_kind(param):
    name, _ = _split_param(param)
    return {"t": "duration", "d": "duration", "tau": "duration", "u": "duration",
            "S": "sessions", "N": "int", "c": "int", "f": "fraction"}.get(name)


def apply_param(config, param, value):
    """Return ``config`` with one parameter replaced."""
    name, idx = _split_param(param)
    if idx is not None and not 1 <= idx <= config.n_classes:
        raise SweepError(f"{param}: class index out of range 1..{config.n_classes}")
    j = None if idx is None else idx - 1
    if name == "t":
        if j is None:
            return config.replace_classes(nprach_period=float(value))
        return config.replace_class(j, nprach_period=float(value))
    if name == "c" and j is not None:
        if value != int(value):
            raise SweepError(f"{param}: repetitions must be integer, got {value}")
        return config.replace_class(j, repetitions=int(value))
    if name == "f" and j is not None:
        return _set_fraction(config, j, float(value))
    if name == "d" and j is None:
        return replace(config, schedule=replace(config.schedule, npdcch_period=float(value)))
    if name == "tau" and j is None:
        return replace(config, schedule=replace(config.schedule, nprach_unit=float(value)))
    if name == "u" and j is None:
        return replace(config, schedule=replace(config.schedule, control_tx_time=float(value)))
    if name == "S" and j is None:
        return replace(config, traffic=replace(config.traffic, sessions_per_day=float(value)))
    if name == "N" and j is None:
        return replace(config, traffic=replace(config.traffic, devices=int(value)))
    raise SweepError(f"unsupported sweep parameter {param!r}")


def _set_fraction(config, j, value):
    others = [i for i in range(config.n_classes) if i != j]
    rest = sum(config.classes[i].fraction for i in others)
    cfg = config.replace_class(j, fraction=value)
    for i in others:
        share = config.classes[i].fraction / rest if rest > 0 else 1.0 / len(others)
        cfg = cfg.replace_class(i, fraction=(1.0 - value) * share)
    return cfg


@dataclass(frozen=True)
class Axis:
    param: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class SimulationEvaluator:
    seeds: tuple[int, ...] = (1, 2, 3)
    horizon: float = 3600.0
    warmup: float | None = None


@dataclass(frozen=True)
class SweepSpec:
    base: object  # SystemConfig
    axes: tuple[Axis, ...]
    evaluator: object = "analytic"  # "analytic" or SimulationEvaluator
    metrics: tuple[str, ...] = METRICS
    classes: tuple[int, ...] | None = None  # 1-based; None selects every class

    def check(self):
        if not self.axes:
            raise SweepError("a sweep needs at least one axis")
        for axis in self.axes:
            if not axis.values:
                raise SweepError(f"axis {axis.param!r} has an empty grid")
            if any(b <= a for a, b in zip(axis.values, axis.values[1:])):
                raise SweepError(f"axis {axis.param!r} grid must be strictly increasing")
            # raises on unknown paths
            apply_param(self.base, axis.param, axis.values[0])
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise SweepError(f"unknown metrics {sorted(unknown)}")
        if self.evaluator != "analytic" and not isinstance(self.evaluator, SimulationEvaluator):
            raise SweepError(f"unknown evaluator {self.evaluator!r}")

    @property
    def class_indices(self):
        return tuple(self.classes) if self.classes else tuple(range(1, self.base.n_classes + 1))


@dataclass(frozen=True)
class SweepPoint:
    coords: tuple[float, ...]
    feasible: bool
    reason: str | None
    values: dict = field(default_factory=dict)  # (metric, class) -> value
    ci: dict = field(default_factory=dict)  # (metric, class) -> (low, high)


@dataclass(frozen=True)
class OperatingPoint:
    metric: str
    cls: int
    coords: tuple[float, ...]
    value: float


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    points: tuple[SweepPoint, ...]
    optima: tuple[OperatingPoint, ...]
    frontiers: dict  # class -> tuple of coords

    @property
    def params(self):
        return tuple(a.param for a in self.spec.axes)

    @property
    def feasible_points(self):
        return [p for p in self.points if p.feasible]

    def point(self, coords):
        for p in self.points:
            if p.coords == tuple(coords):
                return p
        raise KeyError(coords)

    def optimum(self, metric, cls):
        for op in self.optima:
            if op.metric == metric and op.cls == cls:
                return op
        raise KeyError((metric, cls))

    def series(self, metric, cls):
        """``(coords, value)`` pairs; infeasible points carry NaN."""
        return [(p.coords, p.values.get((metric, cls), math.nan)) for p in self.points]


def config_at(spec, coords):
    cfg = spec.base
    for axis, value in zip(spec.axes, coords):
        cfg = apply_param(cfg, axis.param, value)
    return cfg


def evaluate_point(spec, coords):
    """Evaluate one grid point; infeasibility is recorded, not raised."""
    coords = tuple(coords)
    try:
        cfg = config_at(spec, coords)
    except SweepError as exc:
        return SweepPoint(coords, False, str(exc))
    outcome = validate(cfg)
    if not outcome.ok:
        return SweepPoint(coords, False, "; ".join(map(str, outcome.violations)))
    try:
        report = analytic.evaluate(cfg)
    except (analytic.StabilityError, ZeroDivisionError) as exc:
        return SweepPoint(coords, False, str(exc))
    values, ci = {}, {}
    classes = spec.class_indices
    if spec.evaluator == "analytic":
        for j in classes:
            m = report.for_class(j)
            for metric in spec.metrics:
                values[(metric, j)] = getattr(m, metric)
    else:
        ev = spec.evaluator
        try:
            if len(ev.seeds) >= 2:
                rep = sim.run_replicated(cfg, ev.seeds, ev.horizon, ev.warmup)
            else:
                rep = sim.run(cfg, ev.seeds[0], ev.horizon, ev.warmup)
        except sim.UnderSampledError as exc:
            return SweepPoint(coords, False, str(exc))
        for j in classes:
            c = rep.for_class(j)
            for metric in spec.metrics:
                est = getattr(c, metric)
                values[(metric, j)] = est.mean
                ci[(metric, j)] = (est.ci_low, est.ci_high)
    return SweepPoint(coords, True, None, values, ci)


def _evaluate_job(args):
    return evaluate_point(*args)


def grid(spec):
    return list(itertools.product(*(a.values for a in spec.axes)))


def sweep(spec, workers=1, order=None):
    """Evaluate every grid point of ``spec``.

    ``order`` optionally permutes the evaluation sequence; the result is
    assembled in grid order regardless.
    """
    spec.check()
    coords = grid(spec)
    todo = coords if order is None else [coords[i] for i in order]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            done = list(pool.map(_evaluate_job, [(spec, c) for c in todo]))
    else:
        done = [evaluate_point(spec, c) for c in todo]
    by_coords = {p.coords: p for p in done}
    points = tuple(by_coords[c] for c in coords)
    if not any(p.feasible for p in points):
        reasons = sorted({p.reason for p in points})
        raise AllInfeasibleError(f"every grid point is infeasible: {reasons[:3]}")

    partial = SweepResult(spec, points, (), {})
    optima = tuple(find_optima(partial, m, j) for j in spec.class_indices for m in spec.metrics)
    frontiers = {j: pareto_frontier(partial, j) for j in spec.class_indices}
    return SweepResult(spec, points, optima, frontiers)


def find_optima(result, metric, cls):
    """Best feasible grid point: argmin for latencies, argmax for lifetime.

    Ties go to the smallest parameter values (lexicographic over the axes).
    """
    best = None
    sign = -1.0 if metric in MAXIMIZE else 1.0
    for p in sorted(result.feasible_points, key=lambda p: p.coords):
        v = p.values.get((metric, cls), math.nan)
        if math.isnan(v):
            continue
        if best is None or sign * v < sign * best.value:
            best = OperatingPoint(metric, cls, p.coords, v)
    if best is None:
        raise SweepError(f"no feasible point carries {metric} for class {cls}")
    return best


def _objectives(result, cls):
    metrics = [m for m in METRICS if m in result.spec.metrics]
    pts, rows = [], []
    for p in result.feasible_points:
        row = [(-1.0 if m in MAXIMIZE else 1.0) * p.values[(m, cls)] for m in metrics]
        if not any(math.isnan(v) for v in row):
            pts.append(p)
            rows.append(row)
    return pts, np.array(rows, dtype=float).reshape(len(rows), len(metrics))


def pareto_frontier(result, cls):
    """Coordinates of the feasible points not dominated under (min D_u, min D_d, max L)."""
    pts, obj = _objectives(result, cls)
    keep = []
    for i in range(len(pts)):
        no_worse = np.all(obj <= obj[i], axis=1)
        better = np.any(obj < obj[i], axis=1)
        if not np.any(no_worse & better):
            keep.append(pts[i].coords)
    return tuple(keep)


def normalized(result, metric, cls):
    """Min-max normalisation of a metric over the feasible grid."""
    vals = {p.coords: p.values[(metric, cls)] for p in result.feasible_points
            if not math.isnan(p.values[(metric, cls)])}
    if not vals:
        return {}
    lo, hi = min(vals.values()), max(vals.values())
    span = hi - lo
    return {c: (v - lo) / span if span > 0 else 0.0 for c, v in vals.items()}


@dataclass(frozen=True)
class MutualImpactRow:
    f1: float
    c2: int
    feasible: bool
    L1: float
    L2: float
    drop1: float  # relative class-1 lifetime drop from the previous c2
    drop2: float
    reason: str | None = None


def mutual_impact(base, c2_grid, f1_values):
    """Class lifetimes of a two-class cell versus class-2 repetitions and class-1 share."""
    if base.n_classes != 2:
        raise SweepError("mutual impact needs exactly two classes")
    rows = []
    for f1 in f1_values:
        prev = None
        for c2 in c2_grid:
            cfg = apply_param(apply_param(base, "f_1", f1), "c_2", c2)
            try:
                validate(cfg).raise_for_violations()
                rep = analytic.evaluate(cfg)
            except (ConfigError, analytic.StabilityError) as exc:
                rows.append(MutualImpactRow(f1, c2, False, math.nan, math.nan, math.nan, math.nan, str(exc)))
                prev = None
                continue
            l1, l2 = rep.classes[0].L, rep.classes[1].L
            if prev is None:
                d1 = d2 = math.nan
            else:
                d1 = (prev[0] - l1) / prev[0]
                d2 = (prev[1] - l2) / prev[1]
            rows.append(MutualImpactRow(f1, c2, True, l1, l2, d1, d2))
            prev = (l1, l2)
    return rows


def lifetime_drop(rows, f1, c_from, c_to, cls=1):
    """Relative lifetime loss of class ``cls`` between two c2 values of a ``mutual_impact`` table."""
    key = "L1" if cls == 1 else "L2"
    pick = {r.c2: getattr(r, key) for r in rows if r.f1 == f1 and r.feasible}
    if c_from not in pick or c_to not in pick:
        return math.nan
    return (pick[c_from] - pick[c_to]) / pick[c_from]


# ---------------------------------------------------------------------------
# spec files and exports

def parse_axis_values(param, raw):
    kind = param_kind(param)
    if kind is None:
        raise SweepError(f"unsupported sweep parameter {param!r}")

    def one(v):
        try:
            if kind in ("duration", "sessions"):
                return parse_quantity(v, kind)
            return float(v)
        except (UnitError, TypeError, ValueError) as exc:
            raise SweepError(f"{param}: {exc}") from exc

    if isinstance(raw, dict) and "range" in raw:
        r = raw["range"]
        start, stop, step = one(r["start"]), one(r["stop"]), one(r["step"])
        if step <= 0:
            raise SweepError(f"{param}: range step must be > 0")
        n = int(math.floor((stop - start) / step + 1e-9))
        values = [round(start + i * step, 12) for i in range(n + 1)]
    elif isinstance(raw, dict) and "values" in raw:
        values = [one(v) for v in raw["values"] or []]
    else:
        raise SweepError(f"axis {param!r} needs 'values' or 'range'")
    if kind == "int":
        values = [int(v) if v == int(v) else v for v in values]
    return tuple(values)


def spec_from_dict(data, root=Path(".")):
    if not isinstance(data, dict):
        raise SweepError("sweep spec must be a mapping")
    base_ref = data.get("base", "table1.cfg")
    candidate = Path(root) / base_ref
    base = load_config(candidate if candidate.is_file() else resolve_config_path(base_ref))
    for param, value in (data.get("set") or {}).items():
        base = apply_param(base, param, parse_axis_values(param, {"values": [value]})[0])
    axes = []
    for raw in data.get("axes") or []:
        if not isinstance(raw, dict) or "param" not in raw:
            raise SweepError("each axis needs a 'param'")
        axes.append(Axis(raw["param"], parse_axis_values(raw["param"], raw)))
    ev = data.get("evaluator", "analytic")
    if isinstance(ev, dict) and "simulation" in ev:
        s = ev["simulation"] or {}
        warm = s.get("warmup")
        ev = SimulationEvaluator(
            seeds=tuple(int(x) for x in s.get("seeds", (1, 2, 3))),
            horizon=parse_quantity(s.get("horizon", 3600.0), "duration"),
            warmup=None if warm is None else parse_quantity(warm, "duration"),
        )
    elif ev != "analytic":
        raise SweepError(f"unknown evaluator {ev!r}")
    classes = data.get("classes")
    spec = SweepSpec(base, tuple(axes), ev, tuple(data.get("metrics", METRICS)),
                     tuple(int(c) for c in classes) if classes else None)
    spec.check()
    return spec


def load_spec(path):
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise SweepError(f"malformed sweep spec: {exc}") from exc
    return spec_from_dict(data, path.parent)


def long_rows(result):
    norms = {(m, j): normalized(result, m, j) for j in result.spec.class_indices for m in result.spec.metrics}
    rows = []
    for p in result.points:
        for j in result.spec.class_indices:
            for m in result.spec.metrics:
                row = dict(zip(result.params, p.coords))
                lo, hi = p.ci.get((m, j), (None, None))
                row.update(metric=m, **{"class": j}, value=p.values.get((m, j)),
                           normalized=norms[(m, j)].get(p.coords), ci_low=lo, ci_high=hi,
                           feasible=int(p.feasible), reason=p.reason or "")
                rows.append(row)
    return rows


def long_columns(result):
    return list(result.params) + ["metric", "class", "value", "normalized", "ci_low", "ci_high", "feasible", "reason"]


def summary_document(result):
    spec = result.spec
    ev = spec.evaluator
    return _clean_tree({
        "schema_version": SCHEMA_VERSION,
        "kind": "sweep",
        "axes": [{"param": a.param, "values": list(a.values)} for a in spec.axes],
        "evaluator": ev if ev == "analytic" else {"simulation": {
            "seeds": list(ev.seeds), "horizon": ev.horizon, "warmup": ev.warmup}},
        "metrics": list(spec.metrics),
        "points": len(result.points),
        "feasible": len(result.feasible_points),
        "optima": [{"metric": o.metric, "class": o.cls, "coords": dict(zip(result.params, o.coords)),
                    "value": o.value} for o in result.optima],
        "frontiers": {str(j): [dict(zip(result.params, c)) for c in cs] for j, cs in result.frontiers.items()},
    })


def matrix_text(result, metric, cls):
    """gnuplot-ready data: ``nonuniform matrix`` for 2-D sweeps, two columns for 1-D."""
    spec = result.spec
    if len(spec.axes) == 1:
        lines = [f"# {spec.axes[0].param} {metric}[class {cls}]"]
        for coords, v in result.series(metric, cls):
            lines.append(f"{coords[0]!r} {v!r}")
        return "\n".join(lines) + "\n"
    if len(spec.axes) != 2:
        raise SweepError("matrix export supports one or two axes")
    xs, ys = spec.axes[0].values, spec.axes[1].values
    values = dict(result.series(metric, cls))
    lines = [f"# rows: {spec.axes[0].param}, columns: {spec.axes[1].param}, value: {metric}[class {cls}]",
             " ".join([str(len(ys))] + [repr(y) for y in ys])]
    for x in xs:
        lines.append(" ".join([repr(x)] + [repr(values[(x, y)]) for y in ys]))
    return "\n".join(lines) + "\n"
