"""CSV and JSON export of analytic and simulation reports.

Both report kinds share one flat row schema: one row per class plus a
``system`` row. Simulation rows add confidence-interval and counter columns.
Column order is fixed by ``ANALYTIC_COLUMNS`` and ``SIM_COLUMNS``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, fields

from nbsched.analytic import AnalyticReport, ClassMetrics

SCHEMA_VERSION = 1

CLASS_FIELDS = [f.name for f in fields(ClassMetrics) if f.name != "index"]
SYSTEM_FIELDS = ["Q", "DD_t", "D_w", "w", "y", "G_batch", "GG_batch", "s1", "s2", "h1", "h2", "rho", "nu"]
ANALYTIC_COLUMNS = ["row", "class"] + CLASS_FIELDS + SYSTEM_FIELDS

ESTIMATED = ["D_u", "D_d", "E_u", "E_d", "L"]
SIM_EXTRA = [f"{m}_{part}" for m in ESTIMATED for part in ("ci_low", "ci_high", "n")] + [
    "ra_attempts", "P_rach_first", "first_attempts", "generated", "served", "abandoned", "in_flight", "collisions", "rar_timeouts",
    "npdcch_queue", "npdcch_rate", "npdcch_sojourn", "seeds",
]
SIM_COLUMNS = ANALYTIC_COLUMNS + SIM_EXTRA


def _clean(value):
    """JSON-safe scalar: NaN and infinities become null."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _clean_tree(obj):
    if isinstance(obj, dict):
        return {str(k): _clean_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_tree(v) for v in obj]
    return _clean(obj)


def analytic_rows(report: AnalyticReport):
    rows = []
    for m in report.classes:
        row = {"row": "class", "class": m.index}
        row.update({k: getattr(m, k) for k in CLASS_FIELDS})
        rows.append(row)
    system = {"row": "system", "class": ""}
    system.update({k: getattr(report, k) for k in SYSTEM_FIELDS})
    rows.append(system)
    return rows


def analytic_document(report: AnalyticReport):
    return _clean_tree({
        "schema_version": SCHEMA_VERSION,
        "kind": "analytic",
        "classes": [asdict(m) for m in report.classes],
        "system": {k: getattr(report, k) for k in SYSTEM_FIELDS},
        "diagnostics": list(report.diagnostics),
    })


def sim_rows(report):
    rows = []
    for c in report.classes:
        row = {"row": "class", "class": c.index, "P_rach": c.P_rach, "ra_attempts": c.ra_attempts,
               "P_rach_first": c.P_rach_first, "first_attempts": c.first_attempts}
        for metric in ESTIMATED:
            est = getattr(c, metric)
            row[metric] = est.mean
            row[f"{metric}_ci_low"] = est.ci_low
            row[f"{metric}_ci_high"] = est.ci_high
            row[f"{metric}_n"] = est.n
        rows.append(row)
    occ = report.occupancy
    cnt = report.counters
    rows.append({
        "row": "system", "class": "",
        "w": occ.w, "y": occ.y, "rho": occ.rho, "nu": occ.nu,
        "npdcch_queue": occ.npdcch_queue, "npdcch_rate": occ.npdcch_rate, "npdcch_sojourn": occ.npdcch_sojourn,
        "generated": cnt.generated, "served": cnt.served, "abandoned": cnt.abandoned,
        "in_flight": cnt.in_flight, "collisions": cnt.collisions, "rar_timeouts": cnt.rar_timeouts,
        "seeds": " ".join(map(str, report.seeds)),
    })
    return rows


def _sim_summary(report):
    return {
        "classes": [
            {"index": c.index, "P_rach": c.P_rach, "ra_attempts": c.ra_attempts,
             "P_rach_first": c.P_rach_first, "first_attempts": c.first_attempts,
             **{m: asdict(getattr(c, m)) for m in ESTIMATED}}
            for c in report.classes
        ],
        "counters": asdict(report.counters),
        "occupancy": asdict(report.occupancy),
        "seeds": list(report.seeds),
        "horizon": report.horizon,
        "warmup": report.warmup,
    }


def sim_document(report):
    doc = {"schema_version": SCHEMA_VERSION, "kind": "simulation"}
    doc.update(_sim_summary(report))
    doc["replications"] = [_sim_summary(r) for r in report.replications]
    return _clean_tree(doc)


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="raise", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                         for k, v in row.items()})
    return buf.getvalue()


def dumps_json(doc):
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))
