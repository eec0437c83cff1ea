"""Analytic versus simulated class-1 D_u, D_d and L over the NPRACH period t.

    python scripts/fig4_validation.py --seeds 1..5 --horizon 7200 --warmup 600
"""

import argparse
from pathlib import Path

from nbsched import explorer as ex
from nbsched import sim
from nbsched.cli import parse_seeds
from nbsched.config import load_config
from nbsched.report import rows_to_csv

T_GRID = (0.04, 0.08, 0.16, 0.32, 0.64, 1.28, 2.56)
METRICS = ("D_u", "D_d", "L")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="fig4.cfg")
    ap.add_argument("--seeds", nargs="+", default=["1..5"])
    ap.add_argument("--horizon", type=float, default=7200.0)
    ap.add_argument("--warmup", type=float, default=600.0)
    ap.add_argument("--out", default="runs/fig4_validation.csv")
    args = ap.parse_args()

    base = load_config(args.config)
    seeds = parse_seeds(args.seeds)
    analytic = ex.sweep(ex.SweepSpec(base, (ex.Axis("t", T_GRID),), classes=(1,)))
    rows = []
    for p in analytic.points:
        t = p.coords[0]
        if not p.feasible:
            print(f"t={t:g}  infeasible: {p.reason}")
            rows.append({"t": t, "feasible": 0})
            continue
        rep = sim.run_replicated(ex.apply_param(base, "t", t), seeds, args.horizon, args.warmup)
        row = {"t": t, "feasible": 1}
        for m in METRICS:
            est = getattr(rep.for_class(1), m)
            ref = p.values[(m, 1)]
            row.update({f"{m}_analytic": ref, f"{m}_sim": est.mean, f"{m}_ci_low": est.ci_low,
                        f"{m}_ci_high": est.ci_high, f"{m}_dev": (est.mean - ref) / ref})
        rows.append(row)
        print(f"t={t:g}  " + "  ".join(f"{m} {row[m + '_analytic']:.4g}/{row[m + '_sim']:.4g} "
                                        f"({row[m + '_dev']:+.1%})" for m in METRICS))
    columns = ["t", "feasible"] + [f"{m}_{k}" for m in METRICS
                                   for k in ("analytic", "sim", "ci_low", "ci_high", "dev")]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rows_to_csv(rows, columns))
    print(out)


if __name__ == "__main__":
    main()
