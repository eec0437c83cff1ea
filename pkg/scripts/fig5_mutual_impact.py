"""Class-1 and class-2 lifetimes as the class-2 repetition count grows.

    python scripts/fig5_mutual_impact.py --f1 0.9 0.95 --sessions 12
"""

import argparse
from dataclasses import asdict, replace
from pathlib import Path

from nbsched import explorer as ex
from nbsched.config import load_config
from nbsched.report import rows_to_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="fig5.cfg")
    ap.add_argument("--f1", type=float, nargs="+", default=[0.9, 0.95])
    ap.add_argument("--c2", type=int, nargs="+", default=list(range(1, 17)))
    ap.add_argument("--sessions", type=float, default=None, help="override S (sessions per day)")
    ap.add_argument("--bs-rate", type=float, default=None, help="override lambda_b (1/s)")
    ap.add_argument("--out", default="runs/fig5_mutual_impact.csv")
    args = ap.parse_args()

    base = load_config(args.config)
    if args.sessions is not None:
        base = ex.apply_param(base, "S", args.sessions)
    if args.bs_rate is not None:
        base = replace(base, traffic=replace(base.traffic, bs_control_rate=args.bs_rate))
    rows = ex.mutual_impact(base, args.c2, args.f1)

    print(f"{'f1':>5} {'c2':>3} {'L1 (days)':>10} {'L2 (days)':>10}  note")
    for r in rows:
        note = "" if r.feasible else r.reason
        print(f"{r.f1:>5g} {r.c2:>3} {r.L1:>10.1f} {r.L2:>10.1f}  {note}")
    for f1 in args.f1:
        print(f"f1={f1:g}: class-1 lifetime drop for c2 11->13 = {ex.lifetime_drop(rows, f1, 11, 13):.2%}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rows_to_csv([asdict(r) for r in rows], list(asdict(rows[0]))))
    print(out)


if __name__ == "__main__":
    main()
