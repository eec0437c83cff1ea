"""Class-1 optimizers of D_d, L and D_u over t at short NPDCCH periods.

Writes the full analytic curves so a missing optimum can be inspected.

    python scripts/fig8_optima.py --d 2ms 4.4ms
"""

import argparse
from pathlib import Path

from nbsched import explorer as ex
from nbsched.config import load_config
from nbsched.report import rows_to_csv
from nbsched.units import parse_quantity

GRID = tuple(round(0.010 + 0.005 * i, 3) for i in range(79))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="fig8.cfg")
    ap.add_argument("--d", nargs="+", default=["2 ms", "4.4 ms"])
    ap.add_argument("--out", default="runs/fig8_curves.csv")
    args = ap.parse_args()

    base = load_config(args.config)
    rows = []
    for text in args.d:
        d = parse_quantity(text, "duration")
        spec = ex.SweepSpec(ex.apply_param(base, "d", d), (ex.Axis("t", GRID),), classes=(1,))
        try:
            result = ex.sweep(spec)
        except ex.AllInfeasibleError as exc:
            print(f"d={d * 1e3:g} ms: {exc}")
            continue
        best = {m: result.optimum(m, 1).coords[0] for m in ex.METRICS}
        print(f"d={d * 1e3:g} ms: {len(result.feasible_points)}/{len(GRID)} feasible; "
              f"t* D_d {best['D_d'] * 1e3:g} ms, L {best['L'] * 1e3:g} ms, D_u {best['D_u'] * 1e3:g} ms; "
              f"ordered={best['D_d'] < best['L'] < best['D_u']}")
        for p in result.points:
            row = {"d": d, "t": p.coords[0], "feasible": int(p.feasible), "reason": p.reason or ""}
            row.update({m: p.values.get((m, 1), "") for m in ex.METRICS})
            rows.append(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rows_to_csv(rows, ["d", "t", "feasible", "reason", *ex.METRICS]))
    print(out)


if __name__ == "__main__":
    main()
