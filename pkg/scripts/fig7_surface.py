"""Normalized lifetime and latency surfaces over (t, d) and their Pareto frontier.

    python scripts/fig7_surface.py [scripts/specs/fig7_surface.yaml]
"""

import sys
from pathlib import Path

from nbsched import explorer as ex
from nbsched.report import dumps_json, rows_to_csv

HERE = Path(__file__).parent


def main():
    spec_path = Path(sys.argv[1]) if len(sys.argv) > 1 else HERE / "specs" / "fig7_surface.yaml"
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("runs/fig7_surface")
    result = ex.sweep(ex.load_spec(spec_path))
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(rows_to_csv(ex.long_rows(result), ex.long_columns(result)))
    (out / "sweep.json").write_text(dumps_json(ex.summary_document(result)))
    for j in result.spec.class_indices:
        for m in result.spec.metrics:
            (out / f"{m}_class{j}.dat").write_text(ex.matrix_text(result, m, j))

    print(f"{len(result.feasible_points)}/{len(result.points)} grid points feasible")
    for op in result.optima:
        t, d = op.coords
        print(f"class {op.cls}: best {op.metric} = {op.value:.4g} at t={t * 1e3:g} ms, d={d * 1e3:g} ms")
    for j, front in result.frontiers.items():
        pts = ", ".join(f"({t * 1e3:g}, {d * 1e3:g})" for t, d in front)
        print(f"class {j} frontier (t, d) in ms: {pts}")
    print(out)


if __name__ == "__main__":
    main()
