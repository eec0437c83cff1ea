import csv
import json
from pathlib import Path

import pytest

from nbsched import cli
from nbsched.config import config_to_dict, load_config

FIG4 = "fig4.cfg"


def only_run_dir(out, prefix):
    dirs = sorted(p for p in Path(out).iterdir() if p.name.startswith(prefix))
    assert dirs
    return dirs


def write_cfg(tmp_path, text, name="c.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def fig4_text():
    return (Path(cli.__file__).parent / "configs" / FIG4).read_text()


def test_analytic_smoke(tmp_path):
    assert cli.main(["analytic", "--out", str(tmp_path)]) == cli.EXIT_OK
    (run,) = only_run_dir(tmp_path, "analytic-")
    with open(run / "analytic.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["row"], r["class"]) for r in rows] == [("class", "1"), ("class", "2"), ("system", "")]
    doc = json.loads((run / "analytic.json").read_text())
    assert doc["schema_version"] == 1
    man = json.loads((run / "manifest.json").read_text())
    assert man["schema_version"] == 1 and man["status"] == "complete" and man["exit_code"] == 0
    assert set(man["outputs"]) == {"analytic.csv", "analytic.json"}


def test_format_json_only(tmp_path):
    assert cli.main(["analytic", "--out", str(tmp_path), "--format", "json"]) == 0
    (run,) = only_run_dir(tmp_path, "analytic-")
    assert not (run / "analytic.csv").exists()


def test_fractions_not_summing_to_one(tmp_path, capsys):
    cfg = write_cfg(tmp_path, fig4_text().replace("fraction: 0.5\n    sync_latency: 0.66", "fraction: 0.7\n    sync_latency: 0.66"))
    assert cli.main(["analytic", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "fraction" in err and "1.2" in err
    assert not (tmp_path / "o").exists()


def test_overloaded_traffic_is_unstable(tmp_path, capsys):
    code = cli.main(["analytic", "--config", FIG4, "--set", "S=10000", "--out", str(tmp_path)])
    assert code == cli.EXIT_UNSTABLE
    assert "unstable" in capsys.readouterr().err


def test_bad_override(tmp_path):
    assert cli.main(["analytic", "--set", "t", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["analytic", "--set", "bogus=1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_missing_config(tmp_path):
    assert cli.main(["analytic", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_short_horizon_undersampled(tmp_path):
    code = cli.main(["simulate", "--horizon", "1 s", "--seeds", "1", "--out", str(tmp_path)])
    assert code == cli.EXIT_UNDERSAMPLED
    (run,) = only_run_dir(tmp_path, "simulate-")
    man = json.loads((run / "manifest.json").read_text())
    assert man["status"] == "failed" and man["exit_code"] == cli.EXIT_UNDERSAMPLED


def test_simulate_reproducible(tmp_path):
    argv = ["simulate", "--config", FIG4, "--seeds", "1..2", "--horizon", "600 s", "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    assert cli.main(argv) == 0
    a, b = only_run_dir(tmp_path, "simulate-")
    assert b.name == a.name + "-2"
    for name in ("simulation.csv", "simulation.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["run_id"] == mb["run_id"] and ma["seeds"] == [1, 2]


def test_run_id_depends_on_inputs():
    cfg = config_to_dict(load_config(FIG4))
    base = cli.run_id("simulate", cfg, [1, 2], {"horizon": 600})
    assert base == cli.run_id("simulate", cfg, [1, 2], {"horizon": 600})
    assert base != cli.run_id("simulate", cfg, [1, 3], {"horizon": 600})
    assert base != cli.run_id("simulate", cfg, [1, 2], {"horizon": 900})


def test_parse_seeds():
    assert cli.parse_seeds(["1..3", "7,9"]) == [1, 2, 3, 7, 9]
    with pytest.raises(ValueError):
        cli.parse_seeds(["5..2"])


def test_trace_jsonl(tmp_path):
    code = cli.main(["trace", "--config", FIG4, "--seed", "2", "--horizon", "300 s", "--limit", "3",
                     "--out", str(tmp_path)])
    assert code == 0
    (run,) = only_run_dir(tmp_path, "trace-")
    events = [json.loads(line) for line in (run / "trace.jsonl").read_text().splitlines()]
    assert events and {e["session"] for e in events} <= {0, 1, 2}
    assert {"t", "event", "class", "power_state"} <= set(events[0])
    with open(run / "trace.csv") as fh:
        assert len(list(csv.DictReader(fh))) == len(events)


def test_validate_within_tolerance(tmp_path, capsys):
    argv = ["validate", "--config", FIG4, "--set", "t=200ms", "--seeds", "1..3", "--horizon", "3600 s",
            "--warmup", "300 s", "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "D_u" in out and "L" in out
    (run,) = only_run_dir(tmp_path, "validate-")
    doc = json.loads((run / "validation.json").read_text())
    assert len(doc["rows"]) == 6 and all(r["within"] for r in doc["rows"])


def test_validate_zero_tolerance(tmp_path):
    argv = ["validate", "--config", FIG4, "--set", "t=200ms", "--seeds", "1..2", "--horizon", "900 s",
            "--warmup", "60 s", "--tolerance", "0", "--classes", "1", "--out", str(tmp_path)]
    assert cli.main(argv) == cli.EXIT_TOLERANCE
    (run,) = only_run_dir(tmp_path, "validate-")
    assert json.loads((run / "manifest.json").read_text())["status"] == "failed"


def test_sweep_writes_outputs(tmp_path, capsys):
    spec = tmp_path / "s.yaml"
    spec.write_text("base: fig4.cfg\naxes:\n  - param: t\n    values: [40 ms, 80 ms, 160 ms, 320 ms, 1.28 s]\n")
    assert cli.main(["sweep", str(spec), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "class 1 max L" in out and "t=0.16" in out
    (run,) = only_run_dir(tmp_path / "o", "sweep-")
    assert (run / "sweep.csv").exists() and (run / "matrix" / "L_class1.dat").exists()
    doc = json.loads((run / "sweep.json").read_text())
    assert doc["feasible"] == 4


def test_sweep_empty_grid(tmp_path):
    spec = tmp_path / "s.yaml"
    spec.write_text("base: fig4.cfg\naxes:\n  - param: t\n    values: []\n")
    assert cli.main(["sweep", str(spec), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_sweep_all_infeasible(tmp_path):
    spec = tmp_path / "s.yaml"
    spec.write_text("base: fig4.cfg\naxes:\n  - param: t\n    values: [1.28 s, 2.56 s]\n")
    assert cli.main(["sweep", str(spec), "--out", str(tmp_path)]) == cli.EXIT_UNSTABLE


def test_env_out_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["analytic"]) == 0
    assert only_run_dir(tmp_path / "envout", "analytic-")
