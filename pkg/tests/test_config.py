import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from nbsched.config import (
    ConfigError,
    CoverageClass,
    PowerProfile,
    ScheduleConfig,
    SystemConfig,
    TrafficConfig,
    arrival_rates,
    config_from_dict,
    dumps_config,
    load_config,
    loads_config,
    table1,
    validate,
)
from nbsched.units import UnitError, parse_quantity


def test_table1_is_valid_with_w_085():
    out = validate(table1())
    assert out.ok
    assert out.w == pytest.approx(0.85, abs=1e-12)


def test_fraction_sum_violation_names_constraint():
    cfg = table1().replace_class(0, fraction=0.6).replace_class(1, fraction=0.6)
    out = validate(cfg)
    assert not out.ok
    assert any("class fractions sum to 1.2" in str(v) for v in out.violations)
    with pytest.raises(ConfigError, match="sum to 1.2"):
        out.raise_for_violations()


def test_single_class_zero_uplink_duty():
    cfg = SystemConfig(classes=(CoverageClass(1, 1.0, nprach_period=0.01),))
    out = validate(cfg)
    assert [v.kind for v in out.violations] == ["stability"]
    assert "uplink duty fraction w = 0" in str(out.violations[0])


def test_arrival_rates_table1():
    g_u, g_d = arrival_rates(TrafficConfig())
    assert g_u == pytest.approx(2.2222, abs=1e-4)
    assert g_d == pytest.approx(0.5556, abs=1e-4)


def test_arrival_rates_edges():
    assert arrival_rates(TrafficConfig(uplink_prob=1.0))[1] == 0.0
    assert arrival_rates(TrafficConfig(devices=0)) == (0.0, 0.0)


@given(st.integers(0, 10**6), st.floats(0, 1e3), st.floats(0, 1))
def test_arrival_rates_sum(n, s, p):
    g_u, g_d = arrival_rates(TrafficConfig(devices=n, sessions_per_day=s, uplink_prob=p))
    assert g_u + g_d == pytest.approx(n * s / 86400, rel=1e-12, abs=1e-300)


def test_validate_is_pure():
    cfg = table1()
    assert validate(cfg) == validate(cfg)
    assert cfg == table1()


def test_default_second_moments_are_deterministic():
    t = TrafficConfig(ul_bits=200, dl_bits=5000)
    assert t.ul_bits_sq == 200 ** 2 and t.dl_bits_sq == 5000 ** 2


def test_second_moment_below_mean_square_rejected():
    cfg = replace(table1(), traffic=TrafficConfig(ul_bits_sq=1.0))
    assert any("ul_bits_sq" in v.field for v in validate(cfg).violations)


def test_strict_repetitions():
    cfg = replace(table1().replace_class(1, repetitions=3), strict_3gpp=True)
    assert any("repetitions" in v.field for v in validate(cfg).violations)
    assert validate(replace(cfg, strict_3gpp=False)).ok


@pytest.mark.parametrize("name", ["table1.cfg", "fig4.cfg", "fig5.cfg", "fig8.cfg"])
def test_bundled_configs_load(name):
    cfg = load_config(name)
    assert not [v for v in validate(cfg).violations if v.kind == "config"]


def test_bundled_table1_matches_dataclass_defaults():
    assert load_config("table1.cfg") == table1()


def test_bundled_figure_configs():
    fig4 = load_config("fig4.cfg")
    assert fig4.traffic.sessions_per_day == pytest.approx(6.0)
    assert fig4.traffic.ul_bits == 200 and fig4.traffic.dl_bits == 5000
    assert fig4.schedule.npdcch_period == pytest.approx(0.01)
    fig5 = load_config("fig5.cfg")
    assert [c.repetitions for c in fig5.classes] == [1, 11]
    assert fig5.schedule.nprach_unit == pytest.approx(0.002)
    assert all(c.nprach_period == pytest.approx(0.065) for c in fig5.classes)
    assert load_config("fig8.cfg").schedule.npdcch_period == pytest.approx(0.002)


def test_per_hour_sessions_convert():
    text = """
traffic: {sessions: 0.5/h}
classes:
  - {repetitions: 1, fraction: 1}
"""
    assert loads_config(text).traffic.sessions_per_day == 12.0


def test_unknown_key_and_section():
    with pytest.raises(ConfigError, match="unknown key"):
        loads_config("traffic: {bogus: 1}\nclasses: [{repetitions: 1, fraction: 1}]")
    with pytest.raises(ConfigError, match="unknown sections"):
        loads_config("extra: {}\nclasses: [{repetitions: 1, fraction: 1}]")


def test_missing_classes_and_bad_numbers():
    with pytest.raises(ConfigError, match="classes"):
        loads_config("traffic: {devices: 10}")
    with pytest.raises(ConfigError, match="integer"):
        loads_config("classes: [{repetitions: 1.5, fraction: 1}]")
    with pytest.raises(ConfigError, match="unit"):
        loads_config("schedule: {npdcch_period: 10 parsecs}\nclasses: [{repetitions: 1, fraction: 1}]")


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/dir/x.cfg")


def test_bs_control_rate_follows_frame_length():
    cfg = loads_config("schedule: {frame_len: 20 ms}\nclasses: [{repetitions: 1, fraction: 1}]")
    assert cfg.traffic.bs_control_rate == pytest.approx(50.0)


finite = dict(allow_nan=False, allow_infinity=False)

classes_st = st.lists(
    st.builds(
        CoverageClass,
        repetitions=st.integers(1, 128),
        fraction=st.floats(0, 1, **finite),
        preambles=st.integers(1, 64),
        nprach_period=st.floats(1e-3, 10, **finite),
        uplink_rate=st.floats(1, 1e6, **finite),
        downlink_rate=st.floats(1, 1e6, **finite),
        sync_latency=st.floats(0, 10, **finite),
        tx_power=st.floats(0, 1, **finite),
    ),
    min_size=1,
    max_size=4,
)

config_st = st.builds(
    SystemConfig,
    classes=classes_st,
    traffic=st.builds(
        TrafficConfig,
        devices=st.integers(1, 10**6),
        sessions_per_day=st.floats(1e-3, 1e3, **finite),
        uplink_prob=st.floats(0, 1, **finite),
        ul_bits=st.floats(1, 1e5, **finite),
        dl_bits=st.floats(1, 1e6, **finite),
        rar_window=st.floats(1e-3, 10, **finite),
        bs_control_rate=st.floats(0, 1e3, **finite),
    ),
    schedule=st.builds(
        ScheduleConfig,
        npdcch_period=st.floats(1e-4, 1, **finite),
        nprach_unit=st.floats(1e-4, 0.1, **finite),
        control_tx_time=st.floats(1e-4, 0.1, **finite),
        ref_signal_fraction=st.floats(0.01, 0.99, **finite),
        max_attempts=st.integers(1, 20),
    ),
    power=st.builds(PowerProfile, battery=st.floats(1, 1e5, **finite)),
    rach_mode=st.sampled_from(["corrected", "faithful"]),
    rr_energy_per_attempt=st.booleans(),
    h2_moment=st.sampled_from(["m2", "m2_squared"]),
)


@settings(max_examples=200, deadline=None)
@given(config_st)
def test_round_trip(cfg):
    assert loads_config(dumps_config(cfg)) == cfg


@given(config_st)
@settings(max_examples=100, deadline=None)
def test_validate_never_raises(cfg):
    out = validate(cfg)
    assert out.ok == (not out.violations)


def test_config_from_dict_rejects_non_mapping():
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])


@pytest.mark.parametrize(
    "value,kind,expected",
    [
        ("10 ms", "duration", 0.01),
        ("2 s", "duration", 2.0),
        (0.5, "duration", 0.5),
        ("5 kbit/s", "rate", 5000.0),
        ("5 kbit", "bits", 5000.0),
        ("0.5/h", "sessions", 12.0),
        ("6/day", "sessions", 6.0),
        ("1 kJ", "energy", 1000.0),
        ("200 mW", "power", 0.2),
        ("100/s", "frequency", 100.0),
    ],
)
def test_parse_quantity(value, kind, expected):
    assert math.isclose(parse_quantity(value, kind), expected, rel_tol=1e-12)


@pytest.mark.parametrize("value", [True, None, "ms", "10 furlongs", [1]])
def test_parse_quantity_rejects(value):
    with pytest.raises(UnitError):
        parse_quantity(value, "duration")
