"""Domain types for the NB-IoT scheduling model and their validation.

All quantities are stored in canonical SI-like units: seconds, bits, bit/s,
watts, joules. The one exception is the session rate ``S`` which is kept in
sessions per day, because the lifetime is expressed in days.

Config files are YAML documents with ``traffic``, ``schedule``, ``power``,
``classes`` (plus optional ``class_defaults`` and ``model``) sections. Values
may carry units, e.g. ``"10 ms"``, ``"5 kbit/s"``, ``"0.5/h"``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import yaml

from nbsched.units import UnitError, parse_quantity

SECONDS_PER_DAY = 24 * 3600
STRICT_REPETITIONS = (1, 2, 4, 8, 16, 32, 64, 128)
RACH_MODES = ("corrected", "faithful")
H2_MODES = ("m2", "m2_squared")
FRACTION_TOL = 1e-9


class ConfigError(ValueError):
    """Raised when a config cannot be parsed or violates its invariants."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


@dataclass(frozen=True)
class CoverageClass:
    repetitions: int  # c_j
    fraction: float  # f_j
    preambles: int = 16  # M_j
    nprach_period: float = 0.2  # t_j [s]
    uplink_rate: float = 5e3  # R_j [bit/s]
    downlink_rate: float = 15e3  # RR_j [bit/s]
    sync_latency: float = 0.33  # D_sy_j [s]
    tx_power: float = 0.2  # P_t_j [W]


@dataclass(frozen=True)
class TrafficConfig:
    devices: int = 20000  # N
    sessions_per_day: float = 12.0  # S
    uplink_prob: float = 0.8  # p
    ul_bits: float = 500.0  # l1
    ul_bits_sq: float | None = None  # l2, defaults to l1**2 (deterministic size)
    dl_bits: float = 5000.0  # m1
    dl_bits_sq: float | None = None  # m2, defaults to m1**2
    rar_window: float = 2.0  # T_th [s]
    bs_control_rate: float = 100.0  # lambda_b [1/s]

    def __post_init__(self):
        if self.ul_bits_sq is None:
            object.__setattr__(self, "ul_bits_sq", float(self.ul_bits) ** 2)
        if self.dl_bits_sq is None:
            object.__setattr__(self, "dl_bits_sq", float(self.dl_bits) ** 2)


@dataclass(frozen=True)
class ScheduleConfig:
    npdcch_period: float = 0.01  # d [s]
    nprach_unit: float = 0.01  # tau [s]
    control_tx_time: float = 0.002  # u [s]
    ref_signal_fraction: float = 0.2  # b
    frame_len: float = 0.01  # CF [s]
    max_attempts: int = 10  # N_rmax


@dataclass(frozen=True)
class PowerProfile:
    pa_efficiency: float = 1.0  # xi, multiplies the transmit power
    idle_power: float = 0.01  # P_I [W]
    circuit_power: float = 0.01  # P_c [W]
    listen_power: float = 0.1  # P_l [W]
    ack_energy: float = 0.0  # E_s [J]
    battery: float = 1000.0  # E_0 [J]


@dataclass(frozen=True)
class SystemConfig:
    classes: tuple[CoverageClass, ...]
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    power: PowerProfile = field(default_factory=PowerProfile)
    rach_mode: str = "corrected"
    # count the attempt index in the reservation energy, like the latency series
    rr_energy_per_attempt: bool = True
    # second downlink service moment built from m2 (default) or m2**2 as printed
    h2_moment: str = "m2"
    strict_3gpp: bool = False

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def n_classes(self):
        return len(self.classes)

    def replace_classes(self, **changes):
        """Apply the same field changes to every class."""
        return replace(self, classes=tuple(replace(c, **changes) for c in self.classes))

    def replace_class(self, j, **changes):
        classes = list(self.classes)
        classes[j] = replace(classes[j], **changes)
        return replace(self, classes=tuple(classes))


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    kind: str = "config"  # "config" or "stability"

    def __str__(self):
        return f"{self.field}: {self.message}"


@dataclass(frozen=True)
class ValidationOutcome:
    violations: tuple[Violation, ...]
    w: float | None = None
    y: float | None = None

    @property
    def ok(self):
        return not self.violations

    @property
    def only_stability(self):
        return bool(self.violations) and all(v.kind == "stability" for v in self.violations)

    def raise_for_violations(self):
        if self.violations:
            raise ConfigError("; ".join(map(str, self.violations)), self.violations)


def table1(nprach_period=0.2, npdcch_period=0.01):
    """The two-class reference configuration (Table I values)."""
    classes = (
        CoverageClass(repetitions=1, fraction=0.5, sync_latency=0.33, nprach_period=nprach_period),
        CoverageClass(repetitions=2, fraction=0.5, sync_latency=0.66, nprach_period=nprach_period),
    )
    return SystemConfig(classes=classes, schedule=ScheduleConfig(npdcch_period=npdcch_period))


def arrival_rates(traffic):
    """Uplink and downlink session arrival rates ``(G_u, G_d)`` in 1/s."""
    total = traffic.devices * traffic.sessions_per_day / SECONDS_PER_DAY
    g_u = total * traffic.uplink_prob
    g_d = total * (1.0 - traffic.uplink_prob)
    return g_u, g_d


def validate(config):
    """Check every invariant of ``config``; never raises.

    Violations of the uplink/downlink duty fractions are tagged with
    ``kind="stability"`` so callers can tell an overloaded schedule from a
    malformed config.
    """
    out = []

    def bad(name, message, kind="config"):
        out.append(Violation(name, message, kind))

    if not config.classes:
        bad("classes", "at least one coverage class is required")
    for j, c in enumerate(config.classes, start=1):
        name = f"classes[{j}]"
        if not isinstance(c.repetitions, int) or c.repetitions < 1:
            bad(f"{name}.repetitions", f"must be a positive integer, got {c.repetitions!r}")
        elif config.strict_3gpp and c.repetitions not in STRICT_REPETITIONS:
            bad(f"{name}.repetitions", f"{c.repetitions} not in {STRICT_REPETITIONS}")
        if not 0.0 <= c.fraction <= 1.0:
            bad(f"{name}.fraction", f"must lie in [0, 1], got {c.fraction}")
        if not isinstance(c.preambles, int) or c.preambles < 1:
            bad(f"{name}.preambles", f"must be a positive integer, got {c.preambles!r}")
        for attr in ("nprach_period", "uplink_rate", "downlink_rate"):
            if not getattr(c, attr) > 0:
                bad(f"{name}.{attr}", f"must be > 0, got {getattr(c, attr)}")
        for attr in ("sync_latency", "tx_power"):
            if not getattr(c, attr) >= 0:
                bad(f"{name}.{attr}", f"must be >= 0, got {getattr(c, attr)}")
    if config.classes:
        total = math.fsum(c.fraction for c in config.classes)
        if abs(total - 1.0) > FRACTION_TOL:
            bad("classes.fraction", f"class fractions sum to {total:.6g}, expected 1")

    t = config.traffic
    if not (isinstance(t.devices, int) and t.devices >= 1):
        bad("traffic.devices", f"must be an integer >= 1, got {t.devices!r}")
    if not t.sessions_per_day > 0:
        bad("traffic.sessions_per_day", f"must be > 0, got {t.sessions_per_day}")
    if not 0.0 <= t.uplink_prob <= 1.0:
        bad("traffic.uplink_prob", f"must lie in [0, 1], got {t.uplink_prob}")
    for first, second in (("ul_bits", "ul_bits_sq"), ("dl_bits", "dl_bits_sq")):
        m1, m2 = getattr(t, first), getattr(t, second)
        if not m1 > 0:
            bad(f"traffic.{first}", f"must be > 0, got {m1}")
        # relative slack so that m2 = m1**2 survives a unit conversion
        elif m2 < m1 * m1 * (1.0 - 1e-12):
            bad(f"traffic.{second}", f"second moment {m2} below squared mean {m1 * m1}")
    if not t.rar_window > 0:
        bad("traffic.rar_window", f"must be > 0, got {t.rar_window}")
    if not t.bs_control_rate >= 0:
        bad("traffic.bs_control_rate", f"must be >= 0, got {t.bs_control_rate}")

    s = config.schedule
    for attr in ("npdcch_period", "nprach_unit", "control_tx_time", "frame_len"):
        if not getattr(s, attr) > 0:
            bad(f"schedule.{attr}", f"must be > 0, got {getattr(s, attr)}")
    if not 0.0 < s.ref_signal_fraction < 1.0:
        bad("schedule.ref_signal_fraction", f"must lie in (0, 1), got {s.ref_signal_fraction}")
    if not (isinstance(s.max_attempts, int) and s.max_attempts >= 1):
        bad("schedule.max_attempts", f"must be a positive integer, got {s.max_attempts!r}")

    p = config.power
    for attr in ("pa_efficiency", "idle_power", "circuit_power", "listen_power", "ack_energy"):
        if not getattr(p, attr) >= 0:
            bad(f"power.{attr}", f"must be >= 0, got {getattr(p, attr)}")
    if not p.battery > 0:
        bad("power.battery", f"must be > 0, got {p.battery}")

    if config.rach_mode not in RACH_MODES:
        bad("rach_mode", f"must be one of {RACH_MODES}, got {config.rach_mode!r}")
    if config.h2_moment not in H2_MODES:
        bad("h2_moment", f"must be one of {H2_MODES}, got {config.h2_moment!r}")

    if out:
        return ValidationOutcome(tuple(out))

    from nbsched import analytic

    w = analytic.uplink_duty_value(config)
    y = analytic.downlink_duty_value(config)
    if not w > 0:
        bad("schedule", f"uplink duty fraction w = {w:.4g} (must be > 0; NPRACH windows fill the uplink)",
            kind="stability")
    if not y > 0:
        bad("schedule", f"downlink duty fraction y = {y:.4g} (must be > 0; NPDCCH and reference "
                        "signals fill the downlink)", kind="stability")
    return ValidationOutcome(tuple(out), w=w, y=y)


# ---------------------------------------------------------------------------
# serialization

_CLASS_KINDS = {
    "repetitions": None,
    "fraction": None,
    "preambles": None,
    "nprach_period": "duration",
    "uplink_rate": "rate",
    "downlink_rate": "rate",
    "sync_latency": "duration",
    "tx_power": "power",
}
_SECTIONS = {
    "traffic": (TrafficConfig, {
        "devices": None,
        "sessions_per_day": "sessions",
        "uplink_prob": None,
        "ul_bits": "bits",
        "ul_bits_sq": "bits2",
        "dl_bits": "bits",
        "dl_bits_sq": "bits2",
        "rar_window": "duration",
        "bs_control_rate": "frequency",
    }),
    "schedule": (ScheduleConfig, {
        "npdcch_period": "duration",
        "nprach_unit": "duration",
        "control_tx_time": "duration",
        "ref_signal_fraction": None,
        "frame_len": "duration",
        "max_attempts": None,
    }),
    "power": (PowerProfile, {
        "pa_efficiency": None,
        "idle_power": "power",
        "circuit_power": "power",
        "listen_power": "power",
        "ack_energy": "energy",
        "battery": "energy",
    }),
}
_INT_FIELDS = {"repetitions", "preambles", "devices", "max_attempts"}
_ALIASES = {"sessions": "sessions_per_day"}


def _convert(section, key, value, kind):
    if key in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        return int(value)
    try:
        if kind is None:
            if isinstance(value, bool):
                raise TypeError(f"expected a number, got {value!r}")
            return float(value)
        return parse_quantity(value, kind)
    except (UnitError, TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from exc


def _parse_section(name, raw, kinds):
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    out = {}
    for key, value in raw.items():
        key = _ALIASES.get(key, key)
        if key not in kinds:
            raise ConfigError(f"{name}: unknown key {key!r}")
        out[key] = _convert(name, key, value, kinds[key])
    return out


def config_from_dict(data):
    """Build a :class:`SystemConfig` from a parsed config document."""
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    known = {"traffic", "schedule", "power", "classes", "class_defaults", "model"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")

    parts = {}
    for section, (cls, kinds) in _SECTIONS.items():
        values = _parse_section(section, data.get(section), kinds)
        if section == "traffic" and "bs_control_rate" not in values:
            # Table I ties the BS control arrival rate to the frame length
            frame = _parse_section("schedule", data.get("schedule"), _SECTIONS["schedule"][1]).get(
                "frame_len", ScheduleConfig.frame_len)
            values["bs_control_rate"] = 1.0 / frame
        parts[section] = cls(**values)

    defaults = _parse_section("class_defaults", data.get("class_defaults"), _CLASS_KINDS)
    raw_classes = data.get("classes")
    if not raw_classes or not isinstance(raw_classes, list):
        raise ConfigError("classes: a non-empty list is required")
    classes = []
    for j, raw in enumerate(raw_classes, start=1):
        values = dict(defaults)
        values.update(_parse_section(f"classes[{j}]", raw, _CLASS_KINDS))
        missing = {"repetitions", "fraction"} - set(values)
        if missing:
            raise ConfigError(f"classes[{j}]: missing {sorted(missing)}")
        classes.append(CoverageClass(**values))

    model = data.get("model") or {}
    allowed = {"rach_mode", "rr_energy_per_attempt", "h2_moment", "strict_3gpp"}
    if set(model) - allowed:
        raise ConfigError(f"model: unknown keys {sorted(set(model) - allowed)}")
    return SystemConfig(classes=tuple(classes), **parts, **model)


def config_to_dict(config):
    """Canonical plain-number form; ``config_from_dict`` inverts it exactly."""
    return {
        "traffic": asdict(config.traffic),
        "schedule": asdict(config.schedule),
        "power": asdict(config.power),
        "classes": [asdict(c) for c in config.classes],
        "model": {
            "rach_mode": config.rach_mode,
            "rr_energy_per_attempt": config.rr_energy_per_attempt,
            "h2_moment": config.h2_moment,
            "strict_3gpp": config.strict_3gpp,
        },
    }


def dumps_config(config):
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def loads_config(text):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return config_from_dict(data)


def bundled_config_path(name):
    """Path of a config shipped with the package (``table1.cfg`` etc.)."""
    ref = resources.files("nbsched") / "configs" / name
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(ref))


def resolve_config_path(spec):
    path = Path(spec)
    if path.is_file():
        return path
    if path.parent == Path(".") and not path.exists():
        return bundled_config_path(path.name)
    raise ConfigError(f"config file not found: {spec}")


def load_config(spec):
    """Load a config from a path, or from a bundled name such as ``"table1.cfg"``."""
    path = resolve_config_path(spec)
    return loads_config(path.read_text())
