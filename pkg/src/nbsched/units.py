"""Parsing of quantities with units used in config files.

Every quantity is converted to a canonical unit: seconds, bit/s, bits,
watts, joules, sessions per day, events per second.
"""

import re

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUANTITY = re.compile(rf"^\s*({_NUMBER})\s*(.*?)\s*$")

_UNITS = {
    "duration": {"": 1.0, "s": 1.0, "sec": 1.0, "ms": 1e-3, "us": 1e-6, "min": 60.0, "h": 3600.0},
    "rate": {"": 1.0, "bit/s": 1.0, "bps": 1.0, "kbit/s": 1e3, "kbps": 1e3, "mbit/s": 1e6},
    "bits": {"": 1.0, "bit": 1.0, "bits": 1.0, "kbit": 1e3, "kbits": 1e3, "byte": 8.0, "bytes": 8.0},
    "bits2": {"": 1.0, "bit^2": 1.0, "bit2": 1.0},
    "power": {"": 1.0, "w": 1.0, "mw": 1e-3, "uw": 1e-6},
    "energy": {"": 1.0, "j": 1.0, "mj": 1e-3, "kj": 1e3},
    # sessions per day
    "sessions": {
        "": 1.0, "/day": 1.0, "/d": 1.0, "per-day": 1.0, "per day": 1.0,
        "/h": 24.0, "/hour": 24.0, "per-hour": 24.0, "per hour": 24.0,
    },
    # events per second
    "frequency": {"": 1.0, "/s": 1.0, "hz": 1.0, "per-second": 1.0, "/ms": 1e3},
}


class UnitError(ValueError):
    pass


def parse_quantity(value, kind):
    """Convert ``value`` (number or ``"<number> <unit>"`` string) to canonical units.

    >>> parse_quantity("10 ms", "duration")
    0.01
    >>> parse_quantity("0.5/h", "sessions")
    12.0
    """
    if isinstance(value, bool):
        raise UnitError(f"expected a {kind} quantity, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"expected a {kind} quantity, got {value!r}")
    m = _QUANTITY.match(value)
    if m is None:
        raise UnitError(f"cannot parse {kind} quantity {value!r}")
    number, unit = m.groups()
    table = _UNITS[kind]
    key = unit.strip().lower()
    if key not in table:
        raise UnitError(f"unknown {kind} unit {unit!r} in {value!r}; known: {sorted(k for k in table if k)}")
    return float(number) * table[key]
