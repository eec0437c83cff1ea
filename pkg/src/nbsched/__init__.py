"""Latency, energy and battery-lifetime model of NB-IoT channel scheduling.

Three layers share one configuration type:

* :mod:`nbsched.analytic` -- closed-form per-class latency/energy/lifetime.
* :mod:`nbsched.sim` -- discrete-event simulation of the access protocol.
* :mod:`nbsched.explorer` -- parameter sweeps, optima and Pareto frontiers.
"""

from nbsched.config import (
    ConfigError,
    CoverageClass,
    PowerProfile,
    ScheduleConfig,
    SystemConfig,
    TrafficConfig,
    arrival_rates,
    load_config,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CoverageClass",
    "PowerProfile",
    "ScheduleConfig",
    "SystemConfig",
    "TrafficConfig",
    "arrival_rates",
    "load_config",
    "validate",
    "__version__",
]
