"""Closed-form latency, energy and lifetime of the NB-IoT access protocol.

Every function takes a :class:`~nbsched.config.SystemConfig`; per-class
functions take a zero-based class index ``j``. Reports number classes from 1.

The uplink server alternates NPRACH windows with NPUSCH; the downlink server
alternates reference signals, NPDCCH visits and NPDSCH. Data channels are
modelled as batch-Poisson/G/1 queues whose service is stretched by the duty
fraction left over for them (``w`` uplink, ``y`` downlink).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

from nbsched.config import arrival_rates

POISSON_TAIL = 1e-12
LOW_SUCCESS = 0.05
HIGH_LOAD = 0.95


class StabilityError(ValueError):
    """A duty fraction is nonpositive or a data queue is overloaded."""

    def __init__(self, quantity, value, details=None):
        self.quantity = quantity
        self.value = value
        self.details = dict(details or {})
        extra = ", ".join(f"{k}={v:.6g}" for k, v in self.details.items())
        bound = "> 0" if quantity in ("w", "y") else "< 1"
        super().__init__(f"unstable: {quantity} = {value:.6g} (requires {bound})" + (f" [{extra}]" if extra else ""))


# ---------------------------------------------------------------------------
# control channel (NPDCCH)

def npdcch_load(config):
    """Expected number of requests queued at an NPDCCH visit (``Q``)."""
    g_u, g_d = arrival_rates(config.traffic)
    d = config.schedule.npdcch_period
    ra = math.fsum(c.fraction * (g_u + g_d) * max(d, c.nprach_period) for c in config.classes)
    return ra + config.traffic.bs_control_rate * d


def mean_control_service_time(config):
    """Class-averaged NPDCCH transmission time ``sum_j f_j c_j u``."""
    u = config.schedule.control_tx_time
    return math.fsum(c.fraction * c.repetitions * u for c in config.classes)


def control_wait(config):
    """Mean wait behind the requests already queued at a visit (``D_w``)."""
    return 0.5 * npdcch_load(config) * mean_control_service_time(config)


def rar_latency(config, j):
    """Time from the end of the RA window to reception of the RAR."""
    c = config.classes[j]
    return 0.5 * config.schedule.npdcch_period + control_wait(config) + c.repetitions * config.schedule.control_tx_time


def ra_latency(config, j):
    """Wait for the next NPRACH window of class ``j`` plus the preamble repetitions."""
    c = config.classes[j]
    return 0.5 * c.nprach_period + c.repetitions * config.schedule.nprach_unit


# ---------------------------------------------------------------------------
# random access

def contenders(config, j):
    """Mean number of class-``j`` devices arriving per NPRACH period."""
    g_u, g_d = arrival_rates(config.traffic)
    c = config.classes[j]
    return c.fraction * (g_u + g_d) * c.nprach_period


def _poisson_terms(mean, start, stop):
    """Yield ``(k, pmf(k; mean))`` for k in [start, stop].

    Stops early once the Poisson mass beyond ``k`` is below ``POISSON_TAIL``.
    """
    if mean == 0.0:
        if start == 0:
            yield 0, 1.0
        return
    log_mean = math.log(mean)
    cdf = 0.0
    for k in range(0, stop + 1):
        pmf = math.exp(k * log_mean - mean - math.lgamma(k + 1))
        cdf += pmf
        if k >= start:
            yield k, pmf
            if k > mean and (1.0 - cdf < POISSON_TAIL or pmf < 1e-300):
                return


def prach_success_prob(config, j, mode=None):
    """Probability that a class-``j`` preamble does not collide.

    ``"corrected"``: every other Poisson contender picks the tagged preamble
    with probability ``1/M``, so the tagged device survives with
    ``exp(-N/M)``.

    ``"faithful"``: the printed series over ``k >= 2`` contenders, which
    omits the lone-device term and therefore vanishes at zero load.
    """
    mode = mode or config.rach_mode
    nbar = contenders(config, j)
    m = config.classes[j].preambles
    if mode == "corrected":
        return math.exp(-nbar / m)
    if mode == "faithful":
        ratio = (m - 1) / m
        total = 0.0
        for k, pmf in _poisson_terms(nbar, 2, config.traffic.devices):
            total += pmf * ratio ** (k - 1)
        return min(total, 1.0)
    raise ValueError(f"unknown rach mode {mode!r}")


def service_sum_pmf(repetitions, fractions, n):
    """Distribution of the summed repetition count of ``n`` queued requests.

    Returns ``{k: probability}`` where ``k`` is the total number of control
    transmission units. Pure Python arithmetic, so exact when ``fractions``
    are :class:`fractions.Fraction`.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    zero = fractions[0] * 0 if fractions else 0
    pmf = {0: zero + 1}
    for _ in range(n):
        nxt = defaultdict(lambda: zero)
        for total, weight in pmf.items():
            for reps, frac in zip(repetitions, fractions):
                if frac:
                    nxt[total + reps] += weight * frac
        pmf = dict(nxt)
    return pmf


def service_time_cdf(config, n, x):
    """CDF of the summed NPDCCH service time of ``n`` requests, at ``x`` seconds."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return _lattice_cdf(config, n, x)


def _lattice_cdf(config, n, x):
    u = config.schedule.control_tx_time
    pmf = service_sum_pmf([c.repetitions for c in config.classes], [c.fraction for c in config.classes], n)
    # right-continuous step function; the slack absorbs rounding of k*u
    limit = x / u + 1e-9
    return min(1.0, math.fsum(w for k, w in pmf.items() if k <= limit))


def _cdf_table(config, n_max, x):
    """``F_0..F_{n_max}`` at ``x``, with ``F_0 = 1``, built incrementally."""
    u = config.schedule.control_tx_time
    reps = [c.repetitions for c in config.classes]
    fracs = [c.fraction for c in config.classes]
    limit = x / u + 1e-9
    pmf = {0: 1.0}
    table = [1.0]
    for _ in range(n_max):
        nxt = defaultdict(float)
        for total, weight in pmf.items():
            for r, f in zip(reps, fracs):
                if f:
                    nxt[total + r] += weight * f
        pmf = nxt
        table.append(min(1.0, math.fsum(w for k, w in pmf.items() if k <= limit)))
    return table


def rar_timely_prob(config, j=None):
    """Probability that the RAR arrives within the response window ``T_th``.

    The printed expression does not depend on the class, so ``j`` is
    accepted only for symmetry with the other per-class functions.
    """
    q = npdcch_load(config)
    if q == 0.0:
        return 1.0
    t_th = config.traffic.rar_window
    terms = list(_poisson_terms(q, 2, 10**7))
    k_max = terms[-1][0] if terms else 1
    cdf = _cdf_table(config, k_max, t_th)
    loss = 0.0
    for big_k, pmf in terms:
        inner = 0.0
        for k in range(1, big_k):
            miss = 1.0 - cdf[big_k - k]
            if miss:
                inner += (k / big_k) * miss * cdf[big_k - k - 1]
        loss += pmf * inner
    return min(1.0, max(0.0, 1.0 - loss))


def attempt_multiplier(success, max_attempts):
    """``sum_l (1-P)^(l-1) P l`` truncated at ``max_attempts``."""
    return math.fsum((1.0 - success) ** (ell - 1) * success * ell for ell in range(1, max_attempts + 1))


def attempt_probability_mass(success, max_attempts):
    return math.fsum((1.0 - success) ** (ell - 1) * success for ell in range(1, max_attempts + 1))


@dataclass(frozen=True)
class Reservation:
    success: float  # P_j
    latency: float  # D_rr_j
    energy: float  # E_rr_j
    diagnostics: tuple[str, ...] = ()


def resource_reservation(config, j):
    """Success probability, latency and energy of access reservation for class ``j``."""
    success = prach_success_prob(config, j) * rar_timely_prob(config, j)
    n = config.schedule.max_attempts
    mult = attempt_multiplier(success, n)
    per_attempt_d = ra_latency(config, j) + rar_latency(config, j)
    e_ra, e_rar = ra_energy(config, j), rar_energy(config, j)
    e_mult = mult if config.rr_energy_per_attempt else attempt_probability_mass(success, n)
    diags = []
    if success < LOW_SUCCESS:
        diags.append(f"class {j + 1}: reservation success {success:.3g} < {LOW_SUCCESS}; "
                     f"series dominated by the {n}-attempt truncation")
    return Reservation(success, mult * per_attempt_d, e_mult * (e_ra + e_rar), tuple(diags))


# ---------------------------------------------------------------------------
# data channels

def uplink_duty_value(config):
    """Fraction of uplink time left to NPUSCH (may be nonpositive)."""
    tau = config.schedule.nprach_unit
    return 1.0 - math.fsum(c.repetitions * tau / c.nprach_period for c in config.classes)


def downlink_duty_value(config):
    """Fraction of downlink time left to NPDSCH (may be nonpositive)."""
    s = config.schedule
    return 1.0 - s.ref_signal_fraction - npdcch_load(config) / s.npdcch_period * mean_control_service_time(config)


def uplink_duty(config):
    w = uplink_duty_value(config)
    if not w > 0:
        tau = config.schedule.nprach_unit
        raise StabilityError("w", w, {f"c{j + 1}*tau/t{j + 1}": c.repetitions * tau / c.nprach_period
                                      for j, c in enumerate(config.classes)})
    return w


def downlink_duty(config):
    y = downlink_duty_value(config)
    if not y > 0:
        s = config.schedule
        raise StabilityError("y", y, {"b": s.ref_signal_fraction, "Q": npdcch_load(config),
                                      "d": s.npdcch_period, "DD_t": mean_control_service_time(config)})
    return y


def bpp_g1_delay(load, s1, s2, batch, bare):
    """Sojourn time in a batch-Poisson/G/1 queue.

    ``load`` is the utilisation, ``s1``/``s2`` the first two service-time
    moments, ``batch`` the batch-mates term (``E[B(B-1)]/E[B]``, which is the
    mean batch size for Poisson-distributed batches and 0 for unit batches)
    and ``bare`` the tagged request's own service time.
    """
    queueing = load * s2 / (2.0 * s1 * (1.0 - load)) if load else 0.0
    return queueing + batch * s1 / (2.0 * (1.0 - load)) + bare


@dataclass(frozen=True)
class QueueMoments:
    batch: float  # mean batch size per NPRACH window
    m1: float  # first service-time moment [s]
    m2: float  # second service-time moment [s^2]
    load: float  # utilisation


def uplink_moments(config):
    g_u, _ = arrival_rates(config.traffic)
    w = uplink_duty(config)
    t = config.traffic
    C = config.n_classes
    batch = math.fsum(c.fraction * g_u * c.nprach_period for c in config.classes) / C
    s1 = math.fsum(c.fraction * c.repetitions * t.ul_bits / (c.uplink_rate * w) for c in config.classes)
    s2 = math.fsum(c.fraction * c.repetitions ** 2 * t.ul_bits_sq / (c.uplink_rate ** 2 * w ** 2)
                   for c in config.classes)
    rho = math.fsum(batch * s1 / c.nprach_period for c in config.classes)
    return QueueMoments(batch, s1, s2, rho)


def downlink_moments(config):
    _, g_d = arrival_rates(config.traffic)
    y = downlink_duty(config)
    t = config.traffic
    C = config.n_classes
    m2 = t.dl_bits_sq ** 2 if config.h2_moment == "m2_squared" else t.dl_bits_sq
    batch = math.fsum(c.fraction * g_d * c.nprach_period for c in config.classes) / C
    h1 = math.fsum(c.fraction * c.repetitions * t.dl_bits / (c.downlink_rate * y) for c in config.classes)
    h2 = math.fsum(c.fraction * c.repetitions ** 2 * m2 / (c.downlink_rate ** 2 * y ** 2) for c in config.classes)
    nu = math.fsum(batch * h1 / c.nprach_period for c in config.classes)
    return QueueMoments(batch, h1, h2, nu)


def uplink_bare_time(config, j):
    c = config.classes[j]
    return c.repetitions * config.traffic.ul_bits / (c.uplink_rate * uplink_duty(config))


def downlink_bare_time(config, j):
    c = config.classes[j]
    return c.repetitions * config.traffic.dl_bits / (c.downlink_rate * downlink_duty(config))


def uplink_tx_latency(config, j):
    """Expected NPUSCH queueing plus transmission time for class ``j``."""
    mom = uplink_moments(config)
    if not mom.load < 1.0:
        raise StabilityError("rho", mom.load, {"G_batch": mom.batch, "s1": mom.m1, "s2": mom.m2})
    return bpp_g1_delay(mom.load, mom.m1, mom.m2, mom.batch, uplink_bare_time(config, j))


def downlink_rx_latency(config, j):
    """Expected NPDSCH queueing plus reception time for class ``j``."""
    mom = downlink_moments(config)
    if not mom.load < 1.0:
        raise StabilityError("nu", mom.load, {"GG_batch": mom.batch, "h1": mom.m1, "h2": mom.m2})
    return bpp_g1_delay(mom.load, mom.m1, mom.m2, mom.batch, downlink_bare_time(config, j))


# ---------------------------------------------------------------------------
# energy and lifetime

def _tx_power(config, j):
    p = config.power
    return p.circuit_power + p.pa_efficiency * config.classes[j].tx_power


def sync_energy(config, j):
    return config.power.listen_power * config.classes[j].sync_latency


def rar_energy(config, j):
    return config.power.listen_power * rar_latency(config, j)


def ra_energy(config, j):
    tx = config.classes[j].repetitions * config.schedule.nprach_unit
    return (ra_latency(config, j) - tx) * config.power.idle_power + tx * _tx_power(config, j)


def tx_energy(config, j, latency=None):
    latency = uplink_tx_latency(config, j) if latency is None else latency
    bare = uplink_bare_time(config, j)
    return (latency - bare) * config.power.idle_power + _tx_power(config, j) * bare


def rx_energy(config, j, latency=None):
    latency = downlink_rx_latency(config, j) if latency is None else latency
    bare = downlink_bare_time(config, j)
    return (latency - bare) * config.power.idle_power + config.power.listen_power * bare


@dataclass(frozen=True)
class EnergyLedger:
    sync: float
    ra: float
    rar: float
    rr: float
    tx: float
    rx: float
    ack: float

    @property
    def uplink(self):
        return self.sync + self.rr + self.tx + self.ack

    @property
    def downlink(self):
        return self.sync + self.rr + self.rx + self.ack


def energy_ledger(config, j):
    """Per-phase expected energy of a class-``j`` session, in joules."""
    return EnergyLedger(
        sync=sync_energy(config, j),
        ra=ra_energy(config, j),
        rar=rar_energy(config, j),
        rr=resource_reservation(config, j).energy,
        tx=tx_energy(config, j),
        rx=rx_energy(config, j),
        ack=config.power.ack_energy,
    )


def lifetime_from_energies(config, e_up, e_down):
    """Battery lifetime in days given per-session uplink/downlink energies."""
    t = config.traffic
    daily = t.sessions_per_day * (t.uplink_prob * e_up + (1.0 - t.uplink_prob) * e_down)
    if not daily > 0:
        raise ZeroDivisionError("daily energy consumption is zero; lifetime is unbounded")
    return config.power.battery / daily


def lifetime(config, j):
    """Expected battery lifetime of a class-``j`` device, in days."""
    led = energy_ledger(config, j)
    return lifetime_from_energies(config, led.uplink, led.downlink)


# ---------------------------------------------------------------------------
# full evaluation

@dataclass(frozen=True)
class ClassMetrics:
    index: int  # 1-based
    D_sy: float
    D_ra: float
    D_rar: float
    D_rr: float
    D_tx: float
    D_rx: float
    D_u: float
    D_d: float
    E_sy: float
    E_ra: float
    E_rar: float
    E_rr: float
    E_tx: float
    E_rx: float
    E_u: float
    E_d: float
    L: float
    P_rach: float
    P_rar: float
    P: float
    N_contenders: float


@dataclass(frozen=True)
class AnalyticReport:
    classes: tuple[ClassMetrics, ...]
    Q: float
    DD_t: float
    D_w: float
    w: float
    y: float
    G_batch: float
    GG_batch: float
    s1: float
    s2: float
    h1: float
    h2: float
    rho: float
    nu: float
    diagnostics: tuple[str, ...] = field(default=())

    def for_class(self, index):
        """Metrics of class ``index`` (1-based)."""
        return self.classes[index - 1]


def evaluate(config):
    """Evaluate every closed-form quantity of ``config``.

    Raises :class:`StabilityError` when ``w`` or ``y`` is nonpositive or a
    data queue is overloaded.
    """
    w = uplink_duty(config)
    y = downlink_duty(config)
    up = uplink_moments(config)
    down = downlink_moments(config)
    if not up.load < 1.0:
        raise StabilityError("rho", up.load, {"G_batch": up.batch, "s1": up.m1, "s2": up.m2})
    if not down.load < 1.0:
        raise StabilityError("nu", down.load, {"GG_batch": down.batch, "h1": down.m1, "h2": down.m2})

    diagnostics = []
    for name, load in (("rho", up.load), ("nu", down.load)):
        if load > HIGH_LOAD:
            diagnostics.append(f"{name} = {load:.4f} is close to 1; queueing terms are very sensitive")
    p_rar = rar_timely_prob(config)
    rows = []
    for j, c in enumerate(config.classes):
        res = resource_reservation(config, j)
        diagnostics.extend(res.diagnostics)
        d_tx = uplink_tx_latency(config, j)
        d_rx = downlink_rx_latency(config, j)
        e_sy = sync_energy(config, j)
        e_tx = tx_energy(config, j, d_tx)
        e_rx = rx_energy(config, j, d_rx)
        e_u = e_sy + res.energy + e_tx + config.power.ack_energy
        e_d = e_sy + res.energy + e_rx + config.power.ack_energy
        rows.append(ClassMetrics(
            index=j + 1,
            D_sy=c.sync_latency,
            D_ra=ra_latency(config, j),
            D_rar=rar_latency(config, j),
            D_rr=res.latency,
            D_tx=d_tx,
            D_rx=d_rx,
            D_u=c.sync_latency + res.latency + d_tx,
            D_d=c.sync_latency + res.latency + d_rx,
            E_sy=e_sy,
            E_ra=ra_energy(config, j),
            E_rar=rar_energy(config, j),
            E_rr=res.energy,
            E_tx=e_tx,
            E_rx=e_rx,
            E_u=e_u,
            E_d=e_d,
            L=lifetime_from_energies(config, e_u, e_d),
            P_rach=prach_success_prob(config, j),
            P_rar=p_rar,
            P=res.success,
            N_contenders=contenders(config, j),
        ))
    return AnalyticReport(
        classes=tuple(rows),
        Q=npdcch_load(config),
        DD_t=mean_control_service_time(config),
        D_w=control_wait(config),
        w=w,
        y=y,
        G_batch=up.batch,
        GG_batch=down.batch,
        s1=up.m1,
        s2=up.m2,
        h1=down.m1,
        h2=down.m2,
        rho=up.load,
        nu=down.load,
        diagnostics=tuple(diagnostics),
    )
