"""Discrete-event simulation of the NB-IoT access protocol.

Each session goes through synchronisation, random access on its class's
NPRACH windows, RAR reception over NPDCCH and data transfer over
NPUSCH/NPDSCH. Energy is charged per power state of the device:

==========================  ===============
phase                       power
==========================  ===============
sync, RAR wait, reception   ``P_l``
waiting for NPRACH or data  ``P_I``
preamble, uplink data       ``P_c + xi*P_t``
==========================  ===============

Modelling choices that the closed form leaves open:

* NPRACH windows of the classes are laid back to back from t = 0; NPUSCH is
  served preemptive-resume in the time they leave free.
* The downlink carrier is blocked by reference-signal subframes and by an
  NPDCCH search space reserved at every visit. The search space is
  dimensioned for the expected load ``Q`` of the control queue, which is what
  fixes the NPDSCH duty fraction.
* NPDCCH requests (RARs and BS-initiated control messages) are served FIFO
  with exhaustive service from each visit instant.
* A collided preamble is detected at the next NPDCCH visit; a RAR later than
  ``T_th`` after the window end is a failed attempt but still occupies the
  control channel. Failed attempts retry at the next window of the class.
* Data transfers are stretched over the blocked subframes, and the device
  keeps its radio in the transfer state for the whole stretched interval.
"""

from __future__ import annotations

import heapq
import math
from array import array
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from nbsched import analytic
from nbsched.analytic import lifetime_from_energies
from nbsched.config import arrival_rates
from nbsched.schedule import control_offset, downlink_schedule, nprach_offsets, uplink_schedule

STREAMS = ("arrivals", "class", "direction", "preamble", "packet", "bs_arrivals", "bs_class")
N_BATCHES = 10

# event kinds; the integer also orders simultaneous events
ARRIVE, JOIN, WINDOW, FAIL, RAR = range(5)

POWER_STATES = {
    "sync": "listen",
    "ra_wait": "idle",
    "ra_tx": "transmit",
    "rar_wait": "listen",
    "data_wait": "idle",
    "data_tx": "transmit",
    "data_rx": "listen",
    "ack": "ack",
}


class UnderSampledError(ValueError):
    """The horizon is too short to observe every class after the warmup."""


@dataclass(frozen=True)
class ScriptedSession:
    """A session injected at a fixed time instead of the Poisson stream."""

    time: float
    cls: int  # zero-based class index
    uplink: bool = True


@dataclass(slots=True)
class DeviceSession:
    id: int
    cls: int
    uplink: bool
    arrival: float
    bits: float
    attempts: int = 0
    ra_windows: list = field(default_factory=list)
    rar_time: float | None = None
    data_start: float | None = None
    end: float | None = None
    status: str = "active"  # active | served | abandoned
    energy: float = 0.0
    segments: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def spend(self, label, t0, t1, power):
        self.segments.append((label, t0, t1, power))
        self.energy += (t1 - t0) * power

    def lump(self, label, t, energy):
        self.segments.append((label, t, t, None, energy))
        self.energy += energy

    @property
    def latency(self):
        return self.end - self.arrival


def replay_energy(segments):
    """Energy of a power-state trace, summed in trace order."""
    total = 0.0
    for seg in segments:
        if seg[3] is None:
            total += seg[4]
        else:
            total += (seg[2] - seg[1]) * seg[3]
    return total


@dataclass(frozen=True)
class Estimate:
    mean: float
    ci_low: float
    ci_high: float
    n: int

    @property
    def half_width(self):
        return 0.5 * (self.ci_high - self.ci_low)


NAN_ESTIMATE = Estimate(math.nan, math.nan, math.nan, 0)


@dataclass(frozen=True)
class ClassSimStats:
    index: int  # 1-based
    D_u: Estimate
    D_d: Estimate
    E_u: Estimate
    E_d: Estimate
    L: Estimate
    P_rach: float  # empirical preamble success rate over all attempts
    ra_attempts: int
    # first attempts only; retries of a collided pair meet again in the same window
    P_rach_first: float = math.nan
    first_attempts: int = 0


@dataclass(frozen=True)
class SimCounters:
    generated: int
    served: int
    abandoned: int
    in_flight: int
    collisions: int
    rar_timeouts: int
    attempts_hist: dict

    def merged(self, other):
        hist = Counter(self.attempts_hist)
        hist.update(other.attempts_hist)
        return SimCounters(
            self.generated + other.generated,
            self.served + other.served,
            self.abandoned + other.abandoned,
            self.in_flight + other.in_flight,
            self.collisions + other.collisions,
            self.rar_timeouts + other.rar_timeouts,
            dict(sorted(hist.items())),
        )


@dataclass(frozen=True)
class Occupancy:
    w: float  # free fraction of the uplink
    y: float  # free fraction of the downlink
    rho: float  # NPUSCH busy fraction
    nu: float  # NPDSCH busy fraction
    npdcch_queue: float  # time-average requests in the NPDCCH system
    npdcch_rate: float  # NPDCCH arrival rate
    npdcch_sojourn: float  # mean NPDCCH sojourn


@dataclass(frozen=True)
class SimReport:
    classes: tuple[ClassSimStats, ...]
    counters: SimCounters
    occupancy: Occupancy
    seeds: tuple[int, ...]
    horizon: float
    warmup: float
    replications: tuple["SimReport", ...] = ()

    def for_class(self, index):
        return self.classes[index - 1]


def _iid_estimate(values, level=0.95):
    n = len(values)
    if n == 0:
        return NAN_ESTIMATE
    mean = float(np.mean(values))
    if n < 2:
        return Estimate(mean, math.nan, math.nan, n)
    half = stats.t.ppf(0.5 + level / 2, n - 1) * float(np.std(values, ddof=1)) / math.sqrt(n)
    return Estimate(mean, mean - half, mean + half, n)


def batch_means_estimate(values, n_batches=N_BATCHES, level=0.95):
    """Mean with a batch-means confidence interval (values in arrival order)."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2 * n_batches:
        return _iid_estimate(values, level)
    size = n // n_batches
    batches = values[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    mean = float(values.mean())
    half = stats.t.ppf(0.5 + level / 2, n_batches - 1) * float(batches.std(ddof=1)) / math.sqrt(n_batches)
    return Estimate(mean, mean - half, mean + half, n)


def _packet_sampler(mean, second, rng):
    var = second - mean * mean
    if var <= 1e-12 * mean * mean:
        return lambda n: np.full(n, float(mean))
    shape = mean * mean / var
    scale = var / mean
    return lambda n: rng.gamma(shape, scale, size=n)


def _poisson_times(rate, horizon, rng):
    if rate <= 0.0:
        return np.empty(0)
    chunks = []
    last = 0.0
    chunk = max(16, int(rate * horizon * 1.1) + 16)
    while last < horizon:
        gaps = rng.exponential(1.0 / rate, size=chunk)
        times = last + np.cumsum(gaps)
        chunks.append(times)
        last = times[-1]
    times = np.concatenate(chunks)
    return times[times < horizon]


class Simulator:
    """One replication of the access-protocol simulation.

    ``scripted`` replaces the Poisson session stream with fixed sessions;
    BS-initiated control traffic is still generated from the config.
    """

    def __init__(self, config, seed, horizon, warmup=None, scripted=None):
        if warmup is None:
            warmup = 0.1 * horizon
        if not horizon > warmup >= 0:
            raise ValueError(f"need horizon > warmup >= 0, got horizon={horizon}, warmup={warmup}")
        # both raise StabilityError when the data channels get no airtime
        analytic.uplink_duty(config)
        analytic.downlink_duty(config)
        self.config = config
        self.seed = seed
        self.horizon = float(horizon)
        self.warmup = float(warmup)

        streams = np.random.SeedSequence(seed).spawn(len(STREAMS))
        self.rng = {name: np.random.default_rng(s) for name, s in zip(STREAMS, streams)}

        sch = config.schedule
        self.ul = uplink_schedule(config)
        self.control_window = analytic.npdcch_load(config) * analytic.mean_control_service_time(config)
        self.dl = downlink_schedule(config, self.control_window)
        self.nprach_offsets = nprach_offsets(config)
        self.visit_offset = control_offset(config)
        self.d = sch.npdcch_period

        self.sessions = self._make_sessions(scripted)
        self._make_control_traffic()

    # -- setup -------------------------------------------------------------

    def _make_sessions(self, scripted):
        cfg = self.config
        t = cfg.traffic
        ul_sizes = _packet_sampler(t.ul_bits, t.ul_bits_sq, self.rng["packet"])
        dl_sizes = _packet_sampler(t.dl_bits, t.dl_bits_sq, self.rng["packet"])
        if scripted is not None:
            ordered = sorted(scripted, key=lambda s: s.time)
            times = np.array([s.time for s in ordered])
            classes = np.array([s.cls for s in ordered], dtype=int)
            uplink = np.array([s.uplink for s in ordered], dtype=bool)
        else:
            rate = sum(arrival_rates(t))
            times = _poisson_times(rate, self.horizon, self.rng["arrivals"])
            probs = np.array([c.fraction for c in cfg.classes])
            classes = self.rng["class"].choice(len(probs), size=len(times), p=probs / probs.sum())
            uplink = self.rng["direction"].random(len(times)) < t.uplink_prob
        n = len(times)
        ul_bits = ul_sizes(n)
        dl_bits = dl_sizes(n)
        return [
            DeviceSession(i, int(classes[i]), bool(uplink[i]), float(times[i]),
                          float(ul_bits[i] if uplink[i] else dl_bits[i]))
            for i in range(n)
        ]

    def _make_control_traffic(self):
        cfg = self.config
        self.bs_times = _poisson_times(cfg.traffic.bs_control_rate, self.horizon, self.rng["bs_arrivals"])
        probs = np.array([c.fraction for c in cfg.classes])
        reps = np.array([c.repetitions for c in cfg.classes])
        picks = self.rng["bs_class"].choice(len(probs), size=len(self.bs_times), p=probs / probs.sum())
        self.bs_service = (reps[picks] * cfg.schedule.control_tx_time).tolist()
        self.bs_times = self.bs_times.tolist()
        self._bs_next = 0

    # -- control channel ---------------------------------------------------

    def next_visit(self, t):
        k = math.ceil((t - self.visit_offset) / self.d - 1e-9)
        return self.visit_offset + max(k, 0) * self.d

    def _control_serve(self, arrival, service):
        if arrival < self._cc_free:
            start = self._cc_free
        else:
            start = self.next_visit(arrival)
        finish = start + service
        self._cc_free = finish
        if arrival >= self.warmup:
            self._cc_arrivals.append(arrival)
            self._cc_departures.append(finish)
        return finish

    def _drain_control(self, until):
        times, service = self.bs_times, self.bs_service
        i = self._bs_next
        n = len(times)
        while i < n and times[i] <= until:
            self._control_serve(times[i], service[i])
            i += 1
        self._bs_next = i

    # -- event loop --------------------------------------------------------

    def _push(self, time, kind, payload):
        self._seq += 1
        heapq.heappush(self._heap, (time, kind, self._seq, payload))

    def run(self):
        cfg = self.config
        sch = cfg.schedule
        pw = cfg.power
        horizon = self.horizon
        self._heap = []
        self._seq = 0
        self._cc_free = -math.inf
        self._cc_arrivals = array("d")
        self._cc_departures = array("d")
        windows = {}
        ul_free = dl_free = -math.inf
        self.ul_busy = self.dl_busy = 0.0
        self.collisions = self.rar_timeouts = 0
        self.ra_attempts = [0] * cfg.n_classes
        self.ra_successes = [0] * cfg.n_classes
        self.first_attempts = [0] * cfg.n_classes
        self.first_successes = [0] * cfg.n_classes
        tx_power = [pw.circuit_power + pw.pa_efficiency * c.tx_power for c in cfg.classes]
        preamble_rng = self.rng["preamble"]

        if self.sessions:
            self._push(self.sessions[0].arrival, ARRIVE, 0)

        while self._heap:
            now, kind, _, payload = heapq.heappop(self._heap)
            if now > horizon:
                break

            if kind == ARRIVE:
                s = self.sessions[payload]
                if payload + 1 < len(self.sessions):
                    self._push(self.sessions[payload + 1].arrival, ARRIVE, payload + 1)
                c = cfg.classes[s.cls]
                s.spend("sync", now, now + c.sync_latency, pw.listen_power)
                self._push(now + c.sync_latency, JOIN, s)

            elif kind == JOIN:
                s = payload
                c = cfg.classes[s.cls]
                off = self.nprach_offsets[s.cls]
                k = math.ceil((now - off) / c.nprach_period - 1e-9)
                start = off + max(k, 0) * c.nprach_period
                end = start + c.repetitions * sch.nprach_unit
                s.spend("ra_wait", now, start, pw.idle_power)
                s.spend("ra_tx", start, end, tx_power[s.cls])
                s.attempts += 1
                s.ra_windows.append((start, end))
                key = (s.cls, k)
                if key not in windows:
                    windows[key] = []
                    self._push(end, WINDOW, key)
                windows[key].append(s)

            elif kind == WINDOW:
                j = payload[0]
                group = windows.pop(payload)
                c = cfg.classes[j]
                picks = preamble_rng.integers(c.preambles, size=len(group))
                counts = Counter(picks.tolist())
                self._drain_control(now)
                self.ra_attempts[j] += len(group)
                # winners are answered in preamble order
                order = sorted(range(len(group)), key=lambda i: (picks[i], i))
                for i in order:
                    s = group[i]
                    if s.attempts == 1:
                        self.first_attempts[j] += 1
                        self.first_successes[j] += counts[picks[i]] == 1
                    if counts[picks[i]] > 1:
                        self.collisions += 1
                        detect = self.next_visit(now)
                        s.spend("rar_wait", now, detect, pw.listen_power)
                        s.notes.append(("collision", now))
                        self._push(detect, FAIL, s)
                        continue
                    self.ra_successes[j] += 1
                    delivered = self._control_serve(now, c.repetitions * sch.control_tx_time)
                    if delivered - now > cfg.traffic.rar_window:
                        self.rar_timeouts += 1
                        give_up = now + cfg.traffic.rar_window
                        s.spend("rar_wait", now, give_up, pw.listen_power)
                        s.notes.append(("rar_timeout", give_up))
                        self._push(give_up, FAIL, s)
                    else:
                        s.spend("rar_wait", now, delivered, pw.listen_power)
                        self._push(delivered, RAR, s)

            elif kind == FAIL:
                s = payload
                if s.attempts < sch.max_attempts:
                    self._push(now, JOIN, s)
                else:
                    s.status = "abandoned"
                    s.end = now
                    s.notes.append(("abandon", now))

            elif kind == RAR:
                s = payload
                c = cfg.classes[s.cls]
                s.rar_time = now
                if s.uplink:
                    work = c.repetitions * s.bits / c.uplink_rate
                    start = self.ul.next_free(max(now, ul_free))
                    finish = self.ul.advance(start, work)
                    ul_free = finish
                    self.ul_busy += _overlap(start, finish, self.warmup, horizon)
                    label, power = "data_tx", tx_power[s.cls]
                else:
                    work = c.repetitions * s.bits / c.downlink_rate
                    start = self.dl.next_free(max(now, dl_free))
                    finish = self.dl.advance(start, work)
                    dl_free = finish
                    self.dl_busy += _overlap(start, finish, self.warmup, horizon)
                    label, power = "data_rx", pw.listen_power
                s.spend("data_wait", now, start, pw.idle_power)
                s.spend(label, start, finish, power)
                if pw.ack_energy:
                    s.lump("ack", finish, pw.ack_energy)
                s.data_start = start
                s.end = finish
                s.status = "served"

        self._drain_control(horizon)
        return self._report()

    # -- statistics --------------------------------------------------------

    def final_status(self, s):
        if s.status == "served" and s.end <= self.horizon:
            return "served"
        if s.status == "abandoned":
            return "abandoned"
        return "in_flight"

    def _report(self):
        cfg = self.config
        per_class = []
        served = abandoned = in_flight = 0
        hist = Counter()
        buckets = [{"D_u": [], "D_d": [], "E_u": [], "E_d": []} for _ in cfg.classes]
        for s in self.sessions:
            status = self.final_status(s)
            if status == "served":
                served += 1
            elif status == "abandoned":
                abandoned += 1
            else:
                in_flight += 1
            if s.arrival < self.warmup or status == "in_flight":
                continue
            b = buckets[s.cls]
            if status == "served":
                hist[s.attempts] += 1
                b["D_u" if s.uplink else "D_d"].append(s.latency)
            b["E_u" if s.uplink else "E_d"].append(s.energy)

        for j, c in enumerate(cfg.classes):
            b = buckets[j]
            if c.fraction > 0 and not (b["D_u"] or b["D_d"]):
                raise UnderSampledError(
                    f"class {j + 1}: no session served after warmup {self.warmup:g} s within horizon "
                    f"{self.horizon:g} s; increase the horizon")
            est = {k: batch_means_estimate(v) for k, v in b.items()}
            per_class.append(ClassSimStats(
                index=j + 1,
                D_u=est["D_u"],
                D_d=est["D_d"],
                E_u=est["E_u"],
                E_d=est["E_d"],
                L=_lifetime_estimate(cfg, est["E_u"], est["E_d"]),
                P_rach=self.ra_successes[j] / self.ra_attempts[j] if self.ra_attempts[j] else math.nan,
                ra_attempts=self.ra_attempts[j],
                P_rach_first=(self.first_successes[j] / self.first_attempts[j]
                              if self.first_attempts[j] else math.nan),
                first_attempts=self.first_attempts[j],
            ))

        span = self.horizon - self.warmup
        arr = np.frombuffer(self._cc_arrivals, dtype=float) if len(self._cc_arrivals) else np.empty(0)
        dep = np.frombuffer(self._cc_departures, dtype=float) if len(self._cc_departures) else np.empty(0)
        occupancy = Occupancy(
            w=self.ul.free_between(0.0, self.horizon) / self.horizon,
            y=self.dl.free_between(0.0, self.horizon) / self.horizon,
            rho=self.ul_busy / span,
            nu=self.dl_busy / span,
            npdcch_queue=_sampled_occupancy(arr, dep, self.warmup, self.horizon),
            npdcch_rate=len(arr) / span,
            npdcch_sojourn=float(np.mean(dep - arr)) if len(arr) else math.nan,
        )
        counters = SimCounters(len(self.sessions), served, abandoned, in_flight,
                               self.collisions, self.rar_timeouts, dict(sorted(hist.items())))
        return SimReport(tuple(per_class), counters, occupancy, (self.seed,), self.horizon, self.warmup)


def _overlap(a0, a1, b0, b1):
    return max(0.0, min(a1, b1) - max(a0, b0))


def _sampled_occupancy(arrivals, departures, t0, t1, samples=20000):
    """Time-average number in system, estimated at evenly spaced instants."""
    if len(arrivals) == 0:
        return 0.0
    arr = np.sort(arrivals)
    dep = np.sort(departures)
    probes = np.linspace(t0, t1, samples, endpoint=False) + 0.5 * (t1 - t0) / samples
    # only requests arriving after t0 are recorded, so the probes see exactly those
    in_system = np.searchsorted(arr, probes, side="right") - np.searchsorted(dep, probes, side="right")
    return float(in_system.mean())


def _lifetime_estimate(config, e_up, e_down):
    p = config.traffic.uplink_prob
    # a direction that never occurs contributes nothing to the daily energy
    up = e_up.mean if p > 0 else 0.0
    down = e_down.mean if p < 1 else 0.0
    if math.isnan(up) or math.isnan(down):
        return NAN_ESTIMATE
    mean = lifetime_from_energies(config, up, down)
    lo_up = e_up.ci_low if p > 0 else 0.0
    hi_up = e_up.ci_high if p > 0 else 0.0
    lo_down = e_down.ci_low if p < 1 else 0.0
    hi_down = e_down.ci_high if p < 1 else 0.0
    if any(math.isnan(v) for v in (lo_up, hi_up, lo_down, hi_down)):
        return Estimate(mean, math.nan, math.nan, e_up.n + e_down.n)
    # lifetime decreases in both energies, so the bounds swap
    low = lifetime_from_energies(config, hi_up, hi_down)
    try:
        high = lifetime_from_energies(config, max(lo_up, 0.0), max(lo_down, 0.0))
    except ZeroDivisionError:
        high = math.inf
    return Estimate(mean, low, high, e_up.n + e_down.n)


def run(config, seed, horizon, warmup=None, scripted=None):
    """Simulate one replication and summarise it."""
    return Simulator(config, seed, horizon, warmup, scripted).run()


def _replicate(args):
    config, seed, horizon, warmup = args
    return run(config, seed, horizon, warmup)


def run_replicated(config, seeds, horizon, warmup=None, workers=1):
    """Independent replications; confidence intervals from the spread across them."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("run_replicated needs at least two seeds")
    jobs = [(config, s, horizon, warmup) for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            reps = list(pool.map(_replicate, jobs))
    else:
        reps = [_replicate(job) for job in jobs]
    return combine_replications(reps)


def combine_replications(reps):
    reps = list(reps)
    first = reps[0]
    classes = []
    for j in range(len(first.classes)):
        rows = [r.classes[j] for r in reps]

        def across(metric):
            values = [getattr(r, metric).mean for r in rows]
            values = [v for v in values if not math.isnan(v)]
            est = _iid_estimate(values)
            return Estimate(est.mean, est.ci_low, est.ci_high, sum(getattr(r, metric).n for r in rows))

        attempts = sum(r.ra_attempts for r in rows)
        successes = sum(r.P_rach * r.ra_attempts for r in rows if r.ra_attempts)
        firsts = sum(r.first_attempts for r in rows)
        first_ok = sum(r.P_rach_first * r.first_attempts for r in rows if r.first_attempts)
        classes.append(ClassSimStats(
            index=j + 1,
            D_u=across("D_u"),
            D_d=across("D_d"),
            E_u=across("E_u"),
            E_d=across("E_d"),
            L=across("L"),
            P_rach=successes / attempts if attempts else math.nan,
            ra_attempts=attempts,
            P_rach_first=first_ok / firsts if firsts else math.nan,
            first_attempts=firsts,
        ))
    counters = first.counters
    for r in reps[1:]:
        counters = counters.merged(r.counters)
    occ = Occupancy(*(float(np.mean([getattr(r.occupancy, f) for r in reps]))
                      for f in Occupancy.__dataclass_fields__))
    return SimReport(tuple(classes), counters, occ, tuple(s for r in reps for s in r.seeds),
                     first.horizon, first.warmup, tuple(reps))


def trace(config, seed, horizon, session_filter=None, warmup=0.0, scripted=None):
    """Per-session event log of one replication.

    ``session_filter`` is ``None`` (all sessions), a collection of session ids
    or a predicate on :class:`DeviceSession`. Returns ``(events, sessions)``:
    the events ordered by session and time, and the matching sessions.
    """
    sim = Simulator(config, seed, horizon, warmup, scripted)
    try:
        sim.run()
    except UnderSampledError:
        pass
    if session_filter is None:
        chosen = sim.sessions
    elif callable(session_filter):
        chosen = [s for s in sim.sessions if session_filter(s)]
    else:
        ids = set(session_filter)
        chosen = [s for s in sim.sessions if s.id in ids]
    events = []
    for s in chosen:
        base = {"session": s.id, "class": s.cls + 1, "direction": "uplink" if s.uplink else "downlink"}
        rows = [dict(base, event="arrival", t=s.arrival, t_end=s.arrival, power_state=None, power_w=0.0, energy_j=0.0)]
        for seg in s.segments:
            label, t0, t1 = seg[0], seg[1], seg[2]
            if seg[3] is None:
                power, energy = None, seg[4]
            else:
                power, energy = seg[3], (t1 - t0) * seg[3]
            rows.append(dict(base, event=label, t=t0, t_end=t1, power_state=POWER_STATES[label],
                             power_w=power, energy_j=energy))
        for label, t in s.notes:
            rows.append(dict(base, event=label, t=t, t_end=t, power_state=None, power_w=0.0, energy_j=0.0))
        status = sim.final_status(s)
        if status == "served":
            rows.append(dict(base, event="done", t=s.end, t_end=s.end, power_state=None, power_w=0.0, energy_j=0.0))
        # stable sort keeps segment order for equal start times
        rows.sort(key=lambda r: r["t"])
        events.extend(rows)
    return events, chosen
