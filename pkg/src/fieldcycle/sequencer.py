"""Discrete-event trigger timeline across the instrument channels.

Models the pulse-generator-driven chain: optical pumping and microwave
sweep at the low-field center, the 24 V / 10 ms servo trigger, the shuttle
move, the actuator completion pulse, and NMR acquisition, plus the cryogen
valve events for in-situ sample freezing.  Electrical stages are pure
latency elements; timing is the modeled contract.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SpecInvalid
from .motion import JitterModel, MotionProfile, states_at

__all__ = [
    "CHANNELS",
    "Channel",
    "Event",
    "Timeline",
    "SequenceSpec",
    "CryoSpec",
    "ValidationReport",
    "Violation",
    "EventLog",
    "build_timeline",
    "validate",
    "simulate",
]

CHANNELS = (
    "pulse_gen",
    "servo_trigger",
    "actuator_motion",
    "completion_pulse",
    "nmr_acquire",
    "laser",
    "mw_sweep",
    "cryo_fill_valve",
    "cryo_eject_valve",
)

# inverter -> MOSFET switch -> voltage divider stages are not quantified;
# they default to zero and are configurable per channel
DEFAULT_LATENCIES = {name: 0.0 for name in CHANNELS}
DEFAULT_LATENCIES["cryo_fill_valve"] = 1.0e-3
DEFAULT_LATENCIES["cryo_eject_valve"] = 1.0e-3


@dataclass(frozen=True)
class Channel:
    id: str
    latency_s: float = 0.0

    def __post_init__(self):
        if self.id not in CHANNELS:
            raise SpecInvalid(f"unknown channel {self.id!r}")
        if self.latency_s < 0:
            raise SpecInvalid("channel latency must be non-negative")


@dataclass(frozen=True)
class Event:
    id: str
    channel: str
    t_start_s: float
    duration_s: float
    payload: dict = field(default_factory=dict)
    depends_on: Optional[str] = None

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise SpecInvalid(f"unknown channel {self.channel!r}")
        if self.duration_s < 0:
            raise SpecInvalid(f"event {self.id}: negative duration")

    @property
    def t_end_s(self) -> float:
        return self.t_start_s + self.duration_s


@dataclass(frozen=True)
class CryoSpec:
    eject_duration_s: float = 1.0
    fill_duration_s: float = 2.0
    cold_delay_s: float = 3.5  # sample reaches 77 K within 3-4 s of eject start


@dataclass(frozen=True)
class SequenceSpec:
    """Inputs for the canonical polarize-shuttle-detect sequence."""

    t_pol_s: float = 40.0
    shuttle_profile: Optional[MotionProfile] = None
    trigger_pulse_s: float = 0.010
    completion_pulse_s: float = 0.010
    acquire_duration_s: float = 1.0
    acquire_delay_s: float = 1.0e-3
    latencies: dict = field(default_factory=lambda: dict(DEFAULT_LATENCIES))
    cryo: Optional[CryoSpec] = None
    low_field_max_T: float = 0.030
    mw_payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Timeline:
    """Events ordered by nominal start; t=0 is the first pulse-generator edge."""

    events: tuple[Event, ...]
    latencies: dict
    low_field_max_T: float = 0.030
    sample_cold_s: Optional[float] = None

    def by_channel(self, channel):
        return [e for e in self.events if e.channel == channel]

    def find(self, event_id):
        for e in self.events:
            if e.id == event_id:
                return e
        raise KeyError(event_id)

    @property
    def chain_latency_s(self) -> float:
        return sum(self.latencies.values())


def build_timeline(spec: SequenceSpec) -> Timeline:
    """Assemble the canonical DNP field-cycling sequence from a spec."""
    if spec.shuttle_profile is None:
        raise SpecInvalid("sequence spec references no shuttle motion profile")
    if spec.t_pol_s < 0:
        raise SpecInvalid("negative optical pumping time")
    lat = dict(DEFAULT_LATENCIES)
    lat.update(spec.latencies)
    shuttle_s = spec.shuttle_profile.total_duration_s

    events = []
    t_optical = 0.0
    cold_at = None
    if spec.cryo is not None:
        events.append(Event("eject", "cryo_eject_valve", 0.0,
                            spec.cryo.eject_duration_s))
        events.append(Event("refill", "cryo_fill_valve",
                            spec.cryo.eject_duration_s, spec.cryo.fill_duration_s,
                            depends_on="eject"))
        cold_at = 0.0 + spec.cryo.cold_delay_s
        t_optical = cold_at

    events.append(Event("program", "pulse_gen", 0.0, 0.0))
    if spec.t_pol_s > 0:
        events.append(Event("pump", "laser", t_optical, spec.t_pol_s))
        events.append(Event("sweep", "mw_sweep", t_optical, spec.t_pol_s,
                            payload=dict(spec.mw_payload)))
    t_trigger = t_optical + spec.t_pol_s
    events.append(Event("trigger", "servo_trigger", t_trigger,
                        spec.trigger_pulse_s,
                        depends_on="sweep" if spec.t_pol_s > 0 else "program"))
    t_motion = t_trigger + spec.trigger_pulse_s
    events.append(Event("shuttle", "actuator_motion", t_motion, shuttle_s,
                        payload={"profile": spec.shuttle_profile},
                        depends_on="trigger"))
    t_done = t_motion + shuttle_s
    events.append(Event("done", "completion_pulse", t_done,
                        spec.completion_pulse_s, depends_on="shuttle"))
    t_acq = t_done + spec.completion_pulse_s + lat["nmr_acquire"] + spec.acquire_delay_s
    events.append(Event("acquire", "nmr_acquire", t_acq, spec.acquire_duration_s,
                        depends_on="done"))

    events.sort(key=lambda e: (e.t_start_s, e.id))
    return Timeline(tuple(events), lat, spec.low_field_max_T, cold_at)


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    code: str
    event_ids: tuple[str, ...]
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self):
        return [v.code for v in self.violations]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["code", "event_ids", "detail"])
        for v in self.violations:
            w.writerow([v.code, ";".join(v.event_ids), v.detail])
        return out.getvalue()


def _overlaps(a: Event, b: Event) -> bool:
    return a.t_start_s < b.t_end_s and b.t_start_s < a.t_end_s


def _sample_position(timeline: Timeline, profile: MotionProfile, t):
    """Sample axial position at time t given the (single) motion event."""
    motions = timeline.by_channel("actuator_motion")
    if not motions:
        return profile.z_start_m
    m = motions[0]
    if t < m.t_start_s:
        return profile.z_start_m
    z, _, _ = states_at(profile, [t - m.t_start_s])
    return float(z[0])


def validate(timeline: Timeline, motion_profile: Optional[MotionProfile] = None,
             fieldmap=None) -> ValidationReport:
    """Check the timeline invariants; violations are data, not exceptions."""
    out = []

    completions = timeline.by_channel("completion_pulse")
    lat_acq = timeline.latencies.get("nmr_acquire", 0.0)
    for acq in timeline.by_channel("nmr_acquire"):
        for done in completions:
            if acq.t_start_s <= done.t_end_s + lat_acq:
                out.append(Violation(
                    "acquire_before_completion", (acq.id, done.id),
                    f"acquire at {acq.t_start_s:.6f} s not strictly after "
                    f"completion end {done.t_end_s:.6f} s + latency {lat_acq:.6f} s"))

    for acq in timeline.by_channel("nmr_acquire"):
        for mot in timeline.by_channel("actuator_motion"):
            if _overlaps(acq, mot):
                out.append(Violation(
                    "acquire_during_motion", (acq.id, mot.id),
                    "acquisition overlaps shuttle motion"))

    if motion_profile is not None and fieldmap is not None:
        z_low = fieldmap.position_of_field(timeline.low_field_max_T)
        for ev in timeline.events:
            if ev.channel not in ("laser", "mw_sweep"):
                continue
            for t in np.linspace(ev.t_start_s, ev.t_end_s, 33):
                z = _sample_position(timeline, motion_profile, float(t))
                if z < z_low - 1e-12:
                    out.append(Violation(
                        "optical_outside_shield", (ev.id,),
                        f"{ev.channel} active at t={t:.6f} s with sample at "
                        f"z={z:.4f} m, above the low-field region start "
                        f"z={z_low:.4f} m"))
                    break

    by_id = {e.id: e for e in timeline.events}
    for ev in timeline.events:
        if ev.depends_on is None:
            continue
        dep = by_id.get(ev.depends_on)
        if dep is None:
            out.append(Violation("missing_dependency", (ev.id,),
                                 f"depends on unknown event {ev.depends_on!r}"))
        elif ev.t_start_s < dep.t_end_s:
            out.append(Violation("causality", (ev.id, dep.id),
                                 "event starts before its dependency ends"))

    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# simulation

@dataclass(frozen=True)
class LogRow:
    run_id: int
    channel: str
    event: str
    t_nominal_s: float
    t_realized_s: float
    duration_s: float


@dataclass(frozen=True)
class EventLog:
    rows: tuple[LogRow, ...]
    metadata: dict

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["run_id", "channel", "event", "t_nominal_s",
                    "t_realized_s", "duration_s"])
        for r in self.rows:
            w.writerow([r.run_id, r.channel, r.event, repr(r.t_nominal_s),
                        repr(r.t_realized_s), repr(r.duration_s)])
        return out.getvalue()

    def realized(self, event_id):
        for r in self.rows:
            if r.event == event_id:
                return r
        raise KeyError(event_id)


def simulate(timeline: Timeline, jitter: JitterModel, run_id: int = 0) -> EventLog:
    """One realized run: nominal times + channel latencies + shuttle jitter.

    The jitter draw perturbs the actuator-motion duration; every event that
    (transitively) depends on the motion inherits the shift.  Deterministic
    for a given jitter stream state.
    """
    shift = {}
    realized = {}
    rows = []
    jitter_amount = 0.0
    for ev in timeline.events:
        inherited = shift.get(ev.depends_on, 0.0) if ev.depends_on else 0.0
        start = ev.t_start_s + timeline.latencies.get(ev.channel, 0.0) + inherited
        if ev.depends_on in realized:
            start = max(start, realized[ev.depends_on])
        dur = ev.duration_s
        if ev.channel == "actuator_motion":
            jitter_amount = float(jitter.draw())
            dur = max(0.0, dur + jitter_amount)
            shift[ev.id] = inherited + (dur - ev.duration_s)
        else:
            shift[ev.id] = inherited
        realized[ev.id] = start + dur
        rows.append(LogRow(run_id, ev.channel, ev.id, ev.t_start_s, start, dur))

    meta = {
        "run_id": run_id,
        "chain_latency_s": timeline.chain_latency_s,
        "shuttle_jitter_s": jitter_amount,
    }
    if timeline.sample_cold_s is not None:
        lat = timeline.latencies.get("cryo_eject_valve", 0.0)
        meta["sample_cold_s"] = timeline.sample_cold_s + lat
    return EventLog(tuple(rows), meta)
