"""Accompaniment scheduling driven by the decoded score position.

The engine never reads a clock. Every call carries a caller-supplied
timestamp in seconds, so a recorded performance replays identically.

Per decoded soloist event the engine

* emits pending accompaniment whose due time has passed,
* updates the soloist dynamic level and (in normal states) the tempo,
* revises the schedule: ghost states are ignored for one step, normal states
  cancel off-path notes and anticipate the next unit(s).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

from .score import AccompanimentNote

TRIAD_TABLE = {"major": (0, 4, 7), "minor": (0, 3, 7)}
TRIAD_BASE = 48  # C3, the octave below middle C
DEFAULT_LEVEL = 64.0


class NoteKind(str, enum.Enum):
    ON = "on"
    OFF = "off"


@dataclass(frozen=True)
class PerformanceEvent:
    kind: NoteKind
    pitch: int
    velocity: int
    time: float
    hand: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", NoteKind(self.kind))
        if not 0 <= self.pitch <= 127 or not 0 <= self.velocity <= 127:
            raise ValueError("pitch and velocity must lie in [0, 127]")
        if self.time < 0:
            raise ValueError("event time must be non-negative")

    @property
    def is_note_on(self):
        """NoteOn with velocity zero counts as NoteOff."""
        return self.kind is NoteKind.ON and self.velocity > 0

    def to_dict(self):
        d = {"kind": self.kind.value, "pitch": self.pitch, "vel": self.velocity, "t": self.time}
        if self.hand is not None:
            d["hand"] = self.hand
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(NoteKind(d["kind"]), int(d["pitch"]), int(d.get("vel", 0)), float(d["t"]),
                   d.get("hand"))


# -- tempo -------------------------------------------------------------------

@dataclass(frozen=True)
class TempoEstimate:
    seconds_per_beat: float
    window: tuple = ()
    valid_count: int = 0
    last_onset: float | None = None
    capacity: int = 8

    def __post_init__(self):
        if not self.seconds_per_beat > 0:
            raise ValueError("seconds_per_beat must be positive")


def trimmed_mean(values):
    """Mean after dropping one largest and one smallest value (3+ values)."""
    values = sorted(values)
    if len(values) >= 3:
        values = values[1:-1]
    return math.fsum(values) / len(values)


def update_tempo(est, event, decoder_in_normal_state, expected_duration_beats):
    """Fold one soloist onset into the tempo estimate.

    The observation is the time since the last valid onset divided by the
    beats the score expected in between. Onsets decoded into ghost states
    leave the estimate untouched (the same object is returned).
    """
    if not decoder_in_normal_state:
        return est
    if est.last_onset is None:
        return replace(est, last_onset=event.time)
    ioi = event.time - est.last_onset
    if ioi <= 0:
        return est
    if not expected_duration_beats > 0:
        raise ValueError("expected_duration_beats must be positive in a normal state")
    window = (est.window + (ioi / expected_duration_beats,))[-est.capacity:]
    return replace(
        est,
        seconds_per_beat=trimmed_mean(window),
        window=window,
        valid_count=est.valid_count + 1,
        last_onset=event.time,
    )


# -- dynamics ----------------------------------------------------------------

@dataclass(frozen=True)
class DynamicsLevel:
    level: float | None = None
    smoothing: float = 0.3
    ratio: float = 0.85

    @property
    def current(self):
        return DEFAULT_LEVEL if self.level is None else self.level


def update_dynamics(dyn, event):
    if not event.is_note_on:
        return dyn
    if dyn.level is None:
        return replace(dyn, level=float(event.velocity))
    a = dyn.smoothing
    return replace(dyn, level=(1.0 - a) * dyn.level + a * event.velocity)


def accompaniment_velocity(dyn, velocity_ratio=1.0):
    """``round(level * ratio)``, kept strictly below the soloist level."""
    level = dyn.current
    v = math.floor(level * dyn.ratio * velocity_ratio + 0.5)
    return int(max(0, min(v, math.ceil(level) - 1, 127)))


# -- schedule ----------------------------------------------------------------

@dataclass(frozen=True)
class PendingNote:
    pitch: int
    velocity_ratio: float
    due_time: float
    duration: float
    source_unit: int


@dataclass(frozen=True)
class AccompanimentEvent:
    pitch: int
    velocity: int
    due_time: float
    duration: float
    source_unit: int

    def to_record(self):
        return {"t": self.due_time, "pitch": self.pitch, "vel": self.velocity,
                "dur": self.duration, "unit": self.source_unit}

    def to_json(self):
        return json.dumps(self.to_record())


@dataclass(frozen=True)
class Schedule:
    """Pending accompaniment, sorted by due time.

    ``deviation_pending`` is control state for the one-step delay rule and is
    not part of the schedule's content (excluded from equality).
    """

    pending: tuple = ()
    committed_until: float = 0.0
    emitted_units: frozenset = frozenset()
    deviation_pending: bool = field(default=False, compare=False)

    @property
    def pending_units(self):
        return {p.source_unit for p in self.pending}


def _sorted_pending(notes):
    return tuple(sorted(notes, key=lambda p: (p.due_time, p.source_unit, p.pitch)))


def chord_match(unit, score=None, synthesize=True, quality="major"):
    """Accompaniment notes for one score unit.

    Authored notes pass through. Otherwise, when ``synthesize`` is on, the
    first unit of a sounding event gets a root-position triad on its lowest
    pitch class in the octave below middle C; continuation units and rests get
    nothing.
    """
    if unit.accompaniment:
        return list(unit.accompaniment)
    if not synthesize or not unit.pitches or unit.is_continuation:
        return []
    root = min(unit.pitches)
    return [AccompanimentNote(TRIAD_BASE + root + step) for step in TRIAD_TABLE[quality]]


def _event_beats(score, u):
    unit = score.units[u]
    count = 1
    v = u + 1
    while v < len(score.units) and score.units[v].source_event_index == unit.source_event_index:
        count += 1
        v += 1
    return unit.beats * count


def anticipate(schedule, position, tempo, now, score, horizon=1, synthesize=True,
               include_current=False):
    """Enqueue accompaniment for units after ``position``.

    Units ``position + 1 .. position + horizon`` (and ``position`` itself
    with ``include_current``) are scheduled at ``now`` plus their beat
    distance from ``position`` at the current tempo. Units already pending or
    emitted are skipped.
    """
    units = score.units
    spb = tempo.seconds_per_beat
    skip = schedule.pending_units | schedule.emitted_units
    base = units[position].onset_beats
    first = position if include_current else position + 1
    added = []
    for u in range(first, min(position + horizon + 1, len(units))):
        if u in skip:
            continue
        ahead = units[u].onset_beats - base
        beats = _event_beats(score, u)
        for note in chord_match(units[u], score, synthesize):
            due = max(now + (ahead + note.offset) * spb, schedule.committed_until)
            dur = max(beats - note.offset, units[u].beats) * spb
            added.append(PendingNote(note.pitch, note.velocity_ratio, due, dur, u))
    if not added:
        return schedule
    return replace(schedule, pending=_sorted_pending(schedule.pending + tuple(added)))


def revise(schedule, old_position, new_position, decoder_in_ghost, now, tempo, score,
           horizon=1, synthesize=True):
    """Apply the one-step delay rule after a new decoded position.

    A ghost-state report only raises ``deviation_pending``; the schedule
    content is left as is. A normal-state report drops not-yet-due notes for
    units off the path ``new_position .. new_position + horizon`` and
    anticipates from ``new_position``.
    """
    if decoder_in_ghost:
        if schedule.deviation_pending:
            return schedule
        return replace(schedule, deviation_pending=True)
    on_path = set(range(new_position, new_position + horizon + 1))
    kept = tuple(p for p in schedule.pending if p.due_time <= now or p.source_unit in on_path)
    revised = replace(schedule, pending=kept, deviation_pending=False)
    return anticipate(revised, new_position, tempo, now, score, horizon, synthesize)


def pop_due(schedule, now, dyn):
    """Split off every pending note due at or before ``now``.

    Returns ``(schedule, events)``; velocities come from the current dynamic
    level.
    """
    due = [p for p in schedule.pending if p.due_time <= now]
    if not due:
        return schedule, []
    rest = schedule.pending[len(due):]
    events = [
        AccompanimentEvent(p.pitch, accompaniment_velocity(dyn, p.velocity_ratio),
                           p.due_time, p.duration, p.source_unit)
        for p in due
    ]
    return (
        replace(
            schedule,
            pending=rest,
            committed_until=max(schedule.committed_until, due[-1].due_time),
            emitted_units=schedule.emitted_units | {p.source_unit for p in due},
        ),
        events,
    )


@dataclass(frozen=True)
class EngineConfig:
    horizon: int = 1
    tempo_window: int = 8
    dynamics_ratio: float = 0.85
    dynamics_smoothing: float = 0.3
    synthesize: bool | None = None


class AccompanimentEngine:
    """Stateful driver around the pure scheduling functions.

    Call :meth:`on_position` once per decoded soloist observation (in time
    order) and :meth:`finish` at the end of the stream; both return the
    accompaniment events emitted by that call.
    """

    def __init__(self, score, config=None):
        self.score = score
        self.config = config or EngineConfig()
        self.synthesize = (not score.has_accompaniment if self.config.synthesize is None
                           else self.config.synthesize)
        self.tempo = TempoEstimate(60.0 / score.bpm, capacity=self.config.tempo_window)
        self.dynamics = DynamicsLevel(None, self.config.dynamics_smoothing,
                                      self.config.dynamics_ratio)
        self.schedule = Schedule()
        self.position = None
        self.last_valid_unit = None
        self.emitted = []

    def advance(self, now):
        self.schedule, events = pop_due(self.schedule, now, self.dynamics)
        self.emitted.extend(events)
        return events

    def on_position(self, now, position, in_ghost, soloist_events=()):
        """Process one decoded observation at time ``now``."""
        out = self.advance(now)
        for ev in soloist_events:
            self.dynamics = update_dynamics(self.dynamics, ev)

        onset = PerformanceEvent(NoteKind.ON, 0, 1, now)
        expected = None
        if not in_ghost and self.last_valid_unit is not None:
            expected = (self.score.units[position].onset_beats
                        - self.score.units[self.last_valid_unit].onset_beats)
        if not in_ghost and (expected is None or expected > 0):
            self.tempo = update_tempo(self.tempo, onset, True, expected)
            self.last_valid_unit = position

        old = self.position if self.position is not None else position
        self.schedule = revise(self.schedule, old, position, in_ghost, now, self.tempo,
                               self.score, self.config.horizon, self.synthesize)
        if not in_ghost:
            self.schedule = anticipate(self.schedule, position, self.tempo, now, self.score,
                                       0, self.synthesize, include_current=True)
        self.position = position
        out.extend(self.advance(now))
        return out

    def finish(self):
        return self.advance(math.inf)


def write_events(events, fh):
    for ev in events:
        fh.write(ev.to_json() + "\n")
