"""Symbolic scores, beat quantization and score-file ingestion.

A :class:`Score` is an onset-ordered list of :class:`ScoreEvent` objects.
:func:`quantize` expands each event into ``max(1, round(beats * subdivision))``
sequential :class:`ScoreUnit` objects, which is the granularity the HMM works
at: a three-beat note at one unit per beat becomes three units.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

from .errors import EmptyScore, ParseError

PITCH_NAMES = ("C", "C#", "D", "Eb", "E", "F", "F#", "G", "G#", "A", "Bb", "B")
N_PITCH_CLASSES = 12
_NAME_TO_PC = {name: pc for pc, name in enumerate(PITCH_NAMES)}


def pitch_class_of(midi_note):
    """Return the pitch class (0 = C ... 11 = B) of a MIDI note number."""
    if isinstance(midi_note, bool) or not isinstance(midi_note, int):
        raise TypeError(f"midi note must be an int, got {midi_note!r}")
    if not 0 <= midi_note <= 127:
        raise ValueError(f"midi note {midi_note} outside [0, 127]")
    return midi_note % 12


def pitch_name(pc):
    return PITCH_NAMES[pc]


def parse_pitch_name(name):
    try:
        return _NAME_TO_PC[name]
    except (KeyError, TypeError):
        raise ParseError(f"unknown pitch name {name!r}; expected one of {PITCH_NAMES}") from None


class Hand(str, enum.Enum):
    LEFT = "L"
    RIGHT = "R"
    SINGLE = "S"


@dataclass(frozen=True)
class AccompanimentNote:
    """An authored accompaniment note attached to a score event.

    ``offset`` is in beats from the event onset; ``velocity_ratio`` scales the
    velocity derived from the soloist's dynamic level.
    """

    pitch: int
    velocity_ratio: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"accompaniment pitch {self.pitch} outside [0, 127]")
        if self.velocity_ratio < 0:
            raise ValueError("velocity_ratio must be non-negative")
        if self.offset < 0:
            raise ValueError("accompaniment offset must be non-negative")


@dataclass(frozen=True)
class ScoreEvent:
    pitches: frozenset
    duration_beats: float
    onset_beats: float = 0.0
    hand: Hand = Hand.SINGLE
    accompaniment: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "pitches", frozenset(self.pitches))
        object.__setattr__(self, "hand", Hand(self.hand))
        object.__setattr__(self, "accompaniment", tuple(self.accompaniment))
        if not self.duration_beats > 0:
            raise ValueError(f"duration_beats must be positive, got {self.duration_beats}")
        if self.onset_beats < 0:
            raise ValueError(f"onset_beats must be non-negative, got {self.onset_beats}")
        for pc in self.pitches:
            if not 0 <= pc < N_PITCH_CLASSES:
                raise ValueError(f"pitch class {pc} outside [0, 11]")

    @property
    def is_rest(self):
        return not self.pitches


@dataclass(frozen=True)
class Score:
    events: tuple
    bpm: float = 120.0
    subdivision: int = 1

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.bpm > 0:
            raise ValueError("bpm must be positive")
        if int(self.subdivision) != self.subdivision or self.subdivision < 1:
            raise ValueError("subdivision must be an integer >= 1")
        onsets = [e.onset_beats for e in self.events]
        if any(b < a for a, b in zip(onsets, onsets[1:])):
            raise ValueError("score events must be sorted by onset")

    @property
    def seconds_per_beat(self):
        return 60.0 / self.bpm

    @property
    def has_accompaniment(self):
        return any(e.accompaniment for e in self.events)


@dataclass(frozen=True)
class ScoreUnit:
    """One modelling unit: a beat (or beat fraction) of one score event.

    ``beats`` is the unit's share of the event duration and ``onset_beats``
    its position in the score; authored accompaniment rides on the first
    unit of an event only.
    """

    pitches: frozenset
    hand: Hand
    is_continuation: bool
    source_event_index: int
    onset_beats: float = 0.0
    beats: float = 1.0
    accompaniment: tuple = ()


@dataclass(frozen=True)
class QuantizedScore:
    units: tuple
    bpm: float = 120.0
    subdivision: int = 1
    hand_counts: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        counts = {h: 0 for h in Hand}
        for u in self.units:
            counts[u.hand] += 1
        object.__setattr__(self, "hand_counts", counts)

    def __len__(self):
        return len(self.units)

    def __getitem__(self, i):
        return self.units[i]

    @property
    def has_accompaniment(self):
        return any(u.accompaniment for u in self.units)

    def filter_hand(self, hand):
        """Units of one hand, in order, as a new quantized score."""
        return QuantizedScore(
            tuple(u for u in self.units if u.hand == hand), self.bpm, self.subdivision
        )


def units_for_duration(duration_beats, subdivision):
    """Round-half-up unit count with a floor of one unit."""
    return max(1, math.floor(duration_beats * subdivision + 0.5))


def quantize(score):
    if not score.events:
        raise EmptyScore("cannot quantize a score with no events")
    units = []
    for index, event in enumerate(score.events):
        k = units_for_duration(event.duration_beats, score.subdivision)
        beats = event.duration_beats / k
        for j in range(k):
            units.append(
                ScoreUnit(
                    pitches=event.pitches,
                    hand=event.hand,
                    is_continuation=j > 0,
                    source_event_index=index,
                    onset_beats=event.onset_beats + j * beats,
                    beats=beats,
                    accompaniment=event.accompaniment if j == 0 else (),
                )
            )
    return QuantizedScore(tuple(units), score.bpm, score.subdivision)


class ScoreFormat(str, enum.Enum):
    JSON = "json"
    MIDI = "midi"


def parse_score(data, format=ScoreFormat.JSON, **kwargs):
    """Parse score bytes in the given format into a :class:`Score`.

    Extra keyword arguments are passed to the MIDI reader
    (see :func:`accompanist.midi.score_from_midi`).
    """
    format = ScoreFormat(format)
    if format is ScoreFormat.MIDI:
        from .midi import score_from_midi

        return score_from_midi(data, **kwargs)
    return _score_from_json(data)


def _byte_offset(text, char_pos):
    return len(text[:char_pos].encode("utf-8"))


def _number(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{what} must be a number, got {value!r}")
    return value


def _score_from_json(data):
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("score is not valid UTF-8", exc.start) from None
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", _byte_offset(text, exc.pos)) from None
    if not isinstance(doc, dict):
        raise ParseError("score document must be a JSON object", 0)

    raw_events = doc.get("events")
    if not isinstance(raw_events, list):
        raise ParseError("score document needs an 'events' list")
    if not raw_events:
        raise EmptyScore("score has no events")

    events = []
    for n, raw in enumerate(raw_events):
        if not isinstance(raw, dict):
            raise ParseError(f"event {n} is not an object")
        try:
            pitches = frozenset(parse_pitch_name(p) for p in raw.get("pitches", []))
            accompaniment = tuple(
                AccompanimentNote(
                    pitch=int(_number(a["pitch"], "accompaniment pitch")),
                    velocity_ratio=float(_number(a.get("velocity_ratio", 1.0), "velocity_ratio")),
                    offset=float(_number(a.get("offset", 0.0), "accompaniment offset")),
                )
                for a in raw.get("accompaniment", [])
            )
            events.append(
                ScoreEvent(
                    pitches=pitches,
                    duration_beats=_number(raw["duration"], "duration"),
                    onset_beats=_number(raw.get("onset", 0), "onset"),
                    hand=Hand(raw.get("hand", "S")),
                    accompaniment=accompaniment,
                )
            )
        except ParseError as exc:
            raise ParseError(f"event {n}: {exc}") from None
        except KeyError as exc:
            raise ParseError(f"event {n}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ParseError(f"event {n}: {exc}") from None

    try:
        return Score(
            tuple(events),
            bpm=float(_number(doc.get("bpm", 120.0), "bpm")),
            subdivision=int(_number(doc.get("subdivision", 1), "subdivision")),
        )
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def score_to_dict(score):
    return {
        "bpm": score.bpm,
        "subdivision": score.subdivision,
        "events": [
            {
                "pitches": [PITCH_NAMES[pc] for pc in sorted(e.pitches)],
                "onset": e.onset_beats,
                "duration": e.duration_beats,
                "hand": e.hand.value,
                "accompaniment": [
                    {"pitch": a.pitch, "velocity_ratio": a.velocity_ratio, "offset": a.offset}
                    for a in e.accompaniment
                ],
            }
            for e in score.events
        ],
    }


def score_to_json(score):
    """Serialize to ScoreJson bytes (UTF-8, stable field order)."""
    return json.dumps(score_to_dict(score), indent=1).encode("utf-8")


def load_score(path, **kwargs):
    """Read a score file, picking the format from the extension."""
    with open(path, "rb") as fh:
        data = fh.read()
    fmt = ScoreFormat.MIDI if str(path).lower().endswith((".mid", ".midi")) else ScoreFormat.JSON
    return parse_score(data, fmt, **kwargs)
