"""End-to-end plumbing: model files, observation grouping and follow sessions.

A :class:`FollowSession` owns one decoder (or a pair of per-hand decoders)
and one accompaniment engine for a single performance. The CLI replays
recorded performances through it; the HTTP service keeps one per client.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import decoder, hands
from .engine import AccompanimentEngine, EngineConfig, PerformanceEvent
from .errors import ParseError
from .hmm import CompileOptions, HmmParams, StateLayout, compile_score
from .score import (
    PITCH_NAMES,
    AccompanimentNote,
    Hand,
    QuantizedScore,
    ScoreUnit,
    parse_pitch_name,
    pitch_class_of,
    quantize,
)

MODEL_FORMAT = "accompanist-model/1"


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """A compiled (possibly trained) score HMM plus the score it models."""

    params: HmmParams
    layout: StateLayout
    score: QuantizedScore
    w1: int = decoder.DEFAULT_W1
    w2: int = decoder.DEFAULT_W2
    mu: float | None = None

    def band(self):
        return decoder.decoder_band(self.params, self.w1, self.w2, self.mu)

    def with_params(self, params):
        return ScoreModel(params, self.layout, self.score, self.w1, self.w2, self.mu)


def compile_model(score, opts=None, w1=decoder.DEFAULT_W1, w2=decoder.DEFAULT_W2, mu=None):
    q = quantize(score)
    params, layout = compile_score(q, opts or CompileOptions())
    return ScoreModel(params, layout, q, w1, w2, mu)


def _unit_to_dict(u):
    return {
        "pitches": [PITCH_NAMES[pc] for pc in sorted(u.pitches)],
        "hand": u.hand.value,
        "continuation": u.is_continuation,
        "event": u.source_event_index,
        "onset": u.onset_beats,
        "beats": u.beats,
        "accompaniment": [
            {"pitch": a.pitch, "velocity_ratio": a.velocity_ratio, "offset": a.offset}
            for a in u.accompaniment
        ],
    }


def _unit_from_dict(d):
    return ScoreUnit(
        pitches=frozenset(parse_pitch_name(p) for p in d["pitches"]),
        hand=Hand(d["hand"]),
        is_continuation=bool(d["continuation"]),
        source_event_index=int(d["event"]),
        onset_beats=float(d["onset"]),
        beats=float(d["beats"]),
        accompaniment=tuple(
            AccompanimentNote(int(a["pitch"]), float(a["velocity_ratio"]), float(a["offset"]))
            for a in d.get("accompaniment", [])
        ),
    )


def model_to_dict(model):
    p = model.params
    return {
        "format": MODEL_FORMAT,
        "n_states": p.n_states,
        "layout": [{"kind": kind, "unit": unit} for kind, unit in model.layout.kinds],
        "prior": p.prior.tolist(),
        "transition": p.transition.tolist(),
        "emission": p.emission.tolist(),
        "window": [model.w1, model.w2],
        "mu": model.mu,
        "score": {
            "bpm": model.score.bpm,
            "subdivision": model.score.subdivision,
            "units": [_unit_to_dict(u) for u in model.score.units],
        },
    }


def model_from_dict(doc):
    try:
        params = HmmParams(doc["prior"], doc["transition"], doc["emission"])
        score = QuantizedScore(
            tuple(_unit_from_dict(u) for u in doc["score"]["units"]),
            float(doc["score"]["bpm"]),
            int(doc["score"]["subdivision"]),
        )
        layout = StateLayout(len(score.units))
        if params.n_states != doc["n_states"] or layout.n_states != params.n_states:
            raise ParseError("model n_states does not match its layout and score")
        w1, w2 = doc.get("window", [decoder.DEFAULT_W1, decoder.DEFAULT_W2])
        return ScoreModel(params, layout, score, int(w1), int(w2), doc.get("mu"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid model file: {exc}") from None


def dumps_model(model):
    return json.dumps(model_to_dict(model), separators=(",", ":")) + "\n"


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file is not JSON: {exc.msg}", exc.pos) from None
    return model_from_dict(doc)


# -- performance files ---------------------------------------------------------

def read_performance(path):
    """NDJSON PerformanceEvents, one per line."""
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(PerformanceEvent.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad performance event: {exc}") from None
    if any(b.time < a.time for a, b in zip(events, events[1:])):
        raise ParseError(f"{path}: event times must be non-decreasing")
    return events


def dumps_performance(events):
    return "".join(json.dumps(e.to_dict()) + "\n" for e in events)


def truth_path(perf_path):
    return f"{perf_path}.truth.json"


@dataclass(frozen=True)
class ObservationGroup:
    time: float
    hand: Hand | None
    notes: tuple

    @property
    def pitches(self):
        return frozenset(pitch_class_of(e.pitch) for e in self.notes)


def group_note_ons(events, parallel=False, register_split=True):
    """Merge NoteOns with identical time and hand into chord observations.

    In parallel mode untagged notes are assigned a hand by register first.
    """
    groups = []
    for ev in events:
        if not ev.is_note_on:
            continue
        hand = Hand(ev.hand) if ev.hand else None
        if parallel:
            hand = hands.attribute_hand(ev.pitch, hand, register_split)
        last = groups[-1] if groups else None
        if last is not None and last.time == ev.time and last.hand == hand:
            groups[-1] = ObservationGroup(last.time, hand, last.notes + (ev,))
        else:
            groups.append(ObservationGroup(ev.time, hand, (ev,)))
    return groups


# -- sessions ------------------------------------------------------------------

@dataclass(frozen=True)
class PositionRecord:
    t: float
    unit: int
    event: int
    ghost: bool
    state: int
    hand: str | None = None

    def to_record(self):
        d = {"t": self.t, "unit": self.unit, "event": self.event, "ghost": self.ghost,
             "state": self.state}
        if self.hand is not None:
            d["hand"] = self.hand
        return d


@dataclass
class FollowSession:
    model: ScoreModel
    parallel: bool = False
    dense: bool = False
    engine_config: EngineConfig = field(default_factory=EngineConfig)
    register_split: bool = True

    def __post_init__(self):
        self.engine = AccompanimentEngine(self.model.score, self.engine_config)
        self.latencies = []
        if self.parallel:
            self.handed = hands.split_compile(self.model.score, w1=self.model.w1,
                                              w2=self.model.w2, mu=self.model.mu)
            self.pstate = hands.ParallelState()
        else:
            self.follower = decoder.Follower(
                self.model.params, None if self.dense else self.model.band(), dense=self.dense
            )

    def observe(self, group):
        """Decode one observation group and drive the engine.

        Returns ``(PositionRecord, accompaniment events)``.
        """
        start = time.perf_counter()
        if self.parallel:
            self.pstate = hands.parallel_step(
                self.pstate, self.handed, hands.HandedObservation(group.pitches, group.hand)
            )
            unit = hands.merged_unit(self.pstate, self.handed)
            ghost = hands.hand_is_ghost(self.pstate, self.handed)
            f = self.pstate.f_left if self.pstate.eta is Hand.LEFT else self.pstate.f_right
            hand = self.pstate.eta.value
        else:
            f = self.follower.feed(group.pitches)
            unit = int(self.model.layout.unit_of[f])
            ghost = bool(self.model.layout.is_ghost[f])
            hand = None
        self.latencies.append(time.perf_counter() - start)
        record = PositionRecord(group.time, unit, self.model.score.units[unit].source_event_index,
                                ghost, int(f), hand)
        out = self.engine.on_position(group.time, unit, ghost, group.notes)
        return record, out

    def finish(self):
        return self.engine.finish()


def replay(model, events, parallel=False, dense=False, engine_config=None):
    """Run a recorded performance through a fresh session.

    Returns ``(positions, accompaniment, groups, latencies)``.
    """
    session = FollowSession(model, parallel, dense, engine_config or EngineConfig())
    groups = group_note_ons(events, parallel=parallel)
    positions, accompaniment = [], []
    for group in groups:
        record, out = session.observe(group)
        positions.append(record)
        accompaniment.extend(out)
    accompaniment.extend(session.finish())
    return positions, accompaniment, groups, np.array(session.latencies)
