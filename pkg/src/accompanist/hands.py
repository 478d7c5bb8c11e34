"""Two-hand following with one part HMM per hand.

Each hand's units are compiled into their own score HMM and followed by their
own banded decoder. Only the hand that emitted an event advances; the joint
position is the furthest score event reached by either hand, which is valid
as long as the hands never cross.

The full product space ``(emitting hand, left state, right state)`` is never
built: with attributed events the hands are independent, and for
unattributed events both hands are tried and the better one kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from . import decoder
from .errors import OneHandEmpty
from .hmm import CompileOptions, compile_score
from .score import Hand

MIDDLE_C = 60


@dataclass(frozen=True)
class HandPart:
    params: object
    layout: object
    band: object
    units: object
    global_units: tuple = ()

    def event_index(self, state):
        return self.units[int(self.layout.unit_of[state])].source_event_index

    def global_unit(self, state):
        return self.global_units[int(self.layout.unit_of[state])]


@dataclass(frozen=True)
class HandedModel:
    left: HandPart
    right: HandPart
    switch_prob: float = 0.5

    def part(self, hand):
        return self.left if hand is Hand.LEFT else self.right


@dataclass(frozen=True)
class ParallelState:
    """Current emitting hand and per-hand decoder state.

    ``f_left`` / ``f_right`` are the part HMMs' best states; a hand that has
    not played yet sits at its first normal state with no decoder.
    """

    eta: Hand | None = None
    f_left: int = 0
    f_right: int = 0
    left: decoder.DecoderState | None = None
    right: decoder.DecoderState | None = None

    def decoder_for(self, hand):
        return self.left if hand is Hand.LEFT else self.right


@dataclass(frozen=True)
class HandedObservation:
    pitches: frozenset
    hand: Hand | None = None


def attribute_hand(pitch, channel_hand=None, register_split=True):
    """Explicit hand wins; otherwise split at middle C when enabled."""
    if channel_hand is not None:
        return Hand(channel_hand)
    if register_split:
        return Hand.LEFT if pitch < MIDDLE_C else Hand.RIGHT
    return None


def split_compile(q, opts=None, w1=decoder.DEFAULT_W1, w2=decoder.DEFAULT_W2, mu=None,
                  switch_prob=0.5):
    if q.hand_counts[Hand.SINGLE]:
        raise ValueError("single-line units cannot be split by hand; use the single-HMM follower")
    parts = {}
    for hand in (Hand.LEFT, Hand.RIGHT):
        sub = q.filter_hand(hand)
        if not len(sub):
            raise OneHandEmpty(f"score has no {hand.name.lower()}-hand units")
        params, layout = compile_score(sub, opts or CompileOptions())
        global_units = tuple(i for i, u in enumerate(q.units) if u.hand == hand)
        parts[hand] = HandPart(params, layout, decoder.decoder_band(params, w1, w2, mu),
                               sub.units, global_units)
    return HandedModel(parts[Hand.LEFT], parts[Hand.RIGHT], switch_prob)


def _advance(dstate, part, pitches):
    if dstate is None:
        return decoder.init(part.params, pitches)
    return decoder.step_fast(dstate, part.band, part.params, pitches)


def _trial_gain(dstate, part, pitches):
    if dstate is None:
        return float(decoder.init(part.params, pitches, 1).delta.max())
    trial = decoder.DecoderState(dstate.delta, dstate.t, 1)
    decoder.step_fast(trial, part.band, part.params, pitches)
    return float(trial.delta.max() - dstate.delta.max())


def _choose_hand(pstate, model, pitches):
    scores = {}
    for hand in (Hand.LEFT, Hand.RIGHT):
        gain = _trial_gain(pstate.decoder_for(hand), model.part(hand), pitches)
        if pstate.eta is not None and 0 < model.switch_prob < 1:
            stay = hand is pstate.eta
            gain += math.log(1 - model.switch_prob if stay else model.switch_prob)
        scores[hand] = gain
    return Hand.LEFT if scores[Hand.LEFT] > scores[Hand.RIGHT] else Hand.RIGHT


def parallel_step(pstate, model, event):
    """Advance the emitting hand's decoder; the other hand is untouched."""
    hand = event.hand if event.hand is not None else _choose_hand(pstate, model, event.pitches)
    hand = Hand(hand)
    part = model.part(hand)
    dstate = _advance(pstate.decoder_for(hand), part, event.pitches)
    if hand is Hand.LEFT:
        return replace(pstate, eta=hand, f_left=dstate.q_current, left=dstate)
    return replace(pstate, eta=hand, f_right=dstate.q_current, right=dstate)


def merged_position(pstate, model):
    """Furthest score event index reached by either hand (0 before any input)."""
    positions = []
    if pstate.left is not None:
        positions.append(model.left.event_index(pstate.f_left))
    if pstate.right is not None:
        positions.append(model.right.event_index(pstate.f_right))
    return max(positions, default=0)


def merged_unit(pstate, model):
    """Unit index in the two-hand score for :func:`merged_position`."""
    best = None
    for part, dstate, f in ((model.left, pstate.left, pstate.f_left),
                            (model.right, pstate.right, pstate.f_right)):
        if dstate is None:
            continue
        key = (part.event_index(f), part.global_unit(f))
        if best is None or key > best:
            best = key
    return 0 if best is None else best[1]


def hand_is_ghost(pstate, model):
    hand = pstate.eta
    if hand is None:
        return False
    f = pstate.f_left if hand is Hand.LEFT else pstate.f_right
    return bool(model.part(hand).layout.is_ghost[f])
