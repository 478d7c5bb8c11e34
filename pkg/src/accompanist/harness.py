"""Performance simulation with injected errors, alignment scoring and the
decoder benchmark.

Randomness comes from numpy's PCG64 bit generator seeded with the ErrorSpec
64-bit seed, which produces the same stream on every platform.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import decoder
from .engine import NoteKind, PerformanceEvent
from .hmm import HmmParams
from .pipeline import compile_model, replay
from .score import N_PITCH_CLASSES, Hand

BENCH_COLUMNS = ("n_states", "window", "per_step_ns_fast", "per_step_ns_full")
DEFAULT_BENCH_N = (1000, 2000, 4000, 5000)
DEFAULT_BENCH_W = (7,)
_OCTAVE_BASE = {Hand.LEFT: 48, Hand.RIGHT: 60, Hand.SINGLE: 60}


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class ErrorSpec:
    p_wrong: float = 0.0
    p_skip: float = 0.0
    p_extra: float = 0.0
    tempo_drift: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_wrong", "p_skip", "p_extra"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.p_wrong + self.p_skip + self.p_extra > 1.0 + 1e-12:
            raise ValueError("p_wrong + p_skip + p_extra must not exceed 1")
        if not 0.0 <= self.tempo_drift < 1.0:
            raise ValueError("tempo_drift must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def parse(cls, text):
        """Accept a JSON object or ``key=value`` pairs separated by commas."""
        text = text.strip()
        if text.startswith("{"):
            return cls(**json.loads(text))
        fields = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, _, value = part.partition("=")
            key = key.strip()
            fields[key] = int(value) if key == "seed" else float(value)
        return cls(**fields)


@dataclass(frozen=True)
class InjectedError:
    kind: str
    unit: int
    note_index: int


@dataclass(frozen=True)
class SimulatedPerformance:
    """Events plus per-NoteOn ground truth (``None`` marks an extra note)."""

    events: tuple
    truth: tuple
    errors: tuple = ()

    def truth_document(self):
        return {
            "truth": list(self.truth),
            "errors": [asdict(e) for e in self.errors],
        }


def simulate(score, spec, base_tempo=0.5, velocity=80):
    """Play a quantized score with random WRONG / SKIP / EXTRA errors.

    One uniform draw per unit picks at most one error: ``[0, p_wrong)`` wrong
    pitch, then skip, then an extra note after the correct one. Each unit's
    inter-onset time is its beat distance to the next unit times
    ``base_tempo`` times ``1 + U(-drift, drift)``.
    """
    rng = make_rng(spec.seed)
    units = score.units
    ons, offs, errors = [], [], []  # ons: (time, seq, event, truth)
    t = 0.0
    pending_skip = None
    for u, unit in enumerate(units):
        draw = rng.random()
        drift = rng.uniform(-spec.tempo_drift, spec.tempo_drift)
        wrong_pc = int(rng.integers(N_PITCH_CLASSES))
        extra_pc = int(rng.integers(N_PITCH_CLASSES))
        nxt = units[u + 1].onset_beats - unit.onset_beats if u + 1 < len(units) else unit.beats
        step = max(nxt, 0.0) * base_tempo * (1.0 + drift)
        length = unit.beats * base_tempo * (1.0 + drift)
        base = _OCTAVE_BASE[unit.hand]
        hand = None if unit.hand is Hand.SINGLE else unit.hand.value
        others = [pc for pc in range(N_PITCH_CLASSES) if pc not in unit.pitches]

        if not unit.pitches:
            t += step
            continue
        pitches = sorted(unit.pitches)
        kind = None
        if draw < spec.p_wrong:
            kind = "wrong"
            pitches = [others[wrong_pc % len(others)]] if others else pitches
        elif draw < spec.p_wrong + spec.p_skip:
            pending_skip = u
            t += step
            continue
        elif draw < spec.p_wrong + spec.p_skip + spec.p_extra:
            kind = "extra"

        first_seq = len(ons)
        if pending_skip is not None:
            errors.append(("skip", pending_skip, first_seq))
            pending_skip = None
        if kind == "wrong":
            errors.append(("wrong", u, first_seq))
        off = t + (0.45 if kind == "extra" else 0.9) * length
        for pc in pitches:
            ons.append((t, len(ons), PerformanceEvent(NoteKind.ON, base + pc, velocity, t, hand), u))
            offs.append(PerformanceEvent(NoteKind.OFF, base + pc, 0, off, hand))
        if kind == "extra":
            pc = others[extra_pc % len(others)] if others else extra_pc
            at = t + 0.5 * length
            errors.append(("extra", u, len(ons)))
            ons.append((at, len(ons), PerformanceEvent(NoteKind.ON, base + pc, velocity, at, hand),
                        None))
            offs.append(PerformanceEvent(NoteKind.OFF, base + pc, 0, t + 0.9 * length, hand))
        t += step

    ons.sort(key=lambda x: (x[0], x[1]))
    rank = {seq: i for i, (_, seq, _, _) in enumerate(ons)}
    events = sorted([e for _, _, e, _ in ons] + offs, key=lambda e: (e.time, e.kind is NoteKind.ON))
    return SimulatedPerformance(
        tuple(events),
        tuple(tr for _, _, _, tr in ons),
        tuple(InjectedError(kind, u, rank[seq]) for kind, u, seq in errors),
    )


@dataclass(frozen=True)
class AlignmentReport:
    accuracy: float
    mean_recovery_events: float
    p95_step_latency: float
    ghost_rate: float
    n_events: int
    n_errors: int

    def to_dict(self):
        return asdict(self)


def _recovery_lengths(correct, errors):
    lengths = []
    for err in errors:
        k = err.note_index
        n = 0
        while k < len(correct) and not correct[k]:
            n += 1
            k += 1
        lengths.append(n)
    return lengths


def score_alignment(positions, groups, perf):
    """Per-NoteOn correctness of decoded positions against simulation truth."""
    decoded = []
    for record, group in zip(positions, groups):
        decoded.extend([record] * len(group.notes))
    if len(decoded) != len(perf.truth):
        raise ValueError("performance truth does not match its NoteOn count")
    correct = []
    for record, truth in zip(decoded, perf.truth):
        correct.append(record.ghost if truth is None else record.unit == truth)
    return decoded, correct


def evaluate(score, perf, engine_config=None, model=None, parallel=False):
    """Follow a simulated performance and score it against ground truth.

    ``score`` is a :class:`~accompanist.score.Score`; pass ``model`` to reuse
    an already compiled or trained one.
    """
    model = model or compile_model(score)
    n_units = len(model.score.units)
    if any(t is not None and not 0 <= t < n_units for t in perf.truth):
        raise ValueError("performance truth refers to units outside the score")
    if not perf.truth:
        raise ValueError("accuracy is undefined for a performance with no NoteOns")
    positions, _, groups, latencies = replay(model, perf.events, parallel=parallel,
                                             engine_config=engine_config)
    decoded, correct = score_alignment(positions, groups, perf)
    recovery = _recovery_lengths(correct, perf.errors)
    return AlignmentReport(
        accuracy=float(np.mean(correct)),
        mean_recovery_events=float(np.mean(recovery)) if recovery else 0.0,
        p95_step_latency=float(np.percentile(latencies, 95)),
        ghost_rate=float(np.mean([r.ghost for r in decoded])),
        n_events=len(decoded),
        n_errors=len(perf.errors),
    )


# -- benchmark ---------------------------------------------------------------

def random_banded_model(n, w1, w2, rng, mu=None):
    """Random band-plus-floor HMM: ``(params, banded transition)``."""
    width = w1 + w2 + 1
    band = rng.random((n, width)) + 0.01
    bt = decoder.BandedTransition(band, w1, w2, 0.0).with_floor(
        mu if mu is not None else 1.0 / (10 * n * width)
    )
    emission = rng.random((n, N_PITCH_CLASSES)) + 0.01
    emission /= emission.sum(axis=1, keepdims=True)
    prior = np.full(n, 1.0 / n)
    return HmmParams(prior, bt.to_dense(), emission), bt


def _time_steps(step, state, observations, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter_ns()
        for obs in observations:
            step(state, obs)
        best = min(best, (time.perf_counter_ns() - start) / len(observations))
        state.psi.clear()
    return best


def bench_decode(n_states_list=DEFAULT_BENCH_N, window_list=DEFAULT_BENCH_W, steps=200,
                 full_steps=None, repeats=5, seed=0):
    """Time banded vs dense Viterbi steps on random band-plus-floor models.

    Returns one dict per ``(N, W)`` with per-step nanoseconds (best batch
    mean over ``repeats``). ``full_steps`` defaults to a count that keeps the
    dense timing near a second per cell.
    """
    if not n_states_list or not window_list:
        raise ValueError("bench needs at least one N and one W")
    rng = make_rng(seed)
    rows = []
    for n in n_states_list:
        for w in window_list:
            w = min(w, n)
            w1 = (w - 1) // 2
            w2 = w - 1 - w1
            params, bt = random_banded_model(n, w1, w2, rng)
            obs = [int(k) for k in rng.integers(N_PITCH_CLASSES, size=steps)]
            state = decoder.init(params, obs[0])
            decoder.step_fast(state, bt, params, obs[0])
            decoder.step_full(state, params, obs[0])
            fast = _time_steps(lambda s, o: decoder.step_fast(s, bt, params, o), state, obs, repeats)
            n_full = full_steps or max(3, min(steps, int(2e8 // (n * n))))
            full = _time_steps(lambda s, o: decoder.step_full(s, params, o), state, obs[:n_full],
                               max(1, min(repeats, 3)))
            rows.append({"n_states": n, "window": w, "per_step_ns_fast": float(fast),
                         "per_step_ns_full": float(full)})
    return rows


def bench_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{row[k]:.1f}" if isinstance(row[k], float) else row[k])
                         for k in BENCH_COLUMNS})
    return buf.getvalue()
