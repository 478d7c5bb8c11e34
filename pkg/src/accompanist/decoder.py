"""Online Viterbi decoding: a dense O(N^2) step and a banded O(WN) step.

The banded step assumes the transition matrix has the form

    a[i, j] = band[i, j] + mu   for i - w1 <= j <= i + w2
    a[i, j] = mu                otherwise

so that the best predecessor of state ``i`` is either one of its ``W``
in-band neighbours or the single globally best state reached through the
floor ``mu``. The global term is computed once per step.

Trellis values are natural-log probabilities; ``mu == 0`` becomes ``-inf``
and simply never wins.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .hmm import HmmParams, log_emission_vector

DEFAULT_W1 = 2
DEFAULT_W2 = 4
DEFAULT_HORIZON = 4096


@dataclass(frozen=True, eq=False)
class BandedTransition:
    """Band-plus-floor transition matrix.

    ``band[i, k]`` holds the in-band part for destination ``j = i - w1 + k``;
    slots whose ``j`` falls outside ``[0, n)`` are zero and unused.
    """

    band: np.ndarray
    w1: int
    w2: int
    mu: float
    error: float = 0.0

    def __post_init__(self):
        band = np.array(self.band, dtype=float)
        band.setflags(write=False)
        object.__setattr__(self, "band", band)
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("window offsets must be non-negative")
        if band.ndim != 2 or band.shape[1] != self.width:
            raise ValueError(f"band must have {self.width} columns, got shape {band.shape}")
        if self.width > self.n:
            raise ValueError(f"band width {self.width} exceeds matrix size {self.n}")
        if self.mu < 0 or np.any(band < 0):
            raise ValueError("band entries and mu must be non-negative")

    @property
    def n(self):
        return self.band.shape[0]

    @property
    def width(self):
        return self.w1 + self.w2 + 1

    @cached_property
    def _valid(self):
        j = np.arange(self.n)[:, None] - self.w1 + np.arange(self.width)[None, :]
        return (j >= 0) & (j < self.n)

    def to_dense(self):
        n = self.n
        a = np.full((n, n), self.mu)
        rows, cols = np.nonzero(self._valid)
        a[rows, rows - self.w1 + cols] = self.band[rows, cols] + self.mu
        return a

    def row_sums(self):
        return np.where(self._valid, self.band, 0.0).sum(axis=1) + self.n * self.mu

    @cached_property
    def incoming_log(self):
        """``(n, W)`` log transition into ``i`` from ``j = i - w2 + k``."""
        n, width = self.n, self.width
        i = np.arange(n)[:, None]
        j = i - self.w2 + np.arange(width)[None, :]
        col = width - 1 - np.arange(width)[None, :].repeat(n, axis=0)
        ok = (j >= 0) & (j < n)
        vals = np.zeros((n, width))
        vals[ok] = self.band[j[ok], col[ok]] + self.mu
        with np.errstate(divide="ignore"):
            out = np.where(ok, np.log(np.where(ok, vals, 1.0)), -np.inf)
        return np.ascontiguousarray(out)

    @property
    def log_mu(self):
        return float(np.log(self.mu)) if self.mu > 0 else -np.inf

    def with_floor(self, mu=None):
        """Rescale a floor-free stochastic band so that adding ``mu`` keeps rows
        stochastic. ``mu=None`` uses ``1 / (10 * n * W)``."""
        if mu is None:
            mu = 1.0 / (10 * self.n * self.width)
        band = np.where(self._valid, self.band, 0.0)
        sums = band.sum(axis=1, keepdims=True) + self.n * self.mu
        scale = (1.0 - self.n * mu) / np.where(sums > 0, sums, 1.0)
        return BandedTransition(band * scale, self.w1, self.w2, mu)


def band_from_dense(a, w1, w2):
    """Split a dense matrix into band plus the mean out-of-band value.

    ``error`` on the result is ``max |a - reconstruction|``; it is zero when
    ``a`` already has band-plus-constant form.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("transition must be square")
    width = w1 + w2 + 1
    if width > n:
        raise ValueError(f"band width {width} exceeds matrix size {n}")
    offsets = np.arange(n)[None, :] - np.arange(n)[:, None]
    inside = (offsets >= -w1) & (offsets <= w2)
    outside_vals = a[~inside]
    mu = float(outside_vals.mean()) if outside_vals.size else 0.0
    band = np.zeros((n, width))
    rows, cols = np.nonzero(inside)
    band[rows, cols - rows + w1] = np.maximum(a[rows, cols] - mu, 0.0)
    bt = BandedTransition(band, w1, w2, mu)
    error = float(np.max(np.abs(a - bt.to_dense())))
    return BandedTransition(band, w1, w2, mu, error)


def fit_window(n, w1=DEFAULT_W1, w2=DEFAULT_W2):
    """Shrink ``(w1, w2)`` so the band fits an ``n``-state model, keeping the
    forward reach first."""
    w2 = min(w2, n - 1)
    w1 = max(0, min(w1, n - 1 - w2))
    return w1, w2


def decoder_band(params, w1=DEFAULT_W1, w2=DEFAULT_W2, mu=None):
    """Band-plus-floor transition for online following of a compiled score.

    A compiled score has no out-of-band edges, so the floor is added here to
    let the decoder recover from arbitrary jumps.
    """
    w1, w2 = fit_window(params.n_states, w1, w2)
    bt = band_from_dense(params.transition, w1, w2)
    if mu is None and bt.mu > 0:
        return bt
    return bt.with_floor(mu)


@dataclass
class DecoderState:
    """Trellis column plus a bounded history of back-pointers.

    Owned by one event loop and advanced in place by the step functions.
    """

    delta: np.ndarray
    t: int = 1
    horizon: int = DEFAULT_HORIZON
    psi: deque = field(default=None, repr=False)

    def __post_init__(self):
        if self.psi is None:
            self.psi = deque(maxlen=self.horizon)

    @property
    def q_current(self):
        return int(np.argmax(self.delta))

    def copy(self):
        return DecoderState(self.delta.copy(), self.t, self.horizon, deque(self.psi, maxlen=self.horizon))


@dataclass(frozen=True)
class DecodePath:
    states: list
    score: float
    start: int = 0


def _log_b(params, obs):
    return log_emission_vector(params, obs)


def init(params, obs, horizon=DEFAULT_HORIZON):
    delta = params.log_prior + _log_b(params, obs)
    return DecoderState(np.ascontiguousarray(delta), 1, horizon)


def step_fast(state, bt, params, obs):
    n = bt.n
    new_delta = np.empty(n)
    psi = np.empty(n, dtype=np.int32)
    _kernels.banded_step(state.delta, bt.incoming_log, bt.w2, bt.log_mu,
                         _log_b(params, obs), new_delta, psi)
    state.delta = new_delta
    state.psi.append(psi)
    state.t += 1
    return state


def _log_transition_t(params):
    cached = params.__dict__.get("_log_transition_t")
    if cached is None:
        with np.errstate(divide="ignore"):
            cached = np.ascontiguousarray(np.log(params.transition).T)
        params.__dict__["_log_transition_t"] = cached
    return cached


def step_full(state, params, obs):
    n = params.n_states
    new_delta = np.empty(n)
    psi = np.empty(n, dtype=np.int32)
    _kernels.dense_step(state.delta, _log_transition_t(params), _log_b(params, obs),
                        new_delta, psi)
    state.delta = new_delta
    state.psi.append(psi)
    state.t += 1
    return state


def current_best(state):
    return state.q_current


def backtrace(state):
    """Best path ending at ``current_best``.

    Only the last ``horizon`` back-pointers are kept, so for long runs the
    path starts at time index ``start`` rather than zero.
    """
    q = state.q_current
    path = [q]
    for psi in reversed(state.psi):
        q = int(psi[q])
        path.append(q)
    path.reverse()
    return DecodePath(path, float(state.delta[state.q_current]), state.t - len(path))


def viterbi(params, observations, bt=None):
    """Decode a whole sequence offline; ``bt`` selects the banded step."""
    it = iter(observations)
    state = init(params, next(it), horizon=None)
    for obs in it:
        if bt is None:
            step_full(state, params, obs)
        else:
            step_fast(state, bt, params, obs)
    return backtrace(state)


class Follower:
    """Online score position tracker for one performance.

    Feeds observations through :func:`init` / :func:`step_fast` and reports
    the current best state after each one.
    """

    def __init__(self, params, bt=None, horizon=DEFAULT_HORIZON, dense=False):
        self.params = params
        self.bt = bt if bt is not None or dense else decoder_band(params)
        self.horizon = horizon
        self.dense = dense
        self.state = None

    def feed(self, obs):
        if self.state is None:
            self.state = init(self.params, obs, self.horizon)
        elif self.dense:
            step_full(self.state, self.params, obs)
        else:
            step_fast(self.state, self.bt, self.params, obs)
        return self.state.q_current

    def peek(self, obs):
        """Score ``obs`` without advancing: ``(best_state, log_gain)``."""
        if self.state is None:
            trial = init(self.params, obs, 1)
            return trial.q_current, float(trial.delta.max())
        before = float(self.state.delta.max())
        trial = DecoderState(self.state.delta, self.state.t, 1)
        if self.dense:
            step_full(trial, self.params, obs)
        else:
            step_fast(trial, self.bt, self.params, obs)
        return trial.q_current, float(trial.delta.max()) - before

    @property
    def t(self):
        return 0 if self.state is None else self.state.t


__all__ = [
    "BandedTransition", "DecoderState", "DecodePath", "Follower", "HmmParams",
    "band_from_dense", "backtrace", "current_best", "decoder_band", "fit_window", "init",
    "step_fast", "step_full", "viterbi",
]
