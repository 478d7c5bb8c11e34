"""Score HMM: normal/ghost state layout, scaled forward-backward and
Baum-Welch re-estimation.

States are interleaved per score unit ``u``: the normal state is ``2u`` and
the ghost state ``2u + 1``. Every edge compiled from a score therefore lies
within offsets ``[0, +4]`` of its source, which is what lets the decoder use
a narrow band.

Observations are non-empty sets of pitch classes. A chord is scored with the
geometric mean of its per-pitch-class emission probabilities, which reduces
to the ordinary discrete emission for single notes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import EmptyScore, NumericalUnderflow
from .score import N_PITCH_CLASSES

_log = logging.getLogger(__name__)

ROW_TOL = 1e-9


def as_observation(item):
    """Coerce an int or an iterable of ints to a frozenset observation."""
    if isinstance(item, (int, np.integer)) and not isinstance(item, bool):
        obs = frozenset((int(item),))
    else:
        obs = frozenset(int(k) for k in item)
    if not obs:
        raise ValueError("observation must contain at least one pitch class")
    if min(obs) < 0 or max(obs) >= N_PITCH_CLASSES:
        raise ValueError(f"pitch classes must lie in [0, 11], got {sorted(obs)}")
    return obs


def as_observations(seq):
    obs = [as_observation(o) for o in seq]
    if not obs:
        raise ValueError("observation sequence must have length >= 1")
    return obs


@dataclass(frozen=True, eq=False)
class HmmParams:
    prior: np.ndarray
    transition: np.ndarray
    emission: np.ndarray

    def __post_init__(self):
        prior = np.array(self.prior, dtype=float)
        transition = np.array(self.transition, dtype=float)
        emission = np.array(self.emission, dtype=float)
        for arr in (prior, transition, emission):
            arr.setflags(write=False)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "emission", emission)
        self.validate()

    def validate(self):
        n = self.prior.shape[0] if self.prior.ndim == 1 else -1
        if n < 1:
            raise ValueError("prior must be a non-empty vector")
        if self.transition.shape != (n, n):
            raise ValueError(f"transition must be {n}x{n}, got {self.transition.shape}")
        if self.emission.shape != (n, N_PITCH_CLASSES):
            raise ValueError(f"emission must be {n}x12, got {self.emission.shape}")
        for name, arr in (("prior", self.prior), ("transition", self.transition),
                          ("emission", self.emission)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} entries must be finite and non-negative")
        if abs(self.prior.sum() - 1.0) > ROW_TOL:
            raise ValueError("prior must sum to 1")
        if np.any(np.abs(self.transition.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("transition rows must sum to 1")
        if np.any(np.abs(self.emission.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("emission rows must sum to 1")

    @property
    def n_states(self):
        return self.prior.shape[0]

    @property
    def n_symbols(self):
        return N_PITCH_CLASSES

    @cached_property
    def log_prior(self):
        with np.errstate(divide="ignore"):
            return np.log(self.prior)

    @cached_property
    def log_emission_by_symbol(self):
        """``(12, N)`` log emissions, one contiguous row per pitch class."""
        with np.errstate(divide="ignore"):
            return np.ascontiguousarray(np.log(self.emission).T)

    def replace(self, **changes):
        fields = {"prior": self.prior, "transition": self.transition, "emission": self.emission}
        fields.update(changes)
        return HmmParams(**fields)


def emission_vector(params, observed):
    """Emission probability of ``observed`` for every state, shape ``(N,)``."""
    ks = sorted(as_observation(observed))
    if len(ks) == 1:
        return params.emission[:, ks[0]].copy()
    return np.prod(params.emission[:, ks], axis=1) ** (1.0 / len(ks))


def log_emission_vector(params, observed):
    ks = sorted(as_observation(observed))
    table = params.log_emission_by_symbol
    if len(ks) == 1:
        return table[ks[0]]
    return table[ks].mean(axis=0)


def emission_prob(params, state, observed):
    """Geometric mean of ``b_state(k)`` over the observed pitch classes."""
    ks = sorted(as_observation(observed))
    row = params.emission[state]
    if len(ks) == 1:
        return float(row[ks[0]])
    return float(np.prod(row[ks]) ** (1.0 / len(ks)))


@dataclass(frozen=True)
class StateLayout:
    """Maps HMM states to score units; ``is_ghost[s]`` and ``unit_of[s]``."""

    n_units: int

    @property
    def n_states(self):
        return 2 * self.n_units

    @cached_property
    def unit_of(self):
        return np.repeat(np.arange(self.n_units), 2)

    @cached_property
    def is_ghost(self):
        return np.tile(np.array([False, True]), self.n_units)

    @property
    def kinds(self):
        return [("ghost" if g else "normal", int(u)) for u, g in zip(self.unit_of, self.is_ghost)]

    @staticmethod
    def normal(unit):
        return 2 * unit

    @staticmethod
    def ghost(unit):
        return 2 * unit + 1

    def pairing(self, unit):
        return (2 * unit, 2 * unit + 1)


@dataclass(frozen=True)
class CompileOptions:
    p_correct: float = 0.9
    p_start: float = 0.8
    normal_next: float = 0.85
    normal_ghost: float = 0.05
    normal_skip: float = 0.05
    normal_self: float = 0.05
    ghost_next_normal: float = 0.6
    ghost_next_ghost: float = 0.4


def compile_score(q, opts=None):
    """Build ``(HmmParams, StateLayout)`` for a quantized score.

    Edges per unit ``u``: normal -> self, own ghost, next normal, next-next
    normal; ghost -> next normal, next ghost. Edges that would leave the score
    are dropped and the row renormalised; a state with no edge left loops on
    itself.
    """
    opts = opts or CompileOptions()
    units = q.units if hasattr(q, "units") else tuple(q)
    n_units = len(units)
    if n_units == 0:
        raise EmptyScore("cannot compile an empty score")
    layout = StateLayout(n_units)
    n = layout.n_states

    transition = np.zeros((n, n))
    for u in range(n_units):
        normal, ghost = layout.pairing(u)
        edges = {
            normal: {normal: opts.normal_self, ghost: opts.normal_ghost,
                     normal + 2: opts.normal_next, normal + 4: opts.normal_skip},
            ghost: {ghost + 1: opts.ghost_next_normal, ghost + 2: opts.ghost_next_ghost},
        }
        for src, targets in edges.items():
            for dst, mass in targets.items():
                if dst < n and mass > 0:
                    transition[src, dst] += mass
            total = transition[src].sum()
            if total > 0:
                transition[src] /= total
            else:
                transition[src, src] = 1.0

    emission = np.full((n, N_PITCH_CLASSES), 1.0 / N_PITCH_CLASSES)
    for u, unit in enumerate(units):
        scored = sorted(unit.pitches)
        if not scored or len(scored) == N_PITCH_CLASSES:
            continue
        row = np.full(N_PITCH_CLASSES, (1.0 - opts.p_correct) / (N_PITCH_CLASSES - len(scored)))
        row[scored] = opts.p_correct / len(scored)
        emission[layout.normal(u)] = row

    prior = np.zeros(n)
    prior[0::2] = (1.0 - opts.p_start) / n_units
    prior[0] += opts.p_start
    return HmmParams(prior, transition, emission), layout


def _emission_table(params, obs):
    return np.stack([emission_vector(params, o) for o in obs])


def forward_scaled(params, obs, emissions=None):
    """Scaled forward pass.

    Returns ``(alpha, scales)`` where each row of ``alpha`` sums to one and
    ``scales[t]`` is the probability of observation ``t`` given the past, so
    ``sum(log(scales))`` is the sequence log-likelihood. Rows of ``alpha`` use
    the destination state's emission.
    """
    obs = as_observations(obs)
    E = _emission_table(params, obs) if emissions is None else emissions
    T, N = len(obs), params.n_states
    alpha = np.empty((T, N))
    scales = np.empty(T)
    A = params.transition
    a = params.prior * E[0]
    for t in range(T):
        if t:
            a = (alpha[t - 1] @ A) * E[t]
        c = a.sum()
        if not c > 0:
            raise NumericalUnderflow(t)
        alpha[t] = a / c
        scales[t] = c
    return alpha, scales


def forward(params, obs):
    """Return ``(alpha, log_likelihood)`` with per-step normalised alpha."""
    alpha, scales = forward_scaled(params, obs)
    return alpha, float(np.sum(np.log(scales)))


def backward(params, obs, scales=None, emissions=None):
    """Scaled backward pass, ``beta[T-1] = 1``.

    Scaled with the same per-step factors as :func:`forward_scaled`, so
    ``alpha[t] @ beta[t]`` is one for every ``t``.
    """
    obs = as_observations(obs)
    E = _emission_table(params, obs) if emissions is None else emissions
    if scales is None:
        _, scales = forward_scaled(params, obs, E)
    T, N = len(obs), params.n_states
    beta = np.empty((T, N))
    beta[T - 1] = 1.0
    A = params.transition
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (E[t + 1] * beta[t + 1])) / scales[t + 1]
    return beta


@dataclass
class Posteriors:
    """State and transition posteriors.

    ``xi`` is only materialised on request; ``xi_total`` (summed over time)
    and ``xi_row_sums`` (``sum_j xi[t, i, j]``) are always available.
    """

    gamma: np.ndarray
    xi_total: np.ndarray
    xi_row_sums: np.ndarray
    xi: np.ndarray | None = field(default=None, repr=False)


def posteriors(alpha, beta, params, obs, keep_xi=True, emissions=None):
    obs = as_observations(obs)
    T, N = len(obs), params.n_states
    if alpha.shape != (T, N) or beta.shape != (T, N):
        raise ValueError(
            f"alpha/beta shapes {alpha.shape}/{beta.shape} do not match T={T}, N={N}"
        )
    E = _emission_table(params, obs) if emissions is None else emissions
    A = params.transition
    gamma = alpha * beta
    xi = np.empty((T - 1, N, N)) if keep_xi else None
    xi_total = np.zeros((N, N))
    xi_row_sums = np.empty((T - 1, N))
    for t in range(T - 1):
        weighted = E[t + 1] * beta[t + 1]
        c = float((alpha[t] @ A) @ weighted)
        x = alpha[t][:, None] * A * weighted[None, :] / c
        xi_total += x
        xi_row_sums[t] = x.sum(axis=1)
        if keep_xi:
            xi[t] = x
    return Posteriors(gamma, xi_total, xi_row_sums, xi)


@dataclass(frozen=True)
class TrainOptions:
    max_iters: int = 200
    tol: float = 1e-6
    freeze_structure: bool = True
    keep_xi: bool = False


@dataclass
class TrainingCaches:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    scales: np.ndarray
    iteration: int
    xi: np.ndarray | None = None


def _reestimate(params, obs, post, freeze_mask):
    gamma = post.gamma
    prior = gamma[0].copy()

    numer = post.xi_total
    if freeze_mask is not None:
        numer = numer * freeze_mask
    denom = gamma[:-1].sum(axis=0)
    transition = np.array(params.transition)
    live = denom > 1e-300
    transition[live] = numer[live] / denom[live, None]

    indicator = np.zeros((len(obs), N_PITCH_CLASSES))
    for t, o in enumerate(obs):
        indicator[t, sorted(o)] = 1.0
    e_numer = gamma.T @ indicator
    # chords spread one unit of mass over their pitch classes
    e_denom = gamma.T @ indicator.sum(axis=1)
    emission = np.array(params.emission)
    live = e_denom > 1e-300
    emission[live] = e_numer[live] / e_denom[live, None]
    return HmmParams(prior, transition, emission)


def baum_welch(params, obs, opts=None, callback=None):
    """Fit ``params`` to one observation sequence by EM.

    Returns ``(params, history)`` where ``history[k]`` is the log-likelihood
    of the parameters entering iteration ``k``. Iteration stops when the
    change in log-likelihood drops below ``opts.tol`` or after
    ``opts.max_iters`` updates. Rows whose expected visit count is zero keep
    their previous values.
    """
    opts = opts or TrainOptions()
    if opts.max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    params.validate()
    obs = as_observations(obs)
    freeze_mask = (params.transition > 0).astype(float) if opts.freeze_structure else None
    history = []
    for iteration in range(1, opts.max_iters + 1):
        E = _emission_table(params, obs)
        alpha, scales = forward_scaled(params, obs, E)
        beta = backward(params, obs, scales, E)
        post = posteriors(alpha, beta, params, obs, keep_xi=opts.keep_xi, emissions=E)
        history.append(float(np.sum(np.log(scales))))
        if callback is not None:
            callback(TrainingCaches(alpha, beta, post.gamma, scales, iteration, post.xi))
        params = _reestimate(params, obs, post, freeze_mask)
        if len(history) > 1 and abs(history[-1] - history[-2]) < opts.tol:
            break
    _log.debug("baum_welch: %d iterations, final log-likelihood %.6f", len(history), history[-1])
    return params, history


def smooth_emissions(params, floor):
    """Mix each emission row with the uniform distribution so no pitch class
    has probability below ``floor``; keeps trained models usable on unseen
    wrong notes."""
    if floor <= 0:
        return params
    weight = min(1.0, floor * N_PITCH_CLASSES)
    emission = (1.0 - weight) * params.emission + weight / N_PITCH_CLASSES
    return params.replace(emission=emission)


def sample(params, length, rng):
    """Draw ``(states, symbols)`` of the given length from a monophonic HMM."""
    states = np.empty(length, dtype=int)
    symbols = np.empty(length, dtype=int)
    n = params.n_states
    s = rng.choice(n, p=params.prior)
    for t in range(length):
        if t:
            s = rng.choice(n, p=params.transition[s])
        states[t] = s
        symbols[t] = rng.choice(N_PITCH_CLASSES, p=params.emission[s])
    return states, symbols


def log_likelihood(params, obs):
    return forward(params, obs)[1]


__all__ = [
    "HmmParams", "StateLayout", "CompileOptions", "TrainOptions", "TrainingCaches", "Posteriors",
    "as_observation", "as_observations", "compile_score", "emission_prob", "emission_vector",
    "log_emission_vector", "forward", "forward_scaled", "backward", "posteriors", "baum_welch",
    "smooth_emissions", "sample", "log_likelihood",
]
