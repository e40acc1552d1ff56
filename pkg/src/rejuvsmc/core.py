"""Sequential Monte Carlo substrate: particle storage, genealogy, categorical
resampling, propagation and weighting over an abstract unnormalised target
sequence.

Conventions
-----------
* Importance weights live in natural-log scale as plain floats / float arrays.
  ``-inf`` marks a particle with zero target mass and is legal everywhere;
  ``+inf`` and ``nan`` are bugs and are rejected at the boundaries where they
  could enter.  Linear-scale weights are materialised only inside
  :func:`normalize_log_weights`.
* Arrays are time-major: ``states[t, i]`` is particle ``i`` at time ``t``.
* Randomness comes from ``numpy.random.Generator``.  :func:`make_rng` builds
  one from a 64-bit seed; :func:`split_rng` derives independent child streams
  for concurrent chains.
"""

from __future__ import annotations

import abc
import warnings
from dataclasses import dataclass, field

import numpy as np


class AllWeightsDegenerate(Exception):
    """Every log-weight in a column is -inf; the particle system has died."""


class IntractableTransition(Exception):
    """The model's transition density is not available in closed form."""


class WeightBoundWarning(UserWarning):
    """The running maximum of the weight function exceeded its configured bound."""


def make_rng(seed: int) -> np.random.Generator:
    """Return a deterministic random source for the given 64-bit seed."""
    return np.random.default_rng(seed)


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split off ``n`` independent child streams (for concurrent chains)."""
    return list(rng.spawn(n))


def _logsumexp(log_values: np.ndarray) -> float:
    m = np.max(log_values)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.sum(np.exp(log_values - m))))


def normalize_log_weights(log_weights) -> np.ndarray:
    """Normalise log-weights into a probability vector.

    Uses max-subtraction (log-sum-exp) so the result is invariant under a
    common additive shift of the inputs.

    Raises
    ------
    AllWeightsDegenerate
        If every entry is -inf.
    ValueError
        On nan or +inf entries, or an empty input.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise ValueError("empty weight vector")
    if np.isnan(lw).any() or np.any(lw == np.inf):
        raise ValueError("log-weights must be finite or -inf")
    m = lw.max()
    if m == -np.inf:
        raise AllWeightsDegenerate("all log-weights are -inf")
    p = np.exp(lw - m)
    p /= p.sum()
    return p


def categorical_draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index from a probability vector.

    Inverse-CDF with a single uniform; ties broken toward the lowest index,
    and zero-probability entries are never selected.
    """
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(idx, len(probs) - 1)


def categorical_draws(probs: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent categorical draws (one uniform per draw)."""
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, len(probs) - 1)


def effective_sample_size(log_weights) -> float:
    """Kish effective sample size 1 / sum(p_i^2) of the normalised weights."""
    p = normalize_log_weights(log_weights)
    return float(1.0 / np.sum(p * p))


class TargetSequence(abc.ABC):
    """A sequence of unnormalised densities gamma_t on growing state prefixes,
    together with a proposal kernel.

    Time indices are 0-based: ``log_gamma(t, path)`` evaluates the target for
    the prefix ``path`` of shape ``(t + 1, state_dim)``, and must depend only
    on those states.  ``horizon`` is the final time T (number of steps), and
    ``state_dim`` the dimension of one state.

    Subclasses may additionally provide vectorised fast paths which
    :func:`smc_step` prefers when present:

    * ``propose_batch(t, prev_states, rng) -> (m, state_dim)`` where
      ``prev_states`` is ``(m, state_dim)`` (or ``None`` at ``t == 0``; the
      batch size is then passed as ``count``),
    * ``log_weight_increment(t, prev_states, new_states) -> (m,)``.

    These are only valid when the target factorises over one-step transitions
    (Markov); the generic route below works for any target.
    """

    horizon: int
    state_dim: int

    @abc.abstractmethod
    def log_gamma(self, t: int, path: np.ndarray) -> float:
        """Unnormalised log-density of the length-(t+1) prefix ``path``."""

    @abc.abstractmethod
    def proposal_sample(self, t: int, prefix: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw x_t from the proposal given the prefix (empty at t == 0)."""

    @abc.abstractmethod
    def proposal_logpdf(self, t: int, prefix: np.ndarray, state: np.ndarray) -> float:
        """Log-density of ``state`` under the proposal given the prefix."""


def weight_function(target: TargetSequence, t: int, prefix: np.ndarray, new_state) -> float:
    """Incremental importance weight
    log gamma_t(prefix + x) - log gamma_{t-1}(prefix) - log r_t(x | prefix).

    At ``t == 0`` the denominator target is the empty product (log 0-term = 0).
    Returns -inf when the extended path has zero target mass; raises on nan
    inputs or a +inf result (proposal density zero where the target is not).
    """
    new_state = np.atleast_1d(np.asarray(new_state, dtype=float))
    if np.isnan(new_state).any():
        raise ValueError("nan state passed to weight_function")
    if t == 0:
        prefix = np.empty((0, new_state.shape[0]))
        path = new_state[None, :]
        log_prev = 0.0
    else:
        prefix = np.asarray(prefix, dtype=float)
        path = np.concatenate([prefix, new_state[None, :]], axis=0)
        log_prev = target.log_gamma(t - 1, prefix)
    log_curr = target.log_gamma(t, path)
    if np.isnan(log_curr) or np.isnan(log_prev):
        raise ValueError("target evaluation produced nan")
    if log_curr == -np.inf:
        return -np.inf
    log_prop = target.proposal_logpdf(t, prefix, new_state)
    w = log_curr - log_prev - log_prop
    if np.isnan(w) or w == np.inf:
        raise ValueError(f"invalid weight {w} at t={t}")
    return float(w)


@dataclass
class ParticleSystem:
    """Complete particle system with genealogy.

    ``states[t, i]`` is x_t^i, ``log_weights[t, i]`` its importance weight,
    and ``ancestors[t - 1, i]`` the index of its parent at time t-1 (so the
    ancestor array has T-1 rows).  Column t is produced from column t-1
    through the recorded ancestors; storage is full (no pruning) because the
    conditional samplers need complete genealogies.
    """

    states: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray

    @classmethod
    def allocate(cls, horizon: int, num_particles: int, state_dim: int) -> "ParticleSystem":
        return cls(
            states=np.full((horizon, num_particles, state_dim), np.nan),
            log_weights=np.full((horizon, num_particles), np.nan),
            ancestors=np.full((max(horizon - 1, 0), num_particles), -1, dtype=np.int64),
        )

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def num_particles(self) -> int:
        return self.states.shape[1]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    def validate(self, upto: int | None = None) -> None:
        """Assert the column invariants (tests and debugging only)."""
        last = self.horizon - 1 if upto is None else upto
        for t in range(last + 1):
            lw = self.log_weights[t]
            if np.isnan(lw).any() or np.any(lw == np.inf):
                raise AssertionError(f"bad log-weights in column {t}")
            if not np.any(lw > -np.inf):
                raise AssertionError(f"no live particle in column {t}")
            if t >= 1:
                a = self.ancestors[t - 1]
                if np.any(a < 0) or np.any(a >= self.num_particles):
                    raise AssertionError(f"ancestor index out of range at t={t}")


def trace_ancestry(
    system: ParticleSystem, k: int, upto: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Trace the ancestral path of particle ``k`` backwards from time ``upto``.

    Returns ``(trajectory, index_path)`` where ``index_path[t]`` is the slot
    b_t occupied by the path at time t (``b_upto = k``, ``b_t`` the recorded
    ancestor of ``b_{t+1}``) and ``trajectory[t] = states[t, b_t]``.
    """
    last = system.horizon - 1 if upto is None else upto
    if not 0 <= k < system.num_particles:
        raise IndexError(f"particle index {k} out of range")
    idx = np.empty(last + 1, dtype=np.int64)
    idx[last] = k
    anc = system.ancestors
    for t in range(last - 1, -1, -1):
        idx[t] = anc[t, idx[t + 1]]
    return system.states[np.arange(last + 1), idx], idx


def _has_fast_path(target) -> bool:
    return callable(getattr(target, "propose_batch", None)) and callable(
        getattr(target, "log_weight_increment", None)
    )


def smc_init(
    system: ParticleSystem,
    target: TargetSequence,
    rng: np.random.Generator,
    skip: int | None = None,
) -> ParticleSystem:
    """Populate column 0: draw x_0^i from the proposal and weight it, for every
    slot except ``skip`` (the conditioned slot, set by the caller)."""
    n = system.num_particles
    rows = np.arange(n)
    if skip is not None:
        rows = rows[rows != skip]
    if _has_fast_path(target):
        new = target.propose_batch(0, None, rng, count=rows.size)
        incr = target.log_weight_increment(0, None, new)
    else:
        empty = np.empty((0, system.state_dim))
        new = np.empty((rows.size, system.state_dim))
        incr = np.empty(rows.size)
        for j in range(rows.size):
            x = target.proposal_sample(0, empty, rng)
            new[j] = x
            incr[j] = weight_function(target, 0, empty, x)
    if np.isnan(incr).any():
        raise ValueError("nan weight at t=0")
    system.states[0, rows] = new
    system.log_weights[0, rows] = incr
    return system


def smc_step(
    system: ParticleSystem,
    t: int,
    target: TargetSequence,
    rng: np.random.Generator,
    skip: int | None = None,
) -> ParticleSystem:
    """Advance the system to column ``t``: for every slot except ``skip``,
    draw an ancestor proportional to the time t-1 weights, propagate through
    the proposal and compute the incremental weight.

    The ``skip`` slot (the conditioned reference) is left untouched; the
    caller pins its state and ancestor and weights it afterwards.
    """
    if t < 1:
        raise ValueError("smc_step starts at t = 1; use smc_init for column 0")
    probs = normalize_log_weights(system.log_weights[t - 1])
    n = system.num_particles
    rows = np.arange(n)
    if skip is not None:
        rows = rows[rows != skip]
    ancestors = categorical_draws(probs, rows.size, rng)
    prev = system.states[t - 1, ancestors]
    if _has_fast_path(target):
        new = target.propose_batch(t, prev, rng)
        incr = target.log_weight_increment(t, prev, new)
    else:
        new = np.empty((rows.size, system.state_dim))
        incr = np.empty(rows.size)
        for j, a in enumerate(ancestors):
            prefix, _ = trace_ancestry(system, int(a), upto=t - 1)
            x = target.proposal_sample(t, prefix, rng)
            new[j] = x
            incr[j] = weight_function(target, t, prefix, x)
    if np.isnan(incr).any():
        raise ValueError(f"nan weight at t={t}")
    system.ancestors[t - 1, rows] = ancestors
    system.states[t, rows] = new
    system.log_weights[t, rows] = incr
    return system


@dataclass
class WeightBoundMonitor:
    """Running maximum of the weight function over a run.

    The uniform-ergodicity guarantee for the conditional samplers assumes the
    weight function is bounded; ``bound`` (linear scale) triggers a
    :class:`WeightBoundWarning` the first time the running maximum exceeds it.
    """

    bound: float | None = None
    max_log_weight: float = -np.inf
    _warned: bool = field(default=False, repr=False)

    def observe(self, log_weights) -> None:
        lw = np.asarray(log_weights, dtype=float)
        finite = lw[np.isfinite(lw)]
        if finite.size:
            m = float(finite.max())
            if m > self.max_log_weight:
                self.max_log_weight = m
            if self.bound is not None and not self._warned and m > np.log(self.bound):
                self._warned = True
                warnings.warn(
                    f"weight function exceeded configured bound {self.bound:g} "
                    f"(max weight so far: exp({self.max_log_weight:.3g}))",
                    WeightBoundWarning,
                    stacklevel=2,
                )

    @property
    def max_weight(self) -> float:
        return float(np.exp(self.max_log_weight))
