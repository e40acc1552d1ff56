"""Markov kernels on trajectory space built from conditional sequential Monte
Carlo: particle Gibbs (PG), particle Gibbs with ancestor sampling (PGAS),
PGAS with particle rejuvenation, a particle independent Metropolis-Hastings
(PIMH) baseline, and a two-stage Gibbs driver for joint state/parameter
inference.

Conventions: the reference trajectory is a plain array of shape
``(horizon, state_dim)`` and always occupies the last particle slot
(index N-1); the index bookkeeping for the reference is never materialised.
One sweep is a pure map from (reference, rng) to a new trajectory plus
per-step logs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    AllWeightsDegenerate,
    ParticleSystem,
    TargetSequence,
    WeightBoundMonitor,
    _logsumexp,
    categorical_draw,
    normalize_log_weights,
    smc_init,
    smc_step,
    trace_ancestry,
    weight_function,
)


@dataclass
class SweepResult:
    """Output of one conditional sweep.

    ``ancestor_changed[t-1]`` records whether the reference slot's sampled
    ancestor at time t differed from the reference slot itself (the traced
    ancestry moved off the old reference).  ``rejuvenation_accepted[t]``
    records kernel-level acceptances where a rejuvenation kernel ran (entry 0
    is the initial-window move); the two can differ, so both are logged.
    """

    trajectory: np.ndarray
    index_path: np.ndarray
    ancestor_changed: np.ndarray
    rejuvenation_accepted: np.ndarray
    system: ParticleSystem | None = None


def ancestor_sampling_logweights(
    system: ParticleSystem, t: int, future_reference: np.ndarray, target: TargetSequence
) -> np.ndarray:
    """Unnormalised log-probabilities for re-drawing the reference ancestor at
    time t: log w_{t-1}^i plus the likelihood of the future reference path
    under history i.

    For a Markov target with a tractable transition this collapses to
    log w_{t-1}^i + log f(x'_t | x_{t-1}^i); otherwise the full target ratio
    gamma_T(X_{t-1}^i + future) / gamma_{t-1}(X_{t-1}^i) is evaluated, which
    surfaces IntractableTransition for simulator-only models.
    """
    lw = system.log_weights[t - 1]
    future = np.atleast_2d(np.asarray(future_reference, dtype=float))
    if getattr(target, "has_transition_density", False) and callable(
        getattr(target, "transition_logweights", None)
    ):
        return lw + target.transition_logweights(future[0], system.states[t - 1])
    out = np.full(lw.shape, -np.inf)
    horizon = target.horizon
    for i in range(system.num_particles):
        if lw[i] == -np.inf:
            continue
        hist, _ = trace_ancestry(system, i, upto=t - 1)
        path = np.concatenate([hist, future], axis=0)
        ratio = target.log_gamma(horizon - 1, path) - target.log_gamma(t - 1, hist)
        out[i] = lw[i] + ratio
    return out


def _draw_ancestor(logweights: np.ndarray, rng: np.random.Generator) -> int:
    """Categorical draw over ancestor log-weights.

    Point-mass distributions (a single finite entry) return that index without
    consuming randomness, so a truly degenerate model leaves the draw stream
    identical to plain PG.
    """
    finite = logweights > -np.inf
    n_finite = int(np.count_nonzero(finite))
    if n_finite == 0:
        raise AllWeightsDegenerate("ancestor sampling weights are all -inf")
    if n_finite == 1:
        return int(np.argmax(finite))
    return categorical_draw(normalize_log_weights(logweights), rng)


def _reference_increment(system, t, target, ancestor, state) -> float:
    """Incremental weight of the pinned reference slot at time t."""
    if callable(getattr(target, "log_weight_increment", None)):
        if t == 0:
            return float(target.log_weight_increment(0, None, state[None])[0])
        prev = system.states[t - 1, ancestor][None]
        return float(target.log_weight_increment(t, prev, state[None])[0])
    if t == 0:
        return weight_function(target, 0, np.empty((0, system.state_dim)), state)
    prefix, _ = trace_ancestry(system, ancestor, upto=t - 1)
    return weight_function(target, t, prefix, state)


def _conditional_sweep(
    reference: np.ndarray,
    target: TargetSequence,
    num_particles: int,
    rng: np.random.Generator,
    ancestor_hook: Callable,
    initial_hook: Callable | None = None,
    monitor: WeightBoundMonitor | None = None,
    return_system: bool = False,
) -> SweepResult:
    """Shared engine for the conditional sweeps.

    ``ancestor_hook(system, t, ref, rng) -> (ancestor, changed, accepted)``
    supplies the reference slot's ancestor at each t >= 1 and may rewrite
    ``ref[t:]`` in place (rejuvenation) before the state is pinned.
    ``initial_hook(ref, rng) -> accepted`` may rewrite the reference before
    the first column is drawn.
    """
    if num_particles < 2:
        raise ValueError("conditional sweeps need at least two particles")
    ref = np.array(reference, dtype=float, copy=True)
    if ref.ndim == 1:
        ref = ref[:, None]
    horizon = target.horizon
    if ref.shape != (horizon, target.state_dim):
        raise ValueError(f"reference has shape {ref.shape}, expected {(horizon, target.state_dim)}")

    accepted = np.zeros(horizon, dtype=bool)
    changed = np.zeros(max(horizon - 1, 0), dtype=bool)
    if initial_hook is not None:
        accepted[0] = initial_hook(ref, rng)

    last = num_particles - 1
    system = ParticleSystem.allocate(horizon, num_particles, target.state_dim)
    smc_init(system, target, rng, skip=last)
    system.states[0, last] = ref[0]
    system.log_weights[0, last] = _reference_increment(system, 0, target, last, ref[0])
    if monitor is not None:
        monitor.observe(system.log_weights[0])

    for t in range(1, horizon):
        smc_step(system, t, target, rng, skip=last)
        ancestor, chg, acc = ancestor_hook(system, t, ref, rng)
        system.ancestors[t - 1, last] = ancestor
        system.states[t, last] = ref[t]
        system.log_weights[t, last] = _reference_increment(system, t, target, ancestor, ref[t])
        changed[t - 1] = chg
        accepted[t] = acc
        if monitor is not None:
            monitor.observe(system.log_weights[t])

    k = categorical_draw(normalize_log_weights(system.log_weights[horizon - 1]), rng)
    trajectory, index_path = trace_ancestry(system, k)
    return SweepResult(
        trajectory=trajectory,
        index_path=index_path,
        ancestor_changed=changed,
        rejuvenation_accepted=accepted,
        system=system if return_system else None,
    )


def pg_sweep(
    reference,
    target: TargetSequence,
    num_particles: int,
    rng: np.random.Generator,
    monitor: WeightBoundMonitor | None = None,
    return_system: bool = False,
) -> SweepResult:
    """Plain particle Gibbs: the reference keeps its own ancestry."""
    last = num_particles - 1

    def hook(system, t, ref, rng):
        return last, False, False

    return _conditional_sweep(
        reference, target, num_particles, rng, hook, monitor=monitor, return_system=return_system
    )


def pgas_sweep(
    reference,
    target: TargetSequence,
    num_particles: int,
    rng: np.random.Generator,
    monitor: WeightBoundMonitor | None = None,
    return_system: bool = False,
) -> SweepResult:
    """Particle Gibbs with ancestor sampling: the reference slot's ancestor is
    redrawn at every step from the ancestor-sampling law."""
    last = num_particles - 1

    def hook(system, t, ref, rng):
        lws = ancestor_sampling_logweights(system, t, ref[t:], target)
        ancestor = _draw_ancestor(lws, rng)
        return ancestor, ancestor != last, False

    return _conditional_sweep(
        reference, target, num_particles, rng, hook, monitor=monitor, return_system=return_system
    )


def pgas_rejuvenated_sweep(
    reference,
    target: TargetSequence,
    num_particles: int,
    plan,
    kernel,
    rng: np.random.Generator,
    monitor: WeightBoundMonitor | None = None,
    return_system: bool = False,
) -> SweepResult:
    """PGAS with particle rejuvenation: at each step the reference ancestor is
    redrawn *jointly* with a window of upcoming reference states, which are
    spliced back into the working reference before the current state is
    pinned.  At time zero only the window moves (there is no ancestor yet).

    With the identity kernel this reduces exactly (draw for draw) to plain PG.
    Successive windows overlap; each step overwrites the previous splice of
    the shared working reference, which is the literal reading of the sweep
    and is flagged for scrutiny.
    """
    from .rejuvenation import RejuvenationContext

    last = num_particles - 1

    def initial_hook(ref, rng):
        times = plan.window(0, target.horizon)
        ctx = RejuvenationContext(
            t=0,
            window_times=times,
            reference=ref,
            target=target,
            system=None,
            num_particles=num_particles,
        )
        _, window, acc = kernel.step(ctx, None, ref[times], rng)
        ref[times] = window
        return acc

    def hook(system, t, ref, rng):
        times = plan.window(t, target.horizon)
        ctx = RejuvenationContext(
            t=t,
            window_times=times,
            reference=ref,
            target=target,
            system=system,
            num_particles=num_particles,
        )
        ancestor, window, acc = kernel.step(ctx, last, ref[times], rng)
        ref[times] = window
        return ancestor, ancestor != last, acc

    return _conditional_sweep(
        reference,
        target,
        num_particles,
        rng,
        hook,
        initial_hook=initial_hook,
        monitor=monitor,
        return_system=return_system,
    )


# ---------------------------------------------------------------------------
# Particle independent Metropolis-Hastings
# ---------------------------------------------------------------------------


@dataclass
class PimhState:
    trajectory: np.ndarray
    log_likelihood: float


def _unconditional_smc(target: TargetSequence, num_particles: int, rng, monitor=None):
    system = ParticleSystem.allocate(target.horizon, num_particles, target.state_dim)
    smc_init(system, target, rng)
    log_n = np.log(num_particles)
    loglik = _logsumexp(system.log_weights[0]) - log_n
    if monitor is not None:
        monitor.observe(system.log_weights[0])
    for t in range(1, target.horizon):
        smc_step(system, t, target, rng)
        loglik += _logsumexp(system.log_weights[t]) - log_n
        if monitor is not None:
            monitor.observe(system.log_weights[t])
    return system, loglik


def pimh_sweep(
    state: PimhState | None,
    target: TargetSequence,
    num_particles: int,
    rng: np.random.Generator,
    monitor: WeightBoundMonitor | None = None,
) -> tuple[PimhState, bool]:
    """One particle independent MH step: run an unconditional sweep, propose
    the drawn trajectory with its likelihood estimate, and accept with
    probability min(1, exp(new - old)).

    A degenerate sweep (all weights dead) auto-rejects instead of aborting;
    on the very first call the proposal is accepted unconditionally.
    """
    if num_particles < 1:
        raise ValueError("need at least one particle")
    try:
        system, loglik = _unconditional_smc(target, num_particles, rng, monitor)
        k = categorical_draw(normalize_log_weights(system.log_weights[-1]), rng)
        trajectory, _ = trace_ancestry(system, k)
        candidate = PimhState(trajectory=trajectory, log_likelihood=loglik)
    except AllWeightsDegenerate:
        if state is None:
            raise
        return state, False
    if state is None:
        return candidate, True
    log_alpha = candidate.log_likelihood - state.log_likelihood
    if np.log(rng.random()) < log_alpha:
        return candidate, True
    return state, False


# ---------------------------------------------------------------------------
# Chain drivers
# ---------------------------------------------------------------------------


@dataclass
class ChainRecord:
    """Raw record of an MCMC run over trajectories.  Burn-in and thinning are
    left to the caller."""

    trajectories: np.ndarray | None
    ancestor_changed: np.ndarray
    rejuvenation_accepted: np.ndarray
    final_reference: np.ndarray


def run_chain(
    sweep: Callable[[np.ndarray, np.random.Generator], SweepResult],
    initial_reference: np.ndarray,
    iterations: int,
    rng: np.random.Generator,
    store_trajectories: bool = True,
) -> ChainRecord:
    """Iterate a sweep kernel from an initial reference trajectory."""
    ref = np.array(initial_reference, dtype=float, copy=True)
    if ref.ndim == 1:
        ref = ref[:, None]
    horizon, dim = ref.shape
    trajs = np.empty((iterations, horizon, dim)) if store_trajectories else None
    changed = np.zeros((iterations, max(horizon - 1, 0)), dtype=bool)
    accepted = np.zeros((iterations, horizon), dtype=bool)
    for i in range(iterations):
        res = sweep(ref, rng)
        ref = res.trajectory
        if store_trajectories:
            trajs[i] = ref
        changed[i] = res.ancestor_changed
        accepted[i] = res.rejuvenation_accepted
    return ChainRecord(
        trajectories=trajs,
        ancestor_changed=changed,
        rejuvenation_accepted=accepted,
        final_reference=ref,
    )


@dataclass
class GibbsRecord:
    thetas: np.ndarray
    trajectories: np.ndarray | None
    ancestor_changed: np.ndarray
    rejuvenation_accepted: np.ndarray


def gibbs_loop(
    theta_sampler: Callable,
    state_sweep: Callable,
    iterations: int,
    rng: np.random.Generator,
    initial_theta,
    initial_reference: np.ndarray,
    store_trajectories: bool = True,
) -> GibbsRecord:
    """Two-stage Gibbs: alternate ``theta ~ theta_sampler(theta, states, rng)``
    with ``states ~ state_sweep(theta, reference, rng)`` (any sweep above,
    returning a :class:`SweepResult`)."""
    ref = np.array(initial_reference, dtype=float, copy=True)
    if ref.ndim == 1:
        ref = ref[:, None]
    horizon, dim = ref.shape
    theta = initial_theta
    thetas = []
    trajs = np.empty((iterations, horizon, dim)) if store_trajectories else None
    changed = np.zeros((iterations, max(horizon - 1, 0)), dtype=bool)
    accepted = np.zeros((iterations, horizon), dtype=bool)
    for i in range(iterations):
        theta = theta_sampler(theta, ref, rng)
        res = state_sweep(theta, ref, rng)
        ref = res.trajectory
        thetas.append(theta)
        if store_trajectories:
            trajs[i] = ref
        changed[i] = res.ancestor_changed
        accepted[i] = res.rejuvenation_accepted
    return GibbsRecord(
        thetas=np.asarray(thetas),
        trajectories=trajs,
        ancestor_changed=changed,
        rejuvenation_accepted=accepted,
    )


# ---------------------------------------------------------------------------
# Extended target over all sweep variables (enumeration oracle support)
# ---------------------------------------------------------------------------


def extended_target_logpdf(
    states: np.ndarray, ancestors: np.ndarray, k: int, target: TargetSequence
) -> float:
    """Unnormalised log-density of a complete particle-system configuration
    under the auxiliary-variable target whose X_T^k marginal is the smoothing
    law.  Intended for exhaustive enumeration on tiny discrete systems; the
    caller normalises over the enumeration.
    """
    horizon, num, _ = states.shape
    system = ParticleSystem(
        states=states.astype(float),
        log_weights=np.zeros((horizon, num)),
        ancestors=np.asarray(ancestors, dtype=np.int64),
    )
    # reference slot indices traced back from k
    _, b = trace_ancestry(system, k)

    # incremental weights of every particle (needed in normalised form below)
    logw = np.empty((horizon, num))
    empty = np.empty((0, states.shape[2]))
    for i in range(num):
        logw[0, i] = weight_function(target, 0, empty, states[0, i])
    for t in range(1, horizon):
        for i in range(num):
            prefix, _ = trace_ancestry(system, i, upto=t - 1)
            logw[t, i] = weight_function(target, t, prefix[:t], states[t, i])

    ref_path, _ = trace_ancestry(system, k)
    lp = target.log_gamma(horizon - 1, ref_path) - horizon * np.log(num)
    for i in range(num):
        if i != b[0]:
            lp += target.proposal_logpdf(0, empty, states[0, i])
    for t in range(1, horizon):
        norm = _logsumexp(logw[t - 1])
        for i in range(num):
            if i == b[t]:
                continue
            a = int(ancestors[t - 1, i])
            prefix, _ = trace_ancestry(system, a, upto=t - 1)
            lp += logw[t - 1, a] - norm
            lp += target.proposal_logpdf(t, prefix, states[t, i])
    return float(lp)
