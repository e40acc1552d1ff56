"""Kernel-weighted ancestor sampling for simulator-only transitions.

When the transition density cannot be evaluated, the exact ancestor-sampling
law is unavailable.  Writing the transition as a deterministic map of driving
noise makes it degenerate in the joint (noise, state) space; replacing the
resulting point mass with a smoothing kernel K_eps of bandwidth ``epsilon``
yields an ancestor-sampling step that needs only forward simulation: simulate
one fresh candidate per slot, and score each by how close it lands to the
retained reference state.  The kernel approximation enters *only* this step -
forward propagation always uses the exact simulator.

``epsilon`` scales the squared distance (denominator 2 * epsilon), so it is
variance-like, not a standard deviation.  ``epsilon = 0`` is an explicit
exact mode: the reference keeps its own ancestry, recovering plain particle
Gibbs draw for draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ParticleSystem, WeightBoundMonitor, categorical_draw, categorical_draws, normalize_log_weights
from .sweeps import SweepResult, _conditional_sweep


@dataclass
class AbcKernel:
    """Gaussian comparison kernel exp(-|S(x) - S(x')|^2 / (2 epsilon)) with an
    optional summary statistic S (identity by default)."""

    epsilon: float
    summary: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("bandwidth must be nonnegative")

    def _stat(self, xs: np.ndarray) -> np.ndarray:
        return xs if self.summary is None else np.atleast_2d(self.summary(xs))

    def logeval_batch(self, xs, x_ref) -> np.ndarray:
        if self.epsilon == 0:
            raise ValueError("epsilon = 0 is the exact mode, handled by the ancestor step")
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ref = self._stat(np.atleast_2d(np.asarray(x_ref, dtype=float)))
        diff = self._stat(xs) - ref
        return -np.einsum("ij,ij->i", diff, diff) / (2.0 * self.epsilon)


def norm_scaling_summary(scales) -> Callable[[np.ndarray], np.ndarray]:
    """Componentwise rescaling summary for anisotropic states."""
    scales = np.asarray(scales, dtype=float)

    def summary(xs: np.ndarray) -> np.ndarray:
        return np.atleast_2d(xs) / scales

    return summary


def abc_kernel_logeval(kernel: AbcKernel, x, x_ref) -> float:
    """Log kernel value for one state pair; maximal (zero) at x == x_ref."""
    return float(kernel.logeval_batch(np.atleast_2d(x), x_ref)[0])


def abc_ancestor_step(
    system: ParticleSystem,
    t: int,
    x_ref_t,
    transition_sampler: Callable,
    kernel: AbcKernel,
    rng: np.random.Generator,
) -> tuple[int, bool]:
    """Simulation-based ancestor draw for the reference slot at time t.

    For each of the N-1 free slots: draw a candidate ancestor proportional to
    the filter weights, simulate the dynamics one step forward, and weight the
    outcome by its kernel distance to the reference state.  The reference
    slot scores the kernel at zero distance.  A slot is then drawn
    proportional to these scores; a free slot hands over its candidate
    ancestor, the last slot keeps the reference's own ancestry.  The reference
    state itself is never modified and no driving-noise bookkeeping is needed.
    """
    last = system.num_particles - 1
    if kernel.epsilon == 0:
        # exact delta limit: only the reference matches itself
        return last, False
    probs = normalize_log_weights(system.log_weights[t - 1])
    cand_anc = categorical_draws(probs, last, rng)
    sims = transition_sampler(system.states[t - 1, cand_anc], rng)
    log_scores = np.append(kernel.logeval_batch(sims, x_ref_t), 0.0)
    choice = categorical_draw(normalize_log_weights(log_scores), rng)
    if choice < last:
        return int(cand_anc[choice]), True
    return last, False


def pgas_abc_sweep(
    reference,
    target,
    num_particles: int,
    kernel: AbcKernel,
    rng: np.random.Generator,
    monitor: WeightBoundMonitor | None = None,
    return_system: bool = False,
) -> SweepResult:
    """Ancestor-sampling sweep for simulator-only models: the conditional
    sweep with the ancestor draw replaced by :func:`abc_ancestor_step`.

    Propagation must be bootstrap (the exact simulator); a guard patches the
    model so any transition-density evaluation during the sweep fails loudly.
    """
    if not getattr(target, "bootstrap", True):
        raise ValueError("the simulation-based sweep requires the bootstrap proposal")
    model = target.model
    last = num_particles - 1

    def hook(system, t, ref, rng):
        ancestor, changed = abc_ancestor_step(
            system, t, ref[t], model.transition_sample, kernel, rng
        )
        return ancestor, changed, changed

    def _forbidden(*args, **kwargs):
        raise AssertionError("transition density evaluated during a simulation-only sweep")

    # shadow the bound method on the instance for the duration of the sweep
    model.transition_logpdf = _forbidden
    try:
        return _conditional_sweep(
            reference,
            target,
            num_particles,
            rng,
            hook,
            monitor=monitor,
            return_system=return_system,
        )
    finally:
        del model.transition_logpdf
