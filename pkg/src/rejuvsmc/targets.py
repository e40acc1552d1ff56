"""Adapter turning a state-space model plus an observation record into the
unnormalised target sequence gamma_t(X_t) = p(X_t, Y_t) consumed by the
samplers.

The adapter implements the generic scalar contract of
:class:`~rejuvsmc.core.TargetSequence` and, because the model is Markov, also
the vectorised fast paths the sweep engine prefers, the transition shortcut
used by ancestor sampling, and the windowed evaluators used by the
rejuvenation kernels.
"""

from __future__ import annotations

import numpy as np

from .core import TargetSequence


class SsmTarget(TargetSequence):
    """Smoothing target for a state-space model.

    With the default ``proposal=None`` the sampler propagates through the
    model transition itself (bootstrap); the incremental weight then reduces
    algebraically to the observation log-density, which is what
    ``log_weight_increment`` computes (no transition density evaluation, so
    simulator-only models work).

    A custom proposal must provide vectorised
    ``sample(t, y_t, prev_states, rng)`` and
    ``logpdf(t, y_t, prev_states, new_states)`` plus the same pair for
    ``t == 0`` with ``prev_states=None``.
    """

    def __init__(self, model, observations, proposal=None):
        ys = np.asarray(observations, dtype=float)
        if ys.ndim == 1:
            ys = ys[:, None]
        if ys.shape[1] != model.obs_dim:
            raise ValueError(
                f"observations have dimension {ys.shape[1]}, model expects {model.obs_dim}"
            )
        self.model = model
        self.observations = ys
        self.proposal = proposal
        self.horizon = ys.shape[0]
        self.state_dim = model.state_dim

    @property
    def bootstrap(self) -> bool:
        return self.proposal is None

    @property
    def has_transition_density(self) -> bool:
        return getattr(self.model, "has_transition_density", True)

    # ------------------------------------------------------------------
    # generic contract
    # ------------------------------------------------------------------

    def log_gamma(self, t: int, path) -> float:
        path = np.atleast_2d(np.asarray(path, dtype=float))
        if path.shape[0] != t + 1:
            raise ValueError(f"prefix of length {path.shape[0]} does not match t={t}")
        lp = float(self.model.initial_logpdf(path[:1])[0])
        lp += float(self.model.observation_logpdf(self.observations[0], path[:1])[0])
        if lp == -np.inf:
            return lp
        if t >= 1:
            trans = self.model.transition_logpdf(path[1:], path[:-1])
            lp += float(np.sum(trans))
            for s in range(1, t + 1):
                lp += float(self.model.observation_logpdf(self.observations[s], path[s : s + 1])[0])
        return lp

    def proposal_sample(self, t: int, prefix, rng) -> np.ndarray:
        if t == 0:
            if self.bootstrap:
                return self.model.initial_sample(1, rng)[0]
            return self.proposal.sample(0, self.observations[0], None, rng)[0]
        prev = np.atleast_2d(np.asarray(prefix, dtype=float))[-1:]
        if self.bootstrap:
            return self.model.transition_sample(prev, rng)[0]
        return self.proposal.sample(t, self.observations[t], prev, rng)[0]

    def proposal_logpdf(self, t: int, prefix, state) -> float:
        state = np.atleast_2d(np.asarray(state, dtype=float))
        if t == 0:
            if self.bootstrap:
                return float(self.model.initial_logpdf(state)[0])
            return float(self.proposal.logpdf(0, self.observations[0], None, state)[0])
        prev = np.atleast_2d(np.asarray(prefix, dtype=float))[-1:]
        if self.bootstrap:
            return float(self.model.transition_logpdf(state, prev)[0])
        return float(self.proposal.logpdf(t, self.observations[t], prev, state)[0])

    # ------------------------------------------------------------------
    # vectorised fast paths (Markov factorisation)
    # ------------------------------------------------------------------

    def propose_batch(self, t: int, prev_states, rng, count: int | None = None) -> np.ndarray:
        if t == 0:
            if self.bootstrap:
                return self.model.initial_sample(count, rng)
            return self.proposal.sample(0, self.observations[0], None, rng, count=count)
        if self.bootstrap:
            return self.model.transition_sample(prev_states, rng)
        return self.proposal.sample(t, self.observations[t], prev_states, rng)

    def log_weight_increment(self, t: int, prev_states, new_states) -> np.ndarray:
        y = self.observations[t]
        if self.bootstrap:
            # gamma_t / (gamma_{t-1} f) with r = f: exact cancellation
            return self.model.observation_logpdf(y, new_states)
        incr = self.model.observation_logpdf(y, new_states)
        if t == 0:
            incr = incr + self.model.initial_logpdf(new_states)
            incr -= self.proposal.logpdf(0, y, None, new_states)
        else:
            incr = incr + self.model.transition_logpdf(new_states, prev_states)
            incr -= self.proposal.logpdf(t, y, prev_states, new_states)
        return incr

    # ------------------------------------------------------------------
    # ancestor-sampling shortcut
    # ------------------------------------------------------------------

    def transition_logweights(self, x_next, prev_states) -> np.ndarray:
        """log f(x_next | x_prev^i) for a single next state against many
        histories; raises IntractableTransition when the model hides f."""
        return self.model.transition_logpdf(np.atleast_2d(x_next), np.atleast_2d(prev_states))

    # ------------------------------------------------------------------
    # windowed evaluators for rejuvenation (contiguous window from t_start)
    # ------------------------------------------------------------------

    def window_logdensity_batch(self, t_start: int, x_prev, windows, endpoint) -> np.ndarray:
        """Per-candidate sum of transition and observation log-densities over
        a window of consecutive states starting at ``t_start``, plus the
        transition into ``endpoint`` when one is given.  ``x_prev`` is the
        state before the window (rows = candidates) or ``None`` when the
        window starts at time zero (initial density used instead)."""
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        m, length, _ = windows.shape
        if x_prev is None:
            lp = self.model.initial_logpdf(windows[:, 0])
        else:
            lp = self.model.transition_logpdf(windows[:, 0], np.atleast_2d(x_prev))
        lp = lp + self.model.observation_logpdf(self.observations[t_start], windows[:, 0])
        for j in range(1, length):
            lp = lp + self.model.transition_logpdf(windows[:, j], windows[:, j - 1])
            lp = lp + self.model.observation_logpdf(self.observations[t_start + j], windows[:, j])
        if endpoint is not None:
            lp = lp + self.model.transition_logpdf(np.atleast_2d(endpoint), windows[:, -1])
        return lp

    def observation_window_loglik(self, t_start: int, windows) -> np.ndarray:
        """Per-candidate sum of observation log-densities over the window."""
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        out = np.zeros(windows.shape[0])
        for j in range(windows.shape[1]):
            out = out + self.model.observation_logpdf(
                self.observations[t_start + j], windows[:, j]
            )
        return out
