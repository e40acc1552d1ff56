"""Particle rejuvenation: jointly re-drawing the reference ancestor and a
window of upcoming reference states.

The central object is the partially collapsed conditional over
(ancestor, window): proportional to

    w_{t-1}^a * gamma_T(history_a + window + retained tail) / gamma_{t-1}(history_a)

on {1..N} x range(window); at time zero there is no ancestor and the window's
conditional is just the full target with the window states free.  Any Markov
kernel leaving this conditional invariant is a valid plug-in; this module
provides the identity kernel, a Metropolis-Hastings kernel and a conditional
importance sampling (CIS) kernel, plus two window proposals: forward
simulation from the model prior, and the endpoint-conditioned Gaussian bridge
for linear-Gaussian dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bridge import GaussianBridge, LinearGaussianDynamics
from .core import categorical_draw, categorical_draws, normalize_log_weights, trace_ancestry


class PlanOutOfRange(Exception):
    """A rejuvenation window left the valid time range."""


@dataclass
class RejuvenationPlan:
    """Selects the subset of future reference states rejuvenated at each step.

    The default is the contiguous window x_{t:kappa_t} with
    kappa_t = min(T-1, t + window_length - 1) (0-based).  A custom
    ``selector(t, horizon) -> times`` may override it; times must be strictly
    increasing, start at t, and stay inside the horizon.  The kernels shipped
    here assume a contiguous window.
    """

    window_length: int
    selector: Callable[[int, int], np.ndarray] | None = None

    def __post_init__(self):
        if self.selector is None and self.window_length < 1:
            raise ValueError("window_length must be >= 1")

    def window(self, t: int, horizon: int) -> np.ndarray:
        if self.selector is not None:
            times = np.asarray(self.selector(t, horizon), dtype=np.int64)
        else:
            end = min(horizon - 1, t + self.window_length - 1)
            times = np.arange(t, end + 1, dtype=np.int64)
        if times.size == 0 or times[0] != t or times[-1] >= horizon or np.any(np.diff(times) <= 0):
            raise PlanOutOfRange(f"invalid window {times} at t={t} for horizon {horizon}")
        return times


@dataclass
class RejuvenationContext:
    """Everything a rejuvenation kernel sees at one time step: the current
    time, the window it may rewrite, the working reference, the target, and
    the particle system populated through time t-1 (None at t = 0)."""

    t: int
    window_times: np.ndarray
    reference: np.ndarray
    target: object
    system: object | None
    num_particles: int

    @property
    def is_initial(self) -> bool:
        return self.t == 0

    @property
    def horizon(self) -> int:
        return self.reference.shape[0]

    @property
    def endpoint(self) -> np.ndarray | None:
        """Reference state one step past the window, None when the window
        reaches the horizon (the endpoint factor is then dropped)."""
        nxt = int(self.window_times[-1]) + 1
        if nxt >= self.horizon:
            return None
        return self.reference[nxt]

    @property
    def filter_logweights(self) -> np.ndarray:
        return self.system.log_weights[self.t - 1]

    @property
    def prev_states(self) -> np.ndarray:
        return self.system.states[self.t - 1]

    def contiguous_from_t(self) -> bool:
        times = self.window_times
        return times[0] == self.t and times[-1] - times[0] + 1 == times.size


def _window_supported(ctx: RejuvenationContext) -> bool:
    return ctx.contiguous_from_t() and callable(
        getattr(ctx.target, "window_logdensity_batch", None)
    )


def partial_collapse_logtarget(ancestor, window_states, ctx: RejuvenationContext) -> float:
    """Log-density (up to an additive constant shared across candidates) of
    one (ancestor, window) pair under the partially collapsed conditional.

    Uses the target's windowed Markov evaluator when the window is contiguous
    from t; otherwise splices the window into the reference and evaluates the
    full-path target ratio.  Evaluation failures surface as -inf.
    """
    window_states = np.atleast_2d(np.asarray(window_states, dtype=float))
    if _window_supported(ctx):
        if ctx.is_initial:
            return float(
                ctx.target.window_logdensity_batch(0, None, window_states[None], ctx.endpoint)[0]
            )
        prev = ctx.prev_states[int(ancestor)][None]
        lw = float(ctx.filter_logweights[int(ancestor)])
        if lw == -np.inf:
            return -np.inf
        return lw + float(
            ctx.target.window_logdensity_batch(ctx.t, prev, window_states[None], ctx.endpoint)[0]
        )
    # generic full-path route
    ref = np.array(ctx.reference, copy=True)
    ref[ctx.window_times] = window_states
    horizon = ctx.horizon
    if ctx.is_initial:
        return float(ctx.target.log_gamma(horizon - 1, ref))
    lw = float(ctx.filter_logweights[int(ancestor)])
    if lw == -np.inf:
        return -np.inf
    hist, _ = trace_ancestry(ctx.system, int(ancestor), upto=ctx.t - 1)
    path = np.concatenate([hist, ref[ctx.t :]], axis=0)
    num = ctx.target.log_gamma(horizon - 1, path)
    if num == -np.inf:
        return -np.inf
    return lw + num - ctx.target.log_gamma(ctx.t - 1, hist)


def partial_collapse_logtarget_batch(ancestors, windows, ctx: RejuvenationContext) -> np.ndarray:
    """Vectorised version over candidates (rows of ``windows``)."""
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 2:
        windows = windows[None]
    m = windows.shape[0]
    if _window_supported(ctx):
        if ctx.is_initial:
            return ctx.target.window_logdensity_batch(0, None, windows, ctx.endpoint)
        ancestors = np.asarray(ancestors, dtype=np.int64)
        lw = ctx.filter_logweights[ancestors]
        dens = ctx.target.window_logdensity_batch(
            ctx.t, ctx.prev_states[ancestors], windows, ctx.endpoint
        )
        out = lw + dens
        out[lw == -np.inf] = -np.inf
        return out
    out = np.empty(m)
    for i in range(m):
        a = None if ctx.is_initial else int(np.asarray(ancestors).reshape(-1)[i])
        out[i] = partial_collapse_logtarget(a, windows[i], ctx)
    return out


# ---------------------------------------------------------------------------
# Window proposals
# ---------------------------------------------------------------------------


class ForwardPriorWindowProposal:
    """Propose the window by simulating the model forward from the candidate
    ancestor (or from the initial law at time zero), ignoring the endpoint.

    Against the partially collapsed target the transition factors over the
    window cancel, leaving the observation terms and the endpoint transition;
    ``log_transition_ratio_batch`` reports exactly that remainder.  Requires a
    tractable transition density only for evaluation, not for sampling.
    """

    def __init__(self, model):
        self.model = model

    def sample_batch(self, ctx, ancestors, count, rng, current=None):
        length = ctx.window_times.size
        if ancestors is None:
            x = self.model.initial_sample(count, rng)
        else:
            x = self.model.transition_sample(ctx.prev_states[np.asarray(ancestors)], rng)
        out = np.empty((x.shape[0], length, x.shape[1]))
        out[:, 0] = x
        for j in range(1, length):
            out[:, j] = self.model.transition_sample(out[:, j - 1], rng)
        return out

    def logpdf_batch(self, ctx, ancestors, windows, current=None):
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        if ancestors is None:
            lp = self.model.initial_logpdf(windows[:, 0])
        else:
            lp = self.model.transition_logpdf(
                windows[:, 0], ctx.prev_states[np.asarray(ancestors)]
            )
        for j in range(1, windows.shape[1]):
            lp = lp + self.model.transition_logpdf(windows[:, j], windows[:, j - 1])
        return lp

    def log_transition_ratio_batch(self, ctx, ancestors, windows):
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        end = ctx.endpoint
        if end is None:
            return np.zeros(windows.shape[0])
        return self.model.transition_logpdf(end[None, :], windows[:, -1])


class KalmanBridgeWindowProposal:
    """Propose the window from its exact conditional law under linear-Gaussian
    dynamics given the candidate history and the retained endpoint
    (endpoint-conditioned Gaussian bridge).  When the window reaches the
    horizon there is nothing to condition on and the proposal falls back to
    forward prior simulation.

    The prior-to-proposal transition ratio collapses to the multi-step
    marginal density of the endpoint given the start, which stays well defined
    (non-degenerate) whenever the window is at least as long as the
    controllability index; for windows at time zero the ratio is
    ancestor-free, hence constant across candidates, and reported as zero.
    """

    def __init__(self, dyn: LinearGaussianDynamics, init_mean=None, init_cov=None):
        self.dyn = dyn
        self.init_mean = None if init_mean is None else np.asarray(init_mean, dtype=float)
        self.init_cov = None if init_cov is None else np.asarray(init_cov, dtype=float)
        self._cache: dict = {}

    def _bridge(self, length: int, conditioned: bool, initial: bool) -> GaussianBridge:
        key = (length, conditioned, initial)
        if key not in self._cache:
            init_cov = self.init_cov if initial else None
            self._cache[key] = GaussianBridge(
                self.dyn, length, init_cov=init_cov, conditioned=conditioned
            )
        return self._cache[key]

    def _first_means(self, ctx, ancestors, count=None):
        if ancestors is None:
            if self.init_mean is None:
                raise ValueError("window at time zero needs the initial Gaussian (init_mean/cov)")
            return np.tile(self.init_mean, (count, 1))
        return ctx.prev_states[np.asarray(ancestors)] @ self.dyn.a.T

    def sample_batch(self, ctx, ancestors, count, rng, current=None):
        length = ctx.window_times.size
        end = ctx.endpoint
        bridge = self._bridge(length, end is not None, ancestors is None)
        firsts = self._first_means(ctx, ancestors, count)
        windows, _ = bridge.sample_batch(firsts, end, rng, unreachable="mask")
        return windows

    def logpdf_batch(self, ctx, ancestors, windows, current=None):
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        end = ctx.endpoint
        bridge = self._bridge(windows.shape[1], end is not None, ancestors is None)
        firsts = self._first_means(ctx, ancestors, windows.shape[0])
        return bridge.logpdf_batch(firsts, end, windows)

    def log_transition_ratio_batch(self, ctx, ancestors, windows):
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        m = windows.shape[0]
        end = ctx.endpoint
        if end is None or ancestors is None:
            # unconditioned: proposal equals the prior exactly; initial window:
            # the endpoint marginal carries no ancestor dependence and cancels
            return np.zeros(m)
        bridge = self._bridge(windows.shape[1], True, False)
        firsts = self._first_means(ctx, ancestors)
        return bridge.endpoint_logpdf(firsts, end)


# ---------------------------------------------------------------------------
# Rejuvenation kernels
# ---------------------------------------------------------------------------


class IdentityRejuvenationKernel:
    """Keeps the (ancestor, window) pair unchanged; reduces the rejuvenated
    sweep to plain particle Gibbs."""

    def step(self, ctx, ancestor, window, rng):
        return ancestor, window, False


def identity_kernel() -> IdentityRejuvenationKernel:
    return IdentityRejuvenationKernel()


def _log_nu(ctx, override) -> np.ndarray:
    if override is not None:
        return np.asarray(override(ctx), dtype=float)
    return ctx.filter_logweights


def _subtract_logq(log_target: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    """target - proposal in log space, resolving -inf - -inf to -inf (a
    candidate with zero target mass is dead regardless of its proposal
    density)."""
    out = np.where(log_target == -np.inf, -np.inf, log_target - log_q)
    if np.isnan(out).any() or np.any(out == np.inf):
        raise ValueError("window proposal assigned zero density to a live candidate")
    return out


class CisRejuvenationKernel:
    """Conditional importance sampling move on (ancestor, window).

    Pins the current pair into the last of ``inner_count`` slots, draws the
    other slots fresh (ancestors proportional to the proposal weights nu,
    windows from the window proposal), weights every slot by

        w_{t-1}^a * gamma_T(...) / (nu^a * q(window | ...) * gamma_{t-1}(...)),

    and returns a slot drawn proportional to those weights.  ``inner_count``
    defaults to the sweep's particle count; ``inner_count=1`` is the identity
    kernel.  When the proposal reports its prior-transition ratio, the weight
    is assembled without evaluating transition densities over the window
    (required for truly degenerate dynamics, where only the ratio is finite).
    """

    def __init__(self, proposal, inner_count: int | None = None, log_nu: Callable | None = None):
        self.proposal = proposal
        self.inner_count = inner_count
        self.log_nu_fn = log_nu

    def _logweights(self, ctx, ancestors, windows, log_nu):
        reduced = callable(getattr(self.proposal, "log_transition_ratio_batch", None)) and callable(
            getattr(ctx.target, "observation_window_loglik", None)
        ) and ctx.contiguous_from_t()
        if reduced:
            w = self.proposal.log_transition_ratio_batch(ctx, ancestors, windows)
            w = w + ctx.target.observation_window_loglik(int(ctx.window_times[0]), windows)
            if ancestors is not None:
                lw = ctx.filter_logweights[ancestors]
                w = np.where(lw == -np.inf, -np.inf, w + lw - log_nu[ancestors])
            return w
        tgt = partial_collapse_logtarget_batch(ancestors, windows, ctx)
        log_q = self.proposal.logpdf_batch(ctx, ancestors, windows)
        w = _subtract_logq(tgt, log_q)
        if ancestors is not None:
            w = np.where(w == -np.inf, -np.inf, w - log_nu[ancestors])
        return w

    def step(self, ctx, ancestor, window, rng):
        m = self.inner_count if self.inner_count is not None else ctx.num_particles
        if m < 1:
            raise ValueError("inner_count must be >= 1")
        window = np.atleast_2d(np.asarray(window, dtype=float))
        if m == 1:
            return ancestor, window, False
        if ctx.is_initial:
            cand_anc = None
            log_nu = None
            fresh = self.proposal.sample_batch(ctx, None, m - 1, rng, current=window)
        else:
            log_nu = _log_nu(ctx, self.log_nu_fn)
            anc = categorical_draws(normalize_log_weights(log_nu), m - 1, rng)
            cand_anc = np.append(anc, int(ancestor))
            fresh = self.proposal.sample_batch(ctx, anc, m - 1, rng, current=window)
        windows = np.concatenate([fresh, window[None]], axis=0)
        lw = self._logweights(ctx, cand_anc, windows, log_nu)
        if not np.isfinite(lw[-1]):
            raise AssertionError("the pinned pair must keep positive weight")
        choice = categorical_draw(normalize_log_weights(lw), rng)
        accepted = choice != m - 1
        new_anc = ancestor if ctx.is_initial else int(cand_anc[choice])
        return new_anc, windows[choice], accepted


class MhRejuvenationKernel:
    """Metropolis-Hastings move on (ancestor, window): propose the ancestor
    proportional to nu and the window from the window proposal (which may
    condition on the current window), then accept with the usual ratio of
    partially collapsed targets times the proposal correction.  ``iterations``
    composes that move."""

    def __init__(self, proposal, iterations: int = 1, log_nu: Callable | None = None):
        self.proposal = proposal
        self.iterations = iterations
        self.log_nu_fn = log_nu

    def step(self, ctx, ancestor, window, rng):
        cur_window = np.atleast_2d(np.asarray(window, dtype=float))
        cur_anc = ancestor
        cur_target = partial_collapse_logtarget(cur_anc, cur_window, ctx)
        if ctx.is_initial:
            log_nu = None
        else:
            log_nu = _log_nu(ctx, self.log_nu_fn)
            nu_probs = normalize_log_weights(log_nu)
        any_accept = False
        for _ in range(self.iterations):
            if ctx.is_initial:
                prop_anc = None
                nu_diff = 0.0
            else:
                prop_anc = int(categorical_draw(nu_probs, rng))
                nu_diff = log_nu[cur_anc] - log_nu[prop_anc]
            anc_arr = None if prop_anc is None else np.array([prop_anc])
            cur_arr = None if ctx.is_initial else np.array([cur_anc])
            prop_window = self.proposal.sample_batch(ctx, anc_arr, 1, rng, current=cur_window)[0]
            prop_target = partial_collapse_logtarget(prop_anc, prop_window, ctx)
            if prop_target > -np.inf:
                log_fwd = self.proposal.logpdf_batch(
                    ctx, anc_arr, prop_window[None], current=cur_window
                )[0]
                log_rev = self.proposal.logpdf_batch(
                    ctx, cur_arr, cur_window[None], current=prop_window
                )[0]
                log_alpha = (prop_target - cur_target) + nu_diff + (log_rev - log_fwd)
            else:
                log_alpha = -np.inf
            if np.log(rng.random()) < log_alpha:
                cur_anc, cur_window, cur_target = prop_anc, prop_window, prop_target
                any_accept = True
        final_anc = ancestor if ctx.is_initial else cur_anc
        return final_anc, cur_window, any_accept


def cis_rejuvenation_kernel(proposal, inner_count=None, log_nu=None) -> CisRejuvenationKernel:
    """Conditional importance sampling kernel; ``inner_count`` defaults to the
    sweep's particle count and ``log_nu`` to the filter weights."""
    return CisRejuvenationKernel(proposal, inner_count=inner_count, log_nu=log_nu)


def mh_rejuvenation_kernel(proposal, iterations=1, log_nu=None) -> MhRejuvenationKernel:
    """Metropolis-Hastings kernel; ``log_nu`` defaults to the filter weights."""
    return MhRejuvenationKernel(proposal, iterations=iterations, log_nu=log_nu)
