"""Shared test fixtures: a tiny discrete state-space model whose smoothing
law, extended auxiliary target and partially collapsed conditionals can all be
enumerated exhaustively, plus a generic (non-Markov-interface) Gaussian target
that exercises the slow engine path."""

from __future__ import annotations

import itertools

import numpy as np

from rejuvsmc.core import TargetSequence, _logsumexp
from rejuvsmc.models import StateSpaceModel
from rejuvsmc.sweeps import extended_target_logpdf
from rejuvsmc.targets import SsmTarget


class DiscreteSsm(StateSpaceModel):
    """K-state hidden Markov chain with states encoded as floats 0..K-1.

    ``mu`` is the initial pmf, ``trans`` the row-stochastic transition matrix
    and ``emit[x, y]`` the likelihood of observation value y in state x.
    """

    def __init__(self, mu, trans, emit):
        self.mu = np.asarray(mu, dtype=float)
        self.trans = np.asarray(trans, dtype=float)
        self.emit = np.asarray(emit, dtype=float)
        self.n_states = self.mu.shape[0]
        self.state_dim = 1
        self.obs_dim = 1

    def _idx(self, xs):
        return np.atleast_2d(np.asarray(xs))[:, 0].astype(int)

    def initial_sample(self, size, rng):
        draws = rng.random(size)
        return np.searchsorted(np.cumsum(self.mu), draws).astype(float)[:, None]

    def initial_logpdf(self, xs):
        with np.errstate(divide="ignore"):
            return np.log(self.mu[self._idx(xs)])

    def transition_sample(self, xs, rng):
        rows = self.trans[self._idx(xs)]
        draws = rng.random(rows.shape[0])
        cdf = np.cumsum(rows, axis=1)
        out = (cdf < draws[:, None]).sum(axis=1)
        return out.astype(float)[:, None]

    def transition_logpdf(self, x_next, x_prev):
        nxt = self._idx(x_next)
        prv = self._idx(x_prev)
        if nxt.size == 1 and prv.size > 1:
            nxt = np.full(prv.size, nxt[0])
        with np.errstate(divide="ignore"):
            return np.log(self.trans[prv, nxt])

    def observation_sample(self, x, rng):
        probs = self.emit[int(x[0])]
        probs = probs / probs.sum()
        return np.array([float(np.searchsorted(np.cumsum(probs), rng.random()))])

    def observation_logpdf(self, y, xs):
        yv = int(np.asarray(y).reshape(-1)[0])
        with np.errstate(divide="ignore"):
            return np.log(self.emit[self._idx(xs), yv])


def two_state_toy():
    """The standard enumeration toy: 2 states, 2 observation values, T = 2."""
    model = DiscreteSsm(
        mu=[0.6, 0.4],
        trans=[[0.7, 0.3], [0.2, 0.8]],
        emit=[[0.8, 0.2], [0.3, 0.7]],
    )
    ys = np.array([[0.0], [1.0]])
    return model, ys


def enumerate_paths(n_states: int, horizon: int):
    for combo in itertools.product(range(n_states), repeat=horizon):
        yield np.array(combo, dtype=float)[:, None]


def exact_smoothing(model: DiscreteSsm, ys) -> dict:
    """Exhaustive smoothing law: path tuple -> probability."""
    target = SsmTarget(model, ys)
    horizon = ys.shape[0]
    logs = {}
    for path in enumerate_paths(model.n_states, horizon):
        logs[tuple(path[:, 0])] = target.log_gamma(horizon - 1, path)
    vals = np.array(list(logs.values()))
    norm = _logsumexp(vals)
    return {k: float(np.exp(v - norm)) for k, v in logs.items()}


def enumerate_extended_target(model: DiscreteSsm, ys, num_particles: int):
    """All configurations (states, ancestors, k) of the auxiliary target with
    their normalised probabilities.  Exponential in everything; use only for
    N = 2, T = 2 style toys."""
    target = SsmTarget(model, ys)
    horizon = ys.shape[0]
    n = num_particles
    state_vals = range(model.n_states)
    configs = []
    logps = []
    state_grids = list(itertools.product(state_vals, repeat=horizon * n))
    anc_grids = list(itertools.product(range(n), repeat=(horizon - 1) * n))
    for flat_states in state_grids:
        states = np.array(flat_states, dtype=float).reshape(horizon, n, 1)
        for flat_anc in anc_grids:
            ancestors = np.array(flat_anc, dtype=np.int64).reshape(horizon - 1, n)
            for k in range(n):
                lp = extended_target_logpdf(states, ancestors, k, target)
                configs.append((states, ancestors, k))
                logps.append(lp)
    logps = np.array(logps)
    norm = _logsumexp(logps)
    return configs, np.exp(logps - norm)


class GaussianChainTarget(TargetSequence):
    """Generic scalar-interface target: Gaussian random walk observed in
    noise, with an independent N(0, tau^2) random-walk proposal.  Exercises
    the engine's slow (prefix-based) route."""

    def __init__(self, observations, a=0.9, sigma_v=1.0, sigma_e=1.0, tau=1.0):
        self.ys = np.asarray(observations, dtype=float).reshape(-1)
        self.horizon = self.ys.shape[0]
        self.state_dim = 1
        self.a = a
        self.sigma_v = sigma_v
        self.sigma_e = sigma_e
        self.tau = tau

    @staticmethod
    def _norm_logpdf(x, mean, sd):
        z = (x - mean) / sd
        return -0.5 * z * z - np.log(sd) - 0.5 * np.log(2 * np.pi)

    def log_gamma(self, t, path):
        path = np.atleast_2d(path)[:, 0]
        lp = self._norm_logpdf(path[0], 0.0, self.sigma_v)
        lp += self._norm_logpdf(self.ys[0], path[0], self.sigma_e)
        for s in range(1, t + 1):
            lp += self._norm_logpdf(path[s], self.a * path[s - 1], self.sigma_v)
            lp += self._norm_logpdf(self.ys[s], path[s], self.sigma_e)
        return float(lp)

    def proposal_sample(self, t, prefix, rng):
        center = 0.0 if t == 0 else float(np.atleast_2d(prefix)[-1, 0])
        return np.array([center + self.tau * rng.standard_normal()])

    def proposal_logpdf(self, t, prefix, state):
        center = 0.0 if t == 0 else float(np.atleast_2d(prefix)[-1, 0])
        return float(self._norm_logpdf(float(np.atleast_1d(state)[0]), center, self.tau))
