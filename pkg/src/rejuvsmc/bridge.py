"""Degenerate linear-Gaussian machinery: controllability analysis, multi-step
transition marginals, endpoint-conditioned bridge sampling, and the classical
Kalman filter / RTS smoother / forward-filtering backward-sampling oracles.

The state process throughout is

    x_{t+1} = A x_t + F v_{t+1},    v ~ N(0, I_d),

where ``F`` may be rank-deficient, making the one-step transition a Gaussian
supported on a proper affine subspace.  All densities over such transitions
use the pseudo-determinant convention: quadratic forms through the
pseudo-inverse on the support, log-normaliser from the nonzero eigenvalues,
and -inf off the support.  Zero directions are respected exactly - covariances
are never jittered or regularised.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class NotControllable(Exception):
    """The pair (A, F) cannot reach the full state space."""


class NumericalRankFailure(Exception):
    """A conditioning point lies outside the numerical support of its
    innovation covariance."""


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


class GaussianDensity:
    """Multivariate normal allowing a rank-deficient covariance.

    The support basis (column space of the covariance) is cached at
    construction.  ``rank_tol`` separates zero from nonzero eigenvalues
    relative to the largest one; ``support_tol`` decides when a residual's
    component orthogonal to the support counts as off-support (relative to
    ``max(1, |residual|, sqrt(largest eigenvalue))``).

    ``zero_scale`` raises the eigenvalue floor to ``rank_tol * zero_scale``:
    pass the magnitude of the matrices a covariance was differenced from, so
    that a conditional covariance which cancels to zero analytically is
    recognised as rank-deficient instead of keeping cancellation dust.
    """

    def __init__(
        self,
        mean,
        cov,
        rank_tol: float = 1e-9,
        support_tol: float = 1e-6,
        zero_scale: float = 0.0,
    ):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-10 * scale:
            raise ValueError("covariance is not symmetric")
        vals, vecs = np.linalg.eigh(_sym(cov))
        if vals[0] < -1e-10 * max(1.0, vals[-1], zero_scale):
            raise ValueError(f"covariance has negative eigenvalue {vals[0]:g}")
        vals = np.clip(vals, 0.0, None)
        floor = rank_tol * max(vals[-1], zero_scale)
        keep = vals > floor
        self.mean = mean
        self.cov = _sym(cov)
        self.support_tol = support_tol
        self.rank = int(keep.sum())
        self._vals = vals[keep]
        self._basis = vecs[:, keep]
        self._log_pdet = float(np.sum(np.log(self._vals))) if self.rank else 0.0
        self._sqrt_vals = np.sqrt(self._vals)
        self._max_val = float(vals[-1]) if vals.size else 0.0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def _residual_parts(self, xs: np.ndarray):
        r = np.atleast_2d(xs) - self.mean
        coords = r @ self._basis
        perp_sq = np.maximum(np.einsum("ij,ij->i", r, r) - np.einsum("ij,ij->i", coords, coords), 0.0)
        r_norm = np.sqrt(np.einsum("ij,ij->i", r, r))
        thresh = self.support_tol * np.maximum(np.maximum(1.0, r_norm), np.sqrt(self._max_val))
        off = np.sqrt(perp_sq) > thresh
        return coords, off

    def logpdf_batch(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        coords, off = self._residual_parts(xs)
        if self.rank:
            q = np.einsum("ij,ij->i", coords / self._vals, coords)
        else:
            q = np.zeros(xs.shape[0])
        lp = -0.5 * (q + self.rank * np.log(2.0 * np.pi) + self._log_pdet)
        lp[off] = -np.inf
        return lp

    def logpdf(self, x) -> float:
        return float(self.logpdf_batch(np.atleast_2d(x))[0])

    def sample_batch(self, size: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((size, self.rank))
        return self.mean + (z * self._sqrt_vals) @ self._basis.T

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_batch(1, rng)[0]

    def off_support(self, xs) -> np.ndarray:
        """Boolean mask of points whose residual leaves the support."""
        _, off = self._residual_parts(np.atleast_2d(np.asarray(xs, dtype=float)))
        return off


@dataclass
class LinearGaussianDynamics:
    """State dynamics x_{t+1} = a x_t + f v_{t+1}, v ~ N(0, I)."""

    a: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.f = np.asarray(self.f, dtype=float)
        if self.f.ndim == 1:
            self.f = self.f[:, None]
        n = self.a.shape[0]
        if self.a.shape != (n, n) or self.f.shape[0] != n:
            raise ValueError("inconsistent dynamics dimensions")
        if not (np.isfinite(self.a).all() and np.isfinite(self.f).all()):
            raise ValueError("dynamics entries must be finite")

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @cached_property
    def process_cov(self) -> np.ndarray:
        return self.f @ self.f.T

    @cached_property
    def noise_density(self) -> GaussianDensity:
        """One-step transition noise N(0, f f^T); degenerate when rank(f) < n."""
        return GaussianDensity(np.zeros(self.dim), self.process_cov)

    def transition_logpdf(self, x_next, x_prev) -> np.ndarray:
        """log N(x_next; a x_prev, f f^T), broadcasting over rows."""
        x_next = np.atleast_2d(np.asarray(x_next, dtype=float))
        x_prev = np.atleast_2d(np.asarray(x_prev, dtype=float))
        resid = x_next - x_prev @ self.a.T
        return self.noise_density.logpdf_batch(resid)


@dataclass
class ControllabilityData:
    """Minimal horizon over which the pair (a, f) spans the state space."""

    ell: int
    c_matrix: np.ndarray
    rank: int
    tolerance: float


def controllability_matrix(dyn: LinearGaussianDynamics, ell: int) -> np.ndarray:
    """[f, a f, ..., a^ell f], shape (n, (ell + 1) d)."""
    blocks = [dyn.f]
    for _ in range(ell):
        blocks.append(dyn.a @ blocks[-1])
    return np.hstack(blocks)


def _matrix_rank(m: np.ndarray, tol: float) -> int:
    svals = np.linalg.svd(m, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.sum(svals > tol * svals[0]))


def controllability_index(dyn: LinearGaussianDynamics, tol: float = 1e-9) -> ControllabilityData:
    """Smallest ell with rank [f, a f, ..., a^ell f] = n.

    The search stops at ell = n - 1 (adding higher powers of ``a`` cannot
    enlarge the column space); raises :class:`NotControllable` if the full
    rank is never reached.
    """
    n = dyn.dim
    blocks = [dyn.f]
    for ell in range(n):
        if ell > 0:
            blocks.append(dyn.a @ blocks[-1])
        c = np.hstack(blocks)
        rank = _matrix_rank(c, tol)
        if rank == n:
            return ControllabilityData(ell=ell, c_matrix=c, rank=rank, tolerance=tol)
    raise NotControllable(f"rank stalls at {rank} < {n} by horizon {n - 1}")


def ell_step_marginal(dyn: LinearGaussianDynamics, x_start, ell: int) -> GaussianDensity:
    """Distribution of the state ell + 1 steps ahead of ``x_start``:
    N(a^{ell+1} x_start, C_ell C_ell^T).  Non-degenerate exactly when the
    controllability matrix C_ell has full rank."""
    if ell < 0:
        raise ValueError("ell must be >= 0")
    x_start = np.asarray(x_start, dtype=float)
    c = controllability_matrix(dyn, ell)
    mean = np.linalg.matrix_power(dyn.a, ell + 1) @ x_start
    return GaussianDensity(mean, c @ c.T)


def _psd_pinv(m: np.ndarray, rank_tol: float = 1e-9):
    """Pseudo-inverse of a PSD matrix via its spectral decomposition."""
    vals, vecs = np.linalg.eigh(_sym(m))
    vals = np.clip(vals, 0.0, None)
    keep = vals > rank_tol * (vals[-1] if vals[-1] > 0 else 1.0)
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return inv


class GaussianBridge:
    """Endpoint-conditioned sampler for a window of ``length`` consecutive
    states between a start value and an end value under fixed dynamics.

    Runs a Kalman recursion over the window with the end point acting as a
    single pseudo-observation of the last window state (through the dynamics
    themselves), then draws the joint window by backward simulation.  All
    covariance quantities depend only on (dynamics, length, initial
    covariance), so they are computed once here and shared across candidate
    start points; only the means vary per candidate.

    ``init_cov`` is the prior covariance of the *first window state*.  For a
    point start it is the process covariance (the default); pass the initial
    state covariance to bridge out of a Gaussian initial condition.
    """

    def __init__(
        self,
        dyn: LinearGaussianDynamics,
        length: int,
        init_cov: np.ndarray | None = None,
        conditioned: bool = True,
    ):
        if length < 1:
            raise ValueError("bridge needs a window of at least one state")
        self.dyn = dyn
        self.length = length
        self.conditioned = conditioned
        a, q = dyn.a, dyn.process_cov
        n = dyn.dim

        pri = [np.array(init_cov, dtype=float) if init_cov is not None else q.copy()]
        for _ in range(1, length):
            pri.append(_sym(a @ pri[-1] @ a.T + q))
        self._prior_covs = pri
        self._first_density = GaussianDensity(np.zeros(n), pri[0])

        if conditioned:
            # terminal pseudo-observation: end = a z_last + f v
            s_term = _sym(a @ pri[-1] @ a.T + q)
            self.end_marginal_cov = GaussianDensity(np.zeros(n), s_term)
            k_gain = pri[-1] @ a.T @ _psd_pinv(s_term)
            p_last = _sym(pri[-1] - k_gain @ s_term @ k_gain.T)
            self._k_gain = k_gain
        else:
            p_last = pri[-1]
            self._k_gain = None
            self.end_marginal_cov = None

        # conditional covariances are differences of same-order matrices and
        # may cancel exactly; flooring against the parent scale keeps the
        # cancellation dust out of the rank
        def _scale(m):
            return float(np.abs(m).max())

        self._last_density = GaussianDensity(np.zeros(n), p_last, zero_scale=_scale(pri[-1]) + _scale(q))
        # backward-simulation gains and conditional covariances
        self._j_gains = []
        self._cond_densities = []
        for j in range(length - 2, -1, -1):
            s_j = _sym(a @ pri[j] @ a.T + q)
            j_gain = pri[j] @ a.T @ _psd_pinv(s_j)
            c_j = _sym(pri[j] - j_gain @ s_j @ j_gain.T)
            self._j_gains.append(j_gain)
            self._cond_densities.append(
                GaussianDensity(np.zeros(n), c_j, zero_scale=_scale(pri[j]) + _scale(q))
            )
        self._j_gains.reverse()
        self._cond_densities.reverse()

    def _forward_means(self, first_means: np.ndarray) -> list[np.ndarray]:
        a = self.dyn.a
        means = [first_means]
        for _ in range(1, self.length):
            means.append(means[-1] @ a.T)
        return means

    def _terminal_update(self, means: list[np.ndarray], end: np.ndarray):
        a = self.dyn.a
        innovation = end - means[-1] @ a.T
        off = self.end_marginal_cov.off_support(innovation)
        m_last = means[-1] + innovation @ self._k_gain.T
        return m_last, off

    def sample_batch(
        self,
        first_means: np.ndarray,
        end: np.ndarray | None,
        rng: np.random.Generator,
        unreachable: str = "mask",
    ):
        """Draw one window per row of ``first_means``.

        Returns ``(windows, reachable)`` with ``windows`` of shape
        (m, length, n).  When the end point is off the support of the terminal
        innovation for some candidate, that row is flagged False in
        ``reachable`` (``unreachable="mask"``) or a
        :class:`NumericalRankFailure` is raised (``unreachable="raise"``).
        """
        first_means = np.atleast_2d(np.asarray(first_means, dtype=float))
        m = first_means.shape[0]
        a = self.dyn.a
        means = self._forward_means(first_means)
        reachable = np.ones(m, dtype=bool)
        if self.conditioned:
            end = np.asarray(end, dtype=float)
            m_last, off = self._terminal_update(means, end)
            if off.any():
                if unreachable == "raise":
                    raise NumericalRankFailure(
                        "end point outside the reachable subspace for this window length"
                    )
                reachable = ~off
        else:
            m_last = means[-1]
        out = np.empty((m, self.length, self.dyn.dim))
        z = self._last_density.sample_batch(m, rng)
        out[:, -1] = m_last + z
        for j in range(self.length - 2, -1, -1):
            cond_mean = means[j] + (out[:, j + 1] - means[j] @ a.T) @ self._j_gains[j].T
            out[:, j] = cond_mean + self._cond_densities[j].sample_batch(m, rng)
        return out, reachable

    def logpdf_batch(self, first_means, end, windows) -> np.ndarray:
        """Joint log-density of each window under the bridge law.

        Defined against the same dominating measure as the unnormalised
        targets (products of one-step transition factors):
        q(window | start, end) = p(end, window | start) / p(end | start).
        With rank-deficient noise the naive backward factorisation differs
        from this by a window-independent Jacobian, so it is used only for
        sampling; densities always come from this canonical form.
        """
        first_means = np.atleast_2d(np.asarray(first_means, dtype=float))
        windows = np.asarray(windows, dtype=float)
        if windows.ndim == 2:
            windows = windows[None]
        noise = self.dyn.noise_density
        a_t = self.dyn.a.T
        lp = self._first_density.logpdf_batch(windows[:, 0] - first_means)
        for j in range(1, self.length):
            lp = lp + noise.logpdf_batch(windows[:, j] - windows[:, j - 1] @ a_t)
        if self.conditioned:
            end = np.asarray(end, dtype=float)
            lp = lp + noise.logpdf_batch(end - windows[:, -1] @ a_t)
            lp = lp - self.endpoint_logpdf(first_means, end)
        return lp

    def endpoint_logpdf(self, first_means, end) -> np.ndarray:
        """Marginal log-density of the end point given each start:
        N(end; a^{length} first_mean, C C^T) in degenerate convention."""
        if not self.conditioned:
            raise ValueError("unconditioned bridge has no end point")
        first_means = np.atleast_2d(np.asarray(first_means, dtype=float))
        end = np.asarray(end, dtype=float)
        mean_end = self._forward_means(first_means)[-1] @ self.dyn.a.T
        return self.end_marginal_cov.logpdf_batch(end - mean_end)


def kalman_bridge_sample(
    dyn: LinearGaussianDynamics,
    x_start,
    x_end,
    ell: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the ``ell`` intermediate states between ``x_start`` (one step
    before the window) and ``x_end`` (one step after) from their joint
    conditional law under the dynamics.

    Raises :class:`NumericalRankFailure` when ``x_end`` is not reachable from
    ``x_start`` in ``ell + 1`` steps (terminal innovation off-support).
    """
    x_start = np.asarray(x_start, dtype=float)
    if ell == 0:
        marg = ell_step_marginal(dyn, x_start, 0)
        if marg.off_support(np.asarray(x_end, dtype=float))[0]:
            raise NumericalRankFailure("end point not reachable in one step")
        return np.empty((0, dyn.dim))
    bridge = GaussianBridge(dyn, ell)
    first = (dyn.a @ x_start)[None, :]
    windows, _ = bridge.sample_batch(first, np.asarray(x_end, dtype=float), rng, unreachable="raise")
    return windows[0]


def kalman_bridge_logpdf(dyn: LinearGaussianDynamics, x_start, x_end, window) -> float:
    """Log-density of a window under the endpoint-conditioned bridge law."""
    window = np.asarray(window, dtype=float)
    bridge = GaussianBridge(dyn, window.shape[0])
    first = (dyn.a @ np.asarray(x_start, dtype=float))[None, :]
    return float(bridge.logpdf_batch(first, np.asarray(x_end, dtype=float), window[None])[0])


@dataclass
class KalmanResult:
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    log_likelihood: float


def kalman_filter(lgssm, observations) -> KalmanResult:
    """Exact filter for a linear-Gaussian model.

    ``lgssm`` provides ``dynamics`` (a, process_cov), ``obs_matrix``,
    ``obs_cov`` (positive definite), ``init_mean`` and ``init_cov``.
    """
    ys = np.atleast_2d(np.asarray(observations, dtype=float))
    a = lgssm.dynamics.a
    q = lgssm.dynamics.process_cov
    c = np.atleast_2d(lgssm.obs_matrix)
    r = np.atleast_2d(lgssm.obs_cov)
    horizon = ys.shape[0]
    n = a.shape[0]
    p_dim = c.shape[0]

    f_means = np.empty((horizon, n))
    f_covs = np.empty((horizon, n, n))
    p_means = np.empty((horizon, n))
    p_covs = np.empty((horizon, n, n))
    loglik = 0.0
    m, p = np.asarray(lgssm.init_mean, dtype=float), np.asarray(lgssm.init_cov, dtype=float)
    eye = np.eye(n)
    for t in range(horizon):
        if t > 0:
            m = a @ m
            p = _sym(a @ p @ a.T + q)
        p_means[t] = m
        p_covs[t] = p
        s = _sym(c @ p @ c.T + r)
        try:
            chol = np.linalg.cholesky(s)
        except np.linalg.LinAlgError as exc:
            raise NumericalRankFailure(f"singular innovation covariance at t={t}") from exc
        innov = ys[t] - c @ m
        alpha = np.linalg.solve(chol, innov)
        loglik += -0.5 * (
            alpha @ alpha + 2.0 * np.sum(np.log(np.diag(chol))) + p_dim * np.log(2.0 * np.pi)
        )
        gain = p @ c.T @ np.linalg.solve(s, np.eye(p_dim))
        m = m + gain @ innov
        ikc = eye - gain @ c
        p = _sym(ikc @ p @ ikc.T + gain @ r @ gain.T)
        f_means[t] = m
        f_covs[t] = p
    return KalmanResult(f_means, f_covs, p_means, p_covs, float(loglik))


@dataclass
class SmootherResult:
    means: np.ndarray
    covs: np.ndarray
    gains: np.ndarray  # gains[t] maps the t+1 smoothing correction back to t


def rts_smoother(lgssm, observations) -> SmootherResult:
    """Fixed-interval smoother built on :func:`kalman_filter`."""
    kf = kalman_filter(lgssm, observations)
    a = lgssm.dynamics.a
    horizon, n = kf.filtered_means.shape
    means = kf.filtered_means.copy()
    covs = kf.filtered_covs.copy()
    gains = np.zeros((max(horizon - 1, 0), n, n))
    for t in range(horizon - 2, -1, -1):
        g = kf.filtered_covs[t] @ a.T @ _psd_pinv(kf.predicted_covs[t + 1])
        gains[t] = g
        means[t] = kf.filtered_means[t] + g @ (means[t + 1] - kf.predicted_means[t + 1])
        covs[t] = _sym(kf.filtered_covs[t] + g @ (covs[t + 1] - kf.predicted_covs[t + 1]) @ g.T)
    return SmootherResult(means, covs, gains)


def ffbs_sample(lgssm, observations, rng: np.random.Generator) -> np.ndarray:
    """Exact joint draw from the smoothing distribution: forward filter, then
    backward simulation through the filtered marginals."""
    kf = kalman_filter(lgssm, observations)
    a = lgssm.dynamics.a
    q = lgssm.dynamics.process_cov
    horizon, n = kf.filtered_means.shape
    out = np.empty((horizon, n))
    out[-1] = GaussianDensity(kf.filtered_means[-1], kf.filtered_covs[-1]).sample(rng)
    for t in range(horizon - 2, -1, -1):
        m, p = kf.filtered_means[t], kf.filtered_covs[t]
        s = _sym(a @ p @ a.T + q)
        j = p @ a.T @ _psd_pinv(s)
        mean = m + j @ (out[t + 1] - a @ m)
        cov = _sym(p - j @ s @ j.T)
        out[t] = GaussianDensity(mean, cov).sample(rng)
    return out
