"""Model zoo: a linear-Gaussian oracle model, a degenerate autoregressive
model with saturated heavy-tailed observations, a near-constant-velocity 3D
tracking model, and a stochastic Lorenz '63 simulator whose transition density
is deliberately not exposed.

All models implement the same small vectorised interface (rows are
particles):

* ``initial_sample(size, rng)`` / ``initial_logpdf(xs)``
* ``transition_sample(xs, rng)`` / ``transition_logpdf(x_next, x_prev)``
  (the latter may raise :class:`~rejuvsmc.core.IntractableTransition`)
* ``observation_sample(x, rng)`` / ``observation_logpdf(y, xs)``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.special import gammaln

from .bridge import GaussianDensity, LinearGaussianDynamics
from .core import IntractableTransition


class StateSpaceModel:
    """Shared interface; concrete models override the sampling and density
    methods they support."""

    state_dim: int
    obs_dim: int
    has_transition_density: bool = True

    def initial_sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def initial_logpdf(self, xs) -> np.ndarray:
        raise NotImplementedError

    def transition_sample(self, xs, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def transition_logpdf(self, x_next, x_prev) -> np.ndarray:
        raise NotImplementedError

    def observation_sample(self, x, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def observation_logpdf(self, y, xs) -> np.ndarray:
        raise NotImplementedError


def simulate_data(model: StateSpaceModel, horizon: int, rng: np.random.Generator):
    """Forward-simulate ``horizon`` steps of states and observations."""
    states = np.empty((horizon, model.state_dim))
    obs = np.empty((horizon, model.obs_dim))
    x = model.initial_sample(1, rng)
    for t in range(horizon):
        if t > 0:
            x = model.transition_sample(x, rng)
        states[t] = x[0]
        obs[t] = model.observation_sample(x[0], rng)
    return states, obs


# ---------------------------------------------------------------------------
# Linear-Gaussian model (exactness oracle)
# ---------------------------------------------------------------------------


@dataclass
class LgssmSpec(StateSpaceModel):
    """x' = A x + F v, y = C x + e with e ~ N(0, R), R positive definite."""

    dynamics: LinearGaussianDynamics
    obs_matrix: np.ndarray
    obs_cov: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray

    def __post_init__(self):
        self.obs_matrix = np.atleast_2d(np.asarray(self.obs_matrix, dtype=float))
        self.obs_cov = np.atleast_2d(np.asarray(self.obs_cov, dtype=float))
        self.init_mean = np.atleast_1d(np.asarray(self.init_mean, dtype=float))
        self.init_cov = np.atleast_2d(np.asarray(self.init_cov, dtype=float))
        if np.linalg.eigvalsh(self.obs_cov)[0] <= 0:
            raise ValueError("observation noise must be positive definite")
        self.state_dim = self.dynamics.dim
        self.obs_dim = self.obs_matrix.shape[0]

    @cached_property
    def _init_density(self) -> GaussianDensity:
        return GaussianDensity(self.init_mean, self.init_cov)

    @cached_property
    def _obs_noise(self) -> GaussianDensity:
        return GaussianDensity(np.zeros(self.obs_dim), self.obs_cov)

    def initial_sample(self, size, rng):
        return self._init_density.sample_batch(size, rng)

    def initial_logpdf(self, xs):
        return self._init_density.logpdf_batch(xs)

    def transition_sample(self, xs, rng):
        xs = np.atleast_2d(xs)
        noise = rng.standard_normal((xs.shape[0], self.dynamics.f.shape[1]))
        return xs @ self.dynamics.a.T + noise @ self.dynamics.f.T

    def transition_logpdf(self, x_next, x_prev):
        return self.dynamics.transition_logpdf(x_next, x_prev)

    def observation_sample(self, x, rng):
        return self.obs_matrix @ np.asarray(x, dtype=float) + self._obs_noise.sample(rng)

    def observation_logpdf(self, y, xs):
        resid = np.asarray(y, dtype=float) - np.atleast_2d(xs) @ self.obs_matrix.T
        return self._obs_noise.logpdf_batch(resid)


def scalar_lgssm(a=0.9, sigma_v=1.0, sigma_e=1.0, init_mean=0.0, init_var=None) -> LgssmSpec:
    """1D autoregression observed in Gaussian noise; init defaults to the
    stationary variance when |a| < 1."""
    if init_var is None:
        init_var = sigma_v**2 / (1 - a**2) if abs(a) < 1 else sigma_v**2
    return LgssmSpec(
        dynamics=LinearGaussianDynamics(np.array([[a]]), np.array([[sigma_v]])),
        obs_matrix=np.array([[1.0]]),
        obs_cov=np.array([[sigma_e**2]]),
        init_mean=np.array([init_mean]),
        init_cov=np.array([[init_var]]),
    )


def kalman_smoother_oracle(lgssm: LgssmSpec, observations):
    """Exact per-time smoothed means and covariances (ground truth for tests)."""
    from .bridge import rts_smoother

    res = rts_smoother(lgssm, observations)
    return res.means, res.covs


# ---------------------------------------------------------------------------
# Degenerate AR(n) with saturated Student-t observations
# ---------------------------------------------------------------------------


def _student_t_logpdf(z, nu: float) -> np.ndarray:
    const = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi)
    return const - 0.5 * (nu + 1) * np.log1p(np.asarray(z) ** 2 / nu)


@dataclass
class ArSsmSpec(StateSpaceModel):
    """Latent AR(n) process in companion form, driven by scalar noise on the
    first component (rank-one process covariance), observed through a
    saturating nonlinearity with Student-t noise:

        x_{t+1} = A x_t + sigma_v e_1 v_{t+1}
        y_t     = tanh(beta * x_{1,t}) / beta + sigma_e * e_t,   e_t ~ t_nu
    """

    alpha: np.ndarray
    sigma_v: float = 1.0
    beta: float = 0.5
    sigma_e: float = 0.5
    nu: float = 3.0

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if self.sigma_v <= 0 or self.sigma_e <= 0 or self.nu <= 0:
            raise ValueError("scale and degree-of-freedom parameters must be positive")
        self.order = self.alpha.shape[0]
        self.state_dim = self.order
        self.obs_dim = 1

    @cached_property
    def dynamics(self) -> LinearGaussianDynamics:
        n = self.order
        a = np.zeros((n, n))
        a[0] = self.alpha
        a[1:, :-1] = np.eye(n - 1)
        f = np.zeros((n, 1))
        f[0, 0] = self.sigma_v
        return LinearGaussianDynamics(a, f)

    @cached_property
    def _init_density(self) -> GaussianDensity:
        # stationary covariance of the companion-form chain
        cov = solve_discrete_lyapunov(self.dynamics.a, self.dynamics.process_cov)
        return GaussianDensity(np.zeros(self.order), cov)

    @property
    def init_mean(self):
        return self._init_density.mean

    @property
    def init_cov(self):
        return self._init_density.cov

    def initial_sample(self, size, rng):
        return self._init_density.sample_batch(size, rng)

    def initial_logpdf(self, xs):
        return self._init_density.logpdf_batch(xs)

    def transition_sample(self, xs, rng):
        xs = np.atleast_2d(xs)
        out = xs @ self.dynamics.a.T
        out[:, 0] += self.sigma_v * rng.standard_normal(xs.shape[0])
        return out

    def transition_logpdf(self, x_next, x_prev):
        return self.dynamics.transition_logpdf(x_next, x_prev)

    def saturated_mean(self, x_first):
        return np.tanh(self.beta * np.asarray(x_first)) / self.beta

    def observation_sample(self, x, rng):
        mean = self.saturated_mean(x[0])
        return np.array([mean + self.sigma_e * rng.standard_t(self.nu)])

    def observation_logpdf(self, y, xs):
        xs = np.atleast_2d(xs)
        z = (float(np.asarray(y).reshape(-1)[0]) - self.saturated_mean(xs[:, 0])) / self.sigma_e
        return _student_t_logpdf(z, self.nu) - np.log(self.sigma_e)


def ar_observation_logdensity(spec: ArSsmSpec, y, x) -> float:
    """Log-density of one observation given one state under the saturated
    Student-t observation model."""
    return float(spec.observation_logpdf(y, np.atleast_2d(x))[0])


def paper_ar5() -> ArSsmSpec:
    """The fifth-order study configuration used throughout the experiments."""
    return ArSsmSpec(alpha=np.array([0.9, -0.8, 0.7, -0.6, 0.5]), sigma_v=1.0, beta=0.5, sigma_e=0.5, nu=3.0)


# ---------------------------------------------------------------------------
# Near-constant-velocity 3D tracking
# ---------------------------------------------------------------------------


def _cv_matrices(dt: float):
    """Discrete constant-velocity transition and its unit process covariance
    for a 3D position+velocity state (position block first)."""
    eye3 = np.eye(3)
    a = np.block([[eye3, dt * eye3], [np.zeros((3, 3)), eye3]])
    q = np.block(
        [
            [dt**3 / 3 * eye3, dt**2 / 2 * eye3],
            [dt**2 / 2 * eye3, dt * eye3],
        ]
    )
    return a, q


@dataclass
class TrackingSpec(StateSpaceModel):
    """Near constant-velocity motion in 3D observed by a bearing / elevation /
    range sensor at the origin.  ``theta`` scales the transition covariance;
    small values make the transition nearly degenerate.

    The sensor model and priors are declared defaults of this artifact, not
    literature values: angle noises 0.01 rad, range noise 0.1 units,
    inverse-gamma(1, 1) prior on ``theta``.
    """

    theta: float = 0.01
    dt: float = 1.0
    bearing_std: float = 0.01
    elevation_std: float = 0.01
    range_std: float = 0.1
    init_mean: np.ndarray = field(
        default_factory=lambda: np.array([20.0, 20.0, 5.0, 1.0, 1.0, 0.2])
    )
    init_cov: np.ndarray = field(default_factory=lambda: np.diag([1, 1, 1, 0.1, 0.1, 0.1]).astype(float))

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        self.state_dim = 6
        self.obs_dim = 3

    @cached_property
    def base_cov(self) -> np.ndarray:
        return _cv_matrices(self.dt)[1]

    @cached_property
    def dynamics(self) -> LinearGaussianDynamics:
        a, q = _cv_matrices(self.dt)
        return LinearGaussianDynamics(a, np.linalg.cholesky(self.theta * q))

    def with_theta(self, theta: float) -> "TrackingSpec":
        return TrackingSpec(
            theta=float(theta),
            dt=self.dt,
            bearing_std=self.bearing_std,
            elevation_std=self.elevation_std,
            range_std=self.range_std,
            init_mean=self.init_mean,
            init_cov=self.init_cov,
        )

    @cached_property
    def _init_density(self) -> GaussianDensity:
        return GaussianDensity(self.init_mean, self.init_cov)

    @cached_property
    def _obs_stds(self) -> np.ndarray:
        return np.array([self.bearing_std, self.elevation_std, self.range_std])

    def initial_sample(self, size, rng):
        return self._init_density.sample_batch(size, rng)

    def initial_logpdf(self, xs):
        return self._init_density.logpdf_batch(xs)

    def transition_sample(self, xs, rng):
        xs = np.atleast_2d(xs)
        noise = rng.standard_normal((xs.shape[0], 6))
        return xs @ self.dynamics.a.T + noise @ self.dynamics.f.T

    def transition_logpdf(self, x_next, x_prev):
        return self.dynamics.transition_logpdf(x_next, x_prev)

    def sensor_mean(self, xs) -> np.ndarray:
        xs = np.atleast_2d(xs)
        px, py, pz = xs[:, 0], xs[:, 1], xs[:, 2]
        rho_xy = np.hypot(px, py)
        return np.stack(
            [np.arctan2(py, px), np.arctan2(pz, rho_xy), np.sqrt(px**2 + py**2 + pz**2)],
            axis=1,
        )

    def observation_sample(self, x, rng):
        return self.sensor_mean(x)[0] + self._obs_stds * rng.standard_normal(3)

    def observation_logpdf(self, y, xs):
        resid = np.asarray(y, dtype=float) - self.sensor_mean(xs)
        # angles live on the circle
        resid[:, :2] = (resid[:, :2] + np.pi) % (2 * np.pi) - np.pi
        z = resid / self._obs_stds
        return -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self._obs_stds)) - 1.5 * np.log(2 * np.pi)


def tracking_theta_conditional(
    spec: TrackingSpec,
    states: np.ndarray,
    rng: np.random.Generator,
    prior_shape: float = 1.0,
    prior_scale: float = 1.0,
) -> float:
    """Exact draw from the conditional of the transition-covariance scale
    given a full state path, under an inverse-gamma(shape, scale) prior.

    With innovations r_t = x_t - A x_{t-1} ~ N(0, theta * Q), the conditional
    is inverse-gamma(shape + 6(T-1)/2, scale + sum r Q^{-1} r / 2).  The
    initial state does not involve theta, so a length-1 path returns a prior
    draw.
    """
    states = np.atleast_2d(states)
    a, q = _cv_matrices(spec.dt)
    horizon = states.shape[0]
    if horizon < 2:
        quad = 0.0
        count = 0
    else:
        innov = states[1:] - states[:-1] @ a.T
        sol = np.linalg.solve(q, innov.T)
        quad = float(np.sum(innov.T * sol))
        count = horizon - 1
    shape = prior_shape + 3.0 * count  # 6 * count / 2
    scale = prior_scale + 0.5 * quad
    return float(scale / rng.gamma(shape))


# ---------------------------------------------------------------------------
# Stochastic Lorenz '63 (black-box simulator)
# ---------------------------------------------------------------------------


@dataclass
class Lorenz63Spec(StateSpaceModel):
    """Stochastic Lorenz '63 dynamics observed through the first component.

    The transition is exposed only as a sampler (a fine-grid discretisation
    with ``substeps`` Euler updates per observation interval; with additive
    noise the Milstein correction vanishes, so only the grid size matters).
    Density evaluation is deliberately absent: the model stands in for any
    black-box simulator.
    """

    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    noise_std: np.ndarray = field(default_factory=lambda: np.full(3, np.sqrt(5.0)))
    obs_std: float = 1.0
    dt: float = 0.01
    substeps: int = 10

    has_transition_density = False

    def __post_init__(self):
        self.noise_std = np.atleast_1d(np.asarray(self.noise_std, dtype=float))
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        self.state_dim = 3
        self.obs_dim = 1

    def drift(self, xs) -> np.ndarray:
        xs = np.atleast_2d(xs)
        q, r, s = xs[:, 0], xs[:, 1], xs[:, 2]
        return np.stack(
            [self.sigma * (r - q), q * (self.rho - s) - r, q * r - self.beta * s], axis=1
        )

    def initial_sample(self, size, rng):
        return rng.standard_normal((size, 3))

    def initial_logpdf(self, xs):
        xs = np.atleast_2d(xs)
        return -0.5 * np.sum(xs * xs, axis=1) - 1.5 * np.log(2 * np.pi)

    def transition_sample(self, xs, rng):
        return lorenz_transition_sample(self, xs, rng)

    def transition_logpdf(self, x_next, x_prev):
        raise IntractableTransition(
            "the Lorenz '63 transition is simulator-only; use the kernel-weighted "
            "ancestor sampling path instead"
        )

    def observation_sample(self, x, rng):
        return np.array([x[0] + self.obs_std * rng.standard_normal()])

    def observation_logpdf(self, y, xs):
        xs = np.atleast_2d(xs)
        z = (float(np.asarray(y).reshape(-1)[0]) - xs[:, 0]) / self.obs_std
        return -0.5 * z * z - np.log(self.obs_std) - 0.5 * np.log(2 * np.pi)


def lorenz_transition_sample(spec: Lorenz63Spec, xs, rng: np.random.Generator) -> np.ndarray:
    """Advance one observation interval with ``substeps`` fine-grid updates:
    x += drift(x) h + diag(noise_std) sqrt(h) xi  per substep."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float)).copy()
    h = spec.dt / spec.substeps
    scale = spec.noise_std * np.sqrt(h)
    for _ in range(spec.substeps):
        xs += spec.drift(xs) * h + scale * rng.standard_normal(xs.shape)
    return xs
