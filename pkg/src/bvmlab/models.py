"""Quasi-likelihood model families and data generation.

A :class:`QuasiModel` bundles a parametric quasi log-likelihood ``L(theta)``
for a fixed sample size ``n`` together with its analytic expectation under a
(possibly different) true data process.  The built-in families are

* Gaussian location (known sigma) and Gaussian linear regression with a
  fixed design: exact conjugate references,
* i.i.d. logistic regression and i.i.d. Poisson log-linear regression over
  a finite design pool, so that expected quantities are finite sums.

Each family has misspecified twins: scale-inflated or Student-t noise for
the Gaussian families (sandwich mismatch, heavy tails), a contaminated
response link for logistic, and negative-binomial overdispersion for
Poisson.

Datasets are stored as family-specific sufficient statistics, so the cost
of a likelihood evaluation does not grow with ``n`` for the pooled
families.  Regenerating a dataset from its recorded stream reproduces the
stored block bit for bit.

Convention: ``log_lik`` and ``expected_loglik`` are defined up to an
additive constant that does not depend on theta (the Poisson family drops
the ``-log y!`` term on both sides).  All downstream consumers use
differences, gradients, or Hessians, where the convention cancels.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import DomainViolation, UnsupportedCapability
from .rng import RngStream

DEFAULT_BOX_HALF_WIDTH = 50.0


# ---------------------------------------------------------------------------
# True processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianNoise:
    """Additive N(0, scale^2) observation noise."""
    scale: float = 1.0

    @property
    def variance(self) -> float:
        return self.scale**2

    @property
    def mean_exists(self) -> bool:
        return True


@dataclass(frozen=True)
class StudentTNoise:
    """Additive scaled Student-t noise; variance is infinite for df <= 2."""
    df: float
    scale: float = 1.0

    @property
    def variance(self) -> float:
        if self.df <= 2.0:
            return math.inf
        return self.scale**2 * self.df / (self.df - 2.0)

    @property
    def mean_exists(self) -> bool:
        return self.df > 1.0


NoiseLaw = Union[GaussianNoise, StudentTNoise]


@dataclass(frozen=True)
class LocationProcess:
    """True process for the Gaussian location / linear regression families."""
    theta: np.ndarray
    noise: NoiseLaw
    matches_model: bool = False

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))


@dataclass(frozen=True)
class BinaryProcess:
    """True Bernoulli response over the design pool.

    ``contamination = eps`` mixes the logistic link with a coin flip:
    P(y=1|x) = (1 - eps) * sigmoid(x' theta) + eps / 2.
    """
    theta: np.ndarray
    contamination: float = 0.0
    matches_model: bool = False

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if not 0.0 <= self.contamination < 1.0:
            raise ValueError("contamination must lie in [0, 1)")


@dataclass(frozen=True)
class CountProcess:
    """True count response with mean exp(x' theta).

    ``overdispersion = phi`` gives negative-binomial responses with
    Var(y|x) = mu (1 + phi mu); phi = 0 recovers Poisson.
    """
    theta: np.ndarray
    overdispersion: float = 0.0
    matches_model: bool = False

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.overdispersion < 0.0:
            raise ValueError("overdispersion must be nonnegative")


TrueProcess = Union[LocationProcess, BinaryProcess, CountProcess]


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetHandle:
    """Immutable observation block plus provenance.

    ``seed_record`` is the (seed, key) pair of the stream that generated the
    data, or None for externally supplied observations.
    """
    observations: object
    n: int
    seed_record: Optional[tuple] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sample size must be >= 1")


@dataclass(frozen=True)
class MeanData:
    y: np.ndarray            # (n, p)
    sum_y: np.ndarray        # (p,)
    sumsq: float             # sum_i ||y_i||^2

    @staticmethod
    def from_observations(y: np.ndarray) -> "MeanData":
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        return MeanData(y=y, sum_y=y.sum(axis=0), sumsq=float((y * y).sum()))


@dataclass(frozen=True)
class LinearData:
    y: np.ndarray            # (n,)
    xty: np.ndarray          # (p,)
    yty: float

    @staticmethod
    def from_observations(y: np.ndarray, design: np.ndarray) -> "LinearData":
        y = np.asarray(y, dtype=float).ravel()
        return LinearData(y=y, xty=design.T @ y, yty=float(y @ y))


@dataclass(frozen=True)
class PooledCounts:
    """Aggregated responses for pooled-design i.i.d. families.

    ``counts[k]`` observations fell on design point k; ``totals[k]`` is the
    number of successes (logistic) or the response sum (Poisson).
    """
    counts: np.ndarray       # (K,) int64
    totals: np.ndarray       # (K,) int64


# ---------------------------------------------------------------------------
# Base model
# ---------------------------------------------------------------------------

class QuasiModel(abc.ABC):
    """Quasi log-likelihood with analytic expectations under a true process.

    Subclasses must be consistent: ``score`` is the gradient of ``log_lik``,
    ``observed_hessian`` the gradient of ``score``, and the expected
    counterparts are the exact expectations under the declared process.
    The test suite enforces this with finite differences.
    """

    family_id: str = "base"

    def __init__(self, p: int, n: int, box_half_width: float = DEFAULT_BOX_HALF_WIDTH):
        if p < 1 or n < 1:
            raise ValueError("p and n must be >= 1")
        self.p = int(p)
        self.n = int(n)
        self.domain_box = np.column_stack(
            [np.full(p, -box_half_width), np.full(p, box_half_width)]
        )

    # -- parameter checks ---------------------------------------------------

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape != (self.p,):
            raise ValueError(f"theta must have dimension {self.p}")
        if not np.all(np.isfinite(theta)):
            bad = int(np.flatnonzero(~np.isfinite(theta))[0])
            raise DomainViolation(bad, theta[bad], *self.domain_box[bad])
        low, high = self.domain_box[:, 0], self.domain_box[:, 1]
        outside = (theta < low) | (theta > high)
        if outside.any():
            bad = int(np.flatnonzero(outside)[0])
            raise DomainViolation(bad, theta[bad], low[bad], high[bad])
        return theta

    def in_box(self, theta: np.ndarray) -> bool:
        return bool(
            np.all(theta >= self.domain_box[:, 0])
            and np.all(theta <= self.domain_box[:, 1])
        )

    # -- data-facing surface ------------------------------------------------

    @abc.abstractmethod
    def log_lik(self, data: DatasetHandle, theta) -> float: ...

    def log_lik_ratio(self, data: DatasetHandle, theta, theta_ref) -> float:
        """L(theta) - L(theta_ref); antisymmetric by construction."""
        return self.log_lik(data, theta) - self.log_lik(data, theta_ref)

    @abc.abstractmethod
    def score(self, data: DatasetHandle, theta) -> np.ndarray: ...

    @abc.abstractmethod
    def observed_hessian(self, data: DatasetHandle, theta) -> np.ndarray: ...

    # -- expectation-facing surface ------------------------------------------

    @abc.abstractmethod
    def expected_loglik(self, process: TrueProcess, theta) -> float: ...

    @abc.abstractmethod
    def expected_score(self, process: TrueProcess, theta) -> np.ndarray: ...

    @abc.abstractmethod
    def expected_hessian(self, process: TrueProcess, theta) -> np.ndarray: ...

    @abc.abstractmethod
    def score_cov(self, process: TrueProcess, theta) -> np.ndarray:
        """Var(grad L(theta)) under the true process."""

    def stochastic_score(self, data: DatasetHandle, process: TrueProcess, theta) -> np.ndarray:
        """Gradient of the stochastic component L - E L."""
        return self.score(data, theta) - self.expected_score(process, theta)

    @abc.abstractmethod
    def plugin_fisher(self, theta) -> np.ndarray:
        """Total Fisher information at theta under the parametric measure."""

    # -- sampling -------------------------------------------------------------

    @abc.abstractmethod
    def sample_dataset(self, process: TrueProcess, rng: RngStream) -> DatasetHandle: ...

    def _check_data(self, data: DatasetHandle):
        if data.n != self.n:
            raise ValueError(f"dataset has n={data.n}, model expects n={self.n}")


def _symmetrize(h: np.ndarray) -> np.ndarray:
    return (h + h.T) / 2.0


# ---------------------------------------------------------------------------
# Gaussian location family
# ---------------------------------------------------------------------------

class GaussianMeanModel(QuasiModel):
    """y_i ~ N(theta, sigma^2 I_p), i = 1..n, sigma known."""

    family_id = "gaussian_mean"

    def __init__(self, p: int, n: int, sigma: float = 1.0,
                 box_half_width: float = DEFAULT_BOX_HALF_WIDTH):
        super().__init__(p, n, box_half_width)
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)

    def log_lik(self, data, theta) -> float:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: MeanData = data.observations
        ssq = obs.sumsq - 2.0 * theta @ obs.sum_y + data.n * theta @ theta
        const = -0.5 * data.n * self.p * math.log(2.0 * math.pi * self.sigma**2)
        return const - ssq / (2.0 * self.sigma**2)

    def score(self, data, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: MeanData = data.observations
        return (obs.sum_y - data.n * theta) / self.sigma**2

    def observed_hessian(self, data, theta) -> np.ndarray:
        self.check_theta(theta)
        self._check_data(data)
        return -(data.n / self.sigma**2) * np.eye(self.p)

    def expected_loglik(self, process: LocationProcess, theta) -> float:
        theta = self.check_theta(theta)
        v = process.noise.variance
        if not math.isfinite(v):
            raise UnsupportedCapability(
                "expected log-likelihood needs finite noise variance"
            )
        mu = process.theta
        dist_sq = float((theta - mu) @ (theta - mu)) + self.p * v
        const = -0.5 * self.n * self.p * math.log(2.0 * math.pi * self.sigma**2)
        return const - self.n * dist_sq / (2.0 * self.sigma**2)

    def expected_score(self, process: LocationProcess, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        if not process.noise.mean_exists:
            raise UnsupportedCapability("true process has no mean")
        return self.n * (process.theta - theta) / self.sigma**2

    def expected_hessian(self, process: LocationProcess, theta) -> np.ndarray:
        self.check_theta(theta)
        return -(self.n / self.sigma**2) * np.eye(self.p)

    def score_cov(self, process: LocationProcess, theta) -> np.ndarray:
        self.check_theta(theta)
        v = process.noise.variance
        if not math.isfinite(v):
            raise UnsupportedCapability("score covariance is infinite for this process")
        return (self.n * v / self.sigma**4) * np.eye(self.p)

    def plugin_fisher(self, theta) -> np.ndarray:
        self.check_theta(theta)
        return (self.n / self.sigma**2) * np.eye(self.p)

    def sample_dataset(self, process: LocationProcess, rng: RngStream) -> DatasetHandle:
        gen = rng.generator()
        noise = process.noise
        if isinstance(noise, GaussianNoise):
            eps = gen.standard_normal((self.n, self.p)) * noise.scale
        elif isinstance(noise, StudentTNoise):
            eps = gen.standard_t(noise.df, size=(self.n, self.p)) * noise.scale
        else:
            raise UnsupportedCapability(f"unknown noise law {noise!r}")
        y = process.theta[None, :] + eps
        return DatasetHandle(MeanData.from_observations(y), self.n, (rng.seed, rng.key))

    def dataset_from_observations(self, y) -> DatasetHandle:
        obs = MeanData.from_observations(np.asarray(y, dtype=float))
        return DatasetHandle(obs, obs.y.shape[0], None)


# ---------------------------------------------------------------------------
# Gaussian linear regression family
# ---------------------------------------------------------------------------

class GaussianLinearModel(QuasiModel):
    """y = X theta + eps with fixed design X and known noise scale sigma."""

    family_id = "gaussian_linear"

    def __init__(self, p: int, n: int, sigma: float = 1.0, design_seed: int = 0,
                 box_half_width: float = DEFAULT_BOX_HALF_WIDTH):
        super().__init__(p, n, box_half_width)
        if n < p:
            raise ValueError("linear regression needs n >= p")
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)
        self.design_seed = int(design_seed)
        gen = RngStream(self.design_seed, (101,)).generator()
        self.design = gen.standard_normal((n, p))
        self.xtx = _symmetrize(self.design.T @ self.design)

    def log_lik(self, data, theta) -> float:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: LinearData = data.observations
        rss = obs.yty - 2.0 * theta @ obs.xty + theta @ self.xtx @ theta
        const = -0.5 * data.n * math.log(2.0 * math.pi * self.sigma**2)
        return const - rss / (2.0 * self.sigma**2)

    def score(self, data, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: LinearData = data.observations
        return (obs.xty - self.xtx @ theta) / self.sigma**2

    def observed_hessian(self, data, theta) -> np.ndarray:
        self.check_theta(theta)
        self._check_data(data)
        return -self.xtx / self.sigma**2

    def expected_loglik(self, process: LocationProcess, theta) -> float:
        theta = self.check_theta(theta)
        v = process.noise.variance
        if not math.isfinite(v):
            raise UnsupportedCapability(
                "expected log-likelihood needs finite noise variance"
            )
        d = theta - process.theta
        const = -0.5 * self.n * math.log(2.0 * math.pi * self.sigma**2)
        return const - (d @ self.xtx @ d + self.n * v) / (2.0 * self.sigma**2)

    def expected_score(self, process: LocationProcess, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        if not process.noise.mean_exists:
            raise UnsupportedCapability("true process has no mean")
        return self.xtx @ (process.theta - theta) / self.sigma**2

    def expected_hessian(self, process: LocationProcess, theta) -> np.ndarray:
        self.check_theta(theta)
        return -self.xtx / self.sigma**2

    def score_cov(self, process: LocationProcess, theta) -> np.ndarray:
        self.check_theta(theta)
        v = process.noise.variance
        if not math.isfinite(v):
            raise UnsupportedCapability("score covariance is infinite for this process")
        return (v / self.sigma**4) * self.xtx

    def plugin_fisher(self, theta) -> np.ndarray:
        self.check_theta(theta)
        return self.xtx / self.sigma**2

    def sample_dataset(self, process: LocationProcess, rng: RngStream) -> DatasetHandle:
        gen = rng.generator()
        noise = process.noise
        if isinstance(noise, GaussianNoise):
            eps = gen.standard_normal(self.n) * noise.scale
        elif isinstance(noise, StudentTNoise):
            eps = gen.standard_t(noise.df, size=self.n) * noise.scale
        else:
            raise UnsupportedCapability(f"unknown noise law {noise!r}")
        y = self.design @ process.theta + eps
        return DatasetHandle(LinearData.from_observations(y, self.design),
                             self.n, (rng.seed, rng.key))

    def dataset_from_observations(self, y) -> DatasetHandle:
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != self.n:
            raise ValueError("observation vector length must equal n")
        return DatasetHandle(LinearData.from_observations(y, self.design), self.n, None)

    def least_squares(self, data: DatasetHandle) -> np.ndarray:
        obs: LinearData = data.observations
        return np.linalg.solve(self.xtx, obs.xty)


# ---------------------------------------------------------------------------
# Pooled-design GLM families
# ---------------------------------------------------------------------------

def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class _PooledModel(QuasiModel):
    """Common machinery for i.i.d. families over a finite design pool.

    Observations are drawn by picking a pool point uniformly and sampling a
    response; datasets aggregate to per-point counts and response totals, so
    likelihood evaluations cost O(K p) regardless of n.
    """

    def __init__(self, p: int, n: int, pool_size: Optional[int] = None,
                 design_seed: int = 0, design_scale: float = 1.5,
                 box_half_width: float = DEFAULT_BOX_HALF_WIDTH):
        super().__init__(p, n, box_half_width)
        k = int(pool_size) if pool_size is not None else max(4 * p, 16)
        if k < p:
            raise ValueError("design pool must have at least p points")
        self.pool_size = k
        self.design_seed = int(design_seed)
        gen = RngStream(self.design_seed, (202,)).generator()
        self.pool = gen.standard_normal((k, p)) * (design_scale / math.sqrt(p))

    def _eta(self, theta: np.ndarray) -> np.ndarray:
        return self.pool @ theta

    @abc.abstractmethod
    def _true_mean(self, process) -> np.ndarray:
        """Per-pool-point true response mean."""

    @abc.abstractmethod
    def _true_var(self, process) -> np.ndarray:
        """Per-pool-point true response variance."""

    @abc.abstractmethod
    def _model_mean(self, eta: np.ndarray) -> np.ndarray:
        """Model response mean as a function of the linear predictor."""

    def expected_score(self, process, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        resid = self._true_mean(process) - self._model_mean(self._eta(theta))
        return (self.n / self.pool_size) * (self.pool.T @ resid)

    @abc.abstractmethod
    def _mean_derivative(self, eta: np.ndarray) -> np.ndarray:
        """Derivative of the model mean in the linear predictor."""

    def plugin_fisher(self, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        w = self._mean_derivative(self._eta(theta))
        h = (self.pool * w[:, None]).T @ self.pool * (self.n / self.pool_size)
        return _symmetrize(h)

    def score_cov(self, process, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        m = self._true_mean(process)
        v = self._true_var(process)
        resid = m - self._model_mean(self._eta(theta))
        w = v + resid**2
        second = (self.pool * w[:, None]).T @ self.pool / self.pool_size
        mean_vec = self.pool.T @ resid / self.pool_size
        per_obs = second - np.outer(mean_vec, mean_vec)
        return self.n * _symmetrize(per_obs)

    def _sample_pool_counts(self, gen: np.random.Generator) -> np.ndarray:
        probs = np.full(self.pool_size, 1.0 / self.pool_size)
        return gen.multinomial(self.n, probs)


class LogisticModel(_PooledModel):
    """i.i.d. logistic regression over a finite design pool."""

    family_id = "logistic"

    def _model_mean(self, eta):
        return _sigmoid(eta)

    def _true_mean(self, process: BinaryProcess) -> np.ndarray:
        base = _sigmoid(self.pool @ process.theta)
        eps = process.contamination
        return (1.0 - eps) * base + eps / 2.0

    def _true_var(self, process: BinaryProcess) -> np.ndarray:
        m = self._true_mean(process)
        return m * (1.0 - m)

    def log_lik(self, data, theta) -> float:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: PooledCounts = data.observations
        eta = self._eta(theta)
        return float(obs.totals @ eta - obs.counts @ np.logaddexp(0.0, eta))

    def score(self, data, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: PooledCounts = data.observations
        return self.pool.T @ (obs.totals - obs.counts * _sigmoid(self._eta(theta)))

    def observed_hessian(self, data, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: PooledCounts = data.observations
        s = _sigmoid(self._eta(theta))
        w = obs.counts * s * (1.0 - s)
        return _symmetrize(-(self.pool * w[:, None]).T @ self.pool)

    def expected_loglik(self, process: BinaryProcess, theta) -> float:
        theta = self.check_theta(theta)
        eta = self._eta(theta)
        m = self._true_mean(process)
        per_obs = float(np.mean(m * eta - np.logaddexp(0.0, eta)))
        return self.n * per_obs

    def expected_hessian(self, process: BinaryProcess, theta) -> np.ndarray:
        self.check_theta(theta)
        return -self.plugin_fisher(theta)

    def _mean_derivative(self, eta):
        s = _sigmoid(eta)
        return s * (1.0 - s)

    def sample_dataset(self, process: BinaryProcess, rng: RngStream) -> DatasetHandle:
        gen = rng.generator()
        counts = self._sample_pool_counts(gen)
        successes = gen.binomial(counts, self._true_mean(process))
        obs = PooledCounts(counts=counts, totals=successes.astype(np.int64))
        return DatasetHandle(obs, self.n, (rng.seed, rng.key))


class PoissonModel(_PooledModel):
    """i.i.d. Poisson log-linear regression over a finite design pool.

    The theta-independent ``-log y!`` term is dropped from both ``log_lik``
    and ``expected_loglik`` (see module docstring).
    """

    family_id = "poisson"

    def _model_mean(self, eta):
        return np.exp(eta)

    def _true_mean(self, process: CountProcess) -> np.ndarray:
        return np.exp(self.pool @ process.theta)

    def _true_var(self, process: CountProcess) -> np.ndarray:
        mu = self._true_mean(process)
        return mu * (1.0 + process.overdispersion * mu)

    def log_lik(self, data, theta) -> float:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: PooledCounts = data.observations
        eta = self._eta(theta)
        return float(obs.totals @ eta - obs.counts @ np.exp(eta))

    def score(self, data, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: PooledCounts = data.observations
        return self.pool.T @ (obs.totals - obs.counts * np.exp(self._eta(theta)))

    def observed_hessian(self, data, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        self._check_data(data)
        obs: PooledCounts = data.observations
        w = obs.counts * np.exp(self._eta(theta))
        return _symmetrize(-(self.pool * w[:, None]).T @ self.pool)

    def expected_loglik(self, process: CountProcess, theta) -> float:
        theta = self.check_theta(theta)
        eta = self._eta(theta)
        mu = self._true_mean(process)
        return self.n * float(np.mean(mu * eta - np.exp(eta)))

    def expected_hessian(self, process: CountProcess, theta) -> np.ndarray:
        self.check_theta(theta)
        return -self.plugin_fisher(theta)

    def _mean_derivative(self, eta):
        return np.exp(eta)

    def sample_dataset(self, process: CountProcess, rng: RngStream) -> DatasetHandle:
        gen = rng.generator()
        counts = self._sample_pool_counts(gen)
        mu = self._true_mean(process)
        phi = process.overdispersion
        if phi == 0.0:
            totals = gen.poisson(counts * mu)
        else:
            # NB(r, q) sums over a cell to NB(counts * r, q); zero-count
            # cells contribute zero.
            r = 1.0 / phi
            q = r / (r + mu)
            totals = np.zeros(self.pool_size, dtype=np.int64)
            pos = counts > 0
            totals[pos] = gen.negative_binomial(counts[pos] * r, q[pos])
        obs = PooledCounts(counts=counts, totals=np.asarray(totals, dtype=np.int64))
        return DatasetHandle(obs, self.n, (rng.seed, rng.key))


# ---------------------------------------------------------------------------
# Monte Carlo fallback for user-defined models
# ---------------------------------------------------------------------------

def mc_expected_loglik(model: QuasiModel, process: TrueProcess, theta,
                       rng: RngStream, n_rep: int = 100_000) -> tuple[float, float]:
    """Monte Carlo estimate of E L(theta) for models without analytic forms.

    Returns (estimate, standard error) over ``n_rep`` replicate datasets.
    """
    if n_rep < 2:
        raise ValueError("need at least two replications")
    vals = np.empty(n_rep)
    for i in range(n_rep):
        data = model.sample_dataset(process, rng.child(i))
        vals[i] = model.log_lik(data, theta)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_rep))


FAMILY_REGISTRY = {
    "gaussian_mean": GaussianMeanModel,
    "gaussian_linear": GaussianLinearModel,
    "logistic": LogisticModel,
    "poisson": PoissonModel,
}
