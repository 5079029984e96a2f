"""Closed-form Gaussian window prior and the two oracle maps built on it.

The prior over a window of n frames (each a d-vector) is N(mu, Sigma)
with Sigma = C kron I_d, where C is a stationary AR(1) frame kernel
C[i, j] = rho^|i-j| scaled by a per-dimension variance.  Noising is
per-frame independent, so with A = diag(sqrt(abar_ti)) and
R = diag(1 - abar_ti) the noisy window is N(A mu, A Sigma A^T + R).

Two exact objects follow:

* the posterior mean E[x0 | xt] = mu + Sigma A^T (A Sigma A^T + R)^-1
  (xt - A mu) -- the minimum-MSE denoiser, used as verification oracle
  and distillation teacher;

* the transport to clean, f(xt) = mu + Sigma^{1/2} S^{-1/2} (xt - A mu)
  with S = A Sigma A^T + R and symmetric PSD roots.  f pushes the noisy
  marginal onto the prior exactly (M S M^T = Sigma), so driving the
  multistep sampler with it reproduces the data distribution -- the
  posterior mean cannot play this role because it contracts variance.

Both maps are affine and are cached per distinct timestep vector; the
cache is guarded by a lock so concurrent readers are safe.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .diffusion import NoiseSchedule
from .errors import ConfigError, NumericError


_prior_counter = itertools.count()


@dataclass(frozen=True)
class GaussianPrior:
    """Materialized window prior: mean vector and SPD covariance over
    n_frames * d dimensions, stored frame-major.

    token identifies the instance in affine-map caches (id() is unsafe:
    it can be reused after garbage collection).
    """

    n_frames: int
    d: int
    mu: np.ndarray
    sigma: np.ndarray
    token: int = field(default_factory=lambda: next(_prior_counter))

    def __post_init__(self):
        n = self.n_frames * self.d
        if self.mu.shape != (n,) or self.sigma.shape != (n, n):
            raise ConfigError(
                f"prior shapes inconsistent: mu {self.mu.shape}, sigma {self.sigma.shape}, n={n}"
            )
        if not np.allclose(self.sigma, self.sigma.T):
            raise ConfigError("prior covariance must be symmetric")


@dataclass
class Ar1Spec:
    """AR(1) prior family: materializes GaussianPrior for any window length.

    rho = 0.95 and d = 8 make temporal correlation strong enough that
    streaming-vs-offline equivalence is a nontrivial check.
    """

    d: int = 8
    rho: float = 0.95
    mean: float = 0.0
    std: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if not (0.0 <= self.rho < 1.0):
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.std <= 0:
            raise ConfigError(f"std must be positive, got {self.std}")

    def frame_kernel(self, n_frames: int) -> np.ndarray:
        """n x n AR(1) correlation matrix times the per-dim variance."""
        idx = np.arange(n_frames)
        if self.rho == 0.0:
            c = np.eye(n_frames)
        else:
            c = self.rho ** np.abs(idx[:, None] - idx[None, :])
        return self.std**2 * c

    def materialize(self, n_frames: int) -> GaussianPrior:
        with self._lock:
            if n_frames in self._cache:
                return self._cache[n_frames]
        c = self.frame_kernel(n_frames)
        sigma = np.kron(c, np.eye(self.d))
        mu = np.full(n_frames * self.d, self.mean)
        prior = GaussianPrior(n_frames=n_frames, d=self.d, mu=mu, sigma=sigma)
        with self._lock:
            self._cache[n_frames] = prior
        return prior

    def sample(self, rng: np.random.Generator, n_windows: int, n_frames: int) -> np.ndarray:
        """Draw (n_windows, n_frames, d) windows from the prior."""
        c = self.frame_kernel(n_frames)
        chol = np.linalg.cholesky(c)
        z = rng.standard_normal((n_windows, n_frames, self.d))
        return np.einsum("ij,bjd->bid", chol, z) + self.mean


def ar1_prior(n_frames: int, d: int = 8, rho: float = 0.95, mean: float = 0.0, std: float = 1.0) -> GaussianPrior:
    """Convenience constructor for a materialized AR(1) window prior."""
    return Ar1Spec(d=d, rho=rho, mean=mean, std=std).materialize(n_frames)


def _check_tvec(prior: GaussianPrior, t_vec) -> np.ndarray:
    t_vec = np.asarray(t_vec, dtype=int)
    if t_vec.shape != (prior.n_frames,):
        raise ConfigError(f"t_vec shape {t_vec.shape} does not match {prior.n_frames} frames")
    return t_vec


def _scaling(prior: GaussianPrior, t_vec, schedule: NoiseSchedule):
    """Per-coordinate sqrt(abar) and (1 - abar), expanded frame -> dims."""
    t_vec = _check_tvec(prior, t_vec)
    ab = schedule.abar(t_vec)
    a = np.repeat(np.sqrt(ab), prior.d)
    r = np.repeat(1.0 - ab, prior.d)
    return a, r


class _AffineMapCache:
    """Per-t_vec affine maps, safe for concurrent read with exclusive insert."""

    def __init__(self):
        self._maps = {}
        self._lock = threading.Lock()

    def get_or_build(self, key, builder):
        hit = self._maps.get(key)
        if hit is not None:
            return hit
        built = builder()
        with self._lock:
            return self._maps.setdefault(key, built)


_posterior_cache = _AffineMapCache()
_transport_cache = _AffineMapCache()


def _posterior_matrix(prior: GaussianPrior, t_vec, schedule: NoiseSchedule) -> np.ndarray:
    """W = Sigma A^T (A Sigma A^T + R)^-1, cached per timestep vector."""
    t_vec = _check_tvec(prior, t_vec)
    key = (prior.token, tuple(int(t) for t in t_vec))

    def build():
        a, r = _scaling(prior, t_vec, schedule)
        s = prior.sigma * np.outer(a, a) + np.diag(r)
        try:
            factor = cho_factor(s)
        except LinAlgError as exc:
            cond = np.linalg.cond(s)
            raise NumericError(f"noisy-window covariance not SPD (cond={cond:.3e})") from exc
        return cho_solve(factor, (prior.sigma * a[None, :]).T).T

    return _posterior_cache.get_or_build(key, build)


def gaussian_posterior_denoise(xt, t_vec, prior: GaussianPrior, schedule: NoiseSchedule) -> np.ndarray:
    """Exact posterior mean E[x0 | xt] under per-frame independent noising.

    xt has shape (n_frames, d) or (batch, n_frames, d); the returned
    array matches.  This is the unique minimizer of expected squared
    error and the distillation teacher.
    """
    xt = np.asarray(xt, dtype=float)
    w = _posterior_matrix(prior, t_vec, schedule)
    a, _ = _scaling(prior, t_vec, schedule)
    flat = xt.reshape(*xt.shape[:-2], prior.n_frames * prior.d)
    centered = flat - a * prior.mu
    out = prior.mu + centered @ w.T
    return out.reshape(xt.shape)


def posterior_var_diag(t_vec, prior: GaussianPrior, schedule: NoiseSchedule) -> np.ndarray:
    """Diagonal of the posterior covariance Sigma - W A Sigma (per coordinate).

    Gives the Bayes floor for denoising losses: Var(x0_i | xt) does not
    depend on the observed value for Gaussian priors.
    """
    w = _posterior_matrix(prior, t_vec, schedule)
    a, _ = _scaling(prior, t_vec, schedule)
    post = prior.sigma - w @ (a[:, None] * prior.sigma)
    return np.diag(post).copy()


def _spd_sqrt_pair(m: np.ndarray):
    """(m^{1/2}, m^{-1/2}) via eigendecomposition; raises on non-PD input."""
    w, u = np.linalg.eigh(m)
    if w.min() <= 0:
        raise NumericError(f"matrix not positive definite (min eig {w.min():.3e})")
    root = (u * np.sqrt(w)) @ u.T
    inv_root = (u / np.sqrt(w)) @ u.T
    return root, inv_root


def _transport_matrix(prior: GaussianPrior, t_vec, schedule: NoiseSchedule) -> np.ndarray:
    """M = Sigma^{1/2} S^{-1/2} with S the noisy-window covariance.

    M S M^T = Sigma exactly, so mu + M (xt - A mu) maps the staggered
    noisy marginal onto the prior: composed with fresh renoising this
    yields an exact sampler of the prior (up to the standard pure-noise
    approximation at t = T).
    """
    t_vec = _check_tvec(prior, t_vec)
    key = (prior.token, tuple(int(t) for t in t_vec))

    def build():
        a, r = _scaling(prior, t_vec, schedule)
        s = prior.sigma * np.outer(a, a) + np.diag(r)
        sigma_root, _ = _spd_sqrt_pair(prior.sigma)
        _, s_inv_root = _spd_sqrt_pair(s)
        return sigma_root @ s_inv_root

    return _transport_cache.get_or_build(key, build)


def transport_to_clean(xt, t_vec, prior: GaussianPrior, schedule: NoiseSchedule) -> np.ndarray:
    """Exact Gaussian transport of a noisy window to the clean prior.

    The distribution-level inverse of forward noising: the consistency
    function of the oracle.  Identity when all timesteps are 0.
    """
    xt = np.asarray(xt, dtype=float)
    m = _transport_matrix(prior, t_vec, schedule)
    a, _ = _scaling(prior, t_vec, schedule)
    flat = xt.reshape(*xt.shape[:-2], prior.n_frames * prior.d)
    out = prior.mu + (flat - a * prior.mu) @ m.T
    return out.reshape(xt.shape)
