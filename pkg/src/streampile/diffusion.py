"""Discrete variance-preserving diffusion machinery.

Everything is indexed by integer timesteps t in [0, T], with t = 0 the
clean state: alpha_bar(0) = 1.  The forward process is

    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps,   eps ~ N(0, I)

with abar the cumulative product of (1 - beta).  Sampling steps (DDIM,
consistency-model renoising) and conversions between the epsilon / x0 /
v prediction parameterizations live here; they are pure functions of
explicit inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

PREDICTION_KINDS = ("epsilon", "x0", "v")


@dataclass(frozen=True)
class NoiseSchedule:
    """Scaled-linear beta schedule with precomputed cumulative products.

    beta has T entries for timesteps 1..T; alpha_bar has T+1 entries and
    is indexed directly by timestep, alpha_bar[0] = 1.
    """

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def abar(self, t):
        """alpha_bar at integer timestep(s) t, validating 0 <= t <= T."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ConfigError(f"timestep out of range [0, {self.T}]: {t}")
        return self.alpha_bar[t.astype(int)]


def build_schedule(T: int, beta_start: float = 0.00085, beta_end: float = 0.012) -> NoiseSchedule:
    """Scaled-linear schedule: sqrt(beta) interpolated linearly over T steps."""
    if T < 2:
        raise ConfigError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    sqrt_beta = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T)
    beta = sqrt_beta**2
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def add_noise(x0, eps, t, schedule: NoiseSchedule):
    """Forward-noise x0 to timestep t: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.

    t may be a scalar or an array broadcastable against the leading axes
    of x0 (per-frame timesteps for a window).
    """
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    ab = _expand(schedule.abar(t), x0)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


@dataclass(frozen=True)
class Prediction:
    """A denoiser output: per-frame vectors in one of three parameterizations.

    kind "v" is v = sqrt(abar) eps - sqrt(1-abar) x0; the conversions
    below are the algebraic identities of the VP forward process and
    round-trip exactly.
    """

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in PREDICTION_KINDS:
            raise ConfigError(f"unknown prediction kind {self.kind!r}")


def _expand(ab, like):
    # per-frame coefficients broadcast over the trailing feature axis;
    # scalars broadcast as-is
    ab = np.asarray(ab, dtype=float)
    return ab[..., None] if ab.ndim > 0 else ab


def convert_prediction(p: Prediction, xt, t, schedule: NoiseSchedule, target_kind: str) -> Prediction:
    """Convert a prediction between epsilon / x0 / v parameterizations.

    Converting to epsilon or v at t = 0 is undefined (the noise
    component of x_0 is unobservable) and raises ConfigError.
    """
    if target_kind not in PREDICTION_KINDS:
        raise ConfigError(f"unknown target kind {target_kind!r}")
    if p.kind == target_kind:
        return p
    xt = np.asarray(xt, dtype=float)
    ab = _expand(schedule.abar(t), xt)
    a = np.sqrt(ab)
    s = np.sqrt(1.0 - ab)

    # first reduce to x0
    if p.kind == "x0":
        x0 = p.values
    elif p.kind == "v":
        x0 = a * xt - s * p.values
    else:  # epsilon
        x0 = (xt - s * p.values) / a

    if target_kind == "x0":
        return Prediction("x0", x0)
    if np.any(s == 0.0):
        raise ConfigError(f"cannot derive {target_kind} at t=0 (no noise component)")
    eps = (xt - a * x0) / s
    if target_kind == "epsilon":
        return Prediction("epsilon", eps)
    return Prediction("v", a * eps - s * x0)


def ddim_step(xt, x0_hat, t, t_next, schedule: NoiseSchedule):
    """Deterministic (eta = 0) DDIM update from t to t_next < t.

    eps_hat is re-derived from (xt, x0_hat, t), then recombined at
    t_next; with t_next = 0 this returns x0_hat exactly.
    """
    t_arr = np.asarray(t)
    tn_arr = np.asarray(t_next)
    if np.any(tn_arr >= t_arr):
        raise ConfigError(f"ddim_step requires t_next < t, got t={t}, t_next={t_next}")
    xt = np.asarray(xt, dtype=float)
    x0_hat = np.asarray(x0_hat, dtype=float)
    ab = _expand(schedule.abar(t), xt)
    abn = _expand(schedule.abar(t_next), xt)
    eps_hat = (xt - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)
    return np.sqrt(abn) * x0_hat + np.sqrt(1.0 - abn) * eps_hat


def cm_renoise_step(x0_hat, t_next, rng: np.random.Generator, schedule: NoiseSchedule):
    """Consistency-model multistep renoising: forward-noise the clean
    estimate to t_next with fresh standard normal noise; identity at
    t_next = 0."""
    x0_hat = np.asarray(x0_hat, dtype=float)
    if np.ndim(t_next) == 0 and int(t_next) == 0:
        return x0_hat.copy()
    eps = rng.standard_normal(x0_hat.shape)
    out = add_noise(x0_hat, eps, t_next, schedule)
    if np.ndim(t_next) > 0:
        clean = np.asarray(t_next) == 0
        out[clean] = x0_hat[clean]
    return out
