"""Consistency wrapper and consistency distillation against a teacher solver.

The wrapper enforces the boundary condition by parameterization,

    f(x, t) = c_skip(t) * x + c_out(t) * x0_hat(x, t),
    c_skip(0) = 1,  c_out(0) = 0,

so f(x, 0) = x bit-exactly regardless of the inner network.  Training
minimizes the distance between the online network at t_{n+1} and an EMA
target network evaluated at the teacher's one-solver-step backtrack
x_hat_{t_n}, with adjacent (t_n, t_{n+1}) drawn from a uniform teacher
grid; the distance is the pseudo-Huber norm and the classifier-free
guidance combination is applied to the teacher in epsilon space so the
student absorbs the guidance strength.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .denoisers import Denoiser
from .diffusion import NoiseSchedule, Prediction, add_noise, convert_prediction, ddim_step
from .errors import ConfigError, NumericError
from .toynet import ToyNetParams, backward, forward_with_tape
from .training import AdamW


def boundary_coefficients(t, T: int, sigma_data: float = 1.0, s: float = 1.0):
    """(c_skip, c_out) with c_skip(0) = 1, c_out(0) = 0.

    c_skip = sigma_d^2 / ((t/T)^2 s^2 + sigma_d^2),
    c_out  = (t/T) s sigma_d / sqrt(sigma_d^2 + (t/T)^2 s^2).
    """
    tau = np.asarray(t, dtype=float) / T * s
    c_skip = sigma_data**2 / (tau**2 + sigma_data**2)
    c_out = tau * sigma_data / np.sqrt(sigma_data**2 + tau**2)
    return c_skip, c_out


class ConsistencyWrapper:
    """Boundary-parameterized consistency function around any denoiser.

    Usable directly as a stream denoiser: its clean estimate is f(x, t).
    """

    def __init__(self, inner: Denoiser, schedule: NoiseSchedule, sigma_data: float = 1.0):
        self.inner = inner
        self.schedule = schedule
        self.sigma_data = sigma_data

    def consistency(self, x, t_vec, cond=None, reference=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pred = self.inner.predict(x, t_vec, cond, reference)
        x0_hat = convert_prediction(pred, x, t_vec, self.schedule, "x0").values
        c_skip, c_out = boundary_coefficients(t_vec, self.schedule.T, self.sigma_data)
        if np.ndim(c_skip) > 0:
            c_skip = c_skip[..., None]
            c_out = c_out[..., None]
        return c_skip * x + c_out * x0_hat

    def predict(self, latents, t_vec, cond=None, reference=None) -> Prediction:
        return Prediction("x0", self.consistency(latents, t_vec, cond, reference))

    def clean_estimate(self, latents, t_vec, cond=None, reference=None) -> np.ndarray:
        return self.consistency(latents, t_vec, cond, reference)


def consistency_fn(x, t_vec, wrapper: ConsistencyWrapper, cond=None, reference=None) -> np.ndarray:
    """Functional form of the wrapper: clean estimates for a window."""
    return wrapper.consistency(x, t_vec, cond, reference)


def huber(a, b, c: float) -> float:
    """Pseudo-Huber distance sqrt(||a-b||^2 + c^2) - c over flattened inputs."""
    if c <= 0:
        raise ConfigError(f"huber scale c must be positive, got {c}")
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ConfigError(f"huber operands differ in size: {a.shape} vs {b.shape}")
    return float(math.sqrt(float(np.sum((a - b) ** 2)) + c * c) - c)


def cfg_teacher(pred_cond: Prediction, pred_uncond: Prediction, omega: float) -> Prediction:
    """Classifier-free guidance combination pred_u + omega (pred_c - pred_u)."""
    if pred_cond.kind != pred_uncond.kind:
        raise ConfigError(
            f"prediction kinds differ: {pred_cond.kind} vs {pred_uncond.kind}"
        )
    values = pred_uncond.values + omega * (pred_cond.values - pred_uncond.values)
    return Prediction(pred_cond.kind, values)


def teacher_grid(T: int, solver_steps: int = 100) -> np.ndarray:
    """Uniform solver timesteps: `solver_steps` integers from 1 to T ascending."""
    return np.unique(np.linspace(1, T, solver_steps).round().astype(int))


@dataclass
class DistillState:
    """Online parameters, EMA target, optimizer and distillation settings."""

    theta: ToyNetParams
    theta_minus: ToyNetParams
    schedule: NoiseSchedule
    ema_rate: float = 0.95
    omega: float = 2.0
    huber_c: float = 1e-3
    solver_steps: int = 100
    sigma_data: float = 1.0
    mask: str = "full"
    optimizer: AdamW = None
    step_count: int = 0
    grid: np.ndarray = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.ema_rate <= 1.0):
            raise ConfigError(f"ema_rate must lie in (0, 1], got {self.ema_rate}")
        self.grid = teacher_grid(self.schedule.T, self.solver_steps)
        if self.optimizer is None:
            self.optimizer = AdamW(lr=2e-3)

    def student_consistency(self, params: ToyNetParams, x, t: int, cond=None, reference=None):
        """f_theta at uniform window timestep t, with the forward tape."""
        b, n, _ = x.shape
        t_vec = np.full((b, n), float(t))
        v, tape = forward_with_tape(params, x, t_vec, cond, reference, self.mask)
        ab = self.schedule.abar(t)
        x0_hat = np.sqrt(ab) * x - np.sqrt(1.0 - ab) * v
        c_skip, c_out = boundary_coefficients(t, self.schedule.T, self.sigma_data)
        return c_skip * x + c_out * x0_hat, tape, c_out


def _teacher_x0(teacher: Denoiser, x, t: int, cond, uncond, reference, omega, schedule):
    """Teacher x0 estimate with CFG absorbed: combine in epsilon space."""
    b, n, _ = x.shape
    t_vec = np.full(n, t)
    pc = teacher.predict(x, t_vec, cond, reference)
    pu = teacher.predict(x, t_vec, uncond, reference)
    eps_c = convert_prediction(pc, x, t_vec, schedule, "epsilon")
    eps_u = convert_prediction(pu, x, t_vec, schedule, "epsilon")
    guided = cfg_teacher(eps_c, eps_u, omega)
    return convert_prediction(guided, x, t_vec, schedule, "x0").values


def cd_step(state: DistillState, batch, teacher: Denoiser, rng: np.random.Generator,
            cond=None, uncond=None, reference=None):
    """One consistency-distillation update (uniform lambda weighting).

    batch: (B, K, d) clean windows.  Samples an adjacent solver pair
    (t_n, t_{n+1}), noises the batch to t_{n+1}, backtracks one teacher
    DDIM step with guidance, and pulls f_theta(x_{t_{n+1}}) toward
    f_{theta-}(x_hat_{t_n}) under the pseudo-Huber distance.  The EMA
    target never receives gradients.
    """
    x0 = np.asarray(batch, dtype=float)
    b = x0.shape[0]
    grid = state.grid
    n_idx = int(rng.integers(0, len(grid) - 1))
    t_lo, t_hi = int(grid[n_idx]), int(grid[n_idx + 1])

    eps = rng.standard_normal(x0.shape)
    x_hi = add_noise(x0, eps, t_hi, state.schedule)
    x0_teacher = _teacher_x0(teacher, x_hi, t_hi, cond, uncond, reference, state.omega, state.schedule)
    x_lo = ddim_step(x_hi, x0_teacher, t_hi, t_lo, state.schedule)

    f_online, tape, c_out = state.student_consistency(state.theta, x_hi, t_hi, cond, reference)
    f_target, _, _ = state.student_consistency(state.theta_minus, x_lo, t_lo, cond, reference)

    diff = (f_online - f_target).reshape(b, -1)
    norms = np.sqrt(np.sum(diff**2, axis=1) + state.huber_c**2)
    loss = float(np.mean(norms - state.huber_c))
    if not np.isfinite(loss):
        raise NumericError(f"distillation loss diverged at step {state.step_count}: {loss}")

    # d loss / d f_online, then chain through x0_hat = a x - s v
    d_f = (diff / norms[:, None] / b).reshape(f_online.shape)
    ab_hi = state.schedule.abar(t_hi)
    d_v = d_f * c_out * (-np.sqrt(1.0 - ab_hi))
    grads = backward(state.theta, tape, d_v)

    state.step_count += 1
    state.theta = state.optimizer.update(state.theta, grads, state.step_count)
    r = state.ema_rate
    state.theta_minus = state.theta_minus.map(lambda tm, th: r * tm + (1.0 - r) * th, state.theta)
    return loss


def distill(teacher: Denoiser, student_init: ToyNetParams, steps: int, schedule: NoiseSchedule,
            data_sampler: Callable[[np.random.Generator, int], np.ndarray],
            rng: np.random.Generator, batch_size: int = 256, ema_rate: float = 0.95,
            omega: float = 2.0, huber_c: float = 1e-3, solver_steps: int = 100,
            lr: float = 2e-3, sigma_data: float = 1.0, mask: str = "full",
            loss_sink: Optional[Callable[[dict], None]] = None) -> ToyNetParams:
    """Run consistency distillation for `steps` updates and return theta.

    data_sampler(rng, batch_size) yields clean (B, K, d) windows.
    loss_sink, when given, receives one record per step (NDJSON-ready).
    """
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    state = DistillState(
        theta=student_init,
        theta_minus=student_init.map(np.copy),
        schedule=schedule,
        ema_rate=ema_rate,
        omega=omega,
        huber_c=huber_c,
        solver_steps=solver_steps,
        sigma_data=sigma_data,
        mask=mask,
        optimizer=AdamW(lr=lr),
    )
    for _ in range(steps):
        batch = data_sampler(rng, batch_size)
        loss = cd_step(state, batch, teacher, rng)
        if loss_sink is not None:
            loss_sink({"step": state.step_count, "loss": loss})
    return state.theta


def cm_multistep_sample(clean_fn, shape, timesteps, rng: np.random.Generator,
                        schedule: NoiseSchedule) -> np.ndarray:
    """Multistep consistency sampling on a window: start from pure noise
    at the first (highest) timestep, alternate clean prediction and
    fresh renoising down the list, return the final clean estimate.

    clean_fn(x, t) -> clean window estimate at uniform timestep t.
    """
    ts = [int(t) for t in timesteps]
    if sorted(ts, reverse=True) != ts:
        raise ConfigError(f"sampling timesteps must be descending, got {ts}")
    x = rng.standard_normal(shape)
    for i, t in enumerate(ts):
        f = clean_fn(x, t)
        if i + 1 < len(ts):
            t_next = ts[i + 1]
            x = add_noise(f, rng.standard_normal(shape), t_next, schedule)
        else:
            x = f
    return x
