"""Training loops for the toy denoiser and the AdamW optimizer.

Temporal-adaptive training noises each K-frame window with the
staggered group timesteps (base level drawn uniformly from the integer
grid 1..T/G) and minimizes v-prediction MSE, which is what lets the
attention layer operate across noise levels at inference time.  A
uniform-timestep loop is kept for the pretraining stage and for
comparisons.

AdamW is implemented from its published update rule: adaptive moments
with bias correction and decoupled weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diffusion import NoiseSchedule
from .errors import ConfigError, NumericError
from .gaussian import Ar1Spec
from .schedule import ScheduleConfig, group_timesteps
from .toynet import ToyNetParams, grad, zeros_like_params


@dataclass
class AdamW:
    """Decoupled weight-decay Adam.

        m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
        theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
    """

    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: Optional[ToyNetParams] = field(default=None, repr=False)
    v: Optional[ToyNetParams] = field(default=None, repr=False)

    def update(self, params: ToyNetParams, grads: ToyNetParams, step: int) -> ToyNetParams:
        if step < 1:
            raise ConfigError(f"optimizer step index must be >= 1, got {step}")
        if self.m is None:
            self.m = zeros_like_params(params)
            self.v = zeros_like_params(params)
        b1, b2 = self.beta1, self.beta2
        self.m = self.m.map(lambda m, g: b1 * m + (1 - b1) * g, grads)
        self.v = self.v.map(lambda v, g: b2 * v + (1 - b2) * g * g, grads)
        c1 = 1.0 - b1**step
        c2 = 1.0 - b2**step

        def apply(theta, m, v):
            m_hat = m / c1
            v_hat = v / c2
            return theta - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * theta)

        return params.map(apply, self.m, self.v)


@dataclass
class GaussianSequenceSampler:
    """Synthetic dataset: AR(1) Gaussian windows with zero conditioning.

    Zero conditioning keeps the learned net comparable against the
    window posterior (which sees only the latents), so the oracle's
    error is a true Bayes floor for it.
    """

    spec: Ar1Spec
    K: int
    cond_dim: int = 2

    def __call__(self, rng: np.random.Generator, batch: int):
        x0 = self.spec.sample(rng, batch, self.K)
        cond = np.zeros((batch, self.K, self.cond_dim))
        return x0, cond


def make_v_batch(x0, cond, t_vec, rng: np.random.Generator, schedule: NoiseSchedule):
    """Noise clean windows at per-frame timesteps and build the v target."""
    t_idx = np.asarray(t_vec, dtype=int)
    ab = schedule.abar(t_idx)[..., None]
    a = np.sqrt(ab)
    s = np.sqrt(1.0 - ab)
    eps = rng.standard_normal(x0.shape)
    xt = a * x0 + s * eps
    v = a * eps - s * x0
    return xt, t_idx.astype(float), cond, None, v


def staggered_t_vecs(cfg: ScheduleConfig, rng: np.random.Generator, batch: int) -> np.ndarray:
    """Per-window staggered timesteps with t0 uniform on the grid 1..T/G."""
    t0s = rng.integers(1, cfg.group_spacing + 1, batch)
    return np.stack([group_timesteps(cfg, int(t0)).vec for t0 in t0s])


@dataclass
class TrainResult:
    params: ToyNetParams
    losses: list


def _run_training(params, sampler, t_vec_fn, steps, optimizer, rng, schedule, batch, mask,
                  loss_sink):
    losses = []
    for step_idx in range(1, steps + 1):
        x0, cond = sampler(rng, batch)
        t_vec = t_vec_fn(rng, x0.shape[0])
        batch_data = make_v_batch(x0, cond, t_vec, rng, schedule)
        loss, grads = grad(params, batch_data, mask)
        if not np.isfinite(loss):
            raise NumericError(f"training loss diverged at step {step_idx}: {loss}")
        params = optimizer.update(params, grads, step_idx)
        losses.append(loss)
        if loss_sink is not None:
            loss_sink({"step": step_idx, "loss": loss})
    return TrainResult(params=params, losses=losses)


def train_temporal_adaptive(params: ToyNetParams, sampler, cfg: ScheduleConfig,
                            schedule: NoiseSchedule, steps: int, rng: np.random.Generator,
                            lr: float = 3e-3, batch: int = 64, mask: str = "full",
                            weight_decay: float = 0.0,
                            loss_sink: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Finetune on windows noised with the staggered group timesteps."""
    opt = AdamW(lr=lr, weight_decay=weight_decay)
    return _run_training(params, sampler, lambda r, b: staggered_t_vecs(cfg, r, b),
                         steps, opt, rng, schedule, batch, mask, loss_sink)


def train_uniform(params: ToyNetParams, sampler, schedule: NoiseSchedule, steps: int,
                  rng: np.random.Generator, lr: float = 3e-3, batch: int = 64,
                  mask: str = "full", weight_decay: float = 0.0,
                  loss_sink: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Pretraining stage: every frame of a window at one uniform timestep."""
    def t_vecs(r, b):
        ts = r.integers(1, schedule.T + 1, b).astype(float)
        return np.repeat(ts[:, None], sampler.K, axis=1)

    opt = AdamW(lr=lr, weight_decay=weight_decay)
    return _run_training(params, sampler, t_vecs, steps, opt, rng, schedule, batch, mask, loss_sink)


def validation_v_mse(params: ToyNetParams, sampler, cfg: ScheduleConfig, schedule: NoiseSchedule,
                     rng: np.random.Generator, n_windows: int = 512, mask: str = "full") -> float:
    """v-prediction MSE on freshly sampled staggered validation windows."""
    from .toynet import forward

    x0, cond = sampler(rng, n_windows)
    t_vec = staggered_t_vecs(cfg, rng, n_windows)
    xt, t_f, cond, _, v = make_v_batch(x0, cond, t_vec, rng, schedule)
    pred = forward(params, xt, t_f, cond, None, mask)
    return float(np.mean((pred.values - v) ** 2))


def bayes_floor_v_mse(spec: Ar1Spec, cfg: ScheduleConfig, schedule: NoiseSchedule) -> float:
    """Exact lower bound on staggered v-MSE for any window denoiser.

    Var(v_i | window) = Var(x0_i | window) / (1 - abar_i), averaged over
    frames and the t0 grid.  Computed from the posterior covariance, no
    Monte Carlo.
    """
    from .gaussian import posterior_var_diag

    prior = spec.materialize(cfg.K)
    vals = []
    for t0 in range(1, cfg.group_spacing + 1):
        t_vec = group_timesteps(cfg, t0).vec
        var_diag = posterior_var_diag(t_vec, prior, schedule)
        per_frame = var_diag.reshape(cfg.K, spec.d).mean(axis=1)
        ab = schedule.abar(t_vec)
        vals.append(np.mean(per_frame / (1.0 - ab)))
    return float(np.mean(vals))
