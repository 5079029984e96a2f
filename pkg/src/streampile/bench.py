"""Benchmarks and stream-quality metrics.

Latency and throughput are structural (first pop after exactly G*N
denoiser calls, g/N frames per call); wall-clock numbers separate
engine bookkeeping from denoiser time so the pipeline overhead itself
is measurable.  Jitter quantifies the group-boundary discontinuity as
the ratio of mean squared inter-frame differences at pop boundaries vs
inside groups; drift tracks windowed stream statistics against the
prior marginals over long runs and flags monotone growth with a rank
correlation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import kendalltau

from .denoisers import Denoiser, GaussianPosteriorDenoiser
from .diffusion import NoiseSchedule, build_schedule, ddim_step
from .engine import init_engine, keyed_noise, run_stream, step
from .errors import ConfigError
from .gaussian import Ar1Spec, gaussian_posterior_denoise
from .schedule import ScheduleConfig


@dataclass
class BenchReport:
    cfg: dict
    first_frame_latency_iters: int
    first_frame_latency_wall: float
    throughput_frames_per_iter: float
    engine_overhead_per_iter: float       # seconds, warmup excluded
    denoiser_time_per_iter: float
    per_iteration_nanos: list
    per_iteration_denoiser_nanos: list

    def to_dict(self) -> dict:
        return {
            "cfg": self.cfg,
            "first_frame_latency_iters": self.first_frame_latency_iters,
            "first_frame_latency_wall": self.first_frame_latency_wall,
            "throughput_frames_per_iter": self.throughput_frames_per_iter,
            "engine_overhead_per_iter": self.engine_overhead_per_iter,
            "denoiser_time_per_iter": self.denoiser_time_per_iter,
            "per_iteration_nanos": list(self.per_iteration_nanos),
            "per_iteration_denoiser_nanos": list(self.per_iteration_denoiser_nanos),
        }


def bench_pipeline(cfg: ScheduleConfig, denoiser: Denoiser, L: int, seed: int = 0,
                   d=None, sampler: str = "cm") -> BenchReport:
    """Instrumented stream run: deterministic counts, measured timings."""
    from .engine import denoiser_dim

    if d is None:
        d = denoiser_dim(denoiser)
    if L % cfg.g != 0:
        raise ConfigError(f"L={L} not divisible by g={cfg.g}")
    state = init_engine(cfg, d=d, seed=seed)
    total_iters = L // cfg.g + cfg.G - 1
    first_wall = None
    first_calls = None
    for _ in range(total_iters):
        events = step(state, denoiser, None, push=state.next_index < L, sampler=sampler)
        if events and first_wall is None:
            first_wall = events[0].wall_time
            first_calls = state.denoiser_calls
    records = state.step_records
    steady = [r for r in records if r["iteration"] > cfg.G - 1]  # warmup excluded
    overhead = [(r["step_wall_nanos"] - r["denoiser_nanos"]) / 1e9 for r in steady]
    dtime = [r["denoiser_nanos"] / 1e9 for r in steady]
    return BenchReport(
        cfg={"K": cfg.K, "G": cfg.G, "N": cfg.N, "T": cfg.T, "d": d, "L": L, "seed": seed},
        first_frame_latency_iters=int(first_calls),
        first_frame_latency_wall=float(first_wall),
        throughput_frames_per_iter=cfg.g / cfg.N,
        engine_overhead_per_iter=float(np.mean(overhead)),
        denoiser_time_per_iter=float(np.mean(dtime)),
        per_iteration_nanos=[r["step_wall_nanos"] for r in records],
        per_iteration_denoiser_nanos=[r["denoiser_nanos"] for r in records],
    )


@dataclass
class JitterReport:
    boundary_msd: float
    interior_msd: float
    ratio: float

    def to_dict(self) -> dict:
        return {"boundary_msd": self.boundary_msd, "interior_msd": self.interior_msd,
                "ratio": self.ratio}


def jitter_ratio(frames: np.ndarray, g: int) -> JitterReport:
    """Mean squared consecutive-frame difference at pop boundaries
    (global index of the newer frame divisible by g) versus inside
    groups.  A constant stream has ratio 1 by convention."""
    frames = np.asarray(frames, dtype=float)
    if len(frames) < 2 * g:
        raise ConfigError(f"need at least {2 * g} frames for a jitter ratio, got {len(frames)}")
    diffs = np.sum(np.diff(frames, axis=0) ** 2, axis=-1)
    newer = np.arange(1, len(frames))
    boundary = diffs[newer % g == 0]
    interior = diffs[newer % g != 0]
    b = float(boundary.mean())
    i = float(interior.mean())
    if b == 0.0 and i == 0.0:
        return JitterReport(0.0, 0.0, 1.0)
    return JitterReport(b, i, b / i if i > 0 else float("inf"))


@dataclass
class DriftReport:
    window: int
    mean_dev: np.ndarray      # signed per-window mean deviation from the prior mean
    mean_norm: np.ndarray     # norm of the per-window mean-vector deviation
    var_dev: np.ndarray       # signed per-window variance deviation
    tau_mean: float           # rank correlation of mean_norm against time
    tau_var: float
    slope: float              # linear fit of mean_dev against window-center frame index
    max_dev: float
    max_dev_frame: int

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "mean_dev": self.mean_dev.tolist(),
            "mean_norm": self.mean_norm.tolist(),
            "var_dev": self.var_dev.tolist(),
            "tau_mean": self.tau_mean,
            "tau_var": self.tau_var,
            "slope": self.slope,
            "max_dev": self.max_dev,
            "max_dev_frame": self.max_dev_frame,
        }


def drift(frames: np.ndarray, prior_mean: float, prior_var: float, window: int) -> DriftReport:
    """Windowed departure of stream statistics from the prior marginals."""
    frames = np.asarray(frames, dtype=float)
    n = len(frames)
    if window < 2 or n % window != 0:
        raise ConfigError(f"window {window} must be >= 2 and divide the stream length {n}")
    n_win = n // window
    blocks = frames.reshape(n_win, window, -1)
    mean_vecs = blocks.mean(axis=1)                       # (n_win, d)
    mean_dev = (blocks - prior_mean).mean(axis=(1, 2))    # signed scalar
    mean_norm = np.linalg.norm(mean_vecs - prior_mean, axis=1)
    var_dev = blocks.var(axis=1).mean(axis=1) - prior_var
    idx = np.arange(n_win)
    tau_mean = float(kendalltau(idx, mean_norm).statistic) if n_win > 2 else 0.0
    tau_var = float(kendalltau(idx, np.abs(var_dev)).statistic) if n_win > 2 else 0.0
    centers = idx * window + (window - 1) / 2.0
    slope = float(np.polyfit(centers, mean_dev, 1)[0]) if n_win > 1 else 0.0
    worst = int(np.argmax(mean_norm))
    return DriftReport(
        window=window,
        mean_dev=mean_dev,
        mean_norm=mean_norm,
        var_dev=var_dev,
        tau_mean=tau_mean,
        tau_var=tau_var,
        slope=slope,
        max_dev=float(mean_norm[worst]),
        max_dev_frame=worst * window,
    )


def offline_joint_denoise(spec: Ar1Spec, schedule: NoiseSchedule, cfg: ScheduleConfig,
                          L: int, seed: int) -> np.ndarray:
    """Brute-force baseline: the whole L-frame window denoised jointly
    with the posterior-mean oracle by a uniform deterministic timestep
    descent of the same G*N steps, from the same keyed initial noise the
    stream would push."""
    prior = spec.materialize(L)
    x = np.stack([keyed_noise(seed, i, cfg.T, spec.d) for i in range(L)])
    levels = [m * cfg.step_length for m in range(cfg.G * cfg.N, 0, -1)]
    for j, t in enumerate(levels):
        t_vec = np.full(L, t)
        x0_hat = gaussian_posterior_denoise(x, t_vec, prior, schedule)
        t_next = levels[j + 1] if j + 1 < len(levels) else 0
        x = ddim_step(x, x0_hat, t_vec, np.full(L, t_next), schedule)
    return x


def compare_streaming_offline(cfg: ScheduleConfig, spec: Ar1Spec, seed: int, L: int) -> np.ndarray:
    """Per-frame squared distance between the streamed output and the
    offline jointly-denoised output.

    Both sides run the deterministic DDIM descent from shared keyed
    initial noise with the posterior-mean oracle, so the distance
    isolates what the staggered K-frame window loses against joint
    denoising of all L frames; with G = 1 and L = K the two computations
    are identical and the distance is exactly zero.
    """
    schedule = build_schedule(cfg.T)
    denoiser = GaussianPosteriorDenoiser(spec, schedule)
    streamed, _ = run_stream(cfg, denoiser, None, L, seed=seed, d=spec.d, sampler="ddim")
    offline = offline_joint_denoise(spec, schedule, cfg, L, seed)
    return np.mean((streamed - offline) ** 2, axis=1)
