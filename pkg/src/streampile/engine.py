"""FIFO streaming inference over the latent pile.

One outer step = N denoiser evaluations of the whole pile (one per base
level in the t0 cycle), each followed by a per-frame noise decrement of
T/(N*G); the head group that reaches timestep 0 is popped as clean
frames and a fresh group of pure noise is pushed (or the pile grows,
during soft startup).  A frame therefore receives exactly G*N denoiser
evaluations between push and pop.

All randomness is derived from (seed, frame_index, level) keys, so the
same frame receives identical noise draws no matter how the surrounding
schedule is organized -- this makes runs byte-reproducible and lets the
streaming and offline pipelines share their noise for comparisons.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .denoisers import Denoiser
from .diffusion import NoiseSchedule, build_schedule, ddim_step
from .errors import ConfigError, StreamError
from .schedule import ScheduleConfig, group_timesteps, t0_sequence

_ENGINE_NS = 0x5
SAMPLERS = ("cm", "ddim")


def denoiser_dim(denoiser) -> int:
    """Frame dimension a denoiser was built for."""
    spec = getattr(denoiser, "spec", None)
    if spec is not None:
        return spec.d
    params = getattr(denoiser, "params", None)
    if params is not None:
        return params.d
    inner = getattr(denoiser, "inner", None)
    if inner is not None:
        return denoiser_dim(inner)
    raise ConfigError("cannot infer frame dimension; pass d explicitly")


_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / (1 << 53)


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays (wrapping)."""
    with np.errstate(over="ignore"):
        x = (x + _MIX1)
        x = (x ^ (x >> np.uint64(30))) * _MIX2
        x = (x ^ (x >> np.uint64(27))) * _MIX3
        return x ^ (x >> np.uint64(31))


def keyed_noise_block(seed: int, frame_indices, levels, d: int) -> np.ndarray:
    """Standard normal (n, d) block keyed per row by (seed, frame, level).

    Counter-based: each (frame, level) pair packs injectively into a
    64-bit word (levels must stay below 2^20), is mixed with the seed
    through splitmix64, and feeds a Box-Muller transform.  The same key
    yields the same vector in any run and in any pipeline organization,
    which is what lets streaming and offline denoising share noise.
    """
    frame_indices = np.asarray(frame_indices, dtype=np.uint64)
    levels = np.asarray(levels, dtype=np.uint64)
    packed = (frame_indices << np.uint64(20)) | levels
    base = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _mix64(packed + np.uint64(_ENGINE_NS)))
    pairs = (d + 1) // 2
    lanes = np.arange(1, 2 * pairs + 1, dtype=np.uint64)
    words = _mix64(base[:, None] ^ _mix64(lanes[None, :]))
    u = ((words >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53  # (0, 1]
    u1, u2 = u[:, :pairs], u[:, pairs:]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    normals = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return normals[:, :d]


def keyed_noise(seed: int, frame_index: int, level: int, d: int) -> np.ndarray:
    """Standard normal d-vector uniquely keyed by (seed, frame, level)."""
    return keyed_noise_block(seed, [frame_index], [level], d)[0]


@dataclass
class LatentPile:
    """The in-flight frame buffer: parallel per-frame arrays, head first."""

    frames: np.ndarray      # (n, d)
    timesteps: np.ndarray   # (n,)
    indices: np.ndarray     # (n,) global frame numbers
    push_ns: np.ndarray     # (n,) monotonic push times
    evals: np.ndarray       # (n,) denoiser evaluations received
    capacity: int

    def __len__(self):
        return len(self.frames)

    def validate(self, g: int):
        n = len(self.frames)
        if not (len(self.timesteps) == len(self.indices) == n):
            raise StreamError("pile arrays out of sync")
        if n > self.capacity:
            raise StreamError(f"pile over capacity: {n} > {self.capacity}")
        if n % g != 0:
            raise StreamError(f"pile length {n} not a multiple of group size {g}")
        if np.any(np.diff(self.timesteps) < 0):
            raise StreamError("pile timesteps must be non-decreasing head to tail")


@dataclass
class FrameEvent:
    """A clean frame leaving the pile."""

    index: int
    latent: np.ndarray
    wall_time: float  # seconds since the frame's noise was pushed


@dataclass
class EngineState:
    pile: LatentPile
    cfg: ScheduleConfig
    schedule: NoiseSchedule
    seed: int
    reference: Optional[np.ndarray] = None
    warmup_remaining: int = 0
    iteration: int = 0            # outer steps completed
    denoiser_calls: int = 0       # inner evaluations performed
    pushed_total: int = 0
    popped_total: int = 0
    next_index: int = 0
    eval_log: dict = field(default_factory=dict)  # frame index -> evals at pop
    step_records: list = field(default_factory=list)


def _push_group(state: EngineState, now_ns: int):
    cfg = state.cfg
    g = cfg.g
    d = state.pile.frames.shape[1]
    idx = np.arange(state.next_index, state.next_index + g)
    fresh = keyed_noise_block(state.seed, idx, np.full(g, cfg.T), d)
    state.pile.frames = np.concatenate([state.pile.frames, fresh]) if len(state.pile) else fresh
    state.pile.timesteps = np.concatenate([state.pile.timesteps, np.full(g, cfg.T, dtype=int)])
    state.pile.indices = np.concatenate([state.pile.indices, idx])
    state.pile.push_ns = np.concatenate([state.pile.push_ns, np.full(g, now_ns, dtype=np.int64)])
    state.pile.evals = np.concatenate([state.pile.evals, np.zeros(g, dtype=int)])
    state.next_index += g
    state.pushed_total += g


def init_engine(cfg: ScheduleConfig, d: int, reference=None, seed: int = 0,
                still_init=None) -> EngineState:
    """Soft startup: one group of pure noise at timestep T, the pile
    growing by one group per step until full.

    still_init (a d-vector) instead fills the whole pile with copies of
    that latent at the staggered steady-state timesteps -- the
    degenerate shortcut the soft startup exists to avoid; kept for the
    directional comparison.
    """
    schedule = build_schedule(cfg.T)
    empty = LatentPile(
        frames=np.zeros((0, d)),
        timesteps=np.zeros(0, dtype=int),
        indices=np.zeros(0, dtype=int),
        push_ns=np.zeros(0, dtype=np.int64),
        evals=np.zeros(0, dtype=int),
        capacity=cfg.K,
    )
    state = EngineState(pile=empty, cfg=cfg, schedule=schedule, seed=int(seed),
                        reference=None if reference is None else np.asarray(reference, dtype=float),
                        warmup_remaining=cfg.G - 1)
    now = time.monotonic_ns()
    if still_init is not None:
        still = np.asarray(still_init, dtype=float)
        if still.shape != (d,):
            raise ConfigError(f"still_init must be a d-vector, got shape {still.shape}")
        vec = group_timesteps(cfg, t0_sequence(cfg)[0]).vec
        state.pile.frames = np.tile(still, (cfg.K, 1))
        state.pile.timesteps = vec.copy()
        state.pile.indices = np.arange(cfg.K)
        state.pile.push_ns = np.full(cfg.K, now, dtype=np.int64)
        state.pile.evals = np.zeros(cfg.K, dtype=int)
        state.next_index = cfg.K
        state.pushed_total = cfg.K
        state.warmup_remaining = 0
    else:
        _push_group(state, now)
    return state


def step(state: EngineState, denoiser: Denoiser, cond_window=None, push: bool = True,
         sampler: str = "cm") -> list[FrameEvent]:
    """One outer iteration: N evaluations, pop clean frames, push noise.

    cond_window, when given, must align with the current pile (one row
    per in-flight frame) and is held fixed across the N inner
    evaluations.  Returns the FrameEvents popped this step.
    """
    if sampler not in SAMPLERS:
        raise ConfigError(f"sampler must be one of {SAMPLERS}, got {sampler!r}")
    cfg = state.cfg
    pile = state.pile
    n = len(pile)
    if n == 0:
        raise StreamError("step on an empty pile")
    if cond_window is not None:
        cond_window = np.asarray(cond_window, dtype=float)
        if cond_window.shape[0] != n:
            raise StreamError(
                f"conditioning length {cond_window.shape[0]} does not match pile length {n}"
            )
    t_start = time.monotonic_ns()
    denoiser_ns = 0

    for _ in range(cfg.N):
        t_vec = pile.timesteps
        t0 = time.monotonic_ns()
        x0_hat = denoiser.clean_estimate(pile.frames, t_vec, cond_window, state.reference)
        denoiser_ns += time.monotonic_ns() - t0
        t_next = np.maximum(t_vec - cfg.step_length, 0)
        if sampler == "cm":
            # cm_renoise_step vectorized over the pile with keyed noise
            ab_next = state.schedule.abar(t_next)[:, None]
            fresh = keyed_noise_block(state.seed, pile.indices, t_next, pile.frames.shape[1])
            renoised = np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * fresh
            new_frames = np.where((t_next > 0)[:, None], renoised, x0_hat)
        else:
            new_frames = ddim_step(pile.frames, x0_hat, t_vec, t_next, state.schedule)
        pile.frames = new_frames
        pile.timesteps = t_next
        pile.evals += 1
        state.denoiser_calls += 1

    now = time.monotonic_ns()
    events: list[FrameEvent] = []
    n_clean = int(np.sum(pile.timesteps == 0))
    if n_clean:
        for i in range(n_clean):
            state.eval_log[int(pile.indices[i])] = int(pile.evals[i])
            events.append(FrameEvent(
                index=int(pile.indices[i]),
                latent=pile.frames[i].copy(),
                wall_time=(now - pile.push_ns[i]) / 1e9,
            ))
        pile.frames = pile.frames[n_clean:]
        pile.timesteps = pile.timesteps[n_clean:]
        pile.indices = pile.indices[n_clean:]
        pile.push_ns = pile.push_ns[n_clean:]
        pile.evals = pile.evals[n_clean:]
        state.popped_total += n_clean

    if push:
        _push_group(state, now)
        if state.warmup_remaining > 0 and not n_clean:
            state.warmup_remaining -= 1

    state.iteration += 1
    step_ns = time.monotonic_ns() - t_start
    state.step_records.append({
        "iteration": state.iteration,
        "pile_len": len(pile),
        "popped": n_clean,
        "t0": t0_sequence(cfg)[0],
        "step_wall_nanos": step_ns,
        "denoiser_nanos": denoiser_ns,
        "denoiser_calls": state.denoiser_calls,
    })
    pile.validate(cfg.g)
    return events


def run_stream(cfg: ScheduleConfig, denoiser: Denoiser, cond_stream: Optional[Iterable], L: int,
               seed: int = 0, reference=None, d: Optional[int] = None,
               sampler: str = "cm") -> tuple[np.ndarray, EngineState]:
    """Process an L-frame stream end to end and return the clean frames
    in input order.

    Performs the soft startup, L/g steady pushes, and drains the pile
    without pushing for the final G-1 iterations: L/g + G - 1 outer
    iterations in total.  Conditioning frames are bound to the frame of
    the same global index for that frame's whole lifetime.
    """
    g = cfg.g
    if L % g != 0:
        raise ConfigError(f"stream length {L} must be divisible by group size {g}")
    if d is None:
        d = denoiser_dim(denoiser)
    cond_iter: Optional[Iterator] = iter(cond_stream) if cond_stream is not None else None
    conds: list = []

    def cond_upto(count):
        while cond_iter is not None and len(conds) < count:
            try:
                conds.append(np.asarray(next(cond_iter), dtype=float))
            except StopIteration:
                raise StreamError(
                    f"conditioning stream exhausted after {len(conds)} frames, need {count}"
                ) from None

    state = init_engine(cfg, d=d, reference=reference, seed=seed)
    cond_upto(state.next_index)
    total_iters = L // g + cfg.G - 1
    out = np.zeros((L, d))
    got = np.zeros(L, dtype=bool)
    expected_next = 0
    for _ in range(total_iters):
        window = None
        if cond_iter is not None:
            window = np.stack([conds[i] for i in state.pile.indices])
        events = step(state, denoiser, window, push=state.next_index < L, sampler=sampler)
        for ev in events:
            if ev.index != expected_next:
                raise StreamError(f"pop order broke FIFO: got {ev.index}, expected {expected_next}")
            expected_next += 1
            out[ev.index] = ev.latent
            got[ev.index] = True
        cond_upto(state.next_index)
    if len(state.pile) != 0 or not got.all():
        raise StreamError(f"stream incomplete: pile {len(state.pile)}, missing {int((~got).sum())}")
    return out, state
