"""Staggered per-frame timestep vectors for the streaming pile.

A temporal batch of K frames is split into G groups of g consecutive
frames; group j sits t0 + j*(T/G) timesteps deep into the noise, lowest
noise at the head (the pop end).  Advancing subtracts T/(N*G) from every
frame; when the head group reaches 0 it is popped and the vector
re-bases to the top of the t0 cycle, so a frame entering at T is
denoised exactly G*N times before it leaves.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ScheduleConfig:
    """Streaming schedule shape: K frames, G noise groups, N inner steps.

    T must be divisible by G*N so that the timestep lattice stays on
    integers (the group spacing T/G and the decrement T/(N*G) are then
    exact).
    """

    K: int = 16
    G: int = 4
    N: int = 1
    T: int = 1000

    def __post_init__(self):
        if self.K < 1 or self.G < 1 or self.N < 1 or self.T < 2:
            raise ConfigError(f"K, G, N >= 1 and T >= 2 required, got {self}")
        if self.K % self.G != 0:
            raise ConfigError(f"G must divide K exactly, got K={self.K}, G={self.G}")
        if self.G * self.N > self.T:
            raise ConfigError(f"G*N must be <= T, got G*N={self.G * self.N}, T={self.T}")
        if self.T % (self.G * self.N) != 0:
            raise ConfigError(
                f"T must be divisible by G*N for an integer timestep lattice, "
                f"got T={self.T}, G*N={self.G * self.N}"
            )

    @property
    def g(self) -> int:
        """Frames per group (the pop/push unit)."""
        return self.K // self.G

    @property
    def group_spacing(self) -> int:
        """Timestep difference between adjacent groups, T/G."""
        return self.T // self.G

    @property
    def step_length(self) -> int:
        """Timesteps removed per denoising iteration, T/(N*G)."""
        return self.T // (self.N * self.G)


@dataclass(frozen=True)
class GroupTimesteps:
    """The per-frame timestep vector at a given base level t0."""

    t0: int
    vec: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.vec)


def group_timesteps(cfg: ScheduleConfig, t0: int) -> GroupTimesteps:
    """Frame i is assigned t0 + floor(i/g) * (T/G), head group first."""
    if not (1 <= t0 <= cfg.group_spacing):
        raise ConfigError(f"t0 must lie in [1, {cfg.group_spacing}], got {t0}")
    i = np.arange(cfg.K)
    vec = t0 + (i // cfg.g) * cfg.group_spacing
    return GroupTimesteps(t0=int(t0), vec=vec)


def t0_sequence(cfg: ScheduleConfig) -> list[int]:
    """Base levels of the N inner iterations: T/G, then descending by
    T/(N*G) down to T/(N*G)."""
    return [cfg.group_spacing - j * cfg.step_length for j in range(cfg.N)]


def advance(ts: GroupTimesteps, cfg: ScheduleConfig) -> tuple[GroupTimesteps, int]:
    """One denoising decrement of T/(N*G) on every frame.

    If the head group hits timestep <= 0 it is clean: pop_count = g and
    the vector re-bases to the head of the t0 cycle (the popped slots
    are conceptually replaced by a fresh group entering at T).
    """
    new_t0 = ts.t0 - cfg.step_length
    if new_t0 >= 1:
        return group_timesteps(cfg, new_t0), 0
    return group_timesteps(cfg, t0_sequence(cfg)[0]), cfg.g


def schedule_csv(cfg: ScheduleConfig, t0: int, iterations: int) -> str:
    """CSV dump (iteration, frame_index, timestep) of an advance trajectory."""
    buf = io.StringIO()
    buf.write("iteration,frame_index,timestep\n")
    ts = group_timesteps(cfg, t0)
    for it in range(iterations):
        for i, t in enumerate(ts.vec):
            buf.write(f"{it},{i},{t}\n")
        ts, _ = advance(ts, cfg)
    return buf.getvalue()
