"""Run configuration: TOML file + flag overrides, validated eagerly.

Unknown sections or keys are hard errors, and every validation message
carries the file line of the offending key when it came from a file.
All randomness flows from the single top-level seed through named
sub-streams so that, e.g., editing the distillation settings does not
perturb the engine's noise.
"""

from __future__ import annotations

import re
import sys
import zlib
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .gaussian import Ar1Spec
from .schedule import ScheduleConfig

_SCHEMA = {
    "schedule": {"K": int, "G": int, "N": int, "T": int},
    "model": {"d": int, "h": int, "c": int, "mask": str, "checkpoint": str},
    "prior": {"d": int, "rho": float, "mean": float, "std": float},
    "train": {"steps": int, "lr": float, "batch": int, "weight_decay": float},
    "distill": {"steps": int, "ema_rate": float, "omega": float, "huber_c": float,
                "solver_steps": int, "lr": float, "batch": int},
    "io": {"out_dir": str},
}
_TOP_KEYS = {"seed"}


def substream(seed: int, name: str) -> int:
    """Stable per-purpose seed derived from the run seed."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


def _line_of(text: str, section: str, key: str):
    """Best-effort line number of `key` inside `[section]` of raw TOML."""
    current = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
        elif current == section and stripped.split("=")[0].strip() == key:
            return lineno
    return None


@dataclass
class RunConfig:
    seed: int = 0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model_d: int = 8
    model_h: int = 32
    model_c: int = 2
    mask: str = "full"
    checkpoint: str = ""
    prior: Ar1Spec = field(default_factory=Ar1Spec)
    train_steps: int = 4000
    train_lr: float = 1e-5
    train_batch: int = 64
    train_weight_decay: float = 0.0
    distill_steps: int = 1200
    distill_ema_rate: float = 0.95
    distill_omega: float = 2.0
    distill_huber_c: float = 1e-3
    distill_solver_steps: int = 100
    distill_lr: float = 2e-3
    distill_batch: int = 256
    out_dir: str = "."

    def __post_init__(self):
        if self.mask not in ("full", "causal"):
            raise ConfigError(f"model.mask must be 'full' or 'causal', got {self.mask!r}")
        if not (2.0 <= self.distill_omega <= 3.5):
            raise ConfigError(
                f"distill.omega must lie in [2.0, 3.5], got {self.distill_omega}"
            )
        if self.distill_huber_c <= 0:
            raise ConfigError(f"distill.huber_c must be positive, got {self.distill_huber_c}")
        if not (0.0 < self.distill_ema_rate <= 1.0):
            raise ConfigError(f"distill.ema_rate must lie in (0, 1], got {self.distill_ema_rate}")
        if self.distill_solver_steps < 2:
            raise ConfigError(f"distill.solver_steps must be >= 2, got {self.distill_solver_steps}")
        for name in ("model_d", "model_h", "train_steps", "train_batch", "distill_steps",
                     "distill_batch"):
            if getattr(self, name) < 0 or (name in ("model_d", "model_h") and getattr(self, name) < 1):
                raise ConfigError(f"{name} out of range: {getattr(self, name)}")

    def resolved(self) -> dict:
        """Flat dict echoed into every output artifact."""
        return {
            "seed": self.seed,
            "schedule": {"K": self.schedule.K, "G": self.schedule.G, "N": self.schedule.N,
                         "T": self.schedule.T},
            "model": {"d": self.model_d, "h": self.model_h, "c": self.model_c,
                      "mask": self.mask, "checkpoint": self.checkpoint},
            "prior": {"d": self.prior.d, "rho": self.prior.rho, "mean": self.prior.mean,
                      "std": self.prior.std},
            "train": {"steps": self.train_steps, "lr": self.train_lr, "batch": self.train_batch,
                      "weight_decay": self.train_weight_decay},
            "distill": {"steps": self.distill_steps, "ema_rate": self.distill_ema_rate,
                        "omega": self.distill_omega, "huber_c": self.distill_huber_c,
                        "solver_steps": self.distill_solver_steps, "lr": self.distill_lr,
                        "batch": self.distill_batch},
            "io": {"out_dir": self.out_dir},
        }

    def seed_for(self, purpose: str) -> int:
        return substream(self.seed, purpose)


def _validate_tables(obj: dict, text: str, path: str):
    for section, content in obj.items():
        if section in _TOP_KEYS:
            continue
        if section not in _SCHEMA:
            line = _line_of(text, "", section) or "?"
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in content.items():
            if key not in _SCHEMA[section]:
                line = _line_of(text, section, key)
                where = f"{path}:{line}" if line else path
                raise ConfigError(f"{where}: unknown key '{key}' in [{section}]")
            want = _SCHEMA[section][key]
            ok = isinstance(value, want) or (want is float and isinstance(value, int)
                                             and not isinstance(value, bool))
            if not ok or isinstance(value, bool):
                line = _line_of(text, section, key)
                where = f"{path}:{line}" if line else path
                raise ConfigError(
                    f"{where}: key '{key}' in [{section}] must be {want.__name__}, "
                    f"got {type(value).__name__}"
                )


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus flag overrides.

    overrides maps dotted keys ('schedule.K', 'seed') to values and
    takes precedence over file contents.
    """
    obj: dict = {}
    text = ""
    src = str(path) if path else "<flags>"
    if path is not None:
        with open(path, "rb") as fh:
            try:
                obj = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        with open(path, "r") as fh:
            text = fh.read()
        unknown_top = set(k for k in obj if k not in _TOP_KEYS and not isinstance(obj[k], dict))
        if unknown_top:
            raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown_top)}")
        _validate_tables(obj, text, src)

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in dotted:
            section, key = dotted.split(".", 1)
            if section not in _SCHEMA or key not in _SCHEMA[section]:
                raise ConfigError(f"unknown override {dotted!r}")
            obj.setdefault(section, {})[key] = value
        elif dotted in _TOP_KEYS:
            obj[dotted] = value
        else:
            raise ConfigError(f"unknown override {dotted!r}")

    def sec(name):
        return obj.get(name, {})

    defaults = RunConfig.__dataclass_fields__
    try:
        schedule = ScheduleConfig(
            K=sec("schedule").get("K", 16),
            G=sec("schedule").get("G", 4),
            N=sec("schedule").get("N", 1),
            T=sec("schedule").get("T", 1000),
        )
        prior = Ar1Spec(
            d=sec("prior").get("d", 8),
            rho=sec("prior").get("rho", 0.95),
            mean=sec("prior").get("mean", 0.0),
            std=sec("prior").get("std", 1.0),
        )
        return RunConfig(
            seed=int(obj.get("seed", 0)),
            schedule=schedule,
            model_d=sec("model").get("d", 8),
            model_h=sec("model").get("h", 32),
            model_c=sec("model").get("c", 2),
            mask=sec("model").get("mask", "full"),
            checkpoint=sec("model").get("checkpoint", ""),
            prior=prior,
            train_steps=sec("train").get("steps", defaults["train_steps"].default),
            train_lr=sec("train").get("lr", defaults["train_lr"].default),
            train_batch=sec("train").get("batch", defaults["train_batch"].default),
            train_weight_decay=sec("train").get("weight_decay", 0.0),
            distill_steps=sec("distill").get("steps", defaults["distill_steps"].default),
            distill_ema_rate=sec("distill").get("ema_rate", defaults["distill_ema_rate"].default),
            distill_omega=sec("distill").get("omega", defaults["distill_omega"].default),
            distill_huber_c=sec("distill").get("huber_c", defaults["distill_huber_c"].default),
            distill_solver_steps=sec("distill").get("solver_steps",
                                                    defaults["distill_solver_steps"].default),
            distill_lr=sec("distill").get("lr", defaults["distill_lr"].default),
            distill_batch=sec("distill").get("batch", defaults["distill_batch"].default),
            out_dir=sec("io").get("out_dir", "."),
        )
    except ConfigError as exc:
        raise _with_line_hint(exc, obj, text, src) from None


def _with_line_hint(exc: ConfigError, obj: dict, text: str, src: str) -> ConfigError:
    """Attach file:line to a semantic error when the key can be located.

    Among keys present in the file, the one mentioned earliest in the
    message is taken as the subject of the complaint.
    """
    msg = str(exc)
    if not text:
        return exc
    best = None  # (position in message, line)
    for section, content in obj.items():
        if not isinstance(content, dict):
            continue
        for key in content:
            for token in (f"{section}.{key}", key):
                m = re.search(rf"(?<![\w.]){re.escape(token)}(?![\w.])", msg)
                if m:
                    line = _line_of(text, section, key)
                    if line and (best is None or m.start() < best[0]):
                        best = (m.start(), line)
                    break
    if best:
        return ConfigError(f"{src}:{best[1]}: {msg}")
    return exc
