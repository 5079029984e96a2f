"""Frame, metrics and report serialization.

Binary frame stream layout (little endian):

    magic   4 bytes  b"RAIN"
    version u32      currently 1
    d       u32      frame dimension
    count   u64      number of frames
    data    count * d * f32

CSV mode mirrors the same content for small runs.  Per-step metrics are
NDJSON, one record per line.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError

MAGIC = b"RAIN"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


def write_frames(path, frames: np.ndarray):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2:
        raise ConfigError(f"frames must be 2-D (count, d), got {frames.shape}")
    count, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d, count))
        fh.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_frames(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        magic, version, d, count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ConfigError(f"bad magic {magic!r} in {path}")
        if version != VERSION:
            raise ConfigError(f"unsupported frame-file version {version}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != count * d:
        raise ConfigError(f"frame file truncated: expected {count * d} floats, got {data.size}")
    return data.astype(float).reshape(count, d)


def write_frames_csv(path, frames: np.ndarray):
    frames = np.asarray(frames, dtype=float)
    with open(path, "w") as fh:
        fh.write("frame_index," + ",".join(f"x{j}" for j in range(frames.shape[1])) + "\n")
        for i, row in enumerate(frames):
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")


def read_frames_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            rows.append([float(v) for v in line.strip().split(",")[1:]])
    return np.asarray(rows)


class NdjsonWriter:
    """Append-per-record metrics sink."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def __call__(self, record: dict):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_ndjson(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json_report(path, obj: dict):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_series_csv(path, columns: dict):
    """Time-series CSV: one column per named list."""
    names = list(columns)
    n = len(columns[names[0]])
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(str(columns[name][i]) for name in names) + "\n")
