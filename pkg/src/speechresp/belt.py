"""Chest-belt traces: CSV parsing and conversion to model-ready targets.

A raw belt recording is a sequence of (time, force) readings at whatever
rate the sensor produced. The model consumes a per-frame respiration
target on the feature frame grid, z-scored per utterance and squashed
with tanh so every target lives in (-1, 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CoverageError, DegenerateSignalError, FormatError, ParameterError
from .ioutil import atomic_write_text

BELT_CSV_HEADER = ("time_s", "force_n")

# belt readings may start late / end early by at most this much; the edge
# values are held constant over the uncovered span
EDGE_SLACK_S = 0.5


@dataclass
class BeltTrace:
    """Raw belt readings: strictly increasing timestamps and force values."""

    timestamps_s: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.timestamps_s = np.asarray(self.timestamps_s, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.timestamps_s.ndim != 1 or self.values.ndim != 1:
            raise ParameterError("belt arrays must be one-dimensional")
        if self.timestamps_s.size != self.values.size:
            raise ParameterError("belt timestamps and values must have equal length")
        if self.timestamps_s.size < 2:
            raise ParameterError("a belt trace needs at least two readings")
        if not (np.all(np.isfinite(self.timestamps_s)) and np.all(np.isfinite(self.values))):
            raise ParameterError("belt readings must be finite")
        if not np.all(np.diff(self.timestamps_s) > 0):
            raise ParameterError("belt timestamps must be strictly increasing")


@dataclass
class RespirationTrace:
    """A per-frame respiration signal with values in [-1, 1]."""

    values: np.ndarray
    frame_rate_hz: float

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ParameterError("trace values must be one-dimensional")
        if self.values.size < 1:
            raise ParameterError("trace must contain at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("trace values must be finite")
        if float(np.max(np.abs(self.values))) > 1.0:
            raise ParameterError("trace values must lie in [-1, 1]")
        if not self.frame_rate_hz > 0:
            raise ParameterError("frame rate must be positive")
        self.frame_rate_hz = float(self.frame_rate_hz)

    @property
    def duration_s(self) -> float:
        return self.values.size / self.frame_rate_hz


def load_belt_csv(path: str | Path) -> BeltTrace:
    """Parse a belt CSV with header ``time_s,force_n``."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise FormatError(f"{path}: empty belt file") from None
            if tuple(h.strip() for h in header) != BELT_CSV_HEADER:
                raise FormatError(
                    f"{path}: expected header {','.join(BELT_CSV_HEADER)!r}, got {header!r}"
                )
            times, forces = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise FormatError(f"{path}:{lineno}: expected two fields, got {len(row)}")
                try:
                    times.append(float(row[0]))
                    forces.append(float(row[1]))
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: non-numeric reading") from exc
    except OSError as exc:
        raise FormatError(f"{path}: cannot read belt file ({exc})") from exc
    try:
        return BeltTrace(np.array(times), np.array(forces))
    except ParameterError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_belt_csv(belt: BeltTrace, path: str | Path) -> None:
    lines = [",".join(BELT_CSV_HEADER)]
    for t, v in zip(belt.timestamps_s, belt.values):
        # repr of a plain float round-trips float64 exactly
        lines.append(f"{float(t)!r},{float(v)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def preprocess_trace(
    belt: BeltTrace, duration_s: float, frame_rate_hz: float = 100.0
) -> RespirationTrace:
    """Resample a belt recording onto the frame grid and compress it.

    Pipeline: linear interpolation onto frames t_i = i / frame_rate for
    i in [0, floor(duration * frame_rate)), per-utterance z-score, then
    tanh dynamic-range compression. Belt coverage may fall short of
    [0, duration] by at most EDGE_SLACK_S at each edge; the uncovered
    span holds the edge reading.
    """
    if duration_s <= 0:
        raise ParameterError("duration must be positive")
    if frame_rate_hz <= 0:
        raise ParameterError("frame rate must be positive")
    n_frames = math.floor(duration_s * frame_rate_hz)
    if n_frames < 1:
        raise ParameterError(
            f"duration {duration_s} s yields no frames at {frame_rate_hz} Hz"
        )
    t0 = float(belt.timestamps_s[0])
    t1 = float(belt.timestamps_s[-1])
    if t0 > EDGE_SLACK_S or t1 < duration_s - EDGE_SLACK_S:
        raise CoverageError(
            f"belt covers [{t0:.3f}, {t1:.3f}] s but audio spans "
            f"[0, {duration_s:.3f}] s (allowed edge gap {EDGE_SLACK_S} s)"
        )
    grid = np.arange(n_frames, dtype=np.float64) / frame_rate_hz
    resampled = np.interp(grid, belt.timestamps_s, belt.values)
    std = float(resampled.std())
    if std == 0.0:
        raise DegenerateSignalError("belt trace is constant; cannot z-score")
    z = (resampled - resampled.mean()) / std
    return RespirationTrace(np.tanh(z), frame_rate_hz)
