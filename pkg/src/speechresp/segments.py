"""Cutting aligned feature streams and targets into training segments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .belt import RespirationTrace
from .errors import AlignmentError, ParameterError
from .features import FeatureMatrix


@dataclass
class Segment:
    """One fixed-length training example: per-branch features plus target."""

    features: list[FeatureMatrix]
    target: RespirationTrace
    source_id: str = ""
    offset_s: float = 0.0

    def __post_init__(self) -> None:
        if not self.features:
            raise ParameterError("a segment needs at least one feature branch")
        n = self.target.values.size
        rate = self.target.frame_rate_hz
        for f in self.features:
            if f.n_frames != n or f.frame_rate_hz != rate:
                raise AlignmentError(
                    f"segment branches must match the target grid "
                    f"({n} frames @ {rate} Hz); got {f.n_frames} @ {f.frame_rate_hz}"
                )

    @property
    def n_frames(self) -> int:
        return self.target.values.size


def make_segments(
    features: list[FeatureMatrix],
    target: RespirationTrace,
    seg_s: float,
    source_id: str = "",
) -> list[Segment]:
    """Slice aligned streams into consecutive non-overlapping seg_s windows.

    All inputs must share frame rate and frame count. The trailing
    remainder shorter than seg_s is dropped.
    """
    if seg_s <= 0:
        raise ParameterError("segment length must be positive")
    if not features:
        raise ParameterError("need at least one feature branch")
    rate = target.frame_rate_hz
    n = target.values.size
    for f in features:
        if f.frame_rate_hz != rate:
            raise AlignmentError(
                f"feature stream at {f.frame_rate_hz} Hz does not match target {rate} Hz"
            )
        if f.n_frames != n:
            raise AlignmentError(
                f"feature stream has {f.n_frames} frames, target has {n}"
            )
    frames_per_seg = math.floor(seg_s * rate)
    if frames_per_seg < 1:
        raise ParameterError(f"segment length {seg_s} s is under one frame at {rate} Hz")
    out = []
    for k in range(n // frames_per_seg):
        lo = k * frames_per_seg
        hi = lo + frames_per_seg
        out.append(
            Segment(
                features=[
                    FeatureMatrix(
                        f.data[lo:hi].copy(),
                        rate,
                        f.kind,
                        None if f.dim_labels is None else list(f.dim_labels),
                    )
                    for f in features
                ],
                target=RespirationTrace(target.values[lo:hi].copy(), rate),
                source_id=source_id,
                offset_s=lo / rate,
            )
        )
    return out
