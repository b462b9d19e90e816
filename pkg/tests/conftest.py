"""Shared helpers for the test suite."""

import numpy as np
import pytest

from speechresp.belt import RespirationTrace
from speechresp.features import FeatureKind, FeatureMatrix
from speechresp.segments import Segment


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_feature(data, rate=100.0, kind=FeatureKind.MFB):
    return FeatureMatrix(np.asarray(data, dtype=np.float64), rate, kind)


def make_trace(values, rate=100.0):
    return RespirationTrace(np.asarray(values, dtype=np.float64), rate)


def make_segment(rng, n_frames, dims=(3,), rate=100.0):
    """Random segment with a non-constant tanh-compressed target."""
    feats = [
        make_feature(rng.standard_normal((n_frames, d)), rate) for d in dims
    ]
    target = make_trace(np.tanh(rng.standard_normal(n_frames)), rate)
    return Segment(feats, target)


def sine_trace(rate_per_min, duration_s, frame_rate=100.0, amplitude=0.9, phase=0.0):
    t = np.arange(int(duration_s * frame_rate)) / frame_rate
    return make_trace(
        amplitude * np.sin(2 * np.pi * (rate_per_min / 60.0) * t + phase), frame_rate
    )
