"""Frame-level acoustic features.

The only feature computed in-process is the log mel filterbank (MFB):
40 triangular mel filters over a 512-point power spectrum, 25 ms Hann
windows hopped every 10 ms. Embedding features arrive from files (see
embeddings module); both are carried in the same FeatureMatrix container
so the model never cares where its inputs came from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from .audio import AudioBuffer
from .errors import ParameterError

LOG_FLOOR_EPS = 1e-10


class FeatureKind(Enum):
    MFB = "mfb"
    EMBEDDING = "embedding"
    FUSED = "fused"


@dataclass
class FeatureMatrix:
    """A (n_frames, dims) float64 matrix with its frame rate and provenance.

    dim_labels, when present, records which original dimension each column
    came from; select_dims maintains it so pruned models stay auditable.
    """

    data: np.ndarray
    frame_rate_hz: float
    kind: FeatureKind
    dim_labels: list[int] | None = field(default=None)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ParameterError(f"feature data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ParameterError(f"feature data must be non-empty, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("feature data must be finite")
        if not self.frame_rate_hz > 0:
            raise ParameterError("frame rate must be positive")
        self.frame_rate_hz = float(self.frame_rate_hz)
        if not isinstance(self.kind, FeatureKind):
            raise ParameterError(f"kind must be a FeatureKind, got {self.kind!r}")
        if self.dim_labels is not None:
            labels = [int(x) for x in self.dim_labels]
            if len(labels) != self.dims:
                raise ParameterError("dim_labels length must equal feature dims")
            if len(set(labels)) != len(labels):
                raise ParameterError("dim_labels must be unique")
            if any(x < 0 for x in labels):
                raise ParameterError("dim_labels must be non-negative")
            self.dim_labels = labels

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _mel_filterbank(sample_rate_hz: int, n_fft: int, n_mels: int) -> np.ndarray:
    """Triangular filters on the rfft bin frequencies, 0 Hz to Nyquist."""
    nyquist = sample_rate_hz / 2.0
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate_hz / n_fft)
    fb = np.zeros((n_mels, bin_freqs.size))
    for k in range(n_mels):
        lo, center, hi = hz_pts[k], hz_pts[k + 1], hz_pts[k + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        fb[k] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mel_filter_centers_hz(sample_rate_hz: int = 16000, n_mels: int = 40) -> np.ndarray:
    """Center frequency of each mel filter, in Hz."""
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate_hz / 2.0), n_mels + 2)
    return mel_to_hz(mel_pts)[1:-1]


def mfb(
    audio: AudioBuffer,
    n_mels: int = 40,
    window_s: float = 0.025,
    hop_s: float = 0.010,
    n_fft: int = 512,
) -> FeatureMatrix:
    """Log mel filterbank energies.

    Frame count is floor((n_samples - window) / hop) + 1; at 16 kHz with
    the defaults that is a 100 Hz frame rate. Energies are ln(E + 1e-10),
    so digital silence maps to ln(1e-10) in every band.
    """
    if n_mels < 1:
        raise ParameterError("n_mels must be >= 1")
    sr = audio.sample_rate_hz
    window = round(window_s * sr)
    hop = round(hop_s * sr)
    if window < 2 or hop < 1:
        raise ParameterError("window and hop too small for this sample rate")
    if n_fft < window:
        raise ParameterError(f"n_fft {n_fft} shorter than the {window}-sample window")
    n = audio.samples.size
    if n < window:
        raise ParameterError(f"audio has {n} samples, shorter than one {window}-sample window")
    n_frames = (n - window) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(audio.samples, window)[::hop][:n_frames]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)  # periodic Hann
    spectrum = np.fft.rfft(frames * hann, n=n_fft)
    power = spectrum.real**2 + spectrum.imag**2
    fb = _mel_filterbank(sr, n_fft, n_mels)
    energies = power @ fb.T
    return FeatureMatrix(
        data=np.log(energies + LOG_FLOOR_EPS),
        frame_rate_hz=sr / hop,
        kind=FeatureKind.MFB,
    )
