"""WAV input/output and speed perturbation.

Audio lives in memory as float64 samples in [-1, 1]. On disk we accept
exactly one encoding: RIFF PCM, 16-bit, mono. Anything else is refused
loudly; silent downmixing or re-quantization would corrupt experiments
downstream.
"""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import FormatError, ParameterError, UnsupportedFormatError
from .ioutil import atomic_write_bytes

# load divides by 32768 so that int16 full scale maps inside [-1, 1]
PCM_SCALE = 32768.0

SPEED_FACTOR_MIN = 0.5
SPEED_FACTOR_MAX = 2.0


@dataclass
class AudioBuffer:
    """A mono audio signal: float64 samples in [-1, 1] plus its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ParameterError("audio samples must be one-dimensional")
        if int(self.sample_rate_hz) <= 0:
            raise ParameterError(f"sample rate must be positive, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)
        if not np.all(np.isfinite(self.samples)):
            raise ParameterError("audio samples must be finite")
        if self.samples.size and float(np.max(np.abs(self.samples))) > 1.0:
            raise ParameterError("audio samples must lie in [-1, 1]")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


def load_wav(path: str | Path) -> AudioBuffer:
    """Read a RIFF PCM 16-bit mono WAV file.

    Raises FormatError on malformed or truncated files and
    UnsupportedFormatError on any channel count or sample width other
    than mono/16-bit.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sample_width = wf.getsampwidth()
            sample_rate = wf.getframerate()
            n_frames = wf.getnframes()
            if n_channels != 1:
                raise UnsupportedFormatError(
                    f"{path}: {n_channels} channels; only mono is supported (no downmixing)"
                )
            if sample_width != 2:
                raise UnsupportedFormatError(
                    f"{path}: {8 * sample_width}-bit samples; only 16-bit PCM is supported"
                )
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated WAV header") from exc
    if len(raw) != n_frames * 2:
        raise FormatError(
            f"{path}: header declares {n_frames} frames but only "
            f"{len(raw) // 2} are present"
        )
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    return AudioBuffer(samples=samples, sample_rate_hz=sample_rate)


def save_wav(audio: AudioBuffer, path: str | Path) -> None:
    """Write 16-bit PCM mono, atomically. Quantization is round-to-nearest."""
    quantized = np.clip(np.rint(audio.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate_hz)
        wf.writeframes(quantized.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def speed_augment(audio: AudioBuffer, factor: float) -> AudioBuffer:
    """Simulate faster (factor > 1) or slower (factor < 1) speech.

    The signal is reinterpreted at rate `factor * sr` and resampled back to
    `sr`, so duration scales by 1/factor and pitch shifts along with speed.
    Output duration matches `duration / factor` within one sample.
    """
    if not (SPEED_FACTOR_MIN <= factor <= SPEED_FACTOR_MAX):
        raise ParameterError(
            f"speed factor {factor} outside [{SPEED_FACTOR_MIN}, {SPEED_FACTOR_MAX}]"
        )
    if factor == 1.0:
        return AudioBuffer(audio.samples.copy(), audio.sample_rate_hz)
    ratio = Fraction(factor).limit_denominator(1000)
    # playing at sr*factor then resampling to sr is a rate change of 1/factor
    out = resample_poly(audio.samples, up=ratio.denominator, down=ratio.numerator)
    out = np.clip(out, -1.0, 1.0)  # the anti-alias filter can ring past full scale
    return AudioBuffer(out, audio.sample_rate_hz)
