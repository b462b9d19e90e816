"""Synthetic speech-breathing corpus with known ground truth.

Each utterance is built from a slowly phase-jittered sinusoid standing in
for the chest-belt trace. The audio carries two acoustically distinct
cues tied to that trace: a broadband high-band burst during belt rise
(the audible inhalation) and speech-band noise during the falling,
exhalation phase whose amplitude follows the belt value. Both cues land
in different mel bands, so a filterbank model has an honest, learnable
path from audio to trace. Everything is deterministic per seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .audio import AudioBuffer, save_wav
from .belt import BeltTrace, RespirationTrace, save_belt_csv
from .errors import ParameterError
from .features import FeatureKind, FeatureMatrix
from .ioutil import atomic_write_text

PHASE_JITTER_RAD = 0.15
PHASE_CTRL_SPACING_S = 4.0
BELT_BASE_N = 2.5  # plausible resting strain-gauge force
BELT_AMP_N = 0.8
BELT_NOISE_N = 0.005
INHALE_BAND_HZ = (3000.0, 7000.0)
SPEECH_BAND_HZ = (200.0, 2500.0)
SPEECH_FLOOR = 0.2  # exhale amplitude = floor + (1 - floor) * belt value
PEAK_LEVEL = 0.9


@dataclass
class SynthConfig:
    n_utterances: int
    utterance_s: float = 60.0
    rr_range_bpm: tuple[float, float] = (5.0, 19.0)
    inhale_noise_gain: float = 4.0
    speech_band_gain: float = 1.0
    seed: int = 0
    sample_rate_hz: int = 16000
    belt_rate_hz: float = 25.0
    utterances_per_speaker: int = 5
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self) -> None:
        low, high = self.rr_range_bpm
        if not (0 < low < high):
            raise ParameterError("rr range must satisfy 0 < low < high")
        if self.utterance_s < 30:
            raise ParameterError("utterances must be at least 30 s")
        if self.n_utterances < 1:
            raise ParameterError("n_utterances must be >= 1")
        if self.inhale_noise_gain <= 0 or self.speech_band_gain <= 0:
            raise ParameterError("band gains must be positive")
        if self.sample_rate_hz < 8000:
            raise ParameterError("sample rate too low for the synthesis bands")
        if self.belt_rate_hz <= 0:
            raise ParameterError("belt rate must be positive")
        if self.utterances_per_speaker < 1:
            raise ParameterError("utterances_per_speaker must be >= 1")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")


def _bandpassed_unit_noise(rng, n: int, band: tuple[float, float], sr: int):
    sos = butter(4, band, btype="bandpass", fs=sr, output="sos")
    x = sosfilt(sos, rng.standard_normal(n))
    return x / x.std()


def synth_utterance(
    cfg: SynthConfig, rr_bpm: float, seed: int
) -> tuple[AudioBuffer, BeltTrace]:
    """One utterance at a fixed respiratory rate.

    The belt is sin(2 pi f t + phi(t)) with slow bounded phase jitter, so
    cycle count stays at rr_bpm while peak spacing wobbles. Audio is
    high-band noise gated by the positive belt derivative (inhale bursts
    during chest expansion) plus speech-band noise gated to the falling
    phase, with amplitude following the belt value.
    """
    low, high = cfg.rr_range_bpm
    if not (low <= rr_bpm <= high):
        raise ParameterError(f"rr {rr_bpm} outside configured range [{low}, {high}]")
    rng = np.random.default_rng(seed)
    dur = cfg.utterance_s
    freq = rr_bpm / 60.0

    n_belt = int(round(dur * cfg.belt_rate_hz))
    t = np.arange(n_belt) / cfg.belt_rate_hz
    n_ctrl = int(dur / PHASE_CTRL_SPACING_S) + 2
    ctrl_t = np.linspace(0.0, dur, n_ctrl)
    phase = np.interp(t, ctrl_t, rng.normal(0.0, PHASE_JITTER_RAD, n_ctrl))
    belt = np.sin(2.0 * math.pi * freq * t + phase)
    force = BELT_BASE_N + BELT_AMP_N * belt + rng.normal(0.0, BELT_NOISE_N, n_belt)

    sr = cfg.sample_rate_hz
    n_audio = int(round(dur * sr))
    ta = np.arange(n_audio) / sr
    belt_a = np.interp(ta, t, belt)
    deriv = np.gradient(belt, t)
    deriv_a = np.interp(ta, t, deriv)
    deriv_a /= np.abs(deriv_a).max()
    inhale_env = np.clip(deriv_a, 0.0, None) ** 2
    exhale_gate = np.sqrt(np.clip(-deriv_a, 0.0, None))
    speech_env = exhale_gate * (SPEECH_FLOOR + (1.0 - SPEECH_FLOOR) * (belt_a + 1.0) / 2.0)

    hi = _bandpassed_unit_noise(rng, n_audio, INHALE_BAND_HZ, sr)
    lo = _bandpassed_unit_noise(rng, n_audio, SPEECH_BAND_HZ, sr)
    audio = cfg.inhale_noise_gain * hi * inhale_env
    audio += cfg.speech_band_gain * lo * speech_env
    audio *= PEAK_LEVEL / np.abs(audio).max()
    return AudioBuffer(audio, sr), BeltTrace(t, force)


def synth_embeddings(
    trace: RespirationTrace,
    dims: int,
    signal_dim: int | None = None,
    noise_scale: float = 1.0,
    seed: int = 0,
) -> FeatureMatrix:
    """Fake embedding matrix for saliency tests: independent noise
    columns, with one optional column carrying the trace plus noise."""
    if dims < 1:
        raise ParameterError("dims must be >= 1")
    if signal_dim is not None and not (0 <= signal_dim < dims):
        raise ParameterError("signal_dim out of range")
    rng = np.random.default_rng(seed)
    n = trace.values.size
    data = rng.standard_normal((n, dims))
    if signal_dim is not None:
        data[:, signal_dim] = trace.values + noise_scale * rng.standard_normal(n)
    return FeatureMatrix(data, trace.frame_rate_hz, FeatureKind.EMBEDDING)


def synth_corpus(cfg: SynthConfig, out_dir) -> Path:
    """Write WAVs, belt CSVs and a speaker-disjoint manifest; returns the
    manifest path. Speakers are contiguous utterance groups; the split is
    by speaker so no simulated voice appears in two splits."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = cfg.n_utterances
    n_spk = math.ceil(n / cfg.utterances_per_speaker)
    if n_spk < 3:
        raise ParameterError(
            f"{n} utterances at {cfg.utterances_per_speaker} per speaker give "
            f"{n_spk} speaker(s); a 3-way speaker-disjoint split needs >= 3"
        )
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n_spk)
    n_test = max(1, int(round(cfg.test_fraction * n_spk)))
    n_val = max(1, int(round(cfg.val_fraction * n_spk)))
    if n_test + n_val >= n_spk:
        raise ParameterError("split fractions leave no training speakers")
    split_of = {}
    for pos, spk in enumerate(order):
        if pos < n_test:
            split_of[spk] = "test"
        elif pos < n_test + n_val:
            split_of[spk] = "val"
        else:
            split_of[spk] = "train"
    low, high = cfg.rr_range_bpm
    lines = []
    for u in range(n):
        rr = float(rng.uniform(low, high))
        useed = int(rng.integers(0, 2**63))
        audio, belt = synth_utterance(cfg, rr, useed)
        wav_name = f"u{u:04d}.wav"
        csv_name = f"u{u:04d}.csv"
        save_wav(audio, out / wav_name)
        save_belt_csv(belt, out / csv_name)
        spk = u // cfg.utterances_per_speaker
        lines.append(
            json.dumps(
                {
                    "audio_path": wav_name,
                    "belt_path": csv_name,
                    "speaker_id": f"spk{spk:03d}",
                    "split": split_of[spk],
                },
                sort_keys=True,
            )
        )
    manifest = out / "manifest.jsonl"
    atomic_write_text(manifest, "\n".join(lines) + "\n")
    return manifest
