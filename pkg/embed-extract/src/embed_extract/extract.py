"""Run a frozen pretrained speech encoder and write `.emb` files.

The binary layout is the contract with the downstream trainer:

    8 bytes magic ``BRTHEMB1``
    uint16 layer, uint16 dims          (little endian)
    uint32 frame rate in centihertz
    uint32 frame count
    frame-major float32 payload

Layer numbering is 1-based over transformer blocks: layer k is the
output of the k-th block. Index 0 (the pre-transformer feature
projection) is not addressable here.
"""

import json
import math
import os
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMB_MAGIC = b"BRTHEMB1"
EXPECTED_SR = 16000


class ExtractError(Exception):
    pass


class SetupError(ExtractError):
    pass


@dataclass
class ExtractJob:
    manifest: Path
    model_dir: Path
    layers: list[int] = field(default_factory=lambda: [4, 7])
    out_dir: Path | None = None  # None: write next to each audio file

    def __post_init__(self) -> None:
        self.manifest = Path(self.manifest)
        self.model_dir = Path(self.model_dir)
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)
        if not self.layers:
            raise ExtractError("at least one layer is required")
        if any(not isinstance(k, int) or k < 1 for k in self.layers):
            raise ExtractError(f"layers must be positive integers, got {self.layers}")
        if len(set(self.layers)) != len(self.layers):
            raise ExtractError(f"duplicate layers in {self.layers}")


def read_wav_16k_mono(path) -> np.ndarray:
    """16-bit PCM samples as float32 in [-1, 1). No resampling:
    a wrong rate means the corpus was prepared incorrectly."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getframerate() != EXPECTED_SR:
                raise ExtractError(
                    f"{path}: sample rate {wf.getframerate()} Hz, expected "
                    f"{EXPECTED_SR}; resample the corpus, not the extractor"
                )
            if wf.getnchannels() != 1:
                raise ExtractError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise ExtractError(f"{path}: expected 16-bit PCM")
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise ExtractError(f"{path}: not a valid WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return samples


def save_emb(data: np.ndarray, frame_rate_hz: float, layer: int, path) -> None:
    """Write one embedding matrix in the `.emb` layout above."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ExtractError(f"embedding matrix must be 2-D, got shape {data.shape}")
    n_frames, dims = data.shape
    rate_chz = round(frame_rate_hz * 100)
    header = EMB_MAGIC + struct.pack("<HHII", layer, dims, rate_chz, n_frames)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
    os.replace(tmp, path)


def load_manifest_audio(manifest: Path) -> list[Path]:
    """Audio paths from a JSONL manifest, resolved against its directory."""
    manifest = Path(manifest)
    if not manifest.exists():
        raise ExtractError(f"manifest not found: {manifest}")
    paths = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExtractError(f"{manifest}:{lineno}: invalid JSON ({exc})") from exc
        if "audio_path" not in entry:
            raise ExtractError(f"{manifest}:{lineno}: missing audio_path")
        paths.append(manifest.parent / entry["audio_path"])
    if not paths:
        raise ExtractError(f"manifest is empty: {manifest}")
    return paths


def load_model(model_dir: Path):
    """Frozen encoder from a local directory. Import is deferred so the
    error for a missing install or model stays actionable."""
    import torch
    from transformers import Wav2Vec2Model

    model_dir = Path(model_dir)
    if not (model_dir / "config.json").exists():
        raise SetupError(
            f"no model at {model_dir}. Save a pretrained encoder there first, e.g.\n"
            "  from transformers import Wav2Vec2Model\n"
            "  Wav2Vec2Model.from_pretrained('facebook/wav2vec2-base')"
            f".save_pretrained('{model_dir}')"
        )
    model = Wav2Vec2Model.from_pretrained(str(model_dir), local_files_only=True)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    # one thread pins the matmul reduction order: re-running the
    # extraction must reproduce files byte for byte
    torch.set_num_threads(1)
    return model


def frame_rate_hz(model) -> float:
    stride = math.prod(model.config.conv_stride)
    return EXPECTED_SR / stride


def _hidden_states(model, samples: np.ndarray):
    import torch

    with torch.no_grad():
        out = model(
            torch.from_numpy(samples)[None, :], output_hidden_states=True
        )
    return out.hidden_states  # [0] is pre-transformer, [k] is block k


def extract(job: ExtractJob) -> list[Path]:
    """Embed every manifest utterance at every requested layer.

    Returns the written paths, one per (utterance, layer), named
    ``<stem>.layer<k>.emb``.
    """
    audio_paths = load_manifest_audio(job.manifest)
    model = load_model(job.model_dir)
    n_blocks = model.config.num_hidden_layers
    bad = [k for k in job.layers if k > n_blocks]
    if bad:
        raise ExtractError(
            f"layers {bad} out of range: model has {n_blocks} transformer blocks"
        )
    rate = frame_rate_hz(model)
    if job.out_dir is not None:
        job.out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    for audio_path in audio_paths:
        if not audio_path.exists():
            raise ExtractError(f"audio file not found: {audio_path}")
        samples = read_wav_16k_mono(audio_path)
        states = _hidden_states(model, samples)
        target_dir = job.out_dir if job.out_dir is not None else audio_path.parent
        for k in job.layers:
            emb = states[k][0].numpy()
            out_path = Path(target_dir) / f"{audio_path.stem}.layer{k}.emb"
            save_emb(emb, rate, k, out_path)
            written.append(out_path)
    return written
