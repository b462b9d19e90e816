"""Corpus manifests and the audio-to-segments feature pipeline.

A manifest is JSON-lines, one record per utterance: audio_path,
belt_path, speaker_id, split (train/val/test), with paths relative to
the manifest file. The pipeline turns one utterance into frame-aligned
feature branches plus a compressed respiration target on a common
100 Hz grid, trimming every stream to the shortest one before cutting
fixed-length segments.

Embedding files live beside the audio as <stem>.layer<k>.emb.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .audio import load_wav, speed_augment
from .belt import BeltTrace, RespirationTrace, load_belt_csv, preprocess_trace
from .embeddings import align_frame_rate, load_embeddings, select_dims
from .errors import FormatError, ParameterError
from .features import FeatureKind, FeatureMatrix, mfb
from .segments import Segment, make_segments

TARGET_FRAME_RATE_HZ = 100.0
SPLITS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    audio_path: Path
    belt_path: Path
    speaker_id: str
    split: str

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise FormatError(
                f"split must be one of {SPLITS}, got {self.split!r}"
            )


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            try:
                entries.append(
                    ManifestEntry(
                        audio_path=base / rec["audio_path"],
                        belt_path=base / rec["belt_path"],
                        speaker_id=str(rec["speaker_id"]),
                        split=str(rec["split"]),
                    )
                )
            except KeyError as exc:
                raise FormatError(f"{path}:{lineno}: missing field {exc}") from exc
    if not entries:
        raise FormatError(f"manifest {path} has no entries")
    return entries


def split_entries(entries: list[ManifestEntry]) -> dict[str, list[ManifestEntry]]:
    out: dict[str, list[ManifestEntry]] = {s: [] for s in SPLITS}
    for e in entries:
        out[e.split].append(e)
    return out


# ---------------------------------------------------------------------------
# feature plans


@dataclass
class FeaturePlan:
    """What to feed the model: filterbanks, embeddings, or both (fused).

    Branch order for fused input is filterbanks first, then embeddings;
    checkpoints persist this plan so inference rebuilds identical inputs.
    """

    kind: FeatureKind
    emb_layer: int = 0
    selection: list[int] | None = None

    def __post_init__(self) -> None:
        if self.kind == FeatureKind.MFB and self.selection is not None:
            raise ParameterError("dimension selection applies to embeddings only")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "emb_layer": self.emb_layer,
            "selection": self.selection,
        }

    @staticmethod
    def from_dict(d: dict) -> "FeaturePlan":
        sel = d.get("selection")
        return FeaturePlan(
            kind=FeatureKind(d["kind"]),
            emb_layer=int(d.get("emb_layer", 0)),
            selection=[int(i) for i in sel] if sel is not None else None,
        )


def emb_path_for(audio_path, layer: int) -> Path:
    audio_path = Path(audio_path)
    return audio_path.with_name(f"{audio_path.stem}.layer{layer}.emb")


def _trim_common(features: list[FeatureMatrix], target: RespirationTrace):
    n = min([f.n_frames for f in features] + [target.values.size])
    feats = [
        FeatureMatrix(f.data[:n].copy(), f.frame_rate_hz, f.kind, f.dim_labels)
        for f in features
    ]
    return feats, RespirationTrace(target.values[:n].copy(), target.frame_rate_hz)


def build_utterance(
    entry: ManifestEntry,
    plan: FeaturePlan,
    frame_rate_hz: float = TARGET_FRAME_RATE_HZ,
) -> tuple[list[FeatureMatrix], RespirationTrace]:
    """Features and aligned target for one manifest entry."""
    audio = load_wav(entry.audio_path)
    features: list[FeatureMatrix] = []
    if plan.kind in (FeatureKind.MFB, FeatureKind.FUSED):
        features.append(mfb(audio))
    if plan.kind in (FeatureKind.EMBEDDING, FeatureKind.FUSED):
        path = emb_path_for(entry.audio_path, plan.emb_layer)
        if not path.exists():
            raise FormatError(f"embedding file not found: {path}")
        emb, _layer = load_embeddings(path)
        emb = align_frame_rate(emb, frame_rate_hz)
        if plan.selection is not None:
            emb = select_dims(emb, plan.selection)
        features.append(emb)
    belt = load_belt_csv(entry.belt_path)
    target = preprocess_trace(belt, audio.duration_s, frame_rate_hz)
    return _trim_common(features, target)


def _augmented_entry_segments(
    entry: ManifestEntry,
    factor: float,
    seg_s: float,
    frame_rate_hz: float,
) -> list[Segment]:
    audio = speed_augment(load_wav(entry.audio_path), factor)
    belt = load_belt_csv(entry.belt_path)
    belt = BeltTrace(belt.timestamps_s / factor, belt.values)
    target = preprocess_trace(belt, audio.duration_s, frame_rate_hz)
    feats, target = _trim_common([mfb(audio)], target)
    return make_segments(
        feats, target, seg_s, source_id=f"{entry.audio_path.stem}@x{factor:g}"
    )


def assemble_segments(
    entries: list[ManifestEntry],
    plan: FeaturePlan,
    seg_s: float = 30.0,
    augment_factors: tuple[float, ...] = (),
    frame_rate_hz: float = TARGET_FRAME_RATE_HZ,
) -> list[Segment]:
    """All fixed-length segments for a list of utterances.

    Speed augmentation re-derives audio and belt at each factor; it only
    applies to filterbank-only plans since embedding files are
    precomputed at natural speed.
    """
    if augment_factors and plan.kind != FeatureKind.MFB:
        raise ParameterError(
            "speed augmentation needs recomputable features; "
            "embedding inputs are extracted offline"
        )
    segments: list[Segment] = []
    for entry in entries:
        feats, target = build_utterance(entry, plan, frame_rate_hz)
        segments.extend(
            make_segments(feats, target, seg_s, source_id=entry.audio_path.stem)
        )
        for factor in augment_factors:
            segments.extend(
                _augmented_entry_segments(entry, factor, seg_s, frame_rate_hz)
            )
    if not segments:
        raise ParameterError(
            f"no segments of {seg_s} s could be cut from {len(entries)} utterance(s)"
        )
    return segments
