"""Embedding files, frame-rate alignment, and dimension selection.

Foundation-model representations are produced offline by a separate
extractor and exchanged through flat `.emb` files. The binary layout is
bit-exact: a little-endian header (magic "BRTHEMB1", layer uint16, dims
uint16, frame rate in centihertz uint32, frame count uint32) followed by
n_frames * dims float32 values, frame-major. This module also brings
streams onto a common frame grid (integer-ratio repeat/average) and
applies saliency-driven dimension selections.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import AlignmentError, FormatError, ParameterError, TruncationError
from .features import FeatureKind, FeatureMatrix
from .ioutil import atomic_write_bytes

EMB_MAGIC = b"BRTHEMB1"
_HEADER = struct.Struct("<8sHHII")

MAX_EMB_DIMS = 4096


def load_embeddings(path: str | Path) -> tuple[FeatureMatrix, int]:
    """Read an `.emb` file; returns (matrix, layer index from the header)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read embedding file ({exc})") from exc
    if len(blob) < _HEADER.size:
        raise TruncationError(f"{path}: {len(blob)} bytes is shorter than the header")
    magic, layer, dims, rate_centihz, n_frames = _HEADER.unpack_from(blob)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}")
    if not (1 <= dims <= MAX_EMB_DIMS):
        raise FormatError(f"{path}: dims {dims} outside [1, {MAX_EMB_DIMS}]")
    if n_frames < 1:
        raise FormatError(f"{path}: header declares {n_frames} frames")
    if rate_centihz == 0:
        raise FormatError(f"{path}: zero frame rate")
    expected = n_frames * dims * 4
    payload = blob[_HEADER.size :]
    if len(payload) != expected:
        raise TruncationError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n_frames, dims)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: embedding payload contains non-finite values")
    matrix = FeatureMatrix(
        data=data.astype(np.float64),
        frame_rate_hz=rate_centihz / 100.0,
        kind=FeatureKind.EMBEDDING,
    )
    return matrix, layer


def save_embeddings(matrix: FeatureMatrix, path: str | Path, layer: int = 0) -> None:
    """Write a FeatureMatrix as an `.emb` file (float32 payload)."""
    if not (0 <= layer <= 0xFFFF):
        raise ParameterError(f"layer {layer} does not fit in uint16")
    if matrix.dims > MAX_EMB_DIMS:
        raise ParameterError(f"dims {matrix.dims} exceeds format limit {MAX_EMB_DIMS}")
    rate_centihz = round(matrix.frame_rate_hz * 100.0)
    if not (1 <= rate_centihz <= 0xFFFFFFFF):
        raise ParameterError(f"frame rate {matrix.frame_rate_hz} not representable")
    header = _HEADER.pack(EMB_MAGIC, layer, matrix.dims, rate_centihz, matrix.n_frames)
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def align_frame_rate(matrix: FeatureMatrix, target_rate_hz: float) -> FeatureMatrix:
    """Resample to target_rate_hz by integer frame repetition or averaging.

    Upsampling by k repeats each frame k times; downsampling by k averages
    consecutive groups of k frames (a trailing partial group is dropped).
    Non-integer ratios are refused: this is grid alignment, not signal
    resampling.
    """
    if target_rate_hz <= 0:
        raise ParameterError("target frame rate must be positive")
    current = matrix.frame_rate_hz
    if target_rate_hz == current:
        return FeatureMatrix(matrix.data.copy(), current, matrix.kind, _copy_labels(matrix))
    if target_rate_hz > current:
        k = _integer_ratio(target_rate_hz, current)
        data = np.repeat(matrix.data, k, axis=0)
    else:
        k = _integer_ratio(current, target_rate_hz)
        n_full = (matrix.n_frames // k) * k
        if n_full == 0:
            raise AlignmentError(
                f"cannot downsample {matrix.n_frames} frames by a factor of {k}"
            )
        data = matrix.data[:n_full].reshape(-1, k, matrix.dims).mean(axis=1)
    return FeatureMatrix(data, target_rate_hz, matrix.kind, _copy_labels(matrix))


def _integer_ratio(hi: float, lo: float) -> int:
    ratio = hi / lo
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9:
        raise AlignmentError(
            f"frame rates {lo} Hz and {hi} Hz are not related by an integer factor"
        )
    return k


def _copy_labels(matrix: FeatureMatrix) -> list[int] | None:
    return None if matrix.dim_labels is None else list(matrix.dim_labels)


def select_dims(matrix: FeatureMatrix, indices) -> FeatureMatrix:
    """Keep the listed columns, in the listed order.

    Indices refer to the matrix as given; dim_labels composes, so labels
    always name columns of the original, unpruned feature space.
    """
    idx = [int(i) for i in indices]
    if len(idx) < 1:
        raise ParameterError("selection must keep at least one dimension")
    if len(set(idx)) != len(idx):
        raise ParameterError("selection indices must be unique")
    if any(i < 0 or i >= matrix.dims for i in idx):
        raise ParameterError(
            f"selection indices must lie in [0, {matrix.dims}), got {idx}"
        )
    if matrix.dim_labels is None:
        labels = list(idx)
    else:
        labels = [matrix.dim_labels[i] for i in idx]
    return FeatureMatrix(matrix.data[:, idx].copy(), matrix.frame_rate_hz, matrix.kind, labels)
