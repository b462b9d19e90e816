"""Cross-correlation saliency over embedding dimensions.

Each dimension k gets a relevance term (mean absolute Pearson correlation
between column k and the respiration trace, averaged across utterances)
plus a weighted cross-dimension term: the mean absolute correlation of
column k with every other column j, weighted by j's own relevance and
averaged over the N-1 other dimensions. The sum is the selection score.

Correlations are computed per utterance and their absolute values are
averaged afterwards; pooling frames across utterances first would let
per-utterance mean shifts manufacture correlation that is not there.
Constant columns correlate with nothing and contribute rho = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .belt import RespirationTrace
from .errors import AlignmentError, FormatError, ParameterError
from .features import FeatureMatrix
from .ioutil import atomic_write_json


@dataclass
class SaliencyReport:
    scores: np.ndarray  # (dims,)
    base_corr: np.ndarray  # (dims,) mean |rho(column, trace)|
    redundancy: np.ndarray  # (dims,) weighted cross-dimension term
    n_utterances: int

    @property
    def dims(self) -> int:
        return int(self.scores.size)

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.base_corr = np.asarray(self.base_corr, dtype=np.float64)
        self.redundancy = np.asarray(self.redundancy, dtype=np.float64)
        if not (self.scores.shape == self.base_corr.shape == self.redundancy.shape):
            raise ParameterError("report vectors must share one length")
        if self.scores.ndim != 1 or self.scores.size < 1:
            raise ParameterError("report needs at least one dimension")
        for name, v in (
            ("scores", self.scores),
            ("base_corr", self.base_corr),
            ("redundancy", self.redundancy),
        ):
            if not np.all(np.isfinite(v)):
                raise ParameterError(f"non-finite values in {name}")
        if np.any(self.redundancy < -1e-12):
            raise ParameterError("redundancy terms must be non-negative")
        if np.max(np.abs(self.scores - (self.base_corr + self.redundancy))) > 1e-9:
            raise ParameterError("scores must equal base_corr + redundancy")
        if self.n_utterances < 1:
            raise ParameterError("n_utterances must be >= 1")


def _constant_tol(mu) -> np.ndarray:
    # a column of one repeated value can come out with sd ~ 1e-16 from
    # summation rounding; anything at that scale is constant
    return 1e-12 * np.maximum(1.0, np.abs(mu))


def _standardize_columns(x: np.ndarray) -> np.ndarray:
    """Zero-mean unit-std columns (population std); constant columns
    become all zeros so they yield rho = 0 against anything."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    z = x - mu
    nonconst = sd > _constant_tol(mu)
    z[:, nonconst] /= sd[nonconst]
    z[:, ~nonconst] = 0.0
    return z


def saliency_scores(
    utterances: list[tuple[FeatureMatrix, RespirationTrace]],
) -> SaliencyReport:
    """Score all embedding dimensions from (embedding, trace) pairs."""
    if not utterances:
        raise ParameterError("saliency needs at least one utterance")
    dims = utterances[0][0].dims
    for emb, trace in utterances:
        if emb.dims != dims:
            raise AlignmentError(
                f"utterances disagree on embedding dims: {dims} vs {emb.dims}"
            )
        if emb.n_frames != trace.values.size:
            raise AlignmentError(
                f"embedding has {emb.n_frames} frames, trace has {trace.values.size}"
            )
    n_utt = len(utterances)
    pair_sum = np.zeros((dims, dims))
    base_sum = np.zeros(dims)
    for emb, trace in utterances:
        m = emb.n_frames
        z = _standardize_columns(emb.data)
        t = np.asarray(trace.values, dtype=np.float64)
        sd = t.std()
        constant = sd <= float(_constant_tol(t.mean()))
        zt = np.zeros_like(t) if constant else (t - t.mean()) / sd
        base_sum += np.abs(z.T @ zt) / m
        pair_sum += np.abs(z.T @ z) / m
    base_corr = base_sum / n_utt
    pair_mean = pair_sum / n_utt
    if dims == 1:
        redundancy = np.zeros(1)
    else:
        weighted = pair_mean @ base_corr
        weighted -= np.diag(pair_mean) * base_corr  # drop the j == k term
        redundancy = weighted / (dims - 1)
    scores = base_corr + redundancy
    return SaliencyReport(
        scores=scores,
        base_corr=base_corr,
        redundancy=redundancy,
        n_utterances=n_utt,
    )


def top_fraction(report: SaliencyReport, p: float) -> list[int]:
    """Indices of the ceil(p * dims) highest-scoring dimensions, ascending.

    Ties go to the lower index.
    """
    if not (0.0 < p <= 1.0):
        raise ParameterError(f"fraction must be in (0, 1], got {p}")
    k = math.ceil(p * report.dims)
    order = np.argsort(-report.scores, kind="stable")  # stable: ties keep index order
    chosen = sorted(int(i) for i in order[:k])
    return chosen


# ---------------------------------------------------------------------------
# serialization


def report_to_dict(report: SaliencyReport) -> dict:
    return {
        "dims": report.dims,
        "scores": [float(v) for v in report.scores],
        "base_corr": [float(v) for v in report.base_corr],
        "redundancy": [float(v) for v in report.redundancy],
        "n_utterances": report.n_utterances,
    }


def save_report(report: SaliencyReport, path) -> None:
    atomic_write_json(path, report_to_dict(report))


def load_report(path) -> SaliencyReport:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"saliency report is not valid JSON: {exc}") from exc
    try:
        report = SaliencyReport(
            scores=np.array(d["scores"], dtype=np.float64),
            base_corr=np.array(d["base_corr"], dtype=np.float64),
            redundancy=np.array(d["redundancy"], dtype=np.float64),
            n_utterances=int(d["n_utterances"]),
        )
    except (KeyError, TypeError, ValueError, ParameterError) as exc:
        raise FormatError(f"saliency report is malformed: {exc}") from exc
    if report.dims != int(d.get("dims", report.dims)):
        raise FormatError("saliency report dims field disagrees with score length")
    return report


def save_selection(indices: list[int], path) -> None:
    atomic_write_json(path, [int(i) for i in indices])


def load_selection(path) -> list[int]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"selection file is not valid JSON: {exc}") from exc
    if not isinstance(d, list) or not all(isinstance(i, int) for i in d):
        raise FormatError("selection file must be a JSON list of integers")
    return d
