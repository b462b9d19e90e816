"""Breath-event detection and the evaluation metric suite.

Events are inhalation onsets pulled out of a respiration trace: smooth,
rescale to unit variance, find prominent well-separated maxima, then walk
each maximum back to its preceding local minimum. Metrics cover frame
agreement (CCC, RMSE), rate agreement (MAE in breaths/min, Acc@2bpm) and
event alignment (breath error rate, pooled over segments).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from .belt import RespirationTrace
from .errors import ParameterError, UndefinedMetricError
from .ioutil import atomic_write_json, atomic_write_text
from .model import ModelParams, ccc, forward
from .segments import Segment

SMOOTH_WINDOW_S = 0.5
PEAK_PROMINENCE = 0.3  # on the unit-std rescaled trace
MIN_PEAK_SEPARATION_S = 2.0  # physiological cap near 30 breaths/min
MATCH_TOL_S = 1.0


@dataclass
class BreathEvents:
    """Inhalation onset times over a known duration."""

    inhale_times_s: np.ndarray
    duration_s: float

    def __post_init__(self) -> None:
        self.inhale_times_s = np.asarray(self.inhale_times_s, dtype=np.float64)
        if self.inhale_times_s.ndim != 1:
            raise ParameterError("inhale times must be a 1-D array")
        if not self.duration_s > 0:
            raise ParameterError("duration must be positive")
        t = self.inhale_times_s
        if t.size:
            if not np.all(np.isfinite(t)):
                raise ParameterError("non-finite event times")
            if t[0] < 0 or t[-1] > self.duration_s:
                raise ParameterError("event times must lie within [0, duration]")
            if t.size > 1 and not np.all(np.diff(t) > 0):
                raise ParameterError("event times must be strictly increasing")

    @property
    def count(self) -> int:
        return int(self.inhale_times_s.size)


def detect_breath_events(trace: RespirationTrace) -> BreathEvents:
    """Find inhalation onsets in a respiration trace.

    The trace is smoothed (0.5 s centered moving average) and rescaled to
    zero mean, unit std, which makes detection invariant to offset and to
    positive scaling. Peaks need prominence >= 0.3 on that scale and
    >= 2 s separation; each peak's onset is its preceding local minimum.
    """
    rate = trace.frame_rate_hz
    n = trace.values.size
    if n < 2.0 * rate:
        raise ParameterError(
            f"trace too short for event detection: {n / rate:.2f} s, need >= 2 s"
        )
    window = max(1, int(round(SMOOTH_WINDOW_S * rate)))
    if window % 2 == 0:
        window += 1  # keep the average centered
    smooth = uniform_filter1d(trace.values, size=window, mode="nearest")
    sd = smooth.std()
    if sd == 0.0:
        return BreathEvents(np.empty(0), trace.values.size / rate)
    z = (smooth - smooth.mean()) / sd
    distance = max(1, int(round(MIN_PEAK_SEPARATION_S * rate)))
    peaks, _ = find_peaks(z, prominence=PEAK_PROMINENCE, distance=distance)
    onsets = []
    for p in peaks:
        j = int(p)
        while j > 0 and z[j - 1] <= z[j]:
            j -= 1
        onsets.append(j / rate)
    # distinct peaks normally have distinct minima between them; plateaus
    # can collapse two walks onto one index, so enforce strict increase
    kept = []
    for t in onsets:
        if not kept or t > kept[-1]:
            kept.append(t)
    return BreathEvents(np.array(kept), n / rate)


def rr_from_events(events: BreathEvents) -> float:
    """Breaths per minute: event count scaled by 60 / duration."""
    return events.count * 60.0 / events.duration_s


def match_events(
    ref: BreathEvents, est: BreathEvents, tol_s: float = MATCH_TOL_S
) -> tuple[int, int, int]:
    """One-to-one event alignment within a time tolerance.

    Both lists are time-sorted already (type invariant); scanning them
    earliest-first and pairing whenever the current pair is within
    tolerance yields a maximum-cardinality matching for interval
    constraints of this form. Returns (matched, insertions, deletions)
    where insertions are unmatched estimated events and deletions are
    unmatched reference events.
    """
    if not tol_s > 0:
        raise ParameterError("matching tolerance must be positive")
    r = ref.inhale_times_s
    e = est.inhale_times_s
    i = j = matched = 0
    while i < r.size and j < e.size:
        if abs(r[i] - e[j]) <= tol_s:
            matched += 1
            i += 1
            j += 1
        elif e[j] < r[i]:
            j += 1
        else:
            i += 1
    return matched, e.size - matched, r.size - matched


def ber(ref: BreathEvents, est: BreathEvents, tol_s: float = MATCH_TOL_S) -> float:
    """Breath error rate: (insertions + deletions) / reference count."""
    if ref.count == 0:
        raise UndefinedMetricError("BER undefined: reference has no inhale events")
    matched, insertions, deletions = match_events(ref, est, tol_s)
    return (insertions + deletions) / ref.count


# ---------------------------------------------------------------------------
# dataset-level evaluation


@dataclass
class SegmentScore:
    segment_id: str
    ccc: float
    rmse: float
    rr_ref: float
    rr_est: float
    insertions: int
    deletions: int
    n_ref_events: int


@dataclass
class MetricsReport:
    ccc: float
    rmse: float
    mae_bpm: float
    acc_at_2bpm_pct: float
    ber: float
    n_segments: int

    def __post_init__(self) -> None:
        for name in ("ccc", "rmse", "mae_bpm", "acc_at_2bpm_pct", "ber"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"non-finite metric {name}")
        if not (0.0 <= self.acc_at_2bpm_pct <= 100.0):
            raise ParameterError("acc_at_2bpm_pct out of [0, 100]")
        if self.ber < 0 or self.rmse < 0 or self.mae_bpm < 0:
            raise ParameterError("rmse, mae and ber must be non-negative")
        if self.n_segments < 1:
            raise ParameterError("n_segments must be >= 1")

    def to_dict(self) -> dict:
        return {
            "ccc": self.ccc,
            "rmse": self.rmse,
            "mae_bpm": self.mae_bpm,
            "acc_at_2bpm_pct": self.acc_at_2bpm_pct,
            "ber": self.ber,
            "n_segments": self.n_segments,
        }


def report_from_scores(scores: list[SegmentScore]) -> MetricsReport:
    """Aggregate per-segment scores.

    CCC and RMSE are averaged over segments; MAE and Acc@2bpm compare
    per-segment respiratory rates; BER is pooled (total insertions plus
    deletions over total reference events) so short segments do not get
    outsized weight.
    """
    if not scores:
        raise ParameterError("cannot aggregate zero segments")
    total_n = sum(s.n_ref_events for s in scores)
    if total_n == 0:
        raise UndefinedMetricError(
            "BER undefined: no reference inhale events in the whole dataset"
        )
    total_i = sum(s.insertions for s in scores)
    total_d = sum(s.deletions for s in scores)
    rr_errors = np.array([abs(s.rr_est - s.rr_ref) for s in scores])
    return MetricsReport(
        ccc=float(np.mean([s.ccc for s in scores])),
        rmse=float(np.mean([s.rmse for s in scores])),
        mae_bpm=float(np.mean(rr_errors)),
        acc_at_2bpm_pct=float(100.0 * np.mean(rr_errors <= 2.0)),
        ber=(total_i + total_d) / total_n,
        n_segments=len(scores),
    )


def score_segment(params: ModelParams, seg: Segment, segment_id: str) -> SegmentScore:
    est = forward(params, seg.features)
    ref = seg.target
    ev_ref = detect_breath_events(ref)
    ev_est = detect_breath_events(est)
    _, ins, dele = match_events(ev_ref, ev_est)
    return SegmentScore(
        segment_id=segment_id,
        ccc=ccc(est.values, ref.values),
        rmse=float(np.sqrt(np.mean((est.values - ref.values) ** 2))),
        rr_ref=rr_from_events(ev_ref),
        rr_est=rr_from_events(ev_est),
        insertions=ins,
        deletions=dele,
        n_ref_events=ev_ref.count,
    )


def evaluate_segments(
    params: ModelParams, dataset: list[Segment]
) -> tuple[MetricsReport, list[SegmentScore]]:
    """Per-segment scores plus the aggregate report."""
    if not dataset:
        raise ParameterError("cannot evaluate an empty dataset")
    scores = []
    for idx, seg in enumerate(dataset):
        base = seg.source_id or f"seg{idx:04d}"
        scores.append(score_segment(params, seg, f"{base}@{seg.offset_s:g}s"))
    return report_from_scores(scores), scores


def evaluate(params: ModelParams, dataset: list[Segment]) -> MetricsReport:
    report, _ = evaluate_segments(params, dataset)
    return report


# ---------------------------------------------------------------------------
# artifact writers


def save_metrics_json(report: MetricsReport, path) -> None:
    atomic_write_json(path, report.to_dict())


def save_segment_csv(scores: list[SegmentScore], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["segment_id", "ccc", "rmse", "rr_ref", "rr_est", "I", "D", "N"]
    )
    for s in scores:
        writer.writerow(
            [
                s.segment_id,
                repr(s.ccc),
                repr(s.rmse),
                repr(s.rr_ref),
                repr(s.rr_est),
                s.insertions,
                s.deletions,
                s.n_ref_events,
            ]
        )
    atomic_write_text(path, buf.getvalue())


def save_trace_csv(path, estimate: RespirationTrace, target: RespirationTrace | None = None) -> None:
    """Per-frame CSV: frame, target, estimate (target column only when given)."""
    if target is not None and target.values.size != estimate.values.size:
        raise ParameterError("target and estimate lengths differ")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if target is None:
        writer.writerow(["frame", "estimate"])
        for k, v in enumerate(estimate.values):
            writer.writerow([k, repr(float(v))])
    else:
        writer.writerow(["frame", "target", "estimate"])
        for k, (tv, ev) in enumerate(zip(target.values, estimate.values)):
            writer.writerow([k, repr(float(tv)), repr(float(ev))])
    atomic_write_text(path, buf.getvalue())
