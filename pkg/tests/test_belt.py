"""Belt CSV I/O and target preprocessing."""

import math

import numpy as np
import pytest

from speechresp.belt import (
    BeltTrace,
    RespirationTrace,
    load_belt_csv,
    preprocess_trace,
    save_belt_csv,
)
from speechresp.errors import CoverageError, DegenerateSignalError, FormatError, ParameterError


def test_csv_round_trip_is_exact(tmp_path, rng):
    t = np.cumsum(rng.uniform(0.01, 0.1, 50))
    v = rng.normal(2.5, 0.3, 50)
    belt = BeltTrace(t, v)
    path = tmp_path / "b.csv"
    save_belt_csv(belt, path)
    back = load_belt_csv(path)
    np.testing.assert_array_equal(back.timestamps_s, t)
    np.testing.assert_array_equal(back.values, v)


def test_save_load_save_is_byte_identical(tmp_path, rng):
    belt = BeltTrace(np.array([0.0, 0.5, 1.0]), np.array([2.1, 2.9, 2.4]))
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_belt_csv(belt, p1)
    save_belt_csv(load_belt_csv(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_wrong_header_rejected(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("time,force\n0.0,1.0\n")
    with pytest.raises(FormatError):
        load_belt_csv(path)


def test_non_numeric_reading_rejected(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("time_s,force_n\n0.0,1.0\n0.5,oops\n")
    with pytest.raises(FormatError):
        load_belt_csv(path)


def test_wrong_field_count_rejected(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("time_s,force_n\n0.0,1.0,9.9\n")
    with pytest.raises(FormatError):
        load_belt_csv(path)


def test_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("time_s,force_n\n0.0,1.0\n\n0.5,1.2\n\n")
    belt = load_belt_csv(path)
    assert belt.values.size == 2


def test_non_increasing_times_rejected(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("time_s,force_n\n0.0,1.0\n0.5,1.2\n0.5,1.3\n")
    with pytest.raises(FormatError):
        load_belt_csv(path)


def test_belt_needs_two_readings():
    with pytest.raises(ParameterError):
        BeltTrace(np.array([0.0]), np.array([1.0]))


def test_preprocess_frame_count():
    t = np.linspace(0.0, 2.0, 41)
    belt = BeltTrace(t, np.sin(t))
    trace = preprocess_trace(belt, duration_s=2.0, frame_rate_hz=10.0)
    assert trace.values.size == 20
    assert trace.frame_rate_hz == 10.0


def test_preprocess_values_match_hand_computation():
    # linear belt, grid [0, 0.5, 1.0, 1.5]: interp gives [0, .5, 1, 1.5];
    # population z-scores are +/-1.34164, +/-0.44721, squashed by tanh
    belt = BeltTrace(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 2.0]))
    trace = preprocess_trace(belt, duration_s=2.0, frame_rate_hz=2.0)
    expected = np.tanh(np.array([-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865]))
    np.testing.assert_allclose(trace.values, expected, atol=1e-9)


def test_preprocess_edge_hold():
    belt = BeltTrace(np.array([0.3, 1.0, 1.8]), np.array([5.0, 6.0, 7.0]))
    trace = preprocess_trace(belt, duration_s=2.0, frame_rate_hz=10.0)
    # frames before 0.3 s all take the first reading, so they are equal
    assert trace.values[0] == trace.values[1] == trace.values[2]


def test_preprocess_coverage_gaps_rejected():
    late_start = BeltTrace(np.array([0.6, 2.0]), np.array([1.0, 2.0]))
    with pytest.raises(CoverageError):
        preprocess_trace(late_start, duration_s=2.0, frame_rate_hz=10.0)
    early_end = BeltTrace(np.array([0.0, 1.4]), np.array([1.0, 2.0]))
    with pytest.raises(CoverageError):
        preprocess_trace(early_end, duration_s=2.0, frame_rate_hz=10.0)
    # within the 0.5 s slack on both sides is fine
    ok = BeltTrace(np.array([0.4, 1.6]), np.array([1.0, 2.0]))
    preprocess_trace(ok, duration_s=2.0, frame_rate_hz=10.0)


def test_preprocess_constant_belt_rejected():
    belt = BeltTrace(np.array([0.0, 1.0, 2.0]), np.array([3.0, 3.0, 3.0]))
    with pytest.raises(DegenerateSignalError):
        preprocess_trace(belt, duration_s=2.0, frame_rate_hz=10.0)


def test_preprocessed_range_is_open_unit_interval(rng):
    t = np.cumsum(rng.uniform(0.02, 0.06, 200))
    belt = BeltTrace(t - t[0], rng.normal(0, 5, 200))
    dur = float(t[-1] - t[0])
    trace = preprocess_trace(belt, duration_s=dur, frame_rate_hz=25.0)
    assert np.all(np.abs(trace.values) < 1.0)
    assert trace.values.size == math.floor(dur * 25.0)


def test_respiration_trace_validation():
    with pytest.raises(ParameterError):
        RespirationTrace(np.array([0.0, 1.5]), 100.0)  # over-range
    with pytest.raises(ParameterError):
        RespirationTrace(np.zeros((2, 2)), 100.0)
    with pytest.raises(ParameterError):
        RespirationTrace(np.array([0.1]), -1.0)
