import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcgseg.decode import (NONE, S1, S2, ConfusionCounts, Event, WindowExample, confusion, decode,
                           event_scores, events_to_intervals, frame_labels, label_to_target,
                           make_windows, metrics, target_to_label, threshold_labels,
                           window_accuracy, window_arrays, write_metrics_json,
                           write_segmentation_csv)
from pcgseg.dsp import FrameGrid
from pcgseg.signal_io import PcgRecording, State, StateInterval


def _rec(annotations, n=4000, fs=1600):
    return PcgRecording("r", np.zeros(n), fs, tuple(annotations))


def test_frame_labels_rules():
    grid = FrameGrid(128, 32, 10, 1600)  # centers at 64, 96, ..., 352
    rec = _rec([StateInterval(50, 97, State.S1), StateInterval(97, 160, State.SYSTOLE),
                StateInterval(160, 192, State.S2), StateInterval(192, 300, State.DIASTOLE)])
    lab = frame_labels(rec, grid)
    assert lab.tolist()[:6] == [S1, S1, NONE, S2, NONE, NONE]
    assert lab.tolist()[-1] == NONE  # 352 is unannotated
    boundary = _rec([StateInterval(0, 96, State.S1), StateInterval(96, 200, State.S2)])
    assert frame_labels(boundary, grid)[1] == S2  # center 96 starts the S2 interval


def test_frame_labels_rate_mapping():
    grid = FrameGrid(128, 32, 3, 1600)
    rec = PcgRecording("r", np.zeros(1000), 4000, (StateInterval(230, 250, State.S1),))
    # frame 1 center 96 at 1600 Hz -> 240 at 4000 Hz
    assert frame_labels(rec, grid).tolist() == [NONE, S1, NONE]


def test_windowing():
    frames = np.arange(997 * 2, dtype=float).reshape(997, 2)
    labels = np.zeros(997, dtype=np.int8)
    labels[500] = S2
    X, y, centers = window_arrays(frames, labels, 7)
    assert X.shape == (991, 7, 2) and len(y) == 991
    assert centers[0] == 3 and centers[-1] == 993
    assert np.array_equal(X[10], frames[10:17])
    assert y[497] == -1.0 and np.sum(y != 0) == 1
    ws = make_windows(frames, labels, 7, "r")
    assert len(ws) == 991 and ws[497].label == State.S2 and ws[497].target == -1.0
    assert all(w.target == 0 for w in make_windows(frames, np.zeros(997), 7))
    for bad in (0, 4):
        with pytest.raises(ValueError):
            window_arrays(frames, labels, bad)
    with pytest.raises(ValueError):
        window_arrays(frames[:5], labels[:5], 7)
    with pytest.raises(ValueError):
        WindowExample(np.zeros((7, 2)), 1.0, State.S2, 3)


def test_encoding_bijection():
    for state, t in ((State.S1, 1.0), (State.S2, -1.0), (State.NONE, 0.0)):
        assert label_to_target(state) == t
        assert target_to_label(t) == state
    assert label_to_target(State.SYSTOLE) == 0.0 and label_to_target("Diastole") == 0.0


def test_decode_examples():
    labels, events = decode([0.9, 0.9, 0.0, -0.9], min_dur_ms=0)
    assert labels.tolist() == [S1, S1, NONE, S2]
    assert events == [Event(0, 2, State.S1), Event(3, 4, State.S2)]
    assert [e.length for e in events] == [2, 1]
    labels, events = decode([0.0, 0.0, 0.9, 0.0, 0.0], min_dur_ms=60.0)
    assert labels.tolist() == [NONE] * 5 and events == []
    labels, events = decode(np.zeros(20))
    assert events == [] and np.all(labels == NONE)
    # default 40 ms at a 20 ms shift keeps two-window events only
    labels, events = decode([0.9, 0.0, -0.9, -0.9])
    assert labels.tolist() == [NONE, NONE, S2, S2] and len(events) == 1
    with pytest.raises(ValueError):
        decode([0.0], theta_pos=-0.1)


def test_decode_uses_grid_shift():
    grid = FrameGrid(128, 16, 10, 1600)  # 10 ms shift
    _, events = decode([0.9, 0.9, 0.9, 0.0], min_dur_ms=40.0, grid=grid)
    assert events == []
    _, events = decode([0.9] * 4, min_dur_ms=40.0, grid=grid)
    assert len(events) == 1


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=40), st.floats(0.01, 1.5),
       st.floats(0.0, 0.5))
def test_threshold_monotone(eta, theta, bump):
    lo = np.sum(threshold_labels(eta, theta, -0.5) == S1)
    hi = np.sum(threshold_labels(eta, theta + bump, -0.5) == S1)
    assert hi <= lo


def test_events_to_intervals():
    grid = FrameGrid(128, 32, 20, 1600)
    iv = events_to_intervals([Event(2, 4, State.S1)], grid, center_offset=3, out_rate_hz=1600)
    # windows 2..3 sit on frames 5..6 with centers 224 and 256; each owns +-16 samples
    assert iv == [StateInterval(208, 272, State.S1)]
    iv4k = events_to_intervals([Event(2, 4, State.S1)], grid, 3, 4000)
    assert iv4k == [StateInterval(520, 680, State.S1)]


def test_confusion_examples():
    c = confusion([S1] * 5 + [NONE] * 5, [S1] * 5 + [NONE] * 5)
    assert c == ConfusionCounts(tp=5, fp=0, fn=0, tn=5)
    assert confusion([S2], [S1]) == ConfusionCounts(0, 1, 1, 0)
    assert confusion([S1], [NONE]) == ConfusionCounts(0, 1, 0, 0)
    assert confusion([NONE], [S2]) == ConfusionCounts(0, 0, 1, 0)
    with pytest.raises(ValueError):
        confusion([S1], [S1, S2])


@given(st.lists(st.tuples(st.sampled_from([S1, S2, NONE]), st.sampled_from([S1, S2, NONE])),
                min_size=1, max_size=50))
def test_confusion_count_sum(pairs):
    pred, true = map(np.array, zip(*pairs))
    c = confusion(pred, true)
    cross = int(np.sum((pred != NONE) & (true != NONE) & (pred != true)))
    assert c.total == len(pairs) + cross


def test_metrics_oracles():
    assert metrics(ConfusionCounts(8, 2, 2, 8)).as_tuple() == (0.8, 0.8, 0.8, 0.8, 0.8)
    m = metrics(ConfusionCounts(90, 10, 5, 95))
    assert np.allclose(m.as_tuple(), (0.9, 0.9474, 0.9048, 0.925, 0.9231), atol=1e-4)
    assert metrics(ConfusionCounts(7, 0, 0, 3)).as_tuple() == (1.0, 1.0, 1.0, 1.0, 1.0)
    empty = metrics(ConfusionCounts(0, 0, 0, 4))
    assert empty.ppv is None and empty.se is None and empty.f1 is None and empty.spe == 1.0


@given(st.integers(0, 100), st.integers(0, 100), st.integers(0, 100), st.integers(0, 100))
def test_metrics_fp_fn_swap(tp, fp, fn, tn):
    a = metrics(ConfusionCounts(tp, fp, fn, tn))
    b = metrics(ConfusionCounts(tp, fn, fp, tn))
    assert a.ppv == b.se and a.se == b.ppv and a.acc == b.acc
    if a.f1 is not None:
        assert a.f1 == pytest.approx(2 * a.ppv * a.se / (a.ppv + a.se))


def test_window_accuracy():
    assert window_accuracy([S1, S2, NONE, S1], [S1, S1, NONE, S1]) == 0.75


def test_event_scores():
    ref = [StateInterval(0, 400, State.S1), StateInterval(1200, 1520, State.S2),
           StateInterval(1520, 3000, State.DIASTOLE)]
    pred = [StateInterval(40, 420, State.S1), StateInterval(2000, 2200, State.S2)]
    s = event_scores(pred, ref, 4000, tolerance_ms=60)
    assert (s.tp, s.fp, s.fn) == (1, 1, 1)
    assert s.ppv == 0.5 and s.se == 0.5 and s.f1 == 0.5
    wrong_state = [StateInterval(40, 420, State.S2)]
    assert event_scores(wrong_state, ref[:1], 4000).tp == 0


def test_writers(tmp_path):
    write_segmentation_csv(tmp_path / "s.csv", [10, 20], [0.75, -0.5], [S1, S2])
    assert (tmp_path / "s.csv").read_text() == (
        "window_index,center_sample,eta,label\n0,10,0.75,S1\n1,20,-0.5,S2\n")
    rep = {"window": metrics(ConfusionCounts(1, 0, 0, 1)).to_dict()}
    write_metrics_json(tmp_path / "m.json", rep)
    back = json.loads((tmp_path / "m.json").read_text())
    assert back["window"]["counts"] == {"tp": 1, "fp": 0, "fn": 0, "tn": 1}
