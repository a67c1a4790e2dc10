"""Sine-style regression targets, windowing, threshold decoding and scoring.

Labels are carried as small integers that double as regression targets:
``1`` for S1, ``-1`` for S2 and ``0`` for everything else.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .dsp import FrameGrid
from .signal_io import State, StateInterval

S1, S2, NONE = 1, -1, 0
LABEL_NAMES = {S1: "S1", S2: "S2", NONE: "None"}
_STATE_CODE = {State.S1: S1, State.S2: S2}


def label_to_target(label) -> float:
    """Map a :class:`State` (or its text) onto +1 / -1 / 0."""
    return float(_STATE_CODE.get(State(label), NONE))


def target_to_label(target) -> State:
    code = int(np.sign(target))
    return {S1: State.S1, S2: State.S2}.get(code, State.NONE)


def label_names(codes) -> list:
    return [LABEL_NAMES[int(c)] for c in codes]


@dataclass(frozen=True, eq=False)
class WindowExample:
    features: np.ndarray
    target: float
    label: State
    center_frame: int
    recording_id: str = ""

    def __post_init__(self):
        if label_to_target(self.label) != self.target:
            raise ValueError(f"target {self.target} inconsistent with label {self.label}")


# -- labels and windows ---------------------------------------------------------


def frame_labels(recording, grid: FrameGrid) -> np.ndarray:
    """Label each frame by the annotation containing its center sample.

    Frame centers are mapped from the grid's rate to the recording's rate.
    Intervals are half-open, so a center on a boundary belongs to the
    interval starting there. Systole, diastole and gaps become ``0``.
    """
    centers = grid.centers * recording.sample_rate_hz // grid.sample_rate_hz
    labels = np.zeros(grid.n_frames, dtype=np.int8)
    if not recording.annotations:
        return labels
    starts = np.array([a.start_sample for a in recording.annotations])
    ends = np.array([a.end_sample for a in recording.annotations])
    codes = np.array([_STATE_CODE.get(a.state, NONE) for a in recording.annotations])
    idx = np.searchsorted(starts, centers, side="right") - 1
    inside = (idx >= 0) & (centers < ends[np.clip(idx, 0, None)])
    labels[inside] = codes[idx[inside]]
    return labels


def window_arrays(frames, labels, K: int):
    """Stride-1 centered windows.

    Returns
    -------
    X : ndarray (n_windows, K, D)
    y : ndarray (n_windows,) float targets from each window's center frame
    centers : ndarray (n_windows,) center frame indices
    """
    if K < 1 or K % 2 == 0:
        raise ValueError(f"window length K must be a positive odd number, got {K}")
    frames = np.asarray(frames, dtype=np.float64)
    labels = np.asarray(labels)
    if len(frames) != len(labels):
        raise ValueError("frames and labels differ in length")
    if len(frames) < K:
        raise ValueError(f"sequence of {len(frames)} frames shorter than window {K}")
    X = np.lib.stride_tricks.sliding_window_view(frames, K, axis=0).transpose(0, 2, 1)
    centers = np.arange(len(X)) + K // 2
    return np.ascontiguousarray(X), labels[centers].astype(np.float64), centers


def make_windows(features, labels, K: int, recording_id: str = "") -> list:
    frames = getattr(features, "frames", features)
    X, y, centers = window_arrays(frames, labels, K)
    return [
        WindowExample(x, float(t), target_to_label(t), int(c), recording_id)
        for x, t, c in zip(X, y, centers)
    ]


# -- decoding -------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    start: int  # first window index
    stop: int  # one past the last window index
    state: State

    @property
    def length(self) -> int:
        return self.stop - self.start


def threshold_labels(eta, theta_pos=0.5, theta_neg=-0.5) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    labels = np.zeros(len(eta), dtype=np.int8)
    labels[eta >= theta_pos] = S1
    labels[eta <= theta_neg] = S2
    return labels


def _runs(labels):
    out = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            out.append((start, i, int(labels[start])))
            start = i
    return out


def decode(eta, theta_pos=0.5, theta_neg=-0.5, min_dur_ms=40.0, grid: FrameGrid | None = None,
           shift_ms: float | None = None):
    """Threshold a prediction series and drop events shorter than ``min_dur_ms``.

    One window spans one frame shift in time; the shift comes from ``grid``
    (or ``shift_ms`` directly, default 20 ms).

    Returns
    -------
    labels : ndarray of int8, one per window
    events : list of :class:`Event`
    """
    if not theta_neg < 0 < theta_pos:
        raise ValueError("need theta_neg < 0 < theta_pos")
    if grid is not None:
        shift_ms = 1e3 * grid.frame_shift_samples / grid.sample_rate_hz
    elif shift_ms is None:
        shift_ms = 20.0
    labels = threshold_labels(eta, theta_pos, theta_neg)
    events = []
    for start, stop, code in _runs(labels):
        if code == NONE:
            continue
        if (stop - start) * shift_ms < min_dur_ms - 1e-9:
            labels[start:stop] = NONE
        else:
            events.append(Event(start, stop, State.S1 if code == S1 else State.S2))
    return labels, events


def events_to_intervals(events, grid: FrameGrid, center_offset: int, out_rate_hz: int) -> list:
    """Convert window-indexed events into sample intervals at ``out_rate_hz``.

    Window ``i`` is centered on frame ``i + center_offset`` and owns one frame
    shift of time around that frame's center.
    """
    shift = grid.frame_shift_samples
    scale = out_rate_hz / grid.sample_rate_hz
    out = []
    for ev in events:
        first = grid.frame_len_samples // 2 + (ev.start + center_offset) * shift - shift // 2
        last = grid.frame_len_samples // 2 + (ev.stop - 1 + center_offset) * shift + (shift - shift // 2)
        start = max(0, int(round(first * scale)))
        out.append(StateInterval(start, max(start + 1, int(round(last * scale))), ev.state))
    return out


# -- scoring --------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, true) -> ConfusionCounts:
    """Window-level counts.

    A true S1 predicted as S2 (or the reverse) is both a miss and a false
    detection, so it adds to FN and FP and the four counts no longer sum to
    the number of windows.
    """
    pred = np.asarray(pred).astype(int)
    true = np.asarray(true).astype(int)
    if pred.shape != true.shape:
        raise ValueError("pred and true differ in length")
    heart = true != NONE
    tp = int(np.sum(heart & (pred == true)))
    fn = int(np.sum(heart & (pred != true)))
    fp = int(np.sum((pred != NONE) & (pred != true)))
    tn = int(np.sum(~heart & (pred == NONE)))
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num, den):
    return num / den if den > 0 else None


@dataclass(frozen=True)
class MetricReport:
    ppv: float | None
    se: float | None
    spe: float | None
    acc: float | None
    f1: float | None
    counts: ConfusionCounts

    def as_tuple(self):
        return (self.ppv, self.se, self.spe, self.acc, self.f1)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("ppv", "se", "spe", "acc", "f1")}
        d["counts"] = asdict(self.counts)
        return d


def metrics(counts: ConfusionCounts) -> MetricReport:
    """PPV, sensitivity, specificity, accuracy and F1; undefined ratios are ``None``."""
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    ppv = _ratio(tp, tp + fp)
    se = _ratio(tp, tp + fn)
    spe = _ratio(tn, tn + fp)
    acc = _ratio(tp + tn, tp + fp + tn + fn)
    # 2*ppv*se/(ppv+se) rewritten in counts; avoids rounding in the products
    f1 = 2 * tp / (2 * tp + fp + fn) if tp > 0 else None
    return MetricReport(ppv, se, spe, acc, f1, counts)


def window_accuracy(pred, true) -> float:
    """Fraction of windows whose three-way label is right."""
    pred = np.asarray(pred).astype(int)
    true = np.asarray(true).astype(int)
    return float(np.mean(pred == true)) if len(true) else float("nan")


@dataclass(frozen=True)
class EventScore:
    tp: int
    fp: int
    fn: int

    @property
    def ppv(self):
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def se(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self):
        p, s = self.ppv, self.se
        return 2 * p * s / (p + s) if p is not None and s is not None and p + s > 0 else None

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "ppv": self.ppv, "se": self.se, "f1": self.f1}


def event_scores(predicted, reference, sample_rate_hz, tolerance_ms=60.0) -> EventScore:
    """Greedy one-to-one matching of S1/S2 events by center distance.

    Both arguments are sequences of :class:`StateInterval` at ``sample_rate_hz``.
    """
    tol = tolerance_ms * 1e-3 * sample_rate_hz
    ref = [a for a in reference if a.state in _STATE_CODE]
    pred = [a for a in predicted if a.state in _STATE_CODE]
    used = set()
    tp = 0
    for r in ref:
        rc = 0.5 * (r.start_sample + r.end_sample)
        best, best_d = None, None
        for j, p in enumerate(pred):
            if j in used or p.state != r.state:
                continue
            d = abs(0.5 * (p.start_sample + p.end_sample) - rc)
            if d <= tol and (best_d is None or d < best_d):
                best, best_d = j, d
        if best is not None:
            used.add(best)
            tp += 1
    return EventScore(tp, len(pred) - tp, len(ref) - tp)


# -- writers --------------------------------------------------------------------


def write_segmentation_csv(path, center_samples, eta, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("window_index,center_sample,eta,label\n")
        for i, (c, e, lab) in enumerate(zip(center_samples, eta, labels)):
            fh.write(f"{i},{int(c)},{float(e)!r},{LABEL_NAMES[int(lab)]}\n")


def write_metrics_json(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
