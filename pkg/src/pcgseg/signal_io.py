"""Recording I/O, synthetic PCG generation and dataset splitting."""

from __future__ import annotations

import csv
import enum
import math
import os
import wave
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

PCM_SCALE = 32768.0
MIN_BPM, MAX_BPM = 24.0, 315.0


class State(str, enum.Enum):
    """Annotation alphabet. Only S1, S2 and NONE survive into frame labels."""

    S1 = "S1"
    SYSTOLE = "Systole"
    S2 = "S2"
    DIASTOLE = "Diastole"
    NONE = "None"


class WavFormatError(ValueError):
    """Base class for WAV files the loader refuses."""


class MultiChannelError(WavFormatError):
    pass


class UnsupportedEncodingError(WavFormatError):
    pass


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class StateInterval:
    start_sample: int
    end_sample: int
    state: State

    def __post_init__(self):
        if self.start_sample < 0:
            raise AnnotationError(f"negative start {self.start_sample}")
        if self.start_sample >= self.end_sample:
            raise AnnotationError(
                f"start >= end ({self.start_sample} >= {self.end_sample})"
            )
        object.__setattr__(self, "state", State(self.state))


def _validate_annotations(annotations, n_samples):
    out = sorted(annotations, key=lambda a: a.start_sample)
    for prev, cur in zip(out, out[1:]):
        if cur.start_sample < prev.end_sample:
            raise AnnotationError(
                f"overlapping intervals [{prev.start_sample},{prev.end_sample}) "
                f"and [{cur.start_sample},{cur.end_sample})"
            )
    if out and out[-1].end_sample > n_samples:
        raise AnnotationError(
            f"interval end {out[-1].end_sample} beyond recording length {n_samples}"
        )
    return tuple(out)


@dataclass(frozen=True, eq=False)
class PcgRecording:
    """Mono PCG signal in [-1, 1] with sample-indexed state annotations."""

    id: str
    samples: np.ndarray
    sample_rate_hz: int
    annotations: tuple = ()

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) > 1.0):
            raise ValueError("samples must be finite and lie in [-1, 1]")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample_rate_hz must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))
        object.__setattr__(
            self, "annotations", _validate_annotations(self.annotations, len(x))
        )

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def with_annotations(self, annotations) -> "PcgRecording":
        return replace(self, annotations=tuple(annotations))

    def with_samples(self, samples) -> "PcgRecording":
        return replace(self, samples=samples)

    def count(self, state) -> int:
        return sum(a.state == State(state) for a in self.annotations)


# -- WAV ------------------------------------------------------------------------


def load_wav(path) -> PcgRecording:
    """Read a mono 16-bit PCM WAV file, scaling samples by 1/32768."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    try:
        with wave.open(path, "rb") as fh:
            n_channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise UnsupportedEncodingError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise UnsupportedEncodingError(f"{path}: truncated or not a WAV file") from exc
    if n_channels != 1:
        raise MultiChannelError(f"{path}: expected mono audio, got {n_channels} channels")
    if width != 2:
        raise UnsupportedEncodingError(
            f"{path}: expected 16-bit samples, got {8 * width}-bit"
        )
    pcm = np.frombuffer(raw, dtype="<i2")
    rec_id = os.path.splitext(os.path.basename(path))[0]
    return PcgRecording(rec_id, pcm / PCM_SCALE, rate)


def save_wav(path, recording: PcgRecording) -> None:
    pcm = np.clip(np.round(recording.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(recording.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


# -- annotations ----------------------------------------------------------------

ANNOTATION_HEADER = ("start_sample", "end_sample", "state")


def load_annotations(path, recording: PcgRecording) -> PcgRecording:
    """Attach intervals from a ``start_sample,end_sample,state`` CSV."""
    intervals = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip() == ANNOTATION_HEADER[0]:
                continue
            if len(row) != 3:
                raise AnnotationError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                start, end = int(row[0]), int(row[1])
            except ValueError as exc:
                raise AnnotationError(f"{path}:{lineno}: non-integer index") from exc
            token = row[2].strip()
            try:
                state = State(token)
            except ValueError:
                raise AnnotationError(f"{path}:{lineno}: unknown state {token!r}") from None
            try:
                intervals.append(StateInterval(start, end, state))
            except AnnotationError as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}") from None
    return recording.with_annotations(intervals)


def save_annotations(path, annotations: Sequence[StateInterval]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_HEADER)
        for a in annotations:
            writer.writerow([a.start_sample, a.end_sample, a.state.value])


# Per-sample state codes used by the PhysioNet 2016 annotations.
PHYSIONET_STATES = {1: State.S1, 2: State.SYSTOLE, 3: State.S2, 4: State.DIASTOLE}


def intervals_from_state_sequence(states, hop: int = 1, codes=None) -> list:
    """Convert a per-frame (or per-sample) state code sequence into intervals.

    Parameters
    ----------
    states : array-like of int
        One code per frame, e.g. PhysioNet's 1=S1, 2=systole, 3=S2, 4=diastole.
        Codes missing from ``codes`` are treated as unannotated and dropped.
    hop : int
        Samples per code, so that code ``i`` covers ``[i*hop, (i+1)*hop)``.
    codes : dict, optional
        Mapping from code to :class:`State`. Defaults to the PhysioNet table.
    """
    codes = PHYSIONET_STATES if codes is None else codes
    states = np.asarray(states).astype(int)
    out = []
    start = 0
    for i in range(1, len(states) + 1):
        if i == len(states) or states[i] != states[start]:
            code = int(states[start])
            if code in codes:
                out.append(StateInterval(start * hop, i * hop, codes[code]))
            start = i
    return out


# -- synthesis ------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    bpm: float = 60.0
    duration_s: float = 20.0
    sample_rate_hz: int = 4000
    s1_center_hz: float = 120.0
    s2_center_hz: float = 180.0
    s1_dur_ms: float = 100.0
    s2_dur_ms: float = 80.0
    systole_fraction: float = 0.3
    s1_amplitude: float = 0.5
    s2_amplitude: float = 0.4
    amp_jitter: float = 0.1
    noise_snr_db: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if not MIN_BPM <= self.bpm <= MAX_BPM:
            raise ValueError(f"bpm must lie in [{MIN_BPM}, {MAX_BPM}], got {self.bpm}")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.noise_snr_db is not None and not math.isfinite(self.noise_snr_db):
            raise ValueError("noise_snr_db must be finite or None")


def scale_noise(signal, noise, snr_db):
    """Rescale ``noise`` so that its power sits ``snr_db`` below that of ``signal``."""
    p_signal = float(np.mean(np.square(signal)))
    p_noise = float(np.mean(np.square(noise)))
    if p_signal == 0.0 or p_noise == 0.0:
        return np.zeros_like(noise)
    return noise * math.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))


def _damped_tone(n, fs, freq, amplitude, phase):
    t = np.arange(n) / fs
    tau = n / fs / 4.0
    return amplitude * np.exp(-t / tau) * np.sin(2 * np.pi * freq * t + phase)


def synth_pcg(cfg: SynthConfig, rec_id: str | None = None) -> PcgRecording:
    """Generate a PCG with one S1 and one S2 damped tone per cardiac cycle.

    The clean waveform and the noise come from independent random streams, so
    the same config with and without ``noise_snr_db`` shares the clean part.
    """
    fs = cfg.sample_rate_hz
    n = int(round(cfg.duration_s * fs))
    cycle = 60.0 / cfg.bpm * fs
    systole = cfg.systole_fraction * cycle
    d1 = int(round(cfg.s1_dur_ms * 1e-3 * fs))
    d2 = int(round(cfg.s2_dur_ms * 1e-3 * fs))
    if d1 > systole + 1e-6 or systole + d2 > cycle + 1e-6:
        raise ValueError(
            f"S1/S2 durations ({cfg.s1_dur_ms} ms, {cfg.s2_dur_ms} ms) do not fit a "
            f"{60.0 / cfg.bpm * 1e3:.0f} ms cycle"
        )

    rng = np.random.default_rng([cfg.rng_seed, 0])
    x = np.zeros(n)
    events = []
    k = 0
    while int(round(k * cycle)) < n:
        start = int(round(k * cycle))
        s2_start = int(round(k * cycle + systole))
        for onset, dur, freq, amp, state in (
            (start, d1, cfg.s1_center_hz, cfg.s1_amplitude, State.S1),
            (s2_start, d2, cfg.s2_center_hz, cfg.s2_amplitude, State.S2),
        ):
            gain = amp * (1.0 + cfg.amp_jitter * rng.uniform(-1.0, 1.0))
            phase = rng.uniform(0.0, 2 * np.pi)
            if onset + dur <= n:
                x[onset : onset + dur] += _damped_tone(dur, fs, freq, gain, phase)
                events.append((onset, onset + dur, state))
        k += 1

    annotations = []
    for (s, e, st), nxt in zip(events, events[1:] + [None]):
        annotations.append(StateInterval(s, e, st))
        gap_end = nxt[0] if nxt is not None else n
        if gap_end > e:
            gap = State.SYSTOLE if st == State.S1 else State.DIASTOLE
            annotations.append(StateInterval(e, gap_end, gap))

    if cfg.noise_snr_db is not None:
        noise_rng = np.random.default_rng([cfg.rng_seed, 1])
        x = x + scale_noise(x, noise_rng.standard_normal(n), cfg.noise_snr_db)
    x = np.clip(x, -1.0, 1.0)
    rec_id = rec_id if rec_id is not None else f"synth_{cfg.rng_seed}"
    return PcgRecording(rec_id, x, fs, tuple(annotations))


def synth_dataset(
    n_recordings: int,
    bpm_range=(50.0, 120.0),
    duration_s: float = 20.0,
    noise_snr_db: float | None = 15.0,
    seed: int = 0,
    **overrides,
) -> list:
    """Draw ``n_recordings`` synthetic recordings with BPM uniform in ``bpm_range``."""
    rng = np.random.default_rng(seed)
    bpms = rng.uniform(bpm_range[0], bpm_range[1], size=n_recordings)
    seeds = rng.integers(0, 2**31 - 1, size=n_recordings)
    out = []
    for i, (bpm, s) in enumerate(zip(bpms, seeds)):
        cfg = SynthConfig(
            bpm=float(bpm),
            duration_s=duration_s,
            noise_snr_db=noise_snr_db,
            rng_seed=int(s),
            **overrides,
        )
        out.append(synth_pcg(cfg, rec_id=f"synth{seed}_{i:03d}"))
    return out


# -- splitting ------------------------------------------------------------------


def split_dataset(recordings: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Partition whole recordings into train/val/test lists.

    Sizes follow ``round(ratio * n)`` with the remainder going to the last
    partition; every partition receives at least one recording.
    """
    ratios = tuple(float(r) for r in ratios)
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    n = len(recordings)
    k = len(ratios)
    if n < k:
        raise ValueError(f"cannot split {n} recordings into {k} non-empty partitions")
    sizes = [int(round(r * n)) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    for i in range(k):
        while sizes[i] < 1:
            donor = int(np.argmax(sizes))
            sizes[donor] -= 1
            sizes[i] += 1
    order = np.random.default_rng(seed).permutation(n)
    parts, pos = [], 0
    for size in sizes:
        parts.append([recordings[j] for j in order[pos : pos + size]])
        pos += size
    return tuple(parts)


def load_recording_dir(path) -> list:
    """Load every ``*.wav`` in ``path`` with its same-stem ``.csv`` annotations, if any."""
    path = os.fspath(path)
    if not os.path.isdir(path):
        raise FileNotFoundError(f"not a directory: {path}")
    out = []
    for name in sorted(os.listdir(path)):
        if not name.lower().endswith(".wav"):
            continue
        rec = load_wav(os.path.join(path, name))
        ann = os.path.join(path, os.path.splitext(name)[0] + ".csv")
        if os.path.isfile(ann):
            rec = load_annotations(ann, rec)
        out.append(rec)
    return out


def save_recording(directory, recording: PcgRecording) -> None:
    save_wav(os.path.join(directory, recording.id + ".wav"), recording)
    save_annotations(os.path.join(directory, recording.id + ".csv"), recording.annotations)
