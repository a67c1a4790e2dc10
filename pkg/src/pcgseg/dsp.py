"""Signal primitives: resampling, framing, spectra, envelopes, filtering, DWT."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from ._wavelets import WAVELETS

KAISER_BETA = 8.6


@dataclass(frozen=True)
class FrameGrid:
    frame_len_samples: int
    frame_shift_samples: int
    n_frames: int
    sample_rate_hz: int

    def __post_init__(self):
        if self.frame_shift_samples > self.frame_len_samples:
            raise ValueError("frame shift must not exceed frame length")
        if min(self.frame_len_samples, self.frame_shift_samples, self.sample_rate_hz) <= 0:
            raise ValueError("frame geometry must be positive")

    @classmethod
    def for_signal(cls, n_samples, sample_rate_hz, win_ms, shift_ms):
        length = int(round(win_ms * 1e-3 * sample_rate_hz))
        shift = int(round(shift_ms * 1e-3 * sample_rate_hz))
        if n_samples < length:
            raise ValueError(
                f"signal of {n_samples} samples is shorter than one {length}-sample window"
            )
        n_frames = (n_samples - length) // shift + 1
        return cls(length, shift, n_frames, int(sample_rate_hz))

    @property
    def starts(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.frame_shift_samples

    @property
    def centers(self) -> np.ndarray:
        return self.starts + self.frame_len_samples // 2

    @property
    def span(self) -> int:
        """Number of source samples covered by the grid."""
        return (self.n_frames - 1) * self.frame_shift_samples + self.frame_len_samples

    def to_dict(self) -> dict:
        return {
            "frame_len_samples": self.frame_len_samples,
            "frame_shift_samples": self.frame_shift_samples,
            "n_frames": self.n_frames,
            "sample_rate_hz": self.sample_rate_hz,
        }


def resample(samples, from_hz, to_hz, beta: float = KAISER_BETA) -> np.ndarray:
    """Rational-factor polyphase resampling with a Kaiser-windowed sinc."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot resample an empty signal")
    if from_hz <= 0 or to_hz <= 0:
        raise ValueError("sample rates must be positive")
    ratio = Fraction(int(to_hz), int(from_hz))
    if ratio == 1:
        return x.copy()
    return sps.resample_poly(x, ratio.numerator, ratio.denominator, window=("kaiser", beta))


def frame_signal(samples, sample_rate_hz, win_ms, shift_ms):
    """Slice into overlapping Hamming-weighted frames.

    Returns
    -------
    grid : FrameGrid
    frames : ndarray, shape (n_frames, frame_len)
    """
    x = np.asarray(samples, dtype=np.float64)
    grid = FrameGrid.for_signal(len(x), sample_rate_hz, win_ms, shift_ms)
    view = np.lib.stride_tricks.sliding_window_view(x, grid.frame_len_samples)
    frames = view[:: grid.frame_shift_samples][: grid.n_frames]
    return grid, frames * np.hamming(grid.frame_len_samples)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def power_spectrum(frame) -> np.ndarray:
    """``|FFT|^2`` for bins ``0..L/2``; works row-wise on a 2-D array of frames.

    Frames are zero-padded to the next power of two.
    """
    x = np.asarray(frame, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("empty frame")
    n_fft = next_pow2(x.shape[-1])
    spec = np.fft.rfft(x, n=n_fft, axis=-1)
    return spec.real**2 + spec.imag**2


def analytic_envelope(samples) -> np.ndarray:
    """Magnitude of the analytic signal, computed in the frequency domain."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    n = x.size
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1 : n // 2] = 2.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    return np.abs(np.fft.ifft(np.fft.fft(x) * h))


def lowpass_zero_phase(samples, sample_rate_hz, cutoff_hz=8.0, order=1) -> np.ndarray:
    """Forward-backward Butterworth low-pass.

    The signal is extended by symmetric reflection and filtered with
    Gustafsson's initial conditions, which makes the result commute with time
    reversal.
    """
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, {sample_rate_hz / 2}) Hz")
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    b, a = sps.butter(order, cutoff_hz / (sample_rate_hz / 2))
    pad = min(x.size - 1, int(3 * sample_rate_hz / cutoff_hz))
    ext = np.pad(x, pad, mode="symmetric") if pad > 0 else x
    y = sps.filtfilt(b, a, ext, method="gust")
    return y[pad : pad + x.size]


def _dwt_step(x, lo, hi):
    taps = len(lo)
    ext = np.pad(x, taps - 1, mode="symmetric")
    approx = np.convolve(ext, lo, mode="valid")[1::2]
    detail = np.convolve(ext, hi, mode="valid")[1::2]
    return approx, detail


def _cascade(samples, wavelet_id, level):
    if wavelet_id not in WAVELETS:
        raise KeyError(f"unknown wavelet {wavelet_id!r}; bundled: {sorted(WAVELETS)}")
    if level < 1:
        raise ValueError("level must be >= 1")
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2**level:
        raise ValueError(f"signal of length {x.size} too short for {level} DWT levels")
    lo, hi = (np.asarray(f) for f in WAVELETS[wavelet_id])
    approx = detail = x
    for _ in range(level):
        approx, detail = _dwt_step(approx, lo, hi)
    return approx, detail


def dwt_detail(samples, wavelet_id="rbio3.9", level=3) -> np.ndarray:
    """Detail coefficients at ``level`` of a symmetric-extension DWT cascade."""
    return _cascade(samples, wavelet_id, level)[1]


def dwt_approx(samples, wavelet_id="rbio3.9", level=3) -> np.ndarray:
    return _cascade(samples, wavelet_id, level)[0]
