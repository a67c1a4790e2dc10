"""Per-frame PCG features: MFCC with deltas, envelograms, wavelet envelope and PSD."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dsp
from .dsp import FrameGrid

LOG_FLOOR = 1e-10
COMPONENTS = ("MFCC", "DELTA", "DELTA2", "HOE", "HIE", "WE", "PSD")
MFCC_FAMILY = ("MFCC", "DELTA", "DELTA2")

# Feature combinations evaluated against each other in the classical-feature study.
TABLE2_COMBINATIONS = (
    ("HOE",),
    ("HIE",),
    ("WE",),
    ("PSD",),
    ("MFCC",),
    ("DELTA",),
    ("DELTA2",),
    ("HOE", "WE"),
    ("HIE", "WE"),
    ("HOE", "HIE", "WE", "PSD"),
    ("WE", "PSD", "MFCC"),
    ("WE", "HIE", "MFCC", "DELTA"),
    ("WE", "MFCC", "DELTA", "PSD"),
    ("WE", "HOE", "HIE", "PSD", "MFCC", "DELTA", "DELTA2"),
    ("MFCC", "DELTA", "DELTA2"),
)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FeatureSpec:
    components: tuple = MFCC_FAMILY
    n_mfcc: int = 6
    n_mel_bands: int = 6
    mel_lo_hz: float = 30.0
    mel_hi_hz: float = 300.0
    delta_width: int = 2
    hoe_cutoff_hz: float = 8.0
    hoe_order: int = 1
    wavelet: str = "rbio3.9"
    wavelet_level: int = 3
    psd_lo_hz: float = 40.0
    psd_hi_hz: float = 60.0

    def __post_init__(self):
        comps = tuple(str(c).upper() for c in self.components)
        unknown = set(comps) - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown feature components {sorted(unknown)}")
        if not comps or len(set(comps)) != len(comps):
            raise ValueError("components must be a non-empty list without repeats")
        if not 1 <= self.n_mfcc <= self.n_mel_bands:
            raise ValueError("need 1 <= n_mfcc <= n_mel_bands")
        if not 0 <= self.mel_lo_hz < self.mel_hi_hz:
            raise ValueError("need mel_lo_hz < mel_hi_hz")
        if self.delta_width < 1:
            raise ValueError("delta_width must be >= 1")
        object.__setattr__(self, "components", comps)

    def check_rate(self, sample_rate_hz):
        nyquist = sample_rate_hz / 2
        if self.mel_hi_hz >= nyquist or self.psd_hi_hz > nyquist:
            raise ValueError(f"feature bands exceed the Nyquist frequency {nyquist} Hz")

    def feature_names(self) -> list:
        names = []
        for comp in self.components:
            if comp == "MFCC":
                names += [f"mfcc{i}" for i in range(self.n_mfcc)]
            elif comp == "DELTA":
                names += [f"d{i}" for i in range(self.n_mfcc)]
            elif comp == "DELTA2":
                names += [f"dd{i}" for i in range(self.n_mfcc)]
            else:
                names.append(comp.lower())
        return names

    @property
    def dim(self) -> int:
        return len(self.feature_names())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["components"] = list(self.components)
        return d


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    frames: np.ndarray
    grid: FrameGrid
    feature_names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != len(self.feature_names):
            raise ValueError(
                f"frames of shape {frames.shape} do not match {len(self.feature_names)} names"
            )
        if not np.all(np.isfinite(frames)):
            raise ValueError("non-finite feature values")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames) -> "FeatureSequence":
        return FeatureSequence(frames, self.grid, self.feature_names)


# -- spectral -------------------------------------------------------------------


def mel_filterbank(n_bands, lo_hz, hi_hz, fft_len, sample_rate_hz, norm=None) -> np.ndarray:
    """Triangular Mel filters on the ``fft_len // 2 + 1`` rfft bins.

    ``n_bands + 2`` edges are spaced evenly in Mel between ``lo_hz`` and
    ``hi_hz`` and snapped to FFT bins, so each triangle peaks at exactly 1.
    With ``norm="area"`` every row is scaled to unit sum instead, which makes
    a flat spectrum produce equal band energies.
    """
    if n_bands < 1:
        raise ValueError("n_bands must be >= 1")
    if not 0 <= lo_hz < hi_hz <= sample_rate_hz / 2:
        raise ValueError(f"band [{lo_hz}, {hi_hz}] Hz invalid for fs={sample_rate_hz}")
    mel_edges = np.linspace(hz_to_mel(lo_hz), hz_to_mel(hi_hz), n_bands + 2)
    bins = np.floor((fft_len + 1) * mel_to_hz(mel_edges) / sample_rate_hz).astype(int)
    if np.any(bins[2:] - bins[:-2] < 2) or np.any(np.diff(bins) < 1):
        raise ValueError(
            f"{n_bands} Mel bands in [{lo_hz}, {hi_hz}] Hz are narrower than two FFT bins "
            f"at fft_len={fft_len}"
        )
    fb = np.zeros((n_bands, fft_len // 2 + 1))
    for k in range(n_bands):
        left, center, right = bins[k], bins[k + 1], bins[k + 2]
        up = np.arange(left, center + 1)
        fb[k, up] = (up - left) / (center - left)
        down = np.arange(center, right + 1)
        fb[k, down] = (right - down) / (right - center)
    if norm == "area":
        fb /= fb.sum(axis=1, keepdims=True)
    elif norm is not None:
        raise ValueError(f"unknown norm {norm!r}")
    return fb


def dct2_matrix(n) -> np.ndarray:
    """Orthonormal DCT-II basis; row ``k`` is coefficient ``k``."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat


def log_mel_energies(power_spectra, filterbank) -> np.ndarray:
    spectra = np.atleast_2d(np.asarray(power_spectra, dtype=np.float64))
    if spectra.shape[1] != filterbank.shape[1]:
        raise ValueError(
            f"spectra have {spectra.shape[1]} bins, filterbank expects {filterbank.shape[1]}"
        )
    return np.log(np.maximum(spectra @ filterbank.T, LOG_FLOOR))


def mfcc(power_spectra, filterbank, n_coeffs) -> np.ndarray:
    """Cepstral coefficients ``0..n_coeffs-1`` per frame (no liftering)."""
    n_bands = filterbank.shape[0]
    if n_coeffs > n_bands:
        raise ValueError(f"n_coeffs={n_coeffs} exceeds {n_bands} Mel bands")
    logs = log_mel_energies(power_spectra, filterbank)
    return logs @ dct2_matrix(n_bands)[:n_coeffs].T


def delta(coeffs, width=2) -> np.ndarray:
    """Regression deltas along axis 0 with replicate padding at the edges."""
    c = np.asarray(coeffs, dtype=np.float64)
    if width < 1:
        raise ValueError("width must be >= 1")
    if c.shape[0] < 1:
        raise ValueError("empty coefficient track")
    n = c.shape[0]
    padded = np.concatenate([np.repeat(c[:1], width, axis=0), c, np.repeat(c[-1:], width, axis=0)])
    out = np.zeros_like(c)
    for k in range(1, width + 1):
        out += k * (padded[width + k : width + k + n] - padded[width - k : width - k + n])
    return out / (2.0 * sum(k * k for k in range(1, width + 1)))


# -- envelope features ------------------------------------------------------------


def _frame_means(values, grid: FrameGrid):
    csum = np.concatenate([[0.0], np.cumsum(values[: grid.span])])
    starts = grid.starts
    return (csum[starts + grid.frame_len_samples] - csum[starts]) / grid.frame_len_samples


def homomorphic_envelope_feature(samples, grid: FrameGrid, cutoff_hz=8.0, order=1):
    env = dsp.analytic_envelope(samples)
    smooth = dsp.lowpass_zero_phase(np.log(env + LOG_FLOOR), grid.sample_rate_hz, cutoff_hz, order)
    return np.exp(smooth)[grid.centers]


def hilbert_envelope_feature(samples, grid: FrameGrid):
    return _frame_means(dsp.analytic_envelope(samples), grid)


def wavelet_envelope_feature(samples, grid: FrameGrid, wavelet_id="rbio3.9", level=3):
    x = np.asarray(samples, dtype=np.float64)
    detail = np.abs(dsp.dwt_detail(x, wavelet_id, level))
    up = np.repeat(detail, 2**level)
    if up.size < x.size:
        up = np.pad(up, (0, x.size - up.size), mode="edge")
    return _frame_means(up[: x.size], grid)


def psd_feature(samples, grid: FrameGrid, band_lo_hz=40.0, band_hi_hz=60.0, frames=None):
    """Mean power-spectrum value over the bins inside ``[band_lo_hz, band_hi_hz]``."""
    fs = grid.sample_rate_hz
    if not 0 <= band_lo_hz <= band_hi_hz <= fs / 2:
        raise ValueError(f"PSD band [{band_lo_hz}, {band_hi_hz}] Hz outside Nyquist")
    if frames is None:
        x = np.asarray(samples, dtype=np.float64)
        starts = grid.starts[:, None] + np.arange(grid.frame_len_samples)
        frames = x[starts] * np.hamming(grid.frame_len_samples)
    spectra = dsp.power_spectrum(frames)
    n_fft = dsp.next_pow2(grid.frame_len_samples)
    freqs = np.arange(spectra.shape[1]) * fs / n_fft
    band = (freqs >= band_lo_hz) & (freqs <= band_hi_hz)
    if not band.any():
        raise ValueError("PSD band contains no FFT bins")
    return spectra[:, band].mean(axis=1)


# -- extraction -----------------------------------------------------------------


def extract(recording, spec: FeatureSpec = FeatureSpec(), win_ms=80.0, shift_ms=20.0,
            target_hz=1600) -> FeatureSequence:
    """Resample ``recording`` to ``target_hz`` and compute the requested columns."""
    x = dsp.resample(recording.samples, recording.sample_rate_hz, target_hz)
    spec.check_rate(target_hz)
    grid, frames = dsp.frame_signal(x, target_hz, win_ms, shift_ms)

    columns = {}
    if set(spec.components) & set(MFCC_FAMILY):
        spectra = dsp.power_spectrum(frames)
        fb = mel_filterbank(
            spec.n_mel_bands, spec.mel_lo_hz, spec.mel_hi_hz,
            dsp.next_pow2(grid.frame_len_samples), target_hz, norm="area",
        )
        cep = mfcc(spectra, fb, spec.n_mfcc)
        d1 = delta(cep, spec.delta_width)
        columns["MFCC"] = cep
        columns["DELTA"] = d1
        columns["DELTA2"] = delta(d1, spec.delta_width)
    for comp in spec.components:
        if comp == "HOE":
            columns[comp] = homomorphic_envelope_feature(x, grid, spec.hoe_cutoff_hz, spec.hoe_order)
        elif comp == "HIE":
            columns[comp] = hilbert_envelope_feature(x, grid)
        elif comp == "WE":
            columns[comp] = wavelet_envelope_feature(x, grid, spec.wavelet, spec.wavelet_level)
        elif comp == "PSD":
            columns[comp] = psd_feature(x, grid, spec.psd_lo_hz, spec.psd_hi_hz, frames=frames)

    mat = np.column_stack([np.reshape(columns[c], (grid.n_frames, -1)) for c in spec.components])
    return FeatureSequence(mat, grid, spec.feature_names())


# -- normalization --------------------------------------------------------------

MIN_STD = 1e-8


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_stats(sequences) -> NormStats:
    """Column statistics pooled over every frame of ``sequences``."""
    mats = [s.frames if isinstance(s, FeatureSequence) else np.asarray(s) for s in sequences]
    stacked = np.concatenate(mats, axis=0)
    return NormStats(stacked.mean(axis=0), stacked.std(axis=0))


def apply_stats(frames, stats: NormStats) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    scale = np.where(stats.std < MIN_STD, 1.0, stats.std)
    return (frames - stats.mean) / scale


def normalize(features: FeatureSequence, stats: NormStats | None = None):
    """Z-score columns; near-constant columns are only centered.

    Returns the normalized sequence and the statistics used.
    """
    if stats is None:
        stats = fit_stats([features])
    return features.with_frames(apply_stats(features.frames, stats)), stats


# -- dumps ----------------------------------------------------------------------


def write_feature_dump(features: FeatureSequence, csv_path, json_path, extra=None):
    """CSV with one row per frame plus a JSON sidecar holding the grid."""
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(features.feature_names) + "\n")
        for row in features.frames:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = {"grid": features.grid.to_dict(), "feature_names": list(features.feature_names)}
    if extra:
        meta.update(extra)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_feature_dump(csv_path, json_path) -> FeatureSequence:
    with open(json_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    frames = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    return FeatureSequence(frames, FrameGrid(**meta["grid"]), meta["feature_names"])
