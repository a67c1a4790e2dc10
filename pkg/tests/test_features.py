import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcgseg import dsp
from pcgseg.dsp import FrameGrid
from pcgseg.features import (LOG_FLOOR, TABLE2_COMBINATIONS, FeatureSequence, FeatureSpec,
                             apply_stats, dct2_matrix, delta, extract, fit_stats,
                             hilbert_envelope_feature, homomorphic_envelope_feature, hz_to_mel,
                             log_mel_energies, mel_filterbank, mel_to_hz, mfcc, normalize,
                             psd_feature, read_feature_dump, wavelet_envelope_feature,
                             write_feature_dump)
from pcgseg.signal_io import PcgRecording

FS = 1600


def _tone(freq, seconds=4.0, amp=1.0, fs=FS):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


def _grid(n):
    return FrameGrid.for_signal(n, FS, 80, 20)


def test_mel_scale_values():
    assert hz_to_mel(30.0) == pytest.approx(47.25, abs=0.05)
    assert hz_to_mel(300.0) == pytest.approx(401.97, abs=0.01)
    assert mel_to_hz(hz_to_mel(123.4)) == pytest.approx(123.4)


def test_filterbank_geometry():
    fb = mel_filterbank(6, 30, 300, 128, FS)
    assert fb.shape == (6, 65)
    assert np.all(fb >= 0)
    assert np.allclose(fb.max(axis=1), 1.0)
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(30), hz_to_mel(300), 8))
    bins = np.floor(129 * edges_hz / FS).astype(int)
    assert bins.tolist() == [2, 5, 7, 10, 14, 17, 20, 24]
    for k in range(6):
        support = np.nonzero(fb[k])[0]
        assert support.min() > bins[k] - 1 and support.max() < bins[k + 2] + 1
        assert fb[k, bins[k + 1]] == 1.0
    for k in range(4):
        assert fb[k, bins[k + 3]] == 0.0  # peak of filter k+2
    assert np.all(fb[:, : bins[0]] == 0) and np.all(fb[:, bins[-1] + 1 :] == 0)
    area = mel_filterbank(6, 30, 300, 128, FS, norm="area")
    assert np.allclose(area.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        mel_filterbank(40, 30, 60, 128, FS)


def test_dct_orthonormal():
    d = dct2_matrix(6)
    assert np.allclose(d @ d.T, np.eye(6), atol=1e-12)
    from scipy.fft import dct

    x = np.random.default_rng(0).standard_normal(6)
    assert np.allclose(d @ x, dct(x, type=2, norm="ortho"))


def test_mfcc_constant_spectrum():
    fb = mel_filterbank(6, 30, 300, 128, FS, norm="area")
    for spec in (np.full((3, 65), 2.5), np.zeros((3, 65))):
        c = mfcc(spec, fb, 6)
        assert np.allclose(c[:, 1:], 0.0, atol=1e-10)
        assert np.all(np.abs(c[:, 0]) > 0)
    assert np.allclose(mfcc(np.zeros((1, 65)), fb, 6)[0, 0], np.sqrt(6) * np.log(LOG_FLOOR))
    with pytest.raises(ValueError):
        mfcc(np.zeros((1, 64)), fb, 6)
    with pytest.raises(ValueError):
        mfcc(np.zeros((1, 65)), fb, 7)


def test_mfcc_tone_in_band_three():
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(30), hz_to_mel(300), 8))
    center = edges_hz[3]  # peak of the third filter (index 2)
    fb = mel_filterbank(6, 30, 300, 128, FS)
    _, frames = dsp.frame_signal(_tone(center, 1.0), FS, 80, 20)
    logs = log_mel_energies(dsp.power_spectrum(frames), fb)
    assert np.all(np.argmax(logs, axis=1) == 2)


def test_delta_examples():
    assert np.all(delta(np.full((10, 3), 4.2)) == 0)
    ramp = 0.7 * np.arange(20.0)[:, None]
    d = delta(ramp, 2)
    assert np.allclose(d[2:-2], 0.7)
    x = np.random.default_rng(1).standard_normal((15, 2))
    assert np.allclose(delta(x[::-1])[2:-2][::-1], -delta(x)[2:-2])
    with pytest.raises(ValueError):
        delta(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        delta(x, 0)


def test_delta_against_direct_formula():
    x = np.random.default_rng(2).standard_normal(12)
    pad = np.concatenate([[x[0]] * 2, x, [x[-1]] * 2])
    ref = [(1 * (pad[t + 3] - pad[t + 1]) + 2 * (pad[t + 4] - pad[t])) / 10 for t in range(12)]
    assert np.allclose(delta(x[:, None])[:, 0], ref)


@given(arrays(np.float64, (9, 2), elements=st.floats(-10, 10)),
       arrays(np.float64, (9, 2), elements=st.floats(-10, 10)),
       st.floats(-3, 3), st.floats(-3, 3), st.integers(1, 4))
def test_delta_linear(x, y, a, b, w):
    assert np.allclose(delta(a * x + b * y, w), a * delta(x, w) + b * delta(y, w), atol=1e-9)


def test_homomorphic_tracks_modulator():
    fs = FS
    t = np.arange(6 * fs) / fs
    mod = 1.0 + 0.5 * np.sin(2 * np.pi * 1.0 * t)
    x = 0.5 * mod * np.sin(2 * np.pi * 200 * t)
    grid = _grid(len(x))
    f = homomorphic_envelope_feature(x, grid)
    assert np.corrcoef(f, mod[grid.centers])[0, 1] > 0.95
    flat = homomorphic_envelope_feature(_tone(200, 6, 0.5), grid)
    inner = flat[len(flat) // 10 : -len(flat) // 10]
    assert np.std(inner) / np.mean(inner) < 0.05
    zero = homomorphic_envelope_feature(np.zeros(len(x)), grid)
    assert np.allclose(zero, np.exp(np.log(LOG_FLOOR)))


def test_hilbert_feature():
    x = _tone(150, 4, 0.6)
    grid = _grid(len(x))
    f = hilbert_envelope_feature(x, grid)
    inner = f[len(f) // 10 : -len(f) // 10]
    assert np.all(np.abs(inner - 0.6) < 0.02 * 0.6)
    assert np.allclose(hilbert_envelope_feature(2 * x, grid), 2 * f)
    assert np.all(hilbert_envelope_feature(np.zeros(len(x)), grid) == 0)


def test_wavelet_feature():
    n = 2000
    grid = _grid(n)
    assert np.allclose(wavelet_envelope_feature(np.full(n, 0.3), grid), 0.0, atol=1e-12)
    alt = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    f = wavelet_envelope_feature(alt, grid, "haar", 1)
    assert len(f) == grid.n_frames and np.all(f > 0)
    assert len(wavelet_envelope_feature(np.random.default_rng(0).standard_normal(n), grid)) == grid.n_frames


def test_psd_feature():
    grid = _grid(4 * FS)
    inband = psd_feature(_tone(50), grid)
    outband = psd_feature(_tone(400), grid)
    assert np.min(inband) > 100 * np.max(outband)
    assert np.all(psd_feature(np.zeros(4 * FS), grid) == 0)
    mixed = psd_feature(_tone(50) + _tone(400), grid)
    assert np.allclose(mixed, inband, rtol=0.05)
    with pytest.raises(ValueError):
        psd_feature(_tone(50), grid, 700, 900)


def _rec(seconds=20.0, fs=4000, seed=0):
    x = 0.3 * np.random.default_rng(seed).standard_normal(int(seconds * fs)).clip(-3, 3) / 3
    return PcgRecording("r", x, fs)


def test_extract_dims_and_names():
    rec = _rec()
    fs = extract(rec)
    assert fs.frames.shape == (997, 18)
    assert fs.feature_names[:7] == ("mfcc0", "mfcc1", "mfcc2", "mfcc3", "mfcc4", "mfcc5", "d0")
    assert fs.feature_names[-1] == "dd5"
    four = extract(rec, FeatureSpec(("HOE", "HIE", "WE", "PSD")))
    assert four.frames.shape == (997, 4)
    assert four.feature_names == ("hoe", "hie", "we", "psd")
    swapped = extract(rec, FeatureSpec(("PSD", "MFCC")))
    assert swapped.feature_names[0] == "psd"
    assert np.array_equal(swapped.frames[:, 1:], fs.frames[:, :6])
    assert np.array_equal(extract(rec).frames, fs.frames)


def test_extract_table_rows():
    rec = _rec(3.0)
    dims = [FeatureSpec(c).dim for c in TABLE2_COMBINATIONS]
    assert dims[:4] == [1, 1, 1, 1]
    assert dims[-1] == 18
    for comps in TABLE2_COMBINATIONS:
        out = extract(rec, FeatureSpec(comps))
        assert np.all(np.isfinite(out.frames))


def test_extract_silence_is_finite():
    out = extract(PcgRecording("z", np.zeros(8000), 4000), FeatureSpec(tuple(
        ["MFCC", "DELTA", "DELTA2", "HOE", "HIE", "WE", "PSD"])))
    assert np.all(np.isfinite(out.frames))


def test_spec_validation():
    with pytest.raises(ValueError):
        FeatureSpec(("MFCC", "FOO"))
    with pytest.raises(ValueError):
        FeatureSpec(("MFCC", "MFCC"))
    with pytest.raises(ValueError):
        FeatureSpec((), )
    with pytest.raises(ValueError):
        FeatureSpec(mel_lo_hz=300, mel_hi_hz=30)
    with pytest.raises(ValueError):
        FeatureSpec(mel_hi_hz=900).check_rate(1600)
    assert FeatureSpec(("mfcc", "delta")).components == ("MFCC", "DELTA")


def test_feature_sequence_invariants():
    g = FrameGrid(128, 32, 2, FS)
    with pytest.raises(ValueError):
        FeatureSequence(np.zeros((2, 3)), g, ("a", "b"))
    with pytest.raises(ValueError):
        FeatureSequence(np.array([[np.nan]]), g, ("a",))


def test_normalize():
    rng = np.random.default_rng(3)
    frames = rng.standard_normal((200, 3)) * [1.0, 5.0, 0.0] + [2.0, -1.0, 7.0]
    fs = FeatureSequence(frames, FrameGrid(128, 32, 200, FS), ("a", "b", "c"))
    out, stats = normalize(fs)
    assert np.allclose(out.frames.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(out.frames[:, :2].std(axis=0), 1.0, atol=1e-6)
    assert np.all(out.frames[:, 2] == 0)
    again, _ = normalize(fs, stats)
    assert np.array_equal(again.frames, out.frames)
    pooled = fit_stats([frames[:50], frames[50:]])
    assert np.allclose(pooled.mean, stats.mean) and np.allclose(pooled.std, stats.std)
    assert np.array_equal(apply_stats(frames, stats), out.frames)


def test_feature_dump_round_trip(tmp_path):
    fs = extract(_rec(3.0))
    write_feature_dump(fs, tmp_path / "f.csv", tmp_path / "f.json", {"recording_id": "r"})
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header.split(",") == list(fs.feature_names)
    back = read_feature_dump(tmp_path / "f.csv", tmp_path / "f.json")
    assert np.array_equal(back.frames, fs.frames)
    assert back.grid == fs.grid
    assert json.loads((tmp_path / "f.json").read_text())["recording_id"] == "r"
