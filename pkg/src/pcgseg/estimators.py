"""scikit-learn style estimators wrapping the feature, model and decoding layers.

``PcgFeatureExtractor`` and ``FeatureScaler`` are transformers,
``AttentionBiLSTMRegressor`` regresses window targets from ``(n, K, D)``
arrays, and ``HeartSoundSegmenter`` chains them over whole recordings.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from . import decode as dec
from . import features as feat
from . import interpret, training
from .model import ModelDims, ModelParams, params_from_dict, checkpoint_dict, predict_batched
from .signal_io import PcgRecording, scale_noise

THREADS_ENV = "PCGSEG_THREADS"


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items, n_jobs=None):
    n_jobs = max_threads() if n_jobs is None else n_jobs
    items = list(items)
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _seed_from(random_state) -> int:
    if random_state is None:
        return 0
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    return int(random_state.randint(0, 2**31 - 1))


def check_windows(X, n_features=None, window_length=None) -> np.ndarray:
    """Validate a stack of windows shaped ``(n_windows, K, n_features)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected a 3-D array (n_windows, K, n_features), got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no windows given")
    if not np.all(np.isfinite(X)):
        raise ValueError("windows contain NaN or infinity")
    if n_features is not None and X.shape[2] != n_features:
        raise ValueError(f"X has {X.shape[2]} features, estimator was fitted with {n_features}")
    if window_length is not None and X.shape[1] != window_length:
        raise ValueError(f"X has windows of {X.shape[1]} frames, expected {window_length}")
    return X


def check_recordings(recordings) -> list:
    if isinstance(recordings, PcgRecording):
        recordings = [recordings]
    recordings = list(recordings)
    if not recordings:
        raise ValueError("no recordings given")
    for r in recordings:
        if not isinstance(r, PcgRecording):
            raise TypeError(f"expected PcgRecording, got {type(r).__name__}")
    return recordings


class PcgFeatureExtractor(TransformerMixin, BaseEstimator):
    """Turn recordings into per-frame :class:`~pcgseg.features.FeatureSequence` objects.

    Stateless: ``fit`` only validates the configuration.
    """

    def __init__(self, components=feat.MFCC_FAMILY, n_mfcc=6, n_mel_bands=6, mel_lo_hz=30.0,
                 mel_hi_hz=300.0, delta_width=2, hoe_cutoff_hz=8.0, hoe_order=1,
                 wavelet="rbio3.9", wavelet_level=3, psd_lo_hz=40.0, psd_hi_hz=60.0,
                 win_ms=80.0, shift_ms=20.0, target_hz=1600, n_jobs=None):
        self.components = components
        self.n_mfcc = n_mfcc
        self.n_mel_bands = n_mel_bands
        self.mel_lo_hz = mel_lo_hz
        self.mel_hi_hz = mel_hi_hz
        self.delta_width = delta_width
        self.hoe_cutoff_hz = hoe_cutoff_hz
        self.hoe_order = hoe_order
        self.wavelet = wavelet
        self.wavelet_level = wavelet_level
        self.psd_lo_hz = psd_lo_hz
        self.psd_hi_hz = psd_hi_hz
        self.win_ms = win_ms
        self.shift_ms = shift_ms
        self.target_hz = target_hz
        self.n_jobs = n_jobs

    def feature_spec(self) -> feat.FeatureSpec:
        comps = self.components
        if isinstance(comps, str):
            comps = [c for c in comps.split(",") if c]
        return feat.FeatureSpec(
            components=tuple(comps), n_mfcc=self.n_mfcc, n_mel_bands=self.n_mel_bands,
            mel_lo_hz=self.mel_lo_hz, mel_hi_hz=self.mel_hi_hz, delta_width=self.delta_width,
            hoe_cutoff_hz=self.hoe_cutoff_hz, hoe_order=self.hoe_order, wavelet=self.wavelet,
            wavelet_level=self.wavelet_level, psd_lo_hz=self.psd_lo_hz, psd_hi_hz=self.psd_hi_hz,
        )

    def fit(self, recordings=None, y=None):
        spec = self.feature_spec()
        spec.check_rate(self.target_hz)
        self.feature_names_out_ = np.array(spec.feature_names(), dtype=object)
        self.n_features_out_ = spec.dim
        return self

    def transform(self, recordings) -> list:
        check_is_fitted(self, "feature_names_out_")
        spec = self.feature_spec()
        recordings = check_recordings(recordings)
        return _parallel_map(
            lambda r: feat.extract(r, spec, self.win_ms, self.shift_ms, self.target_hz),
            recordings, self.n_jobs,
        )

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_.copy()


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Column z-scoring with statistics pooled over all training frames.

    Accepts a list of feature sequences or a 2-D array and returns the same kind.
    Columns whose standard deviation is below ``1e-8`` are only centered.
    """

    def fit(self, X, y=None):
        stats = feat.fit_stats(self._as_list(X))
        self.mean_ = stats.mean
        self.scale_ = stats.std
        self.n_features_in_ = len(stats.mean)
        return self

    @staticmethod
    def _as_list(X):
        if isinstance(X, feat.FeatureSequence):
            return [X]
        if isinstance(X, np.ndarray):
            if X.ndim != 2:
                raise ValueError("expected a 2-D array of frames")
            return [X]
        return list(X)

    @property
    def stats_(self) -> feat.NormStats:
        check_is_fitted(self, "mean_")
        return feat.NormStats(self.mean_, self.scale_)

    def transform(self, X):
        stats = self.stats_
        if isinstance(X, np.ndarray):
            return feat.apply_stats(X, stats)
        if isinstance(X, feat.FeatureSequence):
            return feat.normalize(X, stats)[0]
        return [feat.normalize(s, stats)[0] for s in X]


class AttentionBiLSTMRegressor(RegressorMixin, BaseEstimator):
    """Bi-LSTM encoder, attention pooling and a scalar head trained with MSE and Adam.

    Parameters mirror :class:`~pcgseg.training.TrainConfig` and
    :class:`~pcgseg.model.ModelDims`. ``pooling="mean"`` gives the
    attention-free bi-LSTM ablation; ``head="relu"`` the rectified output layer.
    ``noise_snr_db`` injects Gaussian noise into each training window.

    Attributes
    ----------
    params_ : ModelParams
    history_ : list of dict
        Per-epoch ``epoch, phase, lr, train_loss, val_acc``.
    """

    def __init__(self, hidden_dim=80, attn_dim=None, pooling="attention", head="linear",
                 batch_size=32, lr_phase1=0.002, epochs_phase1=30, lr_phase2=0.0002,
                 epochs_phase2=70, clip_norm=5.0, noise_snr_db=None, dtype="float32",
                 theta_pos=0.5, theta_neg=-0.5, random_state=0):
        self.hidden_dim = hidden_dim
        self.attn_dim = attn_dim
        self.pooling = pooling
        self.head = head
        self.batch_size = batch_size
        self.lr_phase1 = lr_phase1
        self.epochs_phase1 = epochs_phase1
        self.lr_phase2 = lr_phase2
        self.epochs_phase2 = epochs_phase2
        self.clip_norm = clip_norm
        self.noise_snr_db = noise_snr_db
        self.dtype = dtype
        self.theta_pos = theta_pos
        self.theta_neg = theta_neg
        self.random_state = random_state

    def train_config(self) -> training.TrainConfig:
        return training.TrainConfig(
            batch_size=self.batch_size, lr_phase1=self.lr_phase1,
            epochs_phase1=self.epochs_phase1, lr_phase2=self.lr_phase2,
            epochs_phase2=self.epochs_phase2, clip_norm=self.clip_norm,
            feature_noise_snr_db=self.noise_snr_db, seed=_seed_from(self.random_state),
            theta_pos=self.theta_pos, theta_neg=self.theta_neg, dtype=self.dtype,
        )

    def fit(self, X, y, eval_set=None):
        """Train on windows ``X`` and targets ``y``.

        ``eval_set=(X_val, y_val)`` enables best-epoch selection by validation
        accuracy; without it the last epoch is kept.
        """
        X = check_windows(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        if len(y) != len(X):
            raise ValueError(f"{len(X)} windows but {len(y)} targets")
        dims = ModelDims(X.shape[2], self.hidden_dim, self.attn_dim, X.shape[1],
                         self.pooling, self.head)
        X_val = y_val = None
        if eval_set is not None:
            X_val = check_windows(eval_set[0], X.shape[2], X.shape[1])
            y_val = np.asarray(eval_set[1], dtype=np.float64).ravel()
        self.params_, self.history_ = training.train(
            X, y, X_val, y_val, dims, self.train_config(), select_best=eval_set is not None
        )
        self.n_features_in_ = X.shape[2]
        self.window_length_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "params_")
        return check_windows(X, self.n_features_in_, self.window_length_)

    def predict(self, X) -> np.ndarray:
        return predict_batched(self._check(X), self.params_)

    def predict_labels(self, X) -> np.ndarray:
        return dec.threshold_labels(self.predict(X), self.theta_pos, self.theta_neg)

    def attention_weights(self, X) -> np.ndarray:
        return interpret.attention_weights(self._check(X), self.params_)

    def embed(self, X) -> np.ndarray:
        return interpret.export_embeddings(self._check(X), self.params_)

    @property
    def n_params_(self) -> int:
        check_is_fitted(self, "params_")
        return self.params_.dims.n_params()


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Per-window predictions and decoded events for one recording."""

    recording_id: str
    eta: np.ndarray
    labels: np.ndarray
    events: list
    intervals: list
    center_samples: np.ndarray
    truth: np.ndarray | None = None


class HeartSoundSegmenter(BaseEstimator):
    """Recording-level segmenter: features, scaling, windowing, regression, decoding.

    Parameters
    ----------
    extractor : PcgFeatureExtractor
    regressor : AttentionBiLSTMRegressor
    window_frames : int
        Odd number of frames per window; the label is that of the center frame.
    noise_snr_db : float or None
        Training-time noise augmentation level.
    noise_stage : {"signal", "features"}
        ``"signal"`` adds noise to the raw training recordings before
        extraction; ``"features"`` adds it to each training window per batch.
    theta_pos, theta_neg, min_dur_ms : float
        Decoding thresholds and the minimum event duration.
    """

    def __init__(self, extractor=None, regressor=None, window_frames=7, noise_snr_db=15.0,
                 noise_stage="signal", theta_pos=0.5, theta_neg=-0.5, min_dur_ms=40.0,
                 event_tolerance_ms=60.0, random_state=0):
        self.extractor = extractor
        self.regressor = regressor
        self.window_frames = window_frames
        self.noise_snr_db = noise_snr_db
        self.noise_stage = noise_stage
        self.theta_pos = theta_pos
        self.theta_neg = theta_neg
        self.min_dur_ms = min_dur_ms
        self.event_tolerance_ms = event_tolerance_ms
        self.random_state = random_state

    # -- data preparation

    def _augment(self, recordings):
        seed = _seed_from(self.random_state)
        out = []
        for i, rec in enumerate(recordings):
            rng = np.random.default_rng([seed, 7919, i])
            noise = scale_noise(rec.samples, rng.standard_normal(len(rec.samples)), self.noise_snr_db)
            out.append(rec.with_samples(np.clip(rec.samples + noise, -1.0, 1.0)))
        return out

    def _windows(self, recordings, feats):
        Xs, ys, centers = [], [], []
        for rec, fs in zip(recordings, feats):
            labels = dec.frame_labels(rec, fs.grid)
            X, y, c = dec.window_arrays(fs.frames, labels, self.window_frames)
            Xs.append(X)
            ys.append(y)
            centers.append(c)
        return Xs, ys, centers

    def build_windows(self, recordings):
        """Scaled windows, targets and center frames for each recording (fitted state)."""
        check_is_fitted(self, "regressor_")
        recordings = check_recordings(recordings)
        feats = self.scaler_.transform(self.extractor_.transform(recordings))
        Xs, ys, cs = self._windows(recordings, feats)
        return Xs, ys, cs, [f.grid for f in feats]

    # -- fitting

    def fit(self, recordings, val_recordings=None):
        if self.noise_stage not in ("signal", "features"):
            raise ValueError("noise_stage must be 'signal' or 'features'")
        recordings = check_recordings(recordings)
        self.extractor_ = clone(self.extractor if self.extractor is not None
                                else PcgFeatureExtractor()).fit()
        train_recs = recordings
        if self.noise_snr_db is not None and self.noise_stage == "signal":
            train_recs = self._augment(recordings)
        feats = self.extractor_.transform(train_recs)
        self.scaler_ = FeatureScaler().fit(feats)
        Xs, ys, _ = self._windows(train_recs, self.scaler_.transform(feats))

        reg = clone(self.regressor if self.regressor is not None else AttentionBiLSTMRegressor())
        reg.set_params(theta_pos=self.theta_pos, theta_neg=self.theta_neg)
        if self.noise_stage == "features":
            reg.set_params(noise_snr_db=self.noise_snr_db)
        eval_set = None
        if val_recordings:
            val_recordings = check_recordings(val_recordings)
            vfeats = self.scaler_.transform(self.extractor_.transform(val_recordings))
            Xv, yv, _ = self._windows(val_recordings, vfeats)
            eval_set = (np.concatenate(Xv), np.concatenate(yv))
        reg.fit(np.concatenate(Xs), np.concatenate(ys), eval_set=eval_set)
        self.regressor_ = reg
        return self

    # -- inference

    def segment(self, recording) -> Segmentation:
        (X,), (y,), (centers,), (grid,) = self.build_windows([recording])
        eta = self.regressor_.predict(X)
        labels, events = dec.decode(eta, self.theta_pos, self.theta_neg, self.min_dur_ms, grid)
        intervals = dec.events_to_intervals(events, grid, self.window_frames // 2,
                                            recording.sample_rate_hz)
        center_samples = grid.centers[centers] * recording.sample_rate_hz // grid.sample_rate_hz
        truth = y if recording.annotations else None
        return Segmentation(recording.id, eta, labels, events, intervals, center_samples, truth)

    def predict(self, recordings) -> list:
        """Per-window label codes (1=S1, -1=S2, 0=None) for each recording."""
        return [self.segment(r).labels for r in check_recordings(recordings)]

    def evaluate(self, recordings) -> dict:
        """Window-level metrics (primary), event-level scores (secondary), per-recording rows."""
        recordings = check_recordings(recordings)
        total = dec.ConfusionCounts()
        ev_tp = ev_fp = ev_fn = 0
        rows = []
        for rec in recordings:
            seg = self.segment(rec)
            counts = dec.confusion(seg.labels, seg.truth)
            total = total + counts
            ev = dec.event_scores(seg.intervals, rec.annotations, rec.sample_rate_hz,
                                  self.event_tolerance_ms)
            ev_tp, ev_fp, ev_fn = ev_tp + ev.tp, ev_fp + ev.fp, ev_fn + ev.fn
            m = dec.metrics(counts)
            rows.append({"recording_id": rec.id, "n_windows": len(seg.labels),
                         "window_acc": dec.window_accuracy(seg.labels, seg.truth),
                         **{k: v for k, v in m.to_dict().items() if k != "counts"},
                         **counts.__dict__,
                         "n_events_pred": len(seg.intervals),
                         "n_s1_pred": sum(e.state.value == "S1" for e in seg.events),
                         "n_s2_pred": sum(e.state.value == "S2" for e in seg.events)})
        n_windows = sum(r["n_windows"] for r in rows)
        correct = sum(r["window_acc"] * r["n_windows"] for r in rows)
        return {
            "window": dec.metrics(total).to_dict(),
            "window_accuracy_3class": correct / n_windows,
            "event": dec.EventScore(ev_tp, ev_fp, ev_fn).to_dict(),
            "event_tolerance_ms": self.event_tolerance_ms,
            "n_recordings": len(rows),
            "n_windows": n_windows,
            "per_recording": rows,
        }

    # -- persistence

    def to_checkpoint(self) -> dict:
        check_is_fitted(self, "regressor_")
        config = {
            "extractor": _plain(self.extractor_.get_params()),
            "regressor": _plain(self.regressor_.get_params()),
            "segmenter": _plain({k: v for k, v in self.get_params(deep=False).items()
                                 if k not in ("extractor", "regressor")}),
            "scaler": {"mean": self.scaler_.mean_.tolist(), "std": self.scaler_.scale_.tolist()},
            "history": self.regressor_.history_,
        }
        return checkpoint_dict(self.regressor_.params_, config)

    def save(self, path) -> None:
        import json

        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "HeartSoundSegmenter":
        params = params_from_dict(doc)
        cfg = doc["config"]
        extractor = PcgFeatureExtractor(**cfg["extractor"])
        regressor = AttentionBiLSTMRegressor(**cfg["regressor"])
        seg = cls(extractor=extractor, regressor=regressor, **cfg["segmenter"])
        seg.extractor_ = clone(extractor).fit()
        seg.scaler_ = FeatureScaler()
        seg.scaler_.mean_ = np.asarray(cfg["scaler"]["mean"], dtype=np.float64)
        seg.scaler_.scale_ = np.asarray(cfg["scaler"]["std"], dtype=np.float64)
        seg.scaler_.n_features_in_ = len(seg.scaler_.mean_)
        reg = clone(regressor)
        reg.params_ = params
        reg.history_ = cfg.get("history", [])
        reg.n_features_in_ = params.dims.input_dim
        reg.window_length_ = params.dims.seq_len
        seg.regressor_ = reg
        return seg

    @classmethod
    def load(cls, path) -> "HeartSoundSegmenter":
        import json

        with open(path, encoding="utf-8") as fh:
            return cls.from_checkpoint(json.load(fh))


def _plain(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out
