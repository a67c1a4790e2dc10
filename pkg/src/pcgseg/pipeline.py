"""Glue between :class:`~pcgseg.config.RunConfig`, datasets and estimators."""

from __future__ import annotations

import csv
import logging
import time

import numpy as np

from . import features as feat
from .config import RunConfig
from .estimators import AttentionBiLSTMRegressor, HeartSoundSegmenter, PcgFeatureExtractor
from .signal_io import split_dataset, synth_dataset

log = logging.getLogger(__name__)


def extractor_from_config(cfg: RunConfig) -> PcgFeatureExtractor:
    return PcgFeatureExtractor(
        components=cfg.components, n_mfcc=cfg.n_mfcc, n_mel_bands=cfg.n_mel_bands,
        mel_lo_hz=cfg.mel_lo_hz, mel_hi_hz=cfg.mel_hi_hz, delta_width=cfg.delta_width,
        hoe_cutoff_hz=cfg.hoe_cutoff_hz, hoe_order=cfg.hoe_order, wavelet=cfg.wavelet,
        wavelet_level=cfg.wavelet_level, psd_lo_hz=cfg.psd_lo_hz, psd_hi_hz=cfg.psd_hi_hz,
        win_ms=cfg.win_ms, shift_ms=cfg.shift_ms, target_hz=cfg.target_hz,
    )


def segmenter_from_config(cfg: RunConfig) -> HeartSoundSegmenter:
    regressor = AttentionBiLSTMRegressor(
        hidden_dim=cfg.hidden_dim, attn_dim=cfg.attn_dim, pooling=cfg.pooling, head=cfg.head,
        batch_size=cfg.batch_size, lr_phase1=cfg.lr_phase1, epochs_phase1=cfg.epochs_phase1,
        lr_phase2=cfg.lr_phase2, epochs_phase2=cfg.epochs_phase2, clip_norm=cfg.clip_norm,
        dtype=cfg.dtype, random_state=cfg.seed,
    )
    return HeartSoundSegmenter(
        extractor=extractor_from_config(cfg), regressor=regressor,
        window_frames=cfg.window_frames, noise_snr_db=cfg.noise_snr_db,
        noise_stage=cfg.noise_stage, theta_pos=cfg.theta_pos, theta_neg=cfg.theta_neg,
        min_dur_ms=cfg.min_dur_ms, event_tolerance_ms=cfg.event_tolerance_ms,
        random_state=cfg.seed,
    )


def synth_splits(cfg: RunConfig, seed: int | None = None):
    """Synthetic recordings split into (train, val, test)."""
    seed = cfg.seed if seed is None else seed
    recs = synth_dataset(cfg.synth_n, bpm_range=(cfg.synth_bpm_lo, cfg.synth_bpm_hi),
                         duration_s=cfg.synth_duration_s, noise_snr_db=cfg.synth_snr_db, seed=seed)
    test = max(0.0, 1.0 - cfg.split_train - cfg.split_val)
    return split_dataset(recs, (cfg.split_train, cfg.split_val, test), seed=seed)


def run_experiment(cfg: RunConfig, train, val, test):
    """Fit on ``train`` (selecting on ``val``) and evaluate on ``test``.

    Returns ``(segmenter, report, seconds)``.
    """
    t0 = time.perf_counter()
    seg = segmenter_from_config(cfg).fit(train, val)
    report = seg.evaluate(test)
    return seg, report, time.perf_counter() - t0


def combo_name(components) -> str:
    names = {"MFCC": "MFCC", "DELTA": "Δ", "DELTA2": "Δ²"}
    return " + ".join(names.get(c, c) for c in components)


TABLE_HEADER = ("combination", "seed", "n_features", "acc", "ppv", "se", "spe", "f1",
                "window_accuracy_3class", "best_val_acc")


def feature_table(cfg: RunConfig, train, val, test, seeds, combos=feat.TABLE2_COMBINATIONS):
    """One row per (feature combination, seed) with test-set window metrics."""
    rows = []
    for comps in combos:
        for seed in seeds:
            run_cfg = cfg.with_overrides(components=tuple(comps), seed=int(seed))
            seg, report, secs = run_experiment(run_cfg, train, val, test)
            w = report["window"]
            hist = seg.regressor_.history_
            rows.append({
                "combination": combo_name(comps), "seed": int(seed),
                "n_features": run_cfg.feature_spec().dim,
                "acc": w["acc"], "ppv": w["ppv"], "se": w["se"], "spe": w["spe"], "f1": w["f1"],
                "window_accuracy_3class": report["window_accuracy_3class"],
                "best_val_acc": max(h["val_acc"] for h in hist),
            })
            log.info("%s seed %d acc %.4f (%.0f s)", rows[-1]["combination"], seed, w["acc"], secs)
    return rows


def summarize_table(rows) -> list:
    """Mean and standard deviation of accuracy and F1 per combination, in input order."""
    out = []
    for name in dict.fromkeys(r["combination"] for r in rows):
        sel = [r for r in rows if r["combination"] == name]
        acc = np.array([r["acc"] for r in sel], dtype=float)
        f1 = np.array([np.nan if r["f1"] is None else r["f1"] for r in sel], dtype=float)
        out.append({"combination": name, "n_seeds": len(sel),
                    "acc_mean": float(acc.mean()), "acc_std": float(acc.std()),
                    "f1_mean": float(np.mean(f1)), "f1_std": float(np.std(f1))})
    return out


def write_rows_csv(path, rows, header=None) -> None:
    header = list(header or (rows[0].keys() if rows else []))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else repr(r[k]) if isinstance(r.get(k), float)
                            else r.get(k)) for k in header})
