"""``pcgseg`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from dataclasses import replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from . import decode as dec
from . import features as feat
from . import interpret
from .estimators import THREADS_ENV, HeartSoundSegmenter, max_threads
from .pipeline import (TABLE_HEADER, extractor_from_config, feature_table, segmenter_from_config,
                       summarize_table, write_rows_csv)
from .plotting import line_plot_svg, write_svg
from .signal_io import (load_annotations, load_recording_dir, load_wav, save_annotations,
                        save_recording, split_dataset, synth_dataset)
from .training import write_history_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("pcgseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _common(p):
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--features", help="comma-separated families, e.g. MFCC,DELTA,DELTA2")
    p.add_argument("--snr-db", help="training noise SNR in dB, or 'none'")
    p.add_argument("--head", choices=("linear", "relu"))
    p.add_argument("--pooling", choices=("attention", "mean"))
    p.add_argument("--epochs", type=_int_list, help="phase epochs as P1,P2")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pcgseg", description="Heart sound segmentation with an attention bi-LSTM.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("config", help="print the resolved configuration")
    _common(p)
    p.add_argument("--hidden", type=_int_list)
    p.add_argument("--window-frames", type=_int_list)
    p.add_argument("--out")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--split", action="store_true", help="write train/val/test subdirectories")

    p = sub.add_parser("extract", help="dump per-recording features")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("train", help="train one model or a sweep")
    _common(p)
    p.add_argument("--hidden", type=_int_list, help="hidden size(s), e.g. 20,40,80,160")
    p.add_argument("--window-frames", type=_int_list, help="window length(s) K")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a checkpoint on a test directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("segment", help="segment one WAV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--annotations", help="reference CSV for the overlay")
    p.add_argument("--svg", action="store_true", help="also write an SVG overlay")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("explain", help="attention, occlusion, embedding and PCA exports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--annotations")
    p.add_argument("--max-windows", type=int, default=200,
                   help="windows scored by occlusion (evenly spaced)")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("table2", help="feature-combination study")
    _common(p)
    p.add_argument("--hidden", type=_int_list)
    p.add_argument("--window-frames", type=_int_list)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--combos", help="semicolon-separated combinations, e.g. 'MFCC;PSD'")
    p.add_argument("--data", help="directory with train/val/test subdirectories (synthetic if omitted)")
    p.add_argument("--out", required=True)
    return ap


# -- helpers ----------------------------------------------------------------------


def _single(values, name):
    if values is None:
        return None
    if len(values) != 1:
        raise UsageError(f"{name} takes a single value for this command")
    return values[0]


def resolve_config(args) -> cfgmod.RunConfig:
    try:
        cfg = cfgmod.load(args.config) if getattr(args, "config", None) else cfgmod.RunConfig()
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}")
    except ValueError as exc:
        raise UsageError(str(exc))
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "features", None):
        over["components"] = args.features
    snr = getattr(args, "snr_db", None)
    if snr is not None:
        try:
            over["noise_snr_db"] = None if snr.lower() == "none" else float(snr)
        except ValueError:
            raise UsageError(f"--snr-db expects a number or 'none', got {snr!r}")
    for name in ("head", "pooling"):
        if getattr(args, name, None):
            over[name] = getattr(args, name)
    epochs = getattr(args, "epochs", None)
    if epochs:
        if len(epochs) != 2:
            raise UsageError("--epochs takes two values: P1,P2")
        over["epochs_phase1"], over["epochs_phase2"] = epochs
    try:
        cfg = replace(cfg, **over)
    except ValueError as exc:
        raise UsageError(str(exc))
    return cfg


def _recordings(path, need_labels=True):
    recs = load_recording_dir(path)
    if not recs:
        raise ValueError(f"no WAV files in {path}")
    if need_labels:
        missing = [r.id for r in recs if not r.annotations]
        if missing:
            raise ValueError(f"recordings without annotations: {', '.join(missing[:5])}")
    return recs


def _load_one(args):
    rec = load_wav(args.wav)
    if args.annotations:
        rec = load_annotations(args.annotations, rec)
    return rec


# -- commands -----------------------------------------------------------------------


def cmd_config(args):
    cfg = resolve_config(args)
    over = {}
    if args.hidden:
        over["hidden_dim"] = _single(args.hidden, "--hidden")
    if args.window_frames:
        over["window_frames"] = _single(args.window_frames, "--window-frames")
    cfg = cfg.with_overrides(**over)
    text = cfgmod.dumps(cfg)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args):
    cfg = resolve_config(args)
    n = args.n if args.n is not None else cfg.synth_n
    recs = synth_dataset(n, bpm_range=(cfg.synth_bpm_lo, cfg.synth_bpm_hi),
                         duration_s=cfg.synth_duration_s, noise_snr_db=cfg.synth_snr_db,
                         seed=cfg.seed)
    if args.split:
        test = 1.0 - cfg.split_train - cfg.split_val
        parts = split_dataset(recs, (cfg.split_train, cfg.split_val, test), seed=cfg.seed)
        for name, part in zip(("train", "val", "test"), parts):
            os.makedirs(os.path.join(args.out, name), exist_ok=True)
            for r in part:
                save_recording(os.path.join(args.out, name), r)
    else:
        os.makedirs(args.out, exist_ok=True)
        for r in recs:
            save_recording(args.out, r)
    log.info("wrote %d recordings to %s", len(recs), args.out)


def cmd_extract(args):
    cfg = resolve_config(args)
    recs = _recordings(args.input, need_labels=False)
    ext = extractor_from_config(cfg).fit()
    os.makedirs(args.output, exist_ok=True)
    for rec, fs in zip(recs, ext.transform(recs)):
        labels = dec.frame_labels(rec, fs.grid) if rec.annotations else None
        extra = {"recording_id": rec.id, "source_rate_hz": rec.sample_rate_hz,
                 "feature_spec": cfg.feature_spec().to_dict()}
        if labels is not None:
            extra["frame_labels"] = [int(v) for v in labels]
        base = os.path.join(args.output, rec.id)
        feat.write_feature_dump(fs, base + ".features.csv", base + ".features.json", extra)


def _train_one(cfg, train, val, out_dir):
    seg = segmenter_from_config(cfg).fit(train, val)
    os.makedirs(out_dir, exist_ok=True)
    seg.save(os.path.join(out_dir, "checkpoint.json"))
    write_history_csv(os.path.join(out_dir, "history.csv"), seg.regressor_.history_)
    hist = seg.regressor_.history_
    best = max(hist, key=lambda h: (h["val_acc"], -h["epoch"]))
    return seg, best


def cmd_train(args):
    cfg = resolve_config(args)
    train = _recordings(args.train)
    val = _recordings(args.val)
    hidden = args.hidden or [cfg.hidden_dim]
    frames = args.window_frames or [cfg.window_frames]
    if len(hidden) == 1 and len(frames) == 1:
        run = cfg.with_overrides(hidden_dim=hidden[0], window_frames=frames[0])
        os.makedirs(args.out, exist_ok=True)
        cfgmod.dump(run, os.path.join(args.out, "config.ini"))
        _train_one(run, train, val, args.out)
        return
    rows = []
    for h, k in itertools.product(hidden, frames):
        run = cfg.with_overrides(hidden_dim=h, window_frames=k)
        sub = os.path.join(args.out, f"hidden{h}_k{k}")
        os.makedirs(sub, exist_ok=True)
        cfgmod.dump(run, os.path.join(sub, "config.ini"))
        seg, best = _train_one(run, train, val, sub)
        rows.append({"hidden_dim": h, "window_frames": k, "n_params": seg.regressor_.n_params_,
                     "best_epoch": best["epoch"], "best_val_acc": best["val_acc"]})
        log.info("hidden %d K %d best val acc %.4f", h, k, best["val_acc"])
    write_rows_csv(os.path.join(args.out, "sweep.csv"), rows)


def cmd_eval(args):
    seg = HeartSoundSegmenter.load(args.checkpoint)
    test = _recordings(args.test)
    report = seg.evaluate(test)
    os.makedirs(args.out, exist_ok=True)
    rows = report.pop("per_recording")
    dec.write_metrics_json(os.path.join(args.out, "metrics.json"), report)
    write_rows_csv(os.path.join(args.out, "per_recording.csv"), rows)


def cmd_segment(args):
    seg = HeartSoundSegmenter.load(args.checkpoint)
    rec = _load_one(args)
    res = seg.segment(rec)
    os.makedirs(args.out, exist_ok=True)
    save_annotations(os.path.join(args.out, "events.csv"), res.intervals)
    dec.write_segmentation_csv(os.path.join(args.out, "eta.csv"), res.center_samples,
                               res.eta, res.labels)
    if res.truth is not None:
        write_rows_csv(os.path.join(args.out, "overlay.csv"),
                       [{"window_index": i, "time_s": float(c) / rec.sample_rate_hz,
                         "eta": float(e), "target": float(t)}
                        for i, (c, e, t) in enumerate(zip(res.center_samples, res.eta, res.truth))])
    if args.svg:
        series = {"eta": res.eta}
        if res.truth is not None:
            series["reference"] = res.truth
        t = res.center_samples / rec.sample_rate_hz
        write_svg(os.path.join(args.out, "overlay.svg"), line_plot_svg(t, series, rec.id))


def cmd_explain(args):
    seg = HeartSoundSegmenter.load(args.checkpoint)
    rec = _load_one(args)
    (X,), (y,), (centers,), _ = seg.build_windows([rec])
    params = seg.regressor_.params_
    eta = seg.regressor_.predict(X)
    labels = dec.label_names(dec.threshold_labels(eta, seg.theta_pos, seg.theta_neg)
                             if not rec.annotations else y)
    os.makedirs(args.out, exist_ok=True)
    interpret.write_attention_csv(os.path.join(args.out, "attention.csv"),
                                  interpret.attention_weights(X, params))
    q = interpret.export_embeddings(X, params)
    interpret.write_embeddings_csv(os.path.join(args.out, "embeddings.csv"), q, labels)
    interpret.write_pca_csv(os.path.join(args.out, "pca.csv"), interpret.pca_2d(q), labels)
    groups = interpret.feature_groups(seg.extractor_.get_feature_names_out())
    n = min(args.max_windows, len(X))
    pick = np.unique(np.linspace(0, len(X) - 1, n).round().astype(int))
    maps = [interpret.importance_map(X[i], params, groups,
                                     target=float(y[i]) if rec.annotations else None)
            for i in pick]
    interpret.write_importance_csv(os.path.join(args.out, "importance.csv"), maps, pick)


def cmd_table2(args):
    cfg = resolve_config(args)
    over = {}
    if args.hidden:
        over["hidden_dim"] = _single(args.hidden, "--hidden")
    if args.window_frames:
        over["window_frames"] = _single(args.window_frames, "--window-frames")
    cfg = cfg.with_overrides(**over)
    if args.data:
        train, val, test = (_recordings(os.path.join(args.data, s)) for s in ("train", "val", "test"))
    else:
        from .pipeline import synth_splits

        train, val, test = synth_splits(cfg)
    combos = feat.TABLE2_COMBINATIONS
    if args.combos:
        combos = [tuple(c.strip().upper() for c in part.split(",") if c.strip())
                  for part in args.combos.split(";") if part.strip()]
    try:
        for c in combos:
            feat.FeatureSpec(components=c)
    except ValueError as exc:
        raise UsageError(str(exc))
    rows = feature_table(cfg, train, val, test, args.seeds, combos)
    os.makedirs(args.out, exist_ok=True)
    write_rows_csv(os.path.join(args.out, "table2_runs.csv"), rows, TABLE_HEADER)
    write_rows_csv(os.path.join(args.out, "table2.csv"), summarize_table(rows))


COMMANDS = {"config": cmd_config, "synth": cmd_synth, "extract": cmd_extract, "train": cmd_train,
            "eval": cmd_eval, "segment": cmd_segment, "explain": cmd_explain, "table2": cmd_table2}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if THREADS_ENV in os.environ:
            with threadpool_limits(limits=max_threads()):
                COMMANDS[args.command](args)
        else:
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"pcgseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"pcgseg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"pcgseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
