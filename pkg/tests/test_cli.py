import csv
import hashlib
import json

import numpy as np
import pytest

from pcgseg import config as cfgmod
from pcgseg.cli import main
from pcgseg.signal_io import save_recording, save_wav

SMALL = "[data]\nsynth_n = 12\nsynth_duration_s = 10.0\n[model]\nhidden_dim = 16\n"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.ini").write_text(SMALL)
    assert main(["synth", "--config", str(root / "small.ini"), "--out", str(root / "data"), "--split"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(work):
    out = work / "run"
    assert main(["train", "--config", str(work / "small.ini"), "--epochs", "15,10",
                 "--train", str(work / "data/train"), "--val", str(work / "data/val"),
                 "--out", str(out)]) == 0
    return out


def test_synth_split_layout(work):
    counts = {s: len(list((work / "data" / s).glob("*.wav"))) for s in ("train", "val", "test")}
    assert sum(counts.values()) == 12 and all(counts.values())
    for s in counts:
        for wav in (work / "data" / s).glob("*.wav"):
            assert wav.with_suffix(".csv").exists()


def test_config_round_trip(tmp_path):
    out = tmp_path / "c.ini"
    assert main(["config", "--hidden", "40", "--window-frames", "5", "--out", str(out)]) == 0
    cfg = cfgmod.load(out)
    assert cfg.hidden_dim == 40 and cfg.window_frames == 5
    again = tmp_path / "d.ini"
    assert main(["config", "--config", str(out), "--out", str(again)]) == 0
    assert out.read_bytes() == again.read_bytes()


def test_config_to_stdout(capsys):
    assert main(["config", "--features", "PSD"]) == 0
    assert "components = PSD" in capsys.readouterr().out


def test_extract_is_deterministic(work, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["extract", "--input", str(work / "data/test"), "--output", str(a)]) == 0
    assert main(["extract", "--input", str(work / "data/test"), "--output", str(b)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    assert any(f.endswith(".features.csv") for f in files)
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    csv_file = next(a.glob("*.features.csv"))
    header = csv_file.read_text().splitlines()[0].split(",")
    meta = json.loads(next(a.glob("*.features.json")).read_text())
    n_frames = len(csv_file.read_text().splitlines()) - 1
    assert len(meta["frame_labels"]) == n_frames
    assert sum(h.startswith(("mfcc", "d", "dd")) for h in header) == 18


def test_train_outputs_and_determinism(work, trained, tmp_path):
    assert {"config.ini", "checkpoint.json", "history.csv"} <= {p.name for p in trained.iterdir()}
    assert len(_rows(trained / "history.csv")) == 25
    again = tmp_path / "again"
    assert main(["train", "--config", str(work / "small.ini"), "--epochs", "15,10",
                 "--train", str(work / "data/train"), "--val", str(work / "data/val"),
                 "--out", str(again)]) == 0
    assert _sha(again / "checkpoint.json") == _sha(trained / "checkpoint.json")


def test_train_sweep(work, tmp_path):
    out = tmp_path / "sweep"
    assert main(["train", "--config", str(work / "small.ini"), "--epochs", "1,1",
                 "--hidden", "4,6", "--window-frames", "3", "--train", str(work / "data/train"),
                 "--val", str(work / "data/val"), "--out", str(out)]) == 0
    rows = _rows(out / "sweep.csv")
    assert [r["hidden_dim"] for r in rows] == ["4", "6"]
    for h in (4, 6):
        assert len(_rows(out / f"hidden{h}_k3" / "history.csv")) == 2
        assert cfgmod.load(out / f"hidden{h}_k3" / "config.ini").hidden_dim == h


def test_eval_report(work, trained, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.json"),
                 "--test", str(work / "data/test"), "--out", str(out)]) == 0
    rep = json.loads((out / "metrics.json").read_text())
    c = rep["window"]["counts"]
    assert set(c) == {"tp", "fp", "fn", "tn"}
    assert sum(c.values()) == rep["n_windows"]
    assert rep["window"]["acc"] > 0.9
    assert len(_rows(out / "per_recording.csv")) == rep["n_recordings"]


def test_segment_counts_beats(trained, rec60, tmp_path):
    save_recording(tmp_path, rec60)
    out = tmp_path / "seg"
    assert main(["segment", "--checkpoint", str(trained / "checkpoint.json"),
                 "--wav", str(tmp_path / "rec60.wav"), "--annotations", str(tmp_path / "rec60.csv"),
                 "--out", str(out), "--svg"]) == 0
    events = _rows(out / "events.csv")
    n_s1 = sum(r["state"] == "S1" for r in events)
    assert abs(n_s1 - 20) <= 1
    eta = _rows(out / "eta.csv")
    overlay = _rows(out / "overlay.csv")
    # 20 s at 20 ms shift gives 997 frames; a 7-frame window drops 3 at each end
    assert len(eta) == len(overlay) == 991
    assert (out / "overlay.svg").read_text().startswith("<svg")


def test_explain_exports(trained, rec60, tmp_path):
    save_recording(tmp_path, rec60)
    out = tmp_path / "ex"
    assert main(["explain", "--checkpoint", str(trained / "checkpoint.json"),
                 "--wav", str(tmp_path / "rec60.wav"), "--annotations", str(tmp_path / "rec60.csv"),
                 "--out", str(out), "--max-windows", "5"]) == 0
    att = _rows(out / "attention.csv")
    assert len(att) == 991
    beta = np.array([[float(r[f"beta{t}"]) for t in range(7)] for r in att])
    assert np.allclose(beta.sum(axis=1), 1.0, atol=1e-12)
    pca = _rows(out / "pca.csv")
    assert list(pca[0]) == ["x", "y", "label"] and len(pca) == 991
    emb = _rows(out / "embeddings.csv")
    assert len(emb[0]) == 2 + 32
    imp = _rows(out / "importance.csv")
    assert {r["group"] for r in imp} == {"MFCC", "DELTA", "DELTA2"}
    assert len({r["window_index"] for r in imp}) == 5
    assert len(imp) == 5 * 3 * 8


def test_table2_structure(work, tmp_path):
    out = tmp_path / "t2"
    assert main(["table2", "--config", str(work / "small.ini"), "--data", str(work / "data"),
                 "--epochs", "1,0", "--hidden", "4", "--seeds", "0,1",
                 "--combos", "PSD;MFCC,DELTA", "--out", str(out)]) == 0
    runs = _rows(out / "table2_runs.csv")
    assert len(runs) == 4
    summary = _rows(out / "table2.csv")
    assert [r["combination"] for r in summary] == ["PSD", "MFCC + Δ"]
    assert [int(r["n_seeds"]) for r in summary] == [2, 2]


def test_threads_env_gives_same_features(work, tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    monkeypatch.setenv("PCGSEG_THREADS", "1")
    assert main(["extract", "--input", str(work / "data/val"), "--output", str(a)]) == 0
    monkeypatch.setenv("PCGSEG_THREADS", "4")
    assert main(["extract", "--input", str(work / "data/val"), "--output", str(b)]) == 0
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()


# -- exit codes -------------------------------------------------------------------


def test_exit_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--train", "x"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["nope"])
    assert exc.value.code == 1
    assert main(["config", "--epochs", "1,2,3"]) == 1
    assert main(["config", "--features", "FOO"]) == 1
    assert main(["config", "--config", "/nonexistent/x.ini"]) == 1


def test_exit_bad_config_file(tmp_path):
    (tmp_path / "bad.ini").write_text("[model]\nhiden = 3\n")
    assert main(["config", "--config", str(tmp_path / "bad.ini")]) == 1


def test_exit_data_errors(work, trained, tmp_path):
    assert main(["extract", "--input", str(tmp_path / "missing"), "--output", str(tmp_path / "o")]) == 2
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.json"),
                 "--test", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "junk.wav").write_bytes(b"not a wav file")
    assert main(["segment", "--checkpoint", str(trained / "checkpoint.json"),
                 "--wav", str(tmp_path / "junk.wav"), "--out", str(tmp_path / "o")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.json"),
                 "--test", str(work / "data/test"), "--out", str(tmp_path / "o")]) == 2


def test_exit_unlabelled_training_dir(work, rec60, tmp_path):
    d = tmp_path / "nolabels"
    d.mkdir()
    save_wav(d / "a.wav", rec60)
    assert main(["train", "--train", str(d), "--val", str(d), "--out", str(tmp_path / "o")]) == 2


def test_exit_numeric(work, tmp_path):
    (tmp_path / "bad.ini").write_text(SMALL + "[training]\nlr_phase1 = 1e30\n")
    with np.errstate(all="ignore"):
        code = main(["train", "--config", str(tmp_path / "bad.ini"), "--epochs", "2,1",
                     "--train", str(work / "data/train"), "--val", str(work / "data/val"),
                     "--out", str(tmp_path / "o")])
    assert code == 3
