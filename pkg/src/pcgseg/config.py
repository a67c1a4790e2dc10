"""Run configuration as an INI document.

Every field has a default; unknown sections or keys are rejected. Values are
written canonically so ``dump(load(dump(cfg)))`` is byte-identical.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace

from . import features as feat

SECTIONS = ("features", "model", "training", "decode", "data")


def _f(section, default, doc):
    return field(default=default, metadata={"section": section, "doc": doc})


@dataclass(frozen=True)
class RunConfig:
    # features
    components: tuple = _f("features", feat.MFCC_FAMILY, "comma-separated feature families")
    n_mfcc: int = _f("features", 6, "static MFCC coefficients")
    n_mel_bands: int = _f("features", 6, "triangular Mel filters")
    mel_lo_hz: float = _f("features", 30.0, "lowest Mel filter edge")
    mel_hi_hz: float = _f("features", 300.0, "highest Mel filter edge")
    delta_width: int = _f("features", 2, "regression half-width for delta features")
    hoe_cutoff_hz: float = _f("features", 8.0, "homomorphic envelope low-pass cutoff")
    hoe_order: int = _f("features", 1, "homomorphic envelope Butterworth order")
    wavelet: str = _f("features", "rbio3.9", "wavelet for the wavelet envelope")
    wavelet_level: int = _f("features", 3, "wavelet detail level")
    psd_lo_hz: float = _f("features", 40.0, "PSD band lower edge")
    psd_hi_hz: float = _f("features", 60.0, "PSD band upper edge")
    win_ms: float = _f("features", 80.0, "frame length")
    shift_ms: float = _f("features", 20.0, "frame shift")
    target_hz: int = _f("features", 1600, "resampling rate")
    # model
    hidden_dim: int = _f("model", 80, "LSTM units per direction")
    attn_dim: int | None = _f("model", None, "attention projection size (none = 2 x hidden)")
    window_frames: int = _f("model", 7, "frames per window, odd")
    pooling: str = _f("model", "attention", "attention or mean")
    head: str = _f("model", "linear", "linear or relu")
    # training
    batch_size: int = _f("training", 32, "mini-batch size")
    lr_phase1: float = _f("training", 0.002, "learning rate, first phase")
    epochs_phase1: int = _f("training", 30, "epochs, first phase")
    lr_phase2: float = _f("training", 0.0002, "learning rate, second phase")
    epochs_phase2: int = _f("training", 70, "epochs, second phase")
    clip_norm: float | None = _f("training", 5.0, "global gradient-norm clip (none = off)")
    noise_snr_db: float | None = _f("training", 15.0, "augmentation SNR (none = off)")
    noise_stage: str = _f("training", "signal", "signal or features")
    dtype: str = _f("training", "float32", "compute precision")
    seed: int = _f("training", 0, "random seed")
    # decode
    theta_pos: float = _f("decode", 0.5, "S1 threshold")
    theta_neg: float = _f("decode", -0.5, "S2 threshold")
    min_dur_ms: float = _f("decode", 40.0, "shortest kept event")
    event_tolerance_ms: float = _f("decode", 60.0, "event matching tolerance")
    # data
    synth_n: int = _f("data", 40, "synthetic recordings")
    synth_duration_s: float = _f("data", 20.0, "synthetic recording length")
    synth_bpm_lo: float = _f("data", 50.0, "lowest synthetic heart rate")
    synth_bpm_hi: float = _f("data", 120.0, "highest synthetic heart rate")
    synth_snr_db: float = _f("data", 15.0, "synthetic recording SNR")
    split_train: float = _f("data", 0.6, "training fraction")
    split_val: float = _f("data", 0.2, "validation fraction")

    def __post_init__(self):
        comps = self.components
        if isinstance(comps, str):
            comps = tuple(c.strip().upper() for c in comps.split(",") if c.strip())
        object.__setattr__(self, "components", tuple(comps))
        self.feature_spec()
        if self.window_frames < 1 or self.window_frames % 2 == 0:
            raise ValueError("window_frames must be a positive odd number")
        if self.noise_stage not in ("signal", "features"):
            raise ValueError("noise_stage must be 'signal' or 'features'")

    def feature_spec(self) -> feat.FeatureSpec:
        return feat.FeatureSpec(
            components=self.components, n_mfcc=self.n_mfcc, n_mel_bands=self.n_mel_bands,
            mel_lo_hz=self.mel_lo_hz, mel_hi_hz=self.mel_hi_hz, delta_width=self.delta_width,
            hoe_cutoff_hz=self.hoe_cutoff_hz, hoe_order=self.hoe_order, wavelet=self.wavelet,
            wavelet_level=self.wavelet_level, psd_lo_hz=self.psd_lo_hz, psd_hi_hz=self.psd_hi_hz,
        )

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name, text: str):
    default = _FIELDS[name].default
    text = text.strip()
    if name == "components":
        return text
    nullable = default is None or name in ("attn_dim", "clip_norm", "noise_snr_db")
    if nullable and text.lower() == "none":
        return None
    kind = type(default) if default is not None else int
    if kind is float:
        return float(text)
    if kind is int:
        return int(text)
    return text


def dumps(cfg: RunConfig) -> str:
    out = io.StringIO()
    for section in SECTIONS:
        out.write(f"[{section}]\n")
        for f in fields(RunConfig):
            if f.metadata["section"] == section:
                out.write(f"# {f.metadata['doc']}\n")
                out.write(f"{f.name} = {_format(getattr(cfg, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            f = _FIELDS.get(key)
            if f is None or f.metadata["section"] != section:
                raise ValueError(f"unknown config key {key!r} in [{section}]")
            try:
                values[key] = _parse(key, raw)
            except ValueError:
                raise ValueError(f"bad value for {key}: {raw!r}") from None
    return RunConfig(**values)


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dump(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
