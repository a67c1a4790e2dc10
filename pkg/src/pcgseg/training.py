"""MSE objective, reverse-mode gradients, Adam and the two-phase training loop."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .decode import threshold_labels, window_accuracy
from .model import ModelDims, ModelParams, init_params, model_forward, predict_batched

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr_phase1: float = 0.002
    epochs_phase1: int = 30
    lr_phase2: float = 0.0002
    epochs_phase2: int = 70
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    feature_noise_snr_db: float | None = None
    seed: int = 0
    theta_pos: float = 0.5
    theta_neg: float = -0.5
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0 or self.epochs == 0:
            raise ValueError("epoch counts must be non-negative with a positive total")
        if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
            raise ValueError("learning rates must be positive")

    @property
    def epochs(self) -> int:
        return self.epochs_phase1 + self.epochs_phase2

    def schedule(self, epoch: int):
        """``(phase, lr)`` for a 1-based epoch number."""
        return (1, self.lr_phase1) if epoch <= self.epochs_phase1 else (2, self.lr_phase2)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message, last_good: ModelParams | None = None, history=None):
        super().__init__(message)
        self.last_good = last_good
        self.history = history or []


def mse_loss(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and targets must have equal, non-zero length")
    return float(np.mean((p - t) ** 2, dtype=np.float64))


def backward(X, y, params: ModelParams):
    """Loss and exact gradient of the batch-mean squared error.

    Parameters
    ----------
    X : ndarray (B, K, D)
    y : ndarray (B,)
    params : ModelParams

    Returns
    -------
    loss : float
    grads : ModelParams
        Same layout as ``params``.
    """
    dtype = params.flat.dtype
    X = np.asarray(X, dtype=dtype)
    y = np.asarray(y, dtype=dtype)
    eta, tr = model_forward(X, params, with_trace=True)
    loss = mse_loss(eta, y)
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss}")

    dims = params.dims
    B, K, D = X.shape
    H = dims.hidden_dim
    grads = params.zeros_like()

    # head
    d_eta = 2.0 * (eta - y) / B
    d_pre = d_eta * (tr["pre"] > 0) if dims.head == "relu" else d_eta
    q, hidden, beta = tr["q"], tr["hidden"], tr["beta"]
    grads["head_W"][0] = d_pre @ q
    grads["head_b"][0] = d_pre.sum()
    dq = d_pre[:, None] * params["head_W"][0]

    # pooling
    d_hidden = beta[:, :, None] * dq[:, None, :]
    if dims.pooling == "attention":
        d_beta = (hidden @ dq[:, :, None])[:, :, 0]
        d_scores = beta * (d_beta - np.sum(beta * d_beta, axis=1, keepdims=True))
        proj = tr["att_proj"]
        A = dims.attn_dim
        grads["att_v"][:] = d_scores.reshape(-1) @ proj.reshape(-1, A)
        d_act = d_scores[:, :, None] * params["att_v"] * (1.0 - proj**2)
        grads["att_W"][:] = d_act.reshape(-1, A).T @ hidden.reshape(-1, 2 * H)
        grads["att_b"][:] = d_act.sum(axis=(0, 1))
        d_hidden += d_act @ params["att_W"]

    # both LSTM directions, back through time in processing order
    act, c, tc, hs, xproc = tr["act"], tr["c"], tr["tc"], tr["hs"], tr["xproc"]
    d_hs = np.stack([d_hidden[:, :, :H], d_hidden[:, ::-1, H:]], axis=0).transpose(2, 0, 1, 3)
    d_act = np.empty_like(act)  # local derivative of each gate w.r.t. its pre-activation
    sig = act[..., : 3 * H]
    np.multiply(sig, 1.0 - sig, out=d_act[..., : 3 * H])
    np.subtract(1.0, act[..., 3 * H :] ** 2, out=d_act[..., 3 * H :])
    o_dtanh = act[..., 2 * H : 3 * H] * (1.0 - tc**2)

    U = params["lstm_U"]
    dz = np.empty_like(act)
    dh = d_hs[K - 1].copy()
    dc = np.zeros((2, B, H), dtype)
    for s in range(K - 1, -1, -1):
        a = act[s]
        dc += dh * o_dtanh[s]
        d = dz[s]
        np.multiply(dc, a[..., 3 * H :], out=d[..., :H])
        if s > 0:
            np.multiply(dc, c[s - 1], out=d[..., H : 2 * H])
        else:
            d[..., H : 2 * H] = 0.0
        np.multiply(dh, tc[s], out=d[..., 2 * H : 3 * H])
        np.multiply(dc, a[..., :H], out=d[..., 3 * H :])
        d *= d_act[s]
        if s > 0:
            dh = d_hs[s - 1] + d @ U
            dc *= a[..., H : 2 * H]

    h_prev = np.concatenate([np.zeros((1, 2, B, H), dtype), hs[:-1]], axis=0)
    dz_t = dz.transpose(1, 3, 0, 2).reshape(2, 4 * H, K * B)
    grads["lstm_W"][:] = dz_t @ xproc.reshape(2, K * B, D)
    grads["lstm_U"][:] = dz_t @ h_prev.transpose(1, 0, 2, 3).reshape(2, K * B, H)
    grads["lstm_b"][:] = dz.sum(axis=(0, 2))
    return loss, grads


def clip_global_norm(grad_flat, max_norm):
    norm = float(np.sqrt(grad_flat @ grad_flat))
    if max_norm is not None and norm > max_norm:
        return grad_flat * (max_norm / norm), norm
    return grad_flat, norm


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr, t=None, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update on flat arrays (or :class:`ModelParams`).

    Returns the updated parameters (same type as given) and the new state.
    """
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("step count t must be >= 1")
    theta = params.flat if isinstance(params, ModelParams) else np.asarray(params, dtype=np.float64)
    g = grads.flat if isinstance(grads, ModelParams) else np.asarray(grads, dtype=np.float64)
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    if isinstance(params, ModelParams):
        new = ModelParams(params.dims, new)
    return new, AdamState(m, v, t)


def augment_noise(x, snr_db, rng, axis=None):
    """Return a copy of ``x`` with white Gaussian noise at ``snr_db``.

    The noise is rescaled so the realized SNR against each instance's measured
    power is exact. ``axis`` names the axes that make up one instance (all
    axes by default); ``snr_db=None`` returns an unmodified copy.
    """
    x = np.array(x, dtype=np.float64)
    if snr_db is None:
        return x
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    noise = rng.standard_normal(x.shape)
    p_sig = np.mean(x**2, axis=axis, keepdims=True)
    p_noise = np.mean(noise**2, axis=axis, keepdims=True)
    silent = p_sig == 0
    if np.any(silent):
        warnings.warn("zero-power input: no noise added", RuntimeWarning, stacklevel=2)
    scale = np.sqrt(np.where(silent, 0.0, p_sig) / (p_noise * 10.0 ** (snr_db / 10.0)))
    return x + noise * scale


def _val_accuracy(X_val, y_val, params, cfg):
    if X_val is None or len(X_val) == 0:
        return float("nan")
    eta = predict_batched(X_val, params)
    return window_accuracy(threshold_labels(eta, cfg.theta_pos, cfg.theta_neg), y_val)


def train(X, y, X_val, y_val, dims: ModelDims, config: TrainConfig = TrainConfig(),
          select_best: bool = True, init: ModelParams | None = None):
    """Mini-batch Adam with a two-phase learning-rate schedule.

    Each epoch reshuffles the windows with the seeded generator. After each
    epoch the validation windows are thresholded and scored; the parameters of
    the best-accuracy epoch are returned (earliest on ties).

    Returns
    -------
    params : ModelParams
    history : list of dict with keys epoch, phase, lr, train_loss, val_acc
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if select_best and (X_val is None or len(X_val) == 0):
        raise ValueError("empty validation set")
    rng = np.random.default_rng(config.seed)
    params = init.copy() if init is not None else init_params(dims, config.seed)
    compute = np.dtype(config.dtype)
    Xc = X.astype(compute, copy=False)
    yc = y.astype(compute, copy=False)
    Xv = None if X_val is None else np.asarray(X_val, dtype=compute)
    state = AdamState.zeros(params.flat.size)
    best, best_acc = params.copy(), -np.inf
    history = []
    n = len(X)
    bs = config.batch_size
    for epoch in range(1, config.epochs + 1):
        phase, lr = config.schedule(epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            Xb = Xc[idx]
            if config.feature_noise_snr_db is not None:
                Xb = augment_noise(Xb, config.feature_noise_snr_db, rng, axis=(1, 2)).astype(compute)
            try:
                loss, grads = backward(Xb, yc[idx], params.astype(compute))
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), best, history) from None
            g, _ = clip_global_norm(grads.flat.astype(np.float64), config.clip_norm)
            params, state = adam_step(params, g, state, lr, beta1=config.beta1,
                                      beta2=config.beta2, eps=config.eps)
            total += loss * len(idx)
        if not np.all(np.isfinite(params.flat)):
            raise TrainingDivergedError(f"non-finite parameters after epoch {epoch}", best, history)
        val_acc = _val_accuracy(Xv, y_val, params.astype(compute), config)
        history.append({"epoch": epoch, "phase": phase, "lr": lr,
                        "train_loss": total / n, "val_acc": val_acc})
        log.debug("epoch %d loss %.5f val_acc %.4f", epoch, total / n, val_acc)
        if not select_best or val_acc > best_acc:
            best, best_acc = params.copy(), val_acc
    return best, history


HISTORY_HEADER = ("epoch", "phase", "lr", "train_loss", "val_acc")


def write_history_csv(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(HISTORY_HEADER) + "\n")
        for row in history:
            fh.write(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                              for k in HISTORY_HEADER) + "\n")
