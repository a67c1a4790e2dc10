"""Bi-directional LSTM encoder with soft attention pooling and a scalar regression head.

Parameter layout
----------------
All trainable values live in one flat float64 vector. The named arrays are
views into it, in this order:

======== ================== ==============================================
name     shape              meaning
======== ================== ==============================================
lstm_W   (2, 4H, D)         input weights, [0] forward / [1] backward LSTM
lstm_U   (2, 4H, H)         recurrent weights
lstm_b   (2, 4H)            gate biases
att_W    (A, 2H)            attention projection (attention pooling only)
att_b    (A,)               attention projection bias
att_v    (A,)               learned context vector
head_W   (1, 2H)            regression head weights
head_b   (1,)               regression head bias
======== ================== ==============================================

Gate rows are stacked as (input, forget, output, candidate), so the forget
gate occupies rows ``H:2H``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

POOLINGS = ("attention", "mean")
HEADS = ("linear", "relu")
CHECKPOINT_FORMAT = "pcgseg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    input_dim: int
    hidden_dim: int = 80
    attn_dim: int | None = None
    seq_len: int = 7
    pooling: str = "attention"
    head: str = "linear"

    def __post_init__(self):
        if self.attn_dim is None:
            object.__setattr__(self, "attn_dim", 2 * self.hidden_dim)
        for name in ("input_dim", "hidden_dim", "attn_dim", "seq_len"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")

    def shapes(self):
        D, H, A = self.input_dim, self.hidden_dim, self.attn_dim
        out = [
            ("lstm_W", (2, 4 * H, D)),
            ("lstm_U", (2, 4 * H, H)),
            ("lstm_b", (2, 4 * H)),
        ]
        if self.pooling == "attention":
            out += [("att_W", (A, 2 * H)), ("att_b", (A,)), ("att_v", (A,))]
        out += [("head_W", (1, 2 * H)), ("head_b", (1,))]
        return out

    def n_params(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.shapes()))


class ModelParams:
    """Named views over one flat parameter vector."""

    def __init__(self, dims: ModelDims, flat=None, dtype=np.float64):
        self.dims = dims
        n = dims.n_params()
        self.flat = np.zeros(n, dtype) if flat is None else np.array(flat, dtype=dtype)
        if self.flat.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.flat.shape}")
        self._views = {}
        pos = 0
        for name, shape in dims.shapes():
            size = int(np.prod(shape))
            self._views[name] = self.flat[pos : pos + size].reshape(shape)
            pos += size

    def __getitem__(self, name) -> np.ndarray:
        return self._views[name]

    def __contains__(self, name):
        return name in self._views

    def keys(self):
        return list(self._views)

    def items(self):
        return self._views.items()

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, self.flat, self.flat.dtype)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.dims, self.flat, dtype)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.dims, dtype=self.flat.dtype)

    def digest(self) -> str:
        return hashlib.sha256(self.flat.tobytes()).hexdigest()


def count_params(params_or_dims) -> int:
    dims = params_or_dims.dims if isinstance(params_or_dims, ModelParams) else params_or_dims
    return dims.n_params()


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def init_params(dims: ModelDims, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    D, H, A = dims.input_dim, dims.hidden_dim, dims.attn_dim
    p = ModelParams(dims)
    for d in range(2):
        p["lstm_W"][d] = _glorot(rng, (4 * H, D), D, 4 * H)
        p["lstm_U"][d] = _orthogonal(rng, 4 * H, H)
        p["lstm_b"][d, H : 2 * H] = 1.0
    if dims.pooling == "attention":
        p["att_W"][:] = _glorot(rng, (A, 2 * H), 2 * H, A)
        p["att_v"][:] = rng.uniform(-0.1, 0.1, size=A)
    p["head_W"][:] = _glorot(rng, (1, 2 * H), 2 * H, 1)
    return p


# -- forward --------------------------------------------------------------------


def sigmoid(z, out=None):
    """Logistic function via ``tanh``; never overflows and saturates to exactly 0 or 1."""
    out = np.multiply(z, 0.5, out=out)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def lstm_step(x_t, h_prev, c_prev, W, U, b):
    """One LSTM update for a single direction.

    Returns ``(h_t, c_t, gates)`` with ``gates = (i, f, o, g)``.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if not np.all(np.isfinite(x_t)):
        raise ValueError("non-finite LSTM input")
    H = h_prev.shape[-1]
    z = x_t @ W.T + h_prev @ U.T + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, (i, f, o, g)


def _as_batch(X, dtype=np.float64):
    X = np.asarray(X, dtype=dtype)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected (K, D) or (B, K, D) windows, got shape {X.shape}")
    return X, single


def bilstm_forward(X, params: ModelParams, trace: dict | None = None):
    """Encode windows ``(B, K, D)`` into concatenated states ``(B, K, 2H)``.

    Both directions run in lock-step on stacked arrays of layout
    ``(step, direction, batch, ...)``: direction 0 is the forward LSTM reading
    ``t = 0..K-1``, direction 1 the backward LSTM reading ``t = K-1..0``.
    """
    X, single = _as_batch(X, params.flat.dtype)
    B, K, D = X.shape
    dims = params.dims
    if D != dims.input_dim:
        raise ValueError(f"windows have {D} features, model expects {dims.input_dim}")
    H = dims.hidden_dim
    W, U, b = params["lstm_W"], params["lstm_U"], params["lstm_b"]

    xt = X.transpose(1, 0, 2)
    xproc = np.stack([xt, xt[::-1]])  # (2, K, B, D) in processing order
    WT = np.ascontiguousarray(W.transpose(0, 2, 1))
    zin = (xproc.reshape(2, K * B, D) @ WT).reshape(2, K, B, 4 * H)
    zin += b[:, None, None, :]
    UT = np.ascontiguousarray(U.transpose(0, 2, 1))

    dt = zin.dtype
    act = np.empty((K, 2, B, 4 * H), dt)  # i, f, o, g
    c = np.empty((K, 2, B, H), dt)
    tc = np.empty((K, 2, B, H), dt)
    hs = np.empty((K, 2, B, H), dt)
    for s in range(K):
        z = zin[:, s] if s == 0 else zin[:, s] + hs[s - 1] @ UT
        a = act[s]
        sigmoid(z, out=a)
        np.tanh(z[..., 3 * H :], out=a[..., 3 * H :])
        np.multiply(a[..., :H], a[..., 3 * H :], out=c[s])
        if s > 0:
            c[s] += a[..., H : 2 * H] * c[s - 1]
        np.tanh(c[s], out=tc[s])
        np.multiply(a[..., 2 * H : 3 * H], tc[s], out=hs[s])

    hidden = np.concatenate([hs[:, 0].transpose(1, 0, 2), hs[::-1, 1].transpose(1, 0, 2)], axis=2)
    if trace is not None:
        trace.update(xproc=xproc, act=act, c=c, tc=tc, hs=hs)
    return hidden[0] if single else hidden


def attention_forward(hidden, params: ModelParams, trace: dict | None = None):
    """Score each step, softmax over time and pool.

    Returns ``(beta, q)`` with shapes ``(B, K)`` and ``(B, 2H)`` (or unbatched).
    With mean pooling ``beta`` is uniform and no attention parameters exist.
    """
    hidden = np.asarray(hidden, dtype=params.flat.dtype)
    single = hidden.ndim == 2
    if single:
        hidden = hidden[None]
    B, K, _ = hidden.shape
    if params.dims.pooling == "attention":
        # one product per step: a single batched GEMM may round identical rows
        # differently, which would break exact uniformity for identical steps
        proj = np.stack([np.tanh(hidden[:, t] @ params["att_W"].T + params["att_b"])
                         for t in range(K)], axis=1)
        scores = np.stack([proj[:, t] @ params["att_v"] for t in range(K)], axis=1)
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        beta = e / e.sum(axis=1, keepdims=True)
        if trace is not None:
            trace.update(att_proj=proj, scores=scores)
    else:
        beta = np.full((B, K), 1.0 / K, dtype=hidden.dtype)
    q = (beta[:, None, :] @ hidden)[:, 0]
    if trace is not None:
        trace.update(hidden=hidden, beta=beta, q=q)
    return (beta[0], q[0]) if single else (beta, q)


def softmax(scores, axis=-1):
    scores = np.asarray(scores, dtype=np.float64)
    e = np.exp(scores - scores.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def head_forward(q, params: ModelParams, activation=None, trace: dict | None = None):
    activation = activation or params.dims.head
    q = np.asarray(q, dtype=params.flat.dtype)
    pre = q @ params["head_W"][0] + params["head_b"][0]
    if trace is not None:
        trace["pre"] = pre
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation != "linear":
        raise ValueError(f"unknown head activation {activation!r}")
    return pre


def model_forward(X, params: ModelParams, with_trace: bool = False):
    """Run the full network on one window ``(K, D)`` or a batch ``(B, K, D)``.

    Returns ``eta`` (scalar or ``(B,)``) and, when requested, the trace dict
    holding every intermediate needed by :func:`pcgseg.training.backward`.
    """
    Xb, single = _as_batch(X, params.flat.dtype)
    trace = {} if with_trace else None
    hidden = bilstm_forward(Xb, params, trace)
    _, q = attention_forward(hidden, params, trace)
    eta = head_forward(q, params, trace=trace)
    if single:
        eta = float(eta[0])
    return (eta, trace) if with_trace else eta


def predict_batched(X, params: ModelParams, batch_size: int = 4096) -> np.ndarray:
    X = np.asarray(X)
    out = np.empty(len(X))
    for start in range(0, len(X), batch_size):
        out[start : start + batch_size] = model_forward(X[start : start + batch_size], params)
    return out


# -- checkpoints ----------------------------------------------------------------


def checkpoint_dict(params: ModelParams, config: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": asdict(params.dims),
        "param_order": [[name, list(shape)] for name, shape in params.dims.shapes()],
        "params": [float(v) for v in params.flat],
        "config": config or {},
    }


def save_checkpoint(path, params: ModelParams, config: dict | None = None) -> None:
    """Write a JSON checkpoint. Floats are written with ``repr`` so reloads are bit-exact."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(params, config), fh, sort_keys=True)
        fh.write("\n")


def params_from_dict(doc: dict) -> ModelParams:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a pcgseg checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    dims = ModelDims(**doc["dims"])
    expected = [[n, list(s)] for n, s in dims.shapes()]
    if doc["param_order"] != expected:
        raise ValueError("checkpoint parameter layout does not match its dims")
    return ModelParams(dims, np.asarray(doc["params"], dtype=np.float64))


def load_checkpoint(path):
    """Return ``(params, config)`` from a checkpoint written by :func:`save_checkpoint`."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return params_from_dict(doc), doc.get("config", {})
