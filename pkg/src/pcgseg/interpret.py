"""Model inspection: attention weights, occlusion importance, embeddings and PCA.

Occlusion replaces a group of feature columns by a baseline (the training-set
column means, which are zero after z-scoring) and reports how much the
prediction moves. It is a cheap, dependency-free stand-in for Shapley-style
attributions and is not additive across groups in general.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, attention_forward, bilstm_forward, model_forward

GROUP_PREFIXES = (("mfcc", "MFCC"), ("dd", "DELTA2"), ("d", "DELTA"))


def attention_weights(windows, params: ModelParams) -> np.ndarray:
    """Attention weights ``beta`` for one window ``(K, D)`` or a batch ``(n, K, D)``."""
    hidden = bilstm_forward(windows, params)
    beta, _ = attention_forward(hidden, params)
    return beta


def export_embeddings(windows, params: ModelParams) -> np.ndarray:
    """Pooled context vectors ``q``, one ``2H`` row per window."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    _, q = attention_forward(bilstm_forward(windows, params), params)
    return np.asarray(q, dtype=np.float64)


def feature_groups(feature_names) -> dict:
    """Partition column indices by feature family (MFCC, DELTA, DELTA2, then scalars)."""
    groups: dict = {}
    for j, name in enumerate(feature_names):
        key = name.upper()
        for prefix, family in GROUP_PREFIXES:
            if name.startswith(prefix) and name[len(prefix):].isdigit():
                key = family
                break
        groups.setdefault(key, []).append(j)
    return groups


def _check_partition(groups: dict, n_cols: int):
    cols = sorted(c for g in groups.values() for c in g)
    if cols != list(range(n_cols)):
        raise ValueError("groups must partition the feature columns")


def occlusion_importance(window, params: ModelParams, group, baseline=None, frames=None) -> float:
    """``eta(window) - eta(window with the group's columns set to the baseline)``.

    Parameters
    ----------
    window : ndarray (K, D)
    group : sequence of int
        Column indices to occlude.
    baseline : ndarray (D,), optional
        Replacement values; zeros (the mean of standardized features) by default.
    frames : sequence of int, optional
        Restrict occlusion to these frames; all frames by default.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError("expected a single (K, D) window")
    K, D = window.shape
    group = np.asarray(list(group), dtype=int)
    if group.size and (group.min() < 0 or group.max() >= D):
        raise ValueError("group refers to columns outside the window")
    baseline = np.zeros(D) if baseline is None else np.asarray(baseline, dtype=np.float64)
    occluded = window.copy()
    rows = np.arange(K) if frames is None else np.asarray(list(frames), dtype=int)
    occluded[np.ix_(rows, group)] = baseline[group]
    eta = model_forward(np.stack([window, occluded]), params)
    return float(eta[0] - eta[1])


@dataclass(frozen=True, eq=False)
class ImportanceMap:
    """Occlusion scores for one window.

    ``per_frame[g][t]`` occludes group ``g`` in frame ``t`` only; ``total[g]``
    occludes it in every frame. ``toward_target[g]`` is positive when the
    group moved the prediction closer to ``target``.
    """

    groups: dict
    per_frame: dict
    total: dict
    toward_target: dict
    prediction: float
    target: float | None


def importance_map(window, params: ModelParams, groups: dict, baseline=None,
                   target=None) -> ImportanceMap:
    window = np.asarray(window, dtype=np.float64)
    K, D = window.shape
    _check_partition(groups, D)
    baseline = np.zeros(D) if baseline is None else np.asarray(baseline, dtype=np.float64)
    eta = float(model_forward(window, params))
    per_frame, total, toward = {}, {}, {}
    for name, cols in groups.items():
        # batch all K single-frame occlusions plus the all-frame one
        batch = np.repeat(window[None], K + 1, axis=0)
        for t in range(K):
            batch[t, t, cols] = baseline[cols]
        batch[K][:, cols] = baseline[cols]
        occ = model_forward(batch, params)
        per_frame[name] = eta - occ[:K]
        total[name] = float(eta - occ[K])
        if target is not None:
            toward[name] = float(abs(target - occ[K]) - abs(target - eta))
    return ImportanceMap(dict(groups), per_frame, total, toward, eta,
                         None if target is None else float(target))


def pca_2d(matrix, tol: float = 1e-9, max_iter: int = 10000, return_components: bool = False):
    """Project rows onto the top two principal axes.

    Eigenvectors of the sample covariance are found by power iteration with
    deflation. Each axis is oriented so its largest-magnitude loading is
    positive.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("need a 2-D matrix with at least 3 rows")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (len(X) - 1)
    d = C.shape[0]
    comps = np.zeros((2, d))
    for k in range(min(2, d)):
        v = np.ones(d) / np.sqrt(d) + np.linspace(0.0, 1e-3, d)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = C @ v
            nrm = np.linalg.norm(w)
            if nrm == 0.0:
                break
            w /= nrm
            done = min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol
            v = w
            if done:
                break
        lam = float(v @ C @ v)
        if np.linalg.norm(C @ v) == 0.0:
            v = np.zeros(d)
            lam = 0.0
        C = C - lam * np.outer(v, v)
        i = int(np.argmax(np.abs(v))) if np.any(v) else 0
        if v[i] < 0:
            v = -v
        comps[k] = v
    proj = Xc @ comps.T
    return (proj, comps) if return_components else proj


# -- exports ---------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def write_matrix_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) if isinstance(v, float)
                              or isinstance(v, np.floating) else str(v) for v in row) + "\n")


def write_attention_csv(path, betas, centers=None) -> None:
    betas = np.atleast_2d(betas)
    K = betas.shape[1]
    idx = np.arange(len(betas)) if centers is None else centers
    write_matrix_csv(path, ["window_index"] + [f"beta{t}" for t in range(K)],
                     ([int(i)] + list(map(float, b)) for i, b in zip(idx, betas)))


def write_embeddings_csv(path, q, labels) -> None:
    write_matrix_csv(path, ["window_index", "label"] + [f"q{j}" for j in range(q.shape[1])],
                     ([i, str(lab)] + list(map(float, row)) for i, (row, lab) in enumerate(zip(q, labels))))


def write_pca_csv(path, proj, labels) -> None:
    write_matrix_csv(path, ["x", "y", "label"],
                     ([float(p[0]), float(p[1]), str(lab)] for p, lab in zip(proj, labels)))


def write_importance_csv(path, maps, window_indices) -> None:
    """Long format: one row per (window, group, frame); frame ``all`` is the whole-window score."""
    rows = []
    for w, m in zip(window_indices, maps):
        for g in m.groups:
            for t, v in enumerate(m.per_frame[g]):
                rows.append([int(w), g, str(t), float(v), m.prediction])
            rows.append([int(w), g, "all", m.total[g], m.prediction])
    write_matrix_csv(path, ["window_index", "group", "frame", "importance", "prediction"], rows)
