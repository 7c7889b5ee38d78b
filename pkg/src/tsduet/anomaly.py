"""Reconstruction/prediction anomaly scoring, the max-ensemble, and
tuning-set head selection.

Scoring slides length-S context windows with stride 1. Reconstruction
heads average the squared error of the last `w` points of each window and
assign it to the center of that span; the prediction head scores the first
point after the context. Boundary points without a defined score inherit
the nearest one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, full_pass
from .numerics import no_grad
from .preprocess import as_series

DEFAULT_WINDOW = 96
WINDOW_CANDIDATES = (64, 96, 128)
HEAD_ORDER = ("time", "fft", "pred", "ensemble")


@dataclass
class ScoreSeries:
    alpha: np.ndarray  # one score per time point, >= 0
    head: str
    window: int

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)


@dataclass
class HeadChoice:
    selected: str
    metrics: dict = field(default_factory=dict)


def window_error_mean(x_win: np.ndarray, y_win: np.ndarray, w: int) -> float:
    """Mean squared error over the last w rows and all channels."""
    d = x_win[-w:] - y_win[-w:]
    return float(np.mean(d * d))


def _fill_nearest(alpha: np.ndarray) -> np.ndarray:
    defined = np.flatnonzero(~np.isnan(alpha))
    if defined.size == 0:
        raise ValueError("no scores were computed")
    first, last = defined[0], defined[-1]
    alpha[:first] = alpha[first]
    alpha[last + 1 :] = alpha[last]
    return alpha


def _window_starts(n: int, S: int):
    return np.arange(n - S + 1)


def _batched_recon(x: np.ndarray, params: ModelParams, starts, batch: int):
    """Yield (starts_chunk, y, y_prime) with y* shaped (S, B, C)."""
    S = params.cfg.seq_len
    n, C = x.shape
    for i in range(0, len(starts), batch):
        chunk = starts[i : i + batch]
        stacked = np.concatenate([x[s : s + S] for s in chunk], axis=1)  # (S, B*C)
        with no_grad():
            out = full_pass(stacked, params).outputs
        y = out.y.data.reshape(S, len(chunk), C)
        yp = out.y_prime.data.reshape(S, len(chunk), C)
        yield chunk, y, yp


def _recon_scores_both(x: np.ndarray, params: ModelParams, w: int, batch: int = 128):
    S = params.cfg.seq_len
    n, C = x.shape
    a_time = np.full(n, np.nan)
    a_fft = np.full(n, np.nan)
    starts = _window_starts(n, S)
    for chunk, y, yp in _batched_recon(x, params, starts, batch):
        wins = np.stack([x[s : s + S] for s in chunk], axis=1)  # (S, B, C)
        dt = wins[-w:] - y[-w:]
        dp = wins[-w:] - yp[-w:]
        centers = chunk + S - w + w // 2
        a_time[centers] = np.mean(dt * dt, axis=(0, 2))
        a_fft[centers] = np.mean(dp * dp, axis=(0, 2))
    return (
        ScoreSeries(_fill_nearest(a_time), "time", w),
        ScoreSeries(_fill_nearest(a_fft), "fft", w),
    )


def score_reconstruction(x, params: ModelParams, head: str, w: int, batch: int = 128) -> ScoreSeries:
    """Sliding reconstruction error from the time head or the FFT head's
    inverse-transform path."""
    xs = as_series(x).values
    S = params.cfg.seq_len
    if head not in ("time", "fft"):
        raise ValueError(f"reconstruction head must be 'time' or 'fft', got {head!r}")
    if not 1 <= w < S:
        raise ValueError(f"aggregation window {w} must be in [1, {S})")
    if xs.shape[0] < S:
        raise ValueError(f"series length {xs.shape[0]} < context length {S}")
    t, f = _recon_scores_both(xs, params, w, batch)
    return t if head == "time" else f


def score_prediction(x, params: ModelParams, batch: int = 128) -> ScoreSeries:
    """One-step-ahead squared error of the prediction head's first point."""
    xs = as_series(x).values
    S = params.cfg.seq_len
    n, C = xs.shape
    if n < S + 1:
        raise ValueError(f"series length {n} < {S + 1} needed for prediction scores")
    alpha = np.full(n, np.nan)
    starts = np.arange(n - S)  # context [s, s+S), scored point s+S
    for i in range(0, len(starts), batch):
        chunk = starts[i : i + batch]
        stacked = np.concatenate([xs[s : s + S] for s in chunk], axis=1)
        with no_grad():
            pred = full_pass(stacked, params).outputs.y_pred.data  # (F, B*C)
        first = pred[0].reshape(len(chunk), C)
        actual = np.stack([xs[s + S] for s in chunk])
        alpha[chunk + S] = np.mean((actual - first) ** 2, axis=1)
    return ScoreSeries(_fill_nearest(alpha), "pred", 0)


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def score_ensemble(scores) -> ScoreSeries:
    """Min-max normalize each head's scores over the series, take the
    pointwise maximum."""
    series = list(scores.values()) if isinstance(scores, dict) else list(scores)
    lengths = {s.alpha.size for s in series}
    if len(lengths) != 1:
        raise ValueError(f"score series lengths differ: {sorted(lengths)}")
    stacked = np.stack([_minmax(s.alpha) for s in series])
    return ScoreSeries(stacked.max(axis=0), "ensemble", 0)


def score_all(x, params: ModelParams, w: int = DEFAULT_WINDOW, batch: int = 128) -> dict:
    xs = as_series(x).values
    t, f = _recon_scores_both(xs, params, w, batch)
    p = score_prediction(xs, params, batch)
    e = score_ensemble([t, f, p])
    return {"time": t, "fft": f, "pred": p, "ensemble": e}


def auc_pr(scores, labels) -> float:
    """Area under the precision-recall step curve, exact threshold sweep."""
    a = scores.alpha if isinstance(scores, ScoreSeries) else np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if a.shape != y.shape:
        raise ValueError(f"scores/labels length mismatch: {a.shape} vs {y.shape}")
    npos = int(y.sum())
    if npos == 0:
        raise ValueError("auc_pr needs at least one positive label")
    order = np.argsort(-a, kind="stable")
    sorted_scores = a[order]
    sorted_labels = y[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(~sorted_labels)
    # threshold boundaries: positions where the next score differs
    boundary = np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    precision = tp[boundary] / (tp[boundary] + fp[boundary])
    recall = tp[boundary] / npos
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * precision))


def triangulate(tuning_set, params: ModelParams, w: int = DEFAULT_WINDOW, batch: int = 128) -> HeadChoice:
    """Pick the scoring mechanism with the best mean tuning metric.

    `tuning_set` is a list of (series, labels) pairs; ties break in the
    fixed order time, fft, pred, ensemble.
    """
    sums = {h: 0.0 for h in HEAD_ORDER}
    counted = 0
    for x, labels in tuning_set:
        labels = np.asarray(labels, dtype=bool)
        if not labels.any():
            continue
        scores = score_all(x, params, w, batch)
        for h in HEAD_ORDER:
            sums[h] += auc_pr(scores[h], labels)
        counted += 1
    if counted == 0:
        raise ValueError("tuning set has no positive labels")
    metrics = {h: sums[h] / counted for h in HEAD_ORDER}
    best = HEAD_ORDER[int(np.argmax([metrics[h] for h in HEAD_ORDER]))]
    return HeadChoice(selected=best, metrics=metrics)


def select_window(
    tuning_set,
    params: ModelParams | None = None,
    candidates=WINDOW_CANDIDATES,
    batch: int = 128,
) -> int:
    """Choose the aggregation window for the reconstruction mechanisms by
    tuning metric; without a tuning set, return the default (96)."""
    if tuning_set is None:
        return DEFAULT_WINDOW
    candidates = tuple(candidates)
    if not candidates:
        raise ValueError("select_window: empty candidate set")
    S = params.cfg.seq_len
    if any(not 1 <= w < S for w in candidates):
        raise ValueError(f"window candidates {candidates} must lie in [1, {S})")
    best_w, best_metric = candidates[0], -1.0
    for w in candidates:
        total, counted = 0.0, 0
        for x, labels in tuning_set:
            labels = np.asarray(labels, dtype=bool)
            if not labels.any():
                continue
            xs = as_series(x).values
            t, f = _recon_scores_both(xs, params, w, batch)
            total += 0.5 * (auc_pr(t, labels) + auc_pr(f, labels))
            counted += 1
        if counted == 0:
            raise ValueError("tuning set has no positive labels")
        metric = total / counted
        if metric > best_metric:
            best_w, best_metric = w, metric
    return best_w
