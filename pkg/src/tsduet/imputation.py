"""Zero-shot imputation with user-supplied missingness, evaluation mask
generation on the standard ratio grid, classical interpolation baselines,
and masked-point MSE."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .model import ModelParams, full_pass
from .numerics import no_grad
from .preprocess import MaskPlan, Series, apply_block_mask, apply_hybrid_mask, as_series, substitute_token

EVAL_RATIOS = (0.125, 0.25, 0.375, 0.5)
BASELINE_METHODS = ("naive", "linear", "nearest", "cubic")


@dataclass
class EvalMaskSpec:
    kind: str  # "block" | "hybrid"
    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("block", "hybrid"):
            raise ValueError(f"mask kind must be 'block' or 'hybrid', got {self.kind!r}")
        if self.ratio not in EVAL_RATIOS:
            raise ValueError(f"mask ratio must be one of {EVAL_RATIOS}, got {self.ratio}")


def generate_eval_mask(spec: EvalMaskSpec, S: int, C: int, pl: int) -> MaskPlan:
    """Deterministic evaluation mask for a given spec (values are ignored,
    only the plan matters)."""
    rng = np.random.default_rng(spec.seed)
    zeros = np.zeros((S, C))
    token = np.zeros(pl)
    if spec.kind == "block":
        _, plan = apply_block_mask(zeros, spec.ratio, token, rng)
    else:
        _, plan = apply_hybrid_mask(zeros, spec.ratio, token, rng)
    return plan


def _impute_chunk(values: np.ndarray, missing: np.ndarray, params: ModelParams) -> np.ndarray:
    S, C = values.shape
    pl = params.cfg.patch_len
    filled = values.copy()
    filled[missing] = 0.0
    plan = MaskPlan(missing, missing.reshape(S // pl, pl, C).all(axis=1), float(missing.mean()))
    with no_grad():
        x_hat = substitute_token(filled, plan, params["mask_token"])
        bundle = full_pass(x_hat, params)
    out = values.copy()
    y = bundle.outputs.y.data
    out[missing] = y[missing]
    dead = missing.all(axis=0)
    if dead.any():
        mu = bundle.revin.mu.data.reshape(-1)
        for c in np.flatnonzero(dead):
            warnings.warn(f"channel {c} has no observed points; filling with its RevIN mean")
            out[:, c] = mu[c]
    return out


def impute(x: Series, params: ModelParams) -> np.ndarray:
    """Replace missing points with the model's time reconstruction.

    Observed positions are returned verbatim. Series longer than the model
    context are processed in context-length chunks (the final chunk is
    aligned to the end of the series).
    """
    xs = as_series(x)
    S = params.cfg.seq_len
    n, C = xs.values.shape
    if n < S:
        raise DataError(f"series length {n} shorter than model context {S}")
    observed = xs.observed if xs.observed is not None else np.ones((n, C), dtype=bool)
    missing = ~observed
    # the model must never read values at missing positions (they may be NaN)
    clean = xs.values.copy()
    clean[missing] = 0.0
    out = xs.values.copy()
    starts = list(range(0, n - S + 1, S))
    if starts[-1] != n - S:
        starts.append(n - S)
    for s in starts:
        sel = missing[s : s + S]
        completed = _impute_chunk(clean[s : s + S], sel, params)
        block = out[s : s + S]
        block[sel] = completed[sel]
    return out


def _natural_cubic_eval(knots: np.ndarray, vals: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Natural cubic spline through (knots, vals), evaluated at `queries`.

    Second derivative is zero at the end knots; out-of-range queries use the
    nearest end segment's polynomial.
    """
    n = knots.size
    if n == 2:
        slope = (vals[1] - vals[0]) / (knots[1] - knots[0])
        return vals[0] + slope * (queries - knots[0])
    h = np.diff(knots)
    rhs = np.zeros(n)
    rhs[1:-1] = (vals[2:] - vals[1:-1]) / h[1:] - (vals[1:-1] - vals[:-2]) / h[:-1]
    # tridiagonal system for second derivatives, natural boundary M0 = Mn-1 = 0
    lower = np.zeros(n)
    diag = np.ones(n)
    upper = np.zeros(n)
    lower[1:-1] = h[:-1] / 6.0
    diag[1:-1] = (h[:-1] + h[1:]) / 3.0
    upper[1:-1] = h[1:] / 6.0
    # Thomas algorithm
    cp = np.zeros(n)
    dp = np.zeros(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / denom
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom
    m = np.zeros(n)
    m[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        m[i] = dp[i] - cp[i] * m[i + 1]

    seg = np.clip(np.searchsorted(knots, queries, side="right") - 1, 0, n - 2)
    t0, t1 = knots[seg], knots[seg + 1]
    hs = t1 - t0
    a = (t1 - queries) / hs
    b = (queries - t0) / hs
    return (
        a * vals[seg]
        + b * vals[seg + 1]
        + ((a**3 - a) * m[seg] + (b**3 - b) * m[seg + 1]) * hs**2 / 6.0
    )


def baseline_interpolate(x, plan: MaskPlan, method: str) -> np.ndarray:
    """Classical gap fillers over the plan's hidden points.

    naive = copy last observed (leading gaps backfilled); nearest ties go to
    the lower index; cubic is a natural spline through the observed points.
    """
    if method not in BASELINE_METHODS:
        raise ValueError(f"method must be one of {BASELINE_METHODS}, got {method!r}")
    xs = as_series(x)
    values = xs.values
    S, C = values.shape
    hidden = plan.point_mask
    out = values.copy()
    for c in range(C):
        obs = np.flatnonzero(~hidden[:, c])
        gaps = np.flatnonzero(hidden[:, c])
        if gaps.size == 0:
            continue
        if obs.size == 0:
            raise DataError(f"channel {c}: no observed points to interpolate from")
        use = method
        if method in ("linear", "cubic") and obs.size < 2:
            warnings.warn(f"channel {c}: {method} needs >=2 observed points; using naive")
            use = "naive"
        knots = obs.astype(np.float64)
        vals = values[obs, c]
        if use == "naive":
            idx = np.clip(np.searchsorted(obs, gaps, side="right") - 1, 0, obs.size - 1)
            out[gaps, c] = vals[idx]
        elif use == "linear":
            out[gaps, c] = np.interp(gaps.astype(np.float64), knots, vals)
        elif use == "nearest":
            right = np.clip(np.searchsorted(obs, gaps), 0, obs.size - 1)
            left = np.clip(right - 1, 0, obs.size - 1)
            d_left = np.abs(gaps - obs[left])
            d_right = np.abs(obs[right] - gaps)
            pick = np.where(d_left <= d_right, left, right)  # tie -> lower index
            out[gaps, c] = vals[pick]
        else:  # cubic
            out[gaps, c] = _natural_cubic_eval(knots, vals, gaps.astype(np.float64))
    return out


def eval_mse_masked(truth, completed, plan: MaskPlan) -> float:
    """Mean squared error over hidden positions only."""
    t = as_series(truth).values
    c = np.asarray(completed, dtype=np.float64)
    if t.shape != c.shape:
        raise ValueError(f"shape mismatch: truth {t.shape} vs completed {c.shape}")
    m = plan.point_mask
    if not m.any():
        raise ValueError("eval_mse_masked: the plan hides no points")
    d = t[m] - c[m]
    return float(np.mean(d * d))
