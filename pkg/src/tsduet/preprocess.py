"""Input pipeline: block/hybrid masking with a raw-patch mask token,
reversible per-sample instance normalization, and packaged frequency
features/targets.

Public functions use the (S, C) layout (time down the rows). The `_t`
helpers used by the model pipeline operate on (..., C, S) with time along
the last axis so they batch over arbitrary leading dims.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numerics import tensor as T
from .numerics.tensor import Tensor

REVIN_EPS = 1e-5
FFT_NORM_EPS = 1e-8
FFT_LOG_EPS = 1e-8


@dataclass
class Series:
    """A multivariate series of shape (S, C); `observed` flags source data
    that is actually present (False = missing)."""

    values: np.ndarray
    observed: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.observed is not None:
            self.observed = np.asarray(self.observed, dtype=bool)
            if self.observed.shape != self.values.shape:
                raise DimensionError.for_shapes("Series", self.values.shape, self.observed.shape)
            if not np.isfinite(self.values[self.observed]).all():
                raise ValueError("Series: observed values must be finite")
        elif not np.isfinite(self.values).all():
            raise ValueError("Series: values must be finite")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


def as_series(x) -> Series:
    return x if isinstance(x, Series) else Series(np.asarray(x))


@dataclass
class MaskPlan:
    """Point-level mask plus its patch-level decomposition."""

    point_mask: np.ndarray  # (S, C) bool, True = hidden
    patch_full: np.ndarray  # (N, C) bool, True = whole patch hidden
    realized_ratio: float

    def validate(self, pl: int):
        S, C = self.point_mask.shape
        n = S // pl
        per_patch = self.point_mask.reshape(n, pl, C).all(axis=1)
        if not np.array_equal(per_patch, self.patch_full):
            raise ValueError("MaskPlan: patch_full inconsistent with point_mask")
        if abs(self.realized_ratio - self.point_mask.mean()) > 1e-12:
            raise ValueError("MaskPlan: realized_ratio inconsistent with point_mask")


def _plan_from_points(point_mask: np.ndarray, pl: int) -> MaskPlan:
    S, C = point_mask.shape
    patch_full = point_mask.reshape(S // pl, pl, C).all(axis=1)
    return MaskPlan(point_mask, patch_full, float(point_mask.mean()))


def _token_values(token, S: int) -> np.ndarray:
    tok = token.data if isinstance(token, Tensor) else np.asarray(token, dtype=np.float64)
    pl = tok.shape[-1]
    if S % pl:
        raise DimensionError(f"mask token length {pl} does not divide series length {S}")
    return np.tile(tok.reshape(-1), S // pl)


def apply_block_mask(x, ratio: float, token, rng: np.random.Generator):
    """Hide exactly round(ratio*N) whole patches per channel behind the token."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    xs = as_series(x)
    S, C = xs.values.shape
    tok = _token_values(token, S)
    pl = (token.data if isinstance(token, Tensor) else np.asarray(token)).shape[-1]
    n = S // pl
    k = round(ratio * n)
    point_mask = np.zeros((S, C), dtype=bool)
    for c in range(C):
        patches = rng.choice(n, size=k, replace=False)
        for p in patches:
            point_mask[p * pl : (p + 1) * pl, c] = True
    masked = xs.values.copy()
    masked[point_mask] = np.broadcast_to(tok[:, None], (S, C))[point_mask]
    plan = _plan_from_points(point_mask, pl)
    return masked, plan


def apply_hybrid_mask(x, ratio: float, token, rng: np.random.Generator):
    """Split the mask budget between whole patches and scattered points.

    Roughly half of the hidden points sit in fully-masked patches, the rest
    are isolated points masked by in-patch offset into the token.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    xs = as_series(x)
    S, C = xs.values.shape
    tok = _token_values(token, S)
    pl = (token.data if isinstance(token, Tensor) else np.asarray(token)).shape[-1]
    n = S // pl
    total = round(ratio * S)
    k = min(round(total / (2 * pl)), n)
    scattered = max(total - k * pl, 0)
    point_mask = np.zeros((S, C), dtype=bool)
    for c in range(C):
        patches = rng.choice(n, size=k, replace=False)
        col = point_mask[:, c]
        for p in patches:
            col[p * pl : (p + 1) * pl] = True
        free = np.flatnonzero(~col)
        take = min(scattered, free.size)
        if take:
            col[rng.choice(free, size=take, replace=False)] = True
    masked = xs.values.copy()
    masked[point_mask] = np.broadcast_to(tok[:, None], (S, C))[point_mask]
    plan = _plan_from_points(point_mask, pl)
    return masked, plan


def substitute_token(values: np.ndarray, plan: MaskPlan, token: Tensor) -> Tensor:
    """Differentiable masking: raw values with token written at hidden points.

    Returns an (S, C) tensor whose hidden entries read token[t mod pl], so
    gradients reach the token through every masked position.
    """
    S, C = values.shape
    pl = token.data.shape[-1]
    pattern = T.reshape(
        T.broadcast_to(T.reshape(token, (1, pl)), (S // pl, pl)), (S, 1)
    )
    m = T.constant(plan.point_mask.astype(np.float64))
    keep = T.constant((~plan.point_mask).astype(np.float64))
    return T.constant(values) * keep + pattern * m


# ------------------------------------------------------------------- RevIN


@dataclass
class RevinState:
    """Per-sample statistics plus the learnable affine pair.

    mu/sigma have shape (..., C, 1) in the internal channel-first layout.
    """

    mu: Tensor
    sigma: Tensor
    gamma: Tensor
    beta: Tensor
    eps: float = REVIN_EPS

    @classmethod
    def fit_t(cls, x_t: Tensor, gamma: Tensor, beta: Tensor, eps: float = REVIN_EPS):
        mu = T.tmean(x_t, axis=-1, keepdims=True)
        centered = x_t - mu
        var = T.tmean(centered * centered, axis=-1, keepdims=True)
        sigma = T.powc(var + T.constant(eps * eps), 0.5)
        return cls(mu=mu, sigma=sigma, gamma=gamma, beta=beta, eps=eps)

    def normalize_t(self, x_t: Tensor) -> Tensor:
        z = (x_t - self.mu) * T.powc(self.sigma, -1.0)
        return z * self.gamma + self.beta

    def denormalize_t(self, y_t: Tensor) -> Tensor:
        if float(np.min(np.abs(self.gamma.data))) == 0.0:
            raise ZeroDivisionError("RevIN inverse undefined: affine gamma is zero")
        z = (y_t - self.beta) * T.powc(self.gamma, -1.0)
        return z * self.sigma + self.mu


def fit_revin(x_hat, gamma, beta, eps: float = REVIN_EPS) -> RevinState:
    """Fit statistics on an (S, C) masked series (stats include token values)."""
    x_t = _to_t(x_hat)
    return RevinState.fit_t(x_t, _as_tensor(gamma), _as_tensor(beta), eps)


def revin_forward(x_hat, state: RevinState):
    return T.swap_last(state.normalize_t(_to_t(x_hat)))


def revin_inverse(y, state: RevinState):
    return T.swap_last(state.denormalize_t(_to_t(y)))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else T.constant(np.asarray(x, dtype=np.float64))


def _to_t(x) -> Tensor:
    """(.., S, C) -> (.., C, S) tensor."""
    return T.swap_last(_as_tensor(x))


# ------------------------------------------------------------- FFT features


@dataclass
class FftFeatures:
    """Packaged masked-frequency features plus their normalization scales."""

    features: Tensor  # internal layout (..., C, S)
    re_scale: Tensor  # (..., C, 1)
    im_scale: Tensor  # (..., C, 1)

    @property
    def packaged(self):
        """Features in the public (S, C) layout."""
        return T.swap_last(self.features)


def fft_features_t(xm_t: Tensor) -> FftFeatures:
    """rfft along time, drop the Nyquist bin, normalize re/im per channel by
    their max-abs (floored at 1e-8), concatenate to length S."""
    S = xm_t.data.shape[-1]
    re, im = T.rfft(xm_t)
    re_k, _ = T.split(re, [S // 2, 1], axis=-1)
    im_k, _ = T.split(im, [S // 2, 1], axis=-1)
    re_scale = T.clip_min(T.max_abs(re_k, axis=-1), FFT_NORM_EPS)
    im_scale = T.clip_min(T.max_abs(im_k, axis=-1), FFT_NORM_EPS)
    feats = T.concat([re_k * T.powc(re_scale, -1.0), im_k * T.powc(im_scale, -1.0)], axis=-1)
    return FftFeatures(features=feats, re_scale=re_scale, im_scale=im_scale)


def extract_fft_features(x_m) -> FftFeatures:
    """Public (S, C) wrapper over `fft_features_t`."""
    return fft_features_t(_to_t(x_m))


def fft_targets_t(x_scaled_t) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction targets from the unmasked scaled series (plain arrays;
    targets are data and never differentiated).

    Returns the packaged clean spectrum (..., C, S) and the softmaxed
    log-magnitude signature over bins 1..S/2 (DC dropped, Nyquist kept),
    shape (..., C, S/2).
    """
    x = x_scaled_t.data if isinstance(x_scaled_t, Tensor) else np.asarray(x_scaled_t)
    S = x.shape[-1]
    from .numerics import fft as _fft

    re, im = _fft.rfft_real(x)
    re_k, im_k = re[..., : S // 2], im[..., : S // 2]
    re_scale = np.maximum(np.abs(re_k).max(axis=-1, keepdims=True), FFT_NORM_EPS)
    im_scale = np.maximum(np.abs(im_k).max(axis=-1, keepdims=True), FFT_NORM_EPS)
    xf = np.concatenate([re_k / re_scale, im_k / im_scale], axis=-1)

    mag = np.sqrt(re[..., 1:] ** 2 + im[..., 1:] ** 2)
    logmag = np.log(mag + FFT_LOG_EPS)
    shifted = logmag - logmag.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    sign = e / e.sum(axis=-1, keepdims=True)
    return xf, sign


def compute_fft_targets(x_scaled_unmasked):
    """Public (S, C) wrapper: returns (X_f (S, C), signature (S/2, C)) arrays."""
    arr = (
        x_scaled_unmasked.data
        if isinstance(x_scaled_unmasked, Tensor)
        else np.asarray(x_scaled_unmasked, dtype=np.float64)
    )
    xf, sign = fft_targets_t(np.swapaxes(arr, -1, -2))
    return np.swapaxes(xf, -1, -2), np.swapaxes(sign, -1, -2)


def unpack_spectrum_t(yf_t: Tensor, feat: FftFeatures, S: int) -> Tensor:
    """Invert the packaging: rescale re/im, restore a zero Nyquist bin, irfft."""
    re_n, im_n = T.split(yf_t, [S // 2, S // 2], axis=-1)
    zero = T.constant(np.zeros(yf_t.data.shape[:-1] + (1,)))
    re = T.concat([re_n * feat.re_scale, zero], axis=-1)
    im = T.concat([im_n * feat.im_scale, zero], axis=-1)
    return T.irfft(re, im, S)
