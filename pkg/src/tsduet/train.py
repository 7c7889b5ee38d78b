"""Pre-training: weighted five-loss masked-reconstruction objective,
task-specialized loss presets, and the batch loop with Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError
from .model import ForwardBundle, HeadOutputs, ModelConfig, ModelParams, full_pass, init_params
from .model import load_checkpoint, save_checkpoint  # re-exported persistence  # noqa: F401
from .numerics import AdamState, DropoutRng, Tape, adam_step, backward, no_grad
from .numerics import tensor as T
from .preprocess import (
    MaskPlan,
    apply_block_mask,
    apply_hybrid_mask,
    as_series,
    fft_targets_t,
    substitute_token,
)

HYBRID_RATIO_RANGE = (0.15, 0.55)
BLOCK_PRETRAIN_RATIO = 0.35  # matches the mean of the hybrid ratio range


@dataclass
class LossWeights:
    w_time1: float = 1.0
    w_time2: float = 1.0
    w_fft: float = 1.0
    w_sign: float = 1.0
    w_pred: float = 1.0

    def __post_init__(self):
        vals = [self.w_time1, self.w_time2, self.w_fft, self.w_sign, self.w_pred]
        if any(w < 0 for w in vals):
            raise ValueError("loss weights must be non-negative")
        if not any(w > 0 for w in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass
class LossReport:
    l_time1: float
    l_time2: float
    l_fft: float
    l_sign: float
    l_pred: float
    total: float
    flags: list = field(default_factory=list)
    total_tensor: object = None  # scalar Tensor for backprop; not part of the record

    def as_dict(self):
        return {
            "l_time1": self.l_time1,
            "l_time2": self.l_time2,
            "l_fft": self.l_fft,
            "l_sign": self.l_sign,
            "l_pred": self.l_pred,
            "total": self.total,
        }


@dataclass
class TrainTargets:
    x_fft: np.ndarray  # (S, C) packaged clean spectrum
    x_sign: np.ndarray  # (S/2, C) spectrum signature
    x_pred: np.ndarray | None  # (F, C) future points, raw scale


TASKS = ("anomaly", "imputation", "classification", "search", "unified")

# classification pre-training hides whole patches; everything else hybrid
TASK_MASKING = {
    "anomaly": "hybrid",
    "imputation": "hybrid",
    "search": "hybrid",
    "unified": "hybrid",
    "classification": "block",
}
TASK_PATCH_LEN = {"classification": 16}


def task_preset(task: str) -> LossWeights:
    """Loss reweighting per downstream task family."""
    if task in ("anomaly", "unified"):
        return LossWeights(1.0, 1.0, 1.0, 1.0, 1.0)
    if task in ("imputation", "search", "classification"):
        return LossWeights(w_time1=1.0, w_time2=0.5, w_fft=0.5, w_sign=1.0, w_pred=0.0)
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def masked_mse(pred: T.Tensor, target: np.ndarray, mask: np.ndarray) -> tuple[T.Tensor, int]:
    """MSE restricted to mask==True positions; zero tensor when none."""
    count = int(mask.sum())
    if count == 0:
        return T.constant(0.0), 0
    m = T.constant(mask.astype(np.float64))
    diff = pred - T.constant(target)
    return T.tsum(diff * diff * m) * T.constant(1.0 / count), count


def compute_losses(
    x,
    plan: MaskPlan,
    outputs: HeadOutputs,
    targets: TrainTargets,
    weights: LossWeights,
) -> LossReport:
    """The five objectives; time-domain reconstruction losses only see the
    masked points. The returned report carries the weighted-total tensor."""
    xv = as_series(x).values
    flags = []

    l_time1, count = masked_mse(outputs.y, xv, plan.point_mask)
    if count == 0 and weights.w_time1 > 0:
        flags.append("empty mask: l_time1 defined as 0")
    l_time2, count2 = masked_mse(outputs.y_prime, xv, plan.point_mask)
    if count2 == 0 and weights.w_time2 > 0 and "empty mask: l_time1 defined as 0" not in flags:
        flags.append("empty mask: l_time2 defined as 0")
    l_fft = T.mse(outputs.y_fft, T.constant(targets.x_fft))
    l_sign = T.cross_entropy(T.constant(targets.x_sign), outputs.y_sign, axis=-2)
    if targets.x_pred is None:
        l_pred = T.constant(0.0)
        if weights.w_pred > 0:
            flags.append("no future targets: l_pred defined as 0")
    else:
        l_pred = T.mse(outputs.y_pred, T.constant(targets.x_pred))

    terms = []
    for w, l in [
        (weights.w_time1, l_time1),
        (weights.w_time2, l_time2),
        (weights.w_fft, l_fft),
        (weights.w_sign, l_sign),
        (weights.w_pred, l_pred),
    ]:
        if w > 0:
            terms.append(T.constant(w) * l)
    total = terms[0]
    for t in terms[1:]:
        total = total + t

    return LossReport(
        l_time1=float(l_time1.data),
        l_time2=float(l_time2.data),
        l_fft=float(l_fft.data),
        l_sign=float(l_sign.data),
        l_pred=float(l_pred.data),
        total=float(total.data),
        flags=flags,
        total_tensor=total,
    )


_LOSS_HEAD = {
    "l_time1": "time head",
    "l_time2": "fft head (inverse path)",
    "l_fft": "fft head",
    "l_sign": "signature head",
    "l_pred": "prediction head",
}


def _check_finite(report: LossReport):
    for name, value in report.as_dict().items():
        if not np.isfinite(value):
            head = _LOSS_HEAD.get(name, "total objective")
            raise NumericsError(f"non-finite loss {name}={value} from {head}")


def make_targets(contexts: np.ndarray, bundle: ForwardBundle, futures: np.ndarray | None) -> TrainTargets:
    """Reconstruction targets from the unmasked series; computed without
    gradient (targets are data, not model functions)."""
    with no_grad():
        xt = T.swap_last(T.constant(contexts))
        x_scaled = bundle.revin.normalize_t(xt)
    xf_t, sign_t = fft_targets_t(x_scaled.data)
    return TrainTargets(
        x_fft=np.swapaxes(xf_t, -1, -2),
        x_sign=np.swapaxes(sign_t, -1, -2),
        x_pred=futures,
    )


def _window_arrays(corpus, seq_len: int, pred_len: int):
    contexts, futures = [], []
    have_future = True
    for item in corpus:
        if isinstance(item, tuple):
            ctx, fut = item
        else:
            ctx, fut = item, None
        ctx = np.asarray(ctx, dtype=np.float64).reshape(-1)
        if ctx.size != seq_len:
            raise ValueError(f"pretrain window length {ctx.size} != seq_len {seq_len}")
        contexts.append(ctx)
        if fut is None:
            have_future = False
        else:
            fut = np.asarray(fut, dtype=np.float64).reshape(-1)
            if fut.size != pred_len:
                raise ValueError(f"future length {fut.size} != pred_len {pred_len}")
            futures.append(fut)
    ctx_mat = np.stack(contexts, axis=1)  # (S, n)
    fut_mat = np.stack(futures, axis=1) if have_future and futures else None
    return ctx_mat, fut_mat


def _batch_plan(
    contexts: np.ndarray,
    token,
    masking: str,
    rng: np.random.Generator,
    mask_ratio: float | None,
) -> MaskPlan:
    S, B = contexts.shape
    pl = token.data.shape[-1]
    point = np.zeros((S, B), dtype=bool)
    for b in range(B):
        if masking == "hybrid":
            ratio = mask_ratio if mask_ratio is not None else rng.uniform(*HYBRID_RATIO_RANGE)
            _, plan = apply_hybrid_mask(contexts[:, b : b + 1], ratio, token, rng)
        elif masking == "block":
            ratio = mask_ratio if mask_ratio is not None else BLOCK_PRETRAIN_RATIO
            _, plan = apply_block_mask(contexts[:, b : b + 1], ratio, token, rng)
        else:
            raise ValueError(f"unknown masking strategy {masking!r}")
        point[:, b] = plan.point_mask[:, 0]
    full = point.reshape(S // pl, pl, B).all(axis=1)
    return MaskPlan(point, full, float(point.mean()))


def pretrain(
    corpus,
    cfg: ModelConfig,
    weights: LossWeights | None = None,
    epochs: int = 20,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    task: str = "unified",
    masking: str | None = None,
    mask_ratio: float | None = None,
    params: ModelParams | None = None,
    log=None,
):
    """Train from scratch (or continue `params`) on an iterable of univariate
    windows; items are length-S arrays or (context, future) tuples.

    Deterministic for a fixed seed: masking, shuffling and dropout all flow
    from it. Returns (params, per-epoch mean LossReport list).
    """
    weights = weights or task_preset(task)
    masking = masking or TASK_MASKING[task]
    contexts, futures = _window_arrays(corpus, cfg.seq_len, cfg.pred_len)
    n = contexts.shape[1]
    if params is None:
        params = init_params(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    drop = DropoutRng(seed + 2) if cfg.dropout > 0 or cfg.head_dropout > 0 else None
    opt = AdamState(lr=lr)
    tensors = params.tensors
    trace: list[LossReport] = []

    for epoch in range(epochs):
        order = rng.permutation(n)
        sums = np.zeros(6)
        batches = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            ctx = contexts[:, idx]
            fut = futures[:, idx] if futures is not None else None
            plan = _batch_plan(ctx, tensors["mask_token"], masking, rng, mask_ratio)
            with Tape() as tape:
                x_hat = substitute_token(ctx, plan, tensors["mask_token"])
                bundle = full_pass(x_hat, params, cfg, dropout=drop)
                targets = make_targets(ctx, bundle, fut)
                report = compute_losses(ctx, plan, bundle.outputs, targets, weights)
                _check_finite(report)
                grads = backward(tape, report.total_tensor, params=tensors.values())
            named = {name: grads.get(t) for name, t in tensors.items()}
            adam_step(tensors, named, opt)
            sums += np.array(list(report.as_dict().values()))
            batches += 1
        mean = sums / max(batches, 1)
        epoch_report = LossReport(*mean[:5], total=mean[5])
        trace.append(epoch_report)
        if log:
            log(epoch, epoch_report)
    return params, trace


def evaluate_losses(
    params: ModelParams,
    corpus,
    weights: LossWeights | None = None,
    masking: str = "hybrid",
    mask_ratio: float | None = None,
    seed: int = 123,
    batch_size: int = 64,
) -> LossReport:
    """Mean losses over a corpus with dropout off and no updates."""
    cfg = params.cfg
    weights = weights or LossWeights()
    contexts, futures = _window_arrays(corpus, cfg.seq_len, cfg.pred_len)
    rng = np.random.default_rng(seed)
    n = contexts.shape[1]
    sums = np.zeros(6)
    batches = 0
    for start in range(0, n, batch_size):
        ctx = contexts[:, start : start + batch_size]
        fut = futures[:, start : start + batch_size] if futures is not None else None
        plan = _batch_plan(ctx, params["mask_token"], masking, rng, mask_ratio)
        x_hat = substitute_token(ctx, plan, params["mask_token"])
        bundle = full_pass(x_hat, params, cfg, dropout=None)
        targets = make_targets(ctx, bundle, fut)
        report = compute_losses(ctx, plan, bundle.outputs, targets, weights)
        sums += np.array(list(report.as_dict().values()))
        batches += 1
    mean = sums / max(batches, 1)
    return LossReport(*mean[:5], total=mean[5])
