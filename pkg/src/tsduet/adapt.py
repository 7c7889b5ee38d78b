"""Target-data fine-tuning: identity-initialized channel mixers in the
decoder, virtual channel expansion, input-length interpolation, and the
token-projection classification head (with an avg-pool baseline arm)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, ConfigError
from .model import ModelConfig, ModelParams, backbone_forward, decoder_forward, _encode_t
from .numerics import AdamState, DropoutRng, Tape, adam_step, backward, no_grad
from .numerics import tensor as T
from .preprocess import RevinState, apply_block_mask, fft_features_t

MAX_INTERP_FACTOR = 20


def insert_channel_mixers(params: ModelParams, channels: int) -> ModelParams:
    """Give every decoder layer a channels->channels linear mixer initialized
    to the exact identity, so the forward pass is unchanged until training
    moves the weights."""
    if channels < 1:
        raise ConfigError(f"channel count must be >= 1, got {channels}")
    for i in range(params.cfg.decoder_layers):
        params.tensors[f"decoder.{i}.chmix.w"] = T.parameter(np.eye(channels))
        params.tensors[f"decoder.{i}.chmix.b"] = T.parameter(np.zeros(channels))
    params.channel_mix = channels
    return params


def expand_channels(x: np.ndarray, factor: int) -> np.ndarray:
    """Replicate channels `factor` times ahead of the channel-mixing decoder."""
    if factor not in (1, 2):
        raise ConfigError(f"channel expansion factor must be 1 or 2, got {factor}")
    x = np.asarray(x, dtype=np.float64)
    if factor == 1:
        return x
    return np.concatenate([x, x], axis=-1)


def interpolate_length(x: np.ndarray, length: int) -> np.ndarray:
    """Per-channel linear resampling to `length` points, endpoints preserved."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    s0 = x.shape[0]
    if s0 == length:
        return x[:, 0] if squeeze else x.copy()
    if length > MAX_INTERP_FACTOR * s0 or s0 > MAX_INTERP_FACTOR * length:
        raise CapabilityError(
            f"resampling {s0} -> {length} exceeds the {MAX_INTERP_FACTOR}x bound"
        )
    old = np.linspace(0.0, 1.0, s0)
    new = np.linspace(0.0, 1.0, length)
    out = np.empty((length, x.shape[1]))
    for c in range(x.shape[1]):
        out[:, c] = np.interp(new, old, x[:, c])
    return out[:, 0] if squeeze else out


@dataclass
class ClassifierHead:
    """Projects every token embedding to d_prime dims, flattens across
    channels/tokens/features, and maps to class logits."""

    proj_w: T.Tensor
    proj_b: T.Tensor
    out_w: T.Tensor
    out_b: T.Tensor
    d_prime: int
    num_classes: int

    @classmethod
    def create(cls, cfg: ModelConfig, channels: int, d_prime: int, num_classes: int, seed: int = 0):
        if d_prime < 1:
            raise ConfigError("d_prime must be >= 1")
        rng = np.random.default_rng(seed)
        flat = channels * cfg.n_tokens * d_prime
        return cls(
            proj_w=T.parameter(rng.normal(size=(cfg.d_model, d_prime)) / np.sqrt(cfg.d_model)),
            proj_b=T.parameter(np.zeros(d_prime)),
            out_w=T.parameter(rng.normal(size=(flat, num_classes)) / np.sqrt(flat)),
            out_b=T.parameter(np.zeros(num_classes)),
            d_prime=d_prime,
            num_classes=num_classes,
        )

    def tensors(self) -> dict[str, T.Tensor]:
        return {
            "clshead.proj.w": self.proj_w,
            "clshead.proj.b": self.proj_b,
            "clshead.out.w": self.out_w,
            "clshead.out.b": self.out_b,
        }


def _vec_linear(x: T.Tensor, w: T.Tensor, b: T.Tensor) -> T.Tensor:
    """Linear map on the last axis for inputs with any (possibly zero)
    number of leading axes."""
    lead = x.data.shape[:-1]
    h = T.reshape(x, (int(np.prod(lead)) if lead else 1, x.data.shape[-1]))
    out = T.matmul(h, w) + b
    return T.reshape(out, lead + (w.data.shape[-1],))


def classifier_logits(decoder_out: T.Tensor, head: ClassifierHead) -> T.Tensor:
    """(.., C, K, D) decoder output -> (.., num_classes) logits."""
    lead = decoder_out.data.shape[:-3]
    c, k, _ = decoder_out.data.shape[-3:]
    flat = c * k * head.d_prime
    if head.out_w.data.shape[0] != flat:
        raise ConfigError(
            f"classifier head flatten size {head.out_w.data.shape[0]} != C*K*d_prime {flat}"
        )
    h = T.matmul(decoder_out, head.proj_w) + head.proj_b
    h = T.reshape(h, lead + (flat,))
    return _vec_linear(h, head.out_w, head.out_b)


@dataclass
class AvgPoolHead:
    """Ablation arm: mean over channels and tokens, then a linear map."""

    out_w: T.Tensor
    out_b: T.Tensor

    @classmethod
    def create(cls, cfg: ModelConfig, num_classes: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        return cls(
            out_w=T.parameter(rng.normal(size=(cfg.d_model, num_classes)) / np.sqrt(cfg.d_model)),
            out_b=T.parameter(np.zeros(num_classes)),
        )

    def tensors(self) -> dict[str, T.Tensor]:
        return {"clshead.out.w": self.out_w, "clshead.out.b": self.out_b}


def avgpool_logits(decoder_out: T.Tensor, head: AvgPoolHead) -> T.Tensor:
    pooled = T.tmean(decoder_out, axis=(-3, -2))
    return _vec_linear(pooled, head.out_w, head.out_b)


@dataclass
class FinetuneConfig:
    mask_ratio: float | None = 0.3  # block masking during fine-tune; None disables
    channel_expansion: int = 1
    d_prime: int = 1
    head_activation: str = "softmax"  # or "sigmoid"
    head_style: str = "projection"  # or "avg-pool"
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    patience: int = 5

    def __post_init__(self):
        if self.channel_expansion not in (1, 2):
            raise ConfigError("channel_expansion must be 1 or 2")
        if self.d_prime not in (1, 2):
            raise ConfigError("d_prime must be 1 or 2")
        if self.head_activation not in ("softmax", "sigmoid"):
            raise ConfigError(f"unknown head activation {self.head_activation!r}")
        if self.head_style not in ("projection", "avg-pool"):
            raise ConfigError(f"unknown head style {self.head_style!r}")


@dataclass
class Classifier:
    params: ModelParams
    head: object
    ft: FinetuneConfig
    num_classes: int
    input_len: int
    data_channels: int

    def prepare(self, X: np.ndarray) -> np.ndarray:
        """(n, S0, C) raw samples -> (n, S, C*expansion) network inputs."""
        X = np.asarray(X, dtype=np.float64)
        out = np.stack([interpolate_length(s, self.params.cfg.seq_len) for s in X])
        return expand_channels(out, self.ft.channel_expansion)

    def logits(self, X: np.ndarray) -> np.ndarray:
        xb = self.prepare(X)
        return _class_forward(self.params, self.head, self.ft, xb).data

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=-1)


@dataclass
class FinetuneReport:
    test_accuracy: float | None
    val_trace: list = field(default_factory=list)
    epochs_ran: int = 0
    best_epoch: int = 0


def _trunk_tokens(params: ModelParams, xb: np.ndarray) -> T.Tensor:
    """Frozen part of the network: masking-free input pipeline + backbone."""
    cfg = params.cfg
    with no_grad():
        xt = T.swap_last(T.constant(xb))  # (B, C, S)
        state = RevinState.fit_t(xt, params["revin.gamma"], params["revin.beta"])
        xm_t = state.normalize_t(xt)
        feat = fft_features_t(xm_t)
        input_e = _encode_t(xm_t, feat.features, params, cfg)
        tokens = backbone_forward(input_e, params, cfg, dropout=None)
    return T.constant(tokens.data)


def _class_forward(params, head, ft: FinetuneConfig, xb, dropout=None) -> T.Tensor:
    tokens = _trunk_tokens(params, xb)
    dec, _ = decoder_forward(tokens, params, params.cfg, dropout, channel_mixing=True)
    if ft.head_style == "avg-pool":
        return avgpool_logits(dec, head)
    return classifier_logits(dec, head)


def _class_loss(logits: T.Tensor, onehot: np.ndarray, activation: str) -> T.Tensor:
    if activation == "softmax":
        probs = T.softmax(logits, axis=-1)
        return T.cross_entropy(T.constant(onehot), probs, axis=-1)
    p = T.sigmoid(logits)
    eps = 1e-12
    p = T.clip_min(p, eps)
    q = T.clip_min(T.constant(1.0) - p, eps)
    t = T.constant(onehot)
    ll = t * T.tlog(p) + (T.constant(1.0) - t) * T.tlog(q)
    return T.tmean(ll) * T.constant(-1.0)


def _stratified_split(y: np.ndarray, frac: float, rng: np.random.Generator):
    val_idx = []
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        members = rng.permutation(members)
        k = max(1, int(round(frac * members.size))) if members.size > 1 else 0
        val_idx.extend(members[:k])
    val = np.array(sorted(val_idx), dtype=int)
    train = np.setdiff1d(np.arange(y.size), val)
    return train, val


def finetune_classifier(
    X_train: np.ndarray,
    y_train: np.ndarray,
    pretrained: ModelParams,
    ft: FinetuneConfig,
    X_test: np.ndarray | None = None,
    y_test: np.ndarray | None = None,
) -> tuple[Classifier, FinetuneReport]:
    """Fine-tune the decoder plus a classification head on labeled series.

    The backbone, encoder, RevIN affine and mask token stay frozen. A
    stratified 10% validation split drives early stopping on cross-entropy;
    optional block masking regularizes training batches only.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=int)
    classes = np.unique(y_train)
    if classes.size < 2:
        raise ValueError("need at least two classes to fine-tune a classifier")
    num_classes = int(classes.max()) + 1

    params = pretrained.clone()
    cfg = params.cfg
    channels = X_train.shape[2] * ft.channel_expansion
    insert_channel_mixers(params, channels)
    rng = np.random.default_rng(ft.seed)
    if ft.head_style == "avg-pool":
        head = AvgPoolHead.create(cfg, num_classes, seed=ft.seed)
    else:
        head = ClassifierHead.create(cfg, channels, ft.d_prime, num_classes, seed=ft.seed)

    clf = Classifier(params, head, ft, num_classes, X_train.shape[1], X_train.shape[2])
    xb_all = clf.prepare(X_train)
    onehot_all = np.eye(num_classes)[y_train]

    tr_idx, va_idx = _stratified_split(y_train, 0.1, rng)
    trainable = {k: v for k, v in params.tensors.items() if k.startswith("decoder.")}
    trainable.update(head.tensors())
    opt = AdamState(lr=ft.lr)
    drop = DropoutRng(ft.seed + 1) if cfg.dropout > 0 else None

    def val_ce() -> float:
        logits = _class_forward(params, head, ft, xb_all[va_idx])
        return float(_class_loss(logits, onehot_all[va_idx], ft.head_activation).data)

    best = (np.inf, 0, {k: v.data.copy() for k, v in trainable.items()})
    report = FinetuneReport(test_accuracy=None)
    since_best = 0
    for epoch in range(ft.epochs):
        order = rng.permutation(tr_idx)
        for start in range(0, order.size, ft.batch_size):
            idx = order[start : start + ft.batch_size]
            xb = xb_all[idx]
            if ft.mask_ratio is not None:
                xb = xb.copy()
                for i in range(xb.shape[0]):
                    masked, _ = apply_block_mask(
                        xb[i], ft.mask_ratio, params["mask_token"], rng
                    )
                    xb[i] = masked
            with Tape() as tape:
                logits = _class_forward(params, head, ft, xb, dropout=drop)
                loss = _class_loss(logits, onehot_all[idx], ft.head_activation)
                grads = backward(tape, loss, params=trainable.values())
            adam_step(trainable, {k: grads.get(v) for k, v in trainable.items()}, opt)
        ce = val_ce()
        report.val_trace.append(ce)
        report.epochs_ran = epoch + 1
        if ce < best[0]:
            best = (ce, epoch, {k: v.data.copy() for k, v in trainable.items()})
            since_best = 0
        else:
            since_best += 1
            if since_best >= ft.patience:
                break
    for k, v in best[2].items():
        trainable[k].data = v
    report.best_epoch = best[1]

    if X_test is not None and y_test is not None:
        pred = clf.predict(np.asarray(X_test, dtype=np.float64))
        report.test_accuracy = float(np.mean(pred == np.asarray(y_test, dtype=int)))
    return clf, report


def save_classifier(clf: Classifier, path) -> None:
    from .model import save_checkpoint

    params = clf.params
    merged = ModelParams(
        params.cfg,
        {**params.tensors, **clf.head.tensors()},
        params.channel_mix,
        {
            "classifier": {
                "num_classes": clf.num_classes,
                "input_len": clf.input_len,
                "data_channels": clf.data_channels,
                "d_prime": getattr(clf.head, "d_prime", 0),
                "head_style": clf.ft.head_style,
                "head_activation": clf.ft.head_activation,
                "channel_expansion": clf.ft.channel_expansion,
            }
        },
    )
    save_checkpoint(merged, path)


def load_classifier(path) -> Classifier:
    from .model import load_checkpoint

    merged = load_checkpoint(path)
    meta = merged.extra.get("classifier")
    if not meta:
        raise ConfigError(f"{path}: checkpoint has no classifier head")
    ft = FinetuneConfig(
        mask_ratio=None,
        channel_expansion=meta["channel_expansion"],
        d_prime=max(meta["d_prime"], 1),
        head_activation=meta["head_activation"],
        head_style=meta["head_style"],
    )
    head_tensors = {k: v for k, v in merged.tensors.items() if k.startswith("clshead.")}
    if ft.head_style == "avg-pool":
        head = AvgPoolHead(out_w=head_tensors["clshead.out.w"], out_b=head_tensors["clshead.out.b"])
    else:
        head = ClassifierHead(
            proj_w=head_tensors["clshead.proj.w"],
            proj_b=head_tensors["clshead.proj.b"],
            out_w=head_tensors["clshead.out.w"],
            out_b=head_tensors["clshead.out.b"],
            d_prime=meta["d_prime"],
            num_classes=meta["num_classes"],
        )
    model_tensors = {k: v for k, v in merged.tensors.items() if not k.startswith("clshead.")}
    params = ModelParams(merged.cfg, model_tensors, merged.channel_mix, merged.extra)
    return Classifier(params, head, ft, meta["num_classes"], meta["input_len"], meta["data_channels"])
