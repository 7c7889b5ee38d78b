"""The network: patch/frequency encoders with register tokens, a mixer
backbone with gated attention, a small decoder, and the multi-objective
heads that split the decoder output into temporal / spectral / semantic
views.

Internal activations use the (.., C, K, D) layout with any number of
leading batch axes; head outputs are returned in the public (.., S, C)
layout.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CheckpointError, ConfigError
from .numerics import tensor as T
from .numerics.tensor import Tensor
from .preprocess import FftFeatures, RevinState, fft_features_t, unpack_spectrum_t

CHECKPOINT_MAGIC = b"TSPL"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    seq_len: int = 512
    patch_len: int = 8
    d_model: int = 0  # 0 -> 3 * patch_len
    registers: int = 8
    pred_len: int = 8
    backbone_layers: int = 8
    decoder_layers: int = 2
    dropout: float = 0.2
    head_dropout: float = 0.2
    gate_activation: str = "softmax"
    expansion: int = 2

    def __post_init__(self):
        if self.d_model == 0:
            self.d_model = 3 * self.patch_len
        if self.seq_len % self.patch_len:
            raise ConfigError(f"seq_len {self.seq_len} not divisible by patch_len {self.patch_len}")
        if self.decoder_layers > self.backbone_layers:
            raise ConfigError("decoder must not be deeper than the backbone")
        if self.gate_activation != "softmax":
            raise ConfigError(f"unsupported gate activation {self.gate_activation!r}")

    @property
    def n_patches(self) -> int:
        return self.seq_len // self.patch_len

    @property
    def n_tokens(self) -> int:
        return 2 * self.n_patches + self.registers


@dataclass
class EmbeddingViews:
    """Decoder output split along the token axis: [time; fft; registers]."""

    time_e: Tensor  # (.., C, N, D)
    fft_e: Tensor  # (.., C, N, D)
    reg_e: Tensor  # (.., C, R, D)

    def concat(self) -> Tensor:
        return T.concat([self.time_e, self.fft_e, self.reg_e], axis=-2)


@dataclass
class HeadOutputs:
    """All head outputs in the public layout (trailing dims (S, C) etc.)."""

    y: Tensor  # (.., S, C) de-normalized time reconstruction
    y_fft: Tensor  # (.., S, C) packaged frequency reconstruction
    y_prime: Tensor  # (.., S, C) time reconstruction through the inverse FFT
    y_sign: Tensor  # (.., S/2, C) softmaxed spectrum signature
    y_pred: Tensor  # (.., F, C) short horizon forecast


@dataclass
class ForwardBundle:
    outputs: HeadOutputs
    views: EmbeddingViews
    revin: RevinState
    feat: FftFeatures
    x_norm_t: Tensor  # normalized masked input, internal (.., C, S) layout


class ModelParams:
    """Named parameter tensors plus the config they were built for."""

    def __init__(
        self,
        cfg: ModelConfig,
        tensors: dict[str, Tensor],
        channel_mix: int | None = None,
        extra: dict | None = None,
    ):
        self.cfg = cfg
        self.tensors = tensors
        self.channel_mix = channel_mix
        self.extra = extra or {}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def subset(self, prefixes) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if any(k.startswith(p) for p in prefixes)}

    def clone(self) -> "ModelParams":
        return ModelParams(
            self.cfg,
            {k: T.parameter(v.data.copy()) for k, v in self.tensors.items()},
            self.channel_mix,
            dict(self.extra),
        )


def parameter_count(params: ModelParams) -> int:
    return int(sum(t.data.size for t in params.tensors.values()))


def _linear_init(rng, fan_in, shape):
    return rng.normal(size=shape) / np.sqrt(fan_in)


def _mixer_layer_tensors(rng, prefix, cfg: ModelConfig, out: dict):
    K, D, E = cfg.n_tokens, cfg.d_model, cfg.expansion
    out[f"{prefix}.tok.norm.g"] = T.parameter(np.ones(D))
    out[f"{prefix}.tok.norm.b"] = T.parameter(np.zeros(D))
    out[f"{prefix}.tok.w1"] = T.parameter(_linear_init(rng, K, (K, E * K)))
    out[f"{prefix}.tok.b1"] = T.parameter(np.zeros(E * K))
    out[f"{prefix}.tok.w2"] = T.parameter(_linear_init(rng, E * K, (E * K, K)))
    out[f"{prefix}.tok.b2"] = T.parameter(np.zeros(K))
    out[f"{prefix}.tok.gate.w"] = T.parameter(_linear_init(rng, D, (D, D)))
    out[f"{prefix}.tok.gate.b"] = T.parameter(np.zeros(D))
    out[f"{prefix}.feat.norm.g"] = T.parameter(np.ones(D))
    out[f"{prefix}.feat.norm.b"] = T.parameter(np.zeros(D))
    out[f"{prefix}.feat.w1"] = T.parameter(_linear_init(rng, D, (D, E * D)))
    out[f"{prefix}.feat.b1"] = T.parameter(np.zeros(E * D))
    out[f"{prefix}.feat.w2"] = T.parameter(_linear_init(rng, E * D, (E * D, D)))
    out[f"{prefix}.feat.b2"] = T.parameter(np.zeros(D))
    out[f"{prefix}.feat.gate.w"] = T.parameter(_linear_init(rng, D, (D, D)))
    out[f"{prefix}.feat.gate.b"] = T.parameter(np.zeros(D))


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    pl, D, R, S, F = cfg.patch_len, cfg.d_model, cfg.registers, cfg.seq_len, cfg.pred_len
    t: dict[str, Tensor] = {}
    t["mask_token"] = T.parameter(rng.normal(size=pl) * 0.02)
    t["revin.gamma"] = T.parameter(np.ones(1))
    t["revin.beta"] = T.parameter(np.zeros(1))
    t["encoder.time_proj.w"] = T.parameter(_linear_init(rng, pl, (pl, D)))
    t["encoder.time_proj.b"] = T.parameter(np.zeros(D))
    t["encoder.fft_proj.w"] = T.parameter(_linear_init(rng, pl, (pl, D)))
    t["encoder.fft_proj.b"] = T.parameter(np.zeros(D))
    t["encoder.norm.g"] = T.parameter(np.ones(D))
    t["encoder.norm.b"] = T.parameter(np.zeros(D))
    t["registers"] = T.parameter(rng.normal(size=(R, D)) * 0.02)
    for i in range(cfg.backbone_layers):
        _mixer_layer_tensors(rng, f"backbone.{i}", cfg, t)
    for i in range(cfg.decoder_layers):
        _mixer_layer_tensors(rng, f"decoder.{i}", cfg, t)
    t["head.time.w"] = T.parameter(_linear_init(rng, D, (D, pl)))
    t["head.time.b"] = T.parameter(np.zeros(pl))
    t["head.fft.w"] = T.parameter(_linear_init(rng, D, (D, pl)))
    t["head.fft.b"] = T.parameter(np.zeros(pl))
    t["head.sign.w"] = T.parameter(_linear_init(rng, R * D, (R * D, S // 2)))
    t["head.sign.b"] = T.parameter(np.zeros(S // 2))
    t["head.pred.w"] = T.parameter(_linear_init(rng, R * D, (R * D, F)))
    t["head.pred.b"] = T.parameter(np.zeros(F))
    return ModelParams(cfg, t)


# ------------------------------------------------------------------- forward


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.matmul(x, w) + b


def _gate(y: Tensor, params: ModelParams, prefix: str) -> Tensor:
    g = T.softmax(_linear(y, params[f"{prefix}.w"], params[f"{prefix}.b"]), axis=-1)
    return g * y


def _channel_mix(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    # (.., C, K, D) -> (.., K, D, C), mix channels, move back
    n = x.data.ndim
    fwd = tuple(range(n - 3)) + (n - 2, n - 1, n - 3)
    rev = tuple(range(n - 3)) + (n - 1, n - 3, n - 2)
    xc = T.transpose(x, fwd)
    xc = _linear(xc, w, b)
    return T.transpose(xc, rev)


def mixer_block(
    x: Tensor,
    params: ModelParams,
    prefix: str,
    cfg: ModelConfig,
    mode: str = "channel_independent",
    dropout=None,
) -> Tensor:
    """Token mixing over K, optional channel mixing over C, feature mixing
    over D; each mixing is pre-norm residual followed by a softmax feature
    gate."""
    h = T.layer_norm(x, params[f"{prefix}.tok.norm.g"], params[f"{prefix}.tok.norm.b"])
    ht = T.swap_last(h)  # (.., D, K)
    ht = _linear(T.gelu(_linear(ht, params[f"{prefix}.tok.w1"], params[f"{prefix}.tok.b1"])),
                 params[f"{prefix}.tok.w2"], params[f"{prefix}.tok.b2"])
    y = _gate(T.swap_last(ht), params, f"{prefix}.tok.gate")
    x = x + T.dropout(y, cfg.dropout, dropout)

    if mode == "channel_mixing":
        wname = f"{prefix}.chmix.w"
        if wname not in params:
            raise ConfigError(f"channel mixing requested but {wname} is missing")
        x = _channel_mix(x, params[wname], params[f"{prefix}.chmix.b"])
    elif mode != "channel_independent":
        raise ConfigError(f"unknown mixer mode {mode!r}")

    h = T.layer_norm(x, params[f"{prefix}.feat.norm.g"], params[f"{prefix}.feat.norm.b"])
    y = _linear(T.gelu(_linear(h, params[f"{prefix}.feat.w1"], params[f"{prefix}.feat.b1"])),
                params[f"{prefix}.feat.w2"], params[f"{prefix}.feat.b2"])
    y = _gate(y, params, f"{prefix}.feat.gate")
    return x + T.dropout(y, cfg.dropout, dropout)


def _encode_t(xm_t: Tensor, xf_t: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    lead = xm_t.data.shape[:-1]  # (.., C)
    N, pl, D, R = cfg.n_patches, cfg.patch_len, cfg.d_model, cfg.registers
    tpatch = T.reshape(xm_t, lead + (N, pl))
    fpatch = T.reshape(xf_t, lead + (N, pl))
    time_e = _linear(tpatch, params["encoder.time_proj.w"], params["encoder.time_proj.b"])
    fft_e = _linear(fpatch, params["encoder.fft_proj.w"], params["encoder.fft_proj.b"])
    reg_e = T.broadcast_to(params["registers"], lead + (R, D))
    stacked = T.concat([time_e, fft_e, reg_e], axis=-2)
    return T.layer_norm(stacked, params["encoder.norm.g"], params["encoder.norm.b"])


def encode(x_m, xf_m, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Public (S, C) entry; returns the (.., C, K, D) token sequence."""
    xm_t = T.swap_last(x_m if isinstance(x_m, Tensor) else T.constant(x_m))
    xf_t = T.swap_last(xf_m if isinstance(xf_m, Tensor) else T.constant(xf_m))
    if xm_t.data.shape[-1] != cfg.seq_len:
        raise ConfigError(f"encode: series length {xm_t.data.shape[-1]} != config {cfg.seq_len}")
    return _encode_t(xm_t, xf_t, params, cfg)


def backbone_forward(input_e: Tensor, params: ModelParams, cfg: ModelConfig, dropout=None) -> Tensor:
    x = input_e
    for i in range(cfg.backbone_layers):
        x = mixer_block(x, params, f"backbone.{i}", cfg, "channel_independent", dropout)
    return x


def decoder_forward(
    backbone_e: Tensor,
    params: ModelParams,
    cfg: ModelConfig,
    dropout=None,
    channel_mixing: bool = False,
):
    mode = "channel_mixing" if channel_mixing else "channel_independent"
    x = backbone_e
    for i in range(cfg.decoder_layers):
        x = mixer_block(x, params, f"decoder.{i}", cfg, mode, dropout)
    N, R = cfg.n_patches, cfg.registers
    time_e, fft_e, reg_e = T.split(x, [N, N, R], axis=-2)
    return x, EmbeddingViews(time_e=time_e, fft_e=fft_e, reg_e=reg_e)


def heads_forward(
    views: EmbeddingViews,
    revin_state: RevinState,
    feat: FftFeatures,
    params: ModelParams,
    cfg: ModelConfig,
    dropout=None,
) -> HeadOutputs:
    lead = views.time_e.data.shape[:-2]  # (.., C)
    S = cfg.seq_len

    time_in = T.dropout(views.time_e, cfg.head_dropout, dropout)
    y_norm = T.reshape(_linear(time_in, params["head.time.w"], params["head.time.b"]), lead + (S,))
    y = T.swap_last(revin_state.denormalize_t(y_norm))

    fft_in = T.dropout(views.fft_e, cfg.head_dropout, dropout)
    yf_t = T.reshape(_linear(fft_in, params["head.fft.w"], params["head.fft.b"]), lead + (S,))
    y_fft = T.swap_last(yf_t)

    y_prime = T.swap_last(revin_state.denormalize_t(unpack_spectrum_t(yf_t, feat, S)))

    reg_flat = T.reshape(T.dropout(views.reg_e, cfg.head_dropout, dropout),
                         lead + (cfg.registers * cfg.d_model,))
    sign_logits = _linear(reg_flat, params["head.sign.w"], params["head.sign.b"])
    y_sign = T.swap_last(T.softmax(sign_logits, axis=-1))

    pred_norm = _linear(reg_flat, params["head.pred.w"], params["head.pred.b"])
    y_pred = T.swap_last(revin_state.denormalize_t(pred_norm))

    return HeadOutputs(y=y, y_fft=y_fft, y_prime=y_prime, y_sign=y_sign, y_pred=y_pred)


def full_pass(
    x_hat,
    params: ModelParams,
    cfg: ModelConfig | None = None,
    dropout=None,
    channel_mixing: bool = False,
) -> ForwardBundle:
    """Run the whole network on an already-masked series.

    `x_hat` is (S, C) or batched (.., S, C), raw scale (masking applied,
    normalization not). Set `channel_mixing` only when decoder channel
    mixers have been inserted.
    """
    cfg = cfg or params.cfg
    xt = T.swap_last(x_hat if isinstance(x_hat, Tensor) else T.constant(x_hat))
    if xt.data.shape[-1] != cfg.seq_len:
        raise ConfigError(f"series length {xt.data.shape[-1]} != config seq_len {cfg.seq_len}")
    state = RevinState.fit_t(xt, params["revin.gamma"], params["revin.beta"])
    xm_t = state.normalize_t(xt)
    feat = fft_features_t(xm_t)
    input_e = _encode_t(xm_t, feat.features, params, cfg)
    backbone_e = backbone_forward(input_e, params, cfg, dropout)
    _, views = decoder_forward(backbone_e, params, cfg, dropout, channel_mixing)
    outputs = heads_forward(views, state, feat, params, cfg, dropout)
    return ForwardBundle(outputs=outputs, views=views, revin=state, feat=feat, x_norm_t=xm_t)


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(params: ModelParams, path) -> None:
    """Binary format: magic, u32 version, JSON config block, then per-tensor
    records (name, rank, dims, little-endian float32 data)."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    meta = {"config": asdict(params.cfg), "channel_mix": params.channel_mix, "extra": params.extra}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(params.tensors)))
    for name in sorted(params.tensors):
        data = params.tensors[name].data.astype("<f4")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", data.ndim))
        for d in data.shape:
            buf.write(struct.pack("<I", d))
        buf.write(data.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise OSError(f"checkpoint truncated: wanted {n} bytes, got {len(data)}")
    return data


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, blob_len).decode("utf-8"))
        cfg = ModelConfig(**meta["config"])
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            n = int(np.prod(dims)) if rank else 1
            raw = _read_exact(fh, 4 * n)
            arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
            tensors[name] = T.parameter(arr)
    return ModelParams(cfg, tensors, meta.get("channel_mix"), meta.get("extra"))
