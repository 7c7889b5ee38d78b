"""Dense-tensor math: autodiff engine, real FFT pair, Adam, gradient checks."""

from .fft import irfft_real, rfft_real
from .gradcheck import GradCheckReport, finite_difference_check
from .optim import AdamState, adam_step
from .tensor import (
    DropoutRng,
    Grads,
    Tape,
    Tensor,
    add,
    backward,
    broadcast_to,
    clip_min,
    concat,
    constant,
    cross_entropy,
    dropout,
    forward_op,
    gelu,
    irfft,
    layer_norm,
    matmul,
    max_abs,
    mse,
    mul,
    no_grad,
    parameter,
    powc,
    reshape,
    rfft,
    sigmoid,
    softmax,
    split,
    sub,
    swap_last,
    tlog,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "AdamState",
    "DropoutRng",
    "GradCheckReport",
    "Grads",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "broadcast_to",
    "clip_min",
    "concat",
    "constant",
    "cross_entropy",
    "dropout",
    "finite_difference_check",
    "forward_op",
    "gelu",
    "irfft",
    "irfft_real",
    "layer_norm",
    "matmul",
    "max_abs",
    "mse",
    "mul",
    "no_grad",
    "parameter",
    "powc",
    "reshape",
    "rfft",
    "rfft_real",
    "sigmoid",
    "softmax",
    "split",
    "sub",
    "swap_last",
    "tlog",
    "tmean",
    "transpose",
    "tsum",
]
