"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A `Tensor` wraps an ndarray; operations executed inside a `with Tape():`
block append nodes in execution order (which is already topological), and
`backward` replays them once in reverse. Tensors are treated as immutable
after construction; the optimizer replaces parameter `.data` wholesale.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..errors import DimensionError
from . import fft as _fft

_IDS = itertools.count()
_TAPES: list["Tape | None"] = []

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    __slots__ = ("data", "requires_grad", "id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.id = next(_IDS)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; all routed through the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, constant(-1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def parameter(x) -> Tensor:
    return Tensor(x, requires_grad=True)


class _Node:
    __slots__ = ("op", "input_ids", "output_ids", "output_shapes", "backward")

    def __init__(self, op, input_ids, output_ids, output_shapes, backward):
        self.op = op
        self.input_ids = input_ids
        self.output_ids = output_ids
        self.output_shapes = output_shapes
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)


class no_grad:
    """Suspend recording; results inside are constants."""

    def __enter__(self):
        _TAPES.append(None)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _record(op, inputs, outputs, backward_fn):
    grad_off = bool(_TAPES) and _TAPES[-1] is None
    req = (not grad_off) and any(t.requires_grad for t in inputs)
    for out in outputs:
        out.requires_grad = req
    tape = _active_tape()
    if req and tape is not None:
        tape.nodes.append(
            _Node(
                op,
                tuple(t.id for t in inputs),
                tuple(t.id for t in outputs),
                tuple(t.data.shape for t in outputs),
                backward_fn,
            )
        )


class Grads:
    """Gradient arrays keyed by tensor id."""

    def __init__(self, by_id):
        self._by_id = by_id

    def get(self, t: Tensor) -> np.ndarray:
        return self._by_id[t.id]

    def __contains__(self, t: Tensor):
        return t.id in self._by_id


def backward(tape: Tape, loss: Tensor, params=()) -> Grads:
    """Accumulate d(loss)/d(x) for every tensor reachable from `loss`.

    `params` lists leaf tensors that must appear in the result even when no
    path connects them to the loss (they get zero gradients).
    """
    if loss.data.ndim != 0:
        raise DimensionError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        outs = []
        touched = False
        for oid, shape in zip(node.output_ids, node.output_shapes):
            g = grads.get(oid)
            if g is None:
                g = np.zeros(shape, dtype=np.float64)
            else:
                touched = True
            outs.append(g)
        if not touched:
            continue
        for tid, g in zip(node.input_ids, node.backward(*outs)):
            if g is None:
                continue
            if tid in grads:
                grads[tid] = grads[tid] + g
            else:
                grads[tid] = g
    for p in params:
        if p.id not in grads:
            grads[p.id] = np.zeros_like(p.data)
    return Grads(grads)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError.for_shapes(op, a.data.shape, b.data.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data)
    ash, bsh = a.data.shape, b.data.shape
    _record("add", (a, b), (out,), lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out = Tensor(a.data - b.data)
    ash, bsh = a.data.shape, b.data.shape
    _record("sub", (a, b), (out,), lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    _record("mul", (a, b), (out,), back)
    return out


def powc(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    out = Tensor(np.power(a.data, exponent))
    ad = a.data
    _record("powc", (a,), (out,), lambda g: (g * exponent * np.power(ad, exponent - 1.0),))
    return out


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation (consistent forward/backward pair)."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def back(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return (g * d,)

    _record("gelu", (a,), (out,), back)
    return out


def clip_min(a: Tensor, lo: float) -> Tensor:
    out = Tensor(np.maximum(a.data, lo))
    mask = a.data > lo
    _record("clip_min", (a,), (out,), lambda g: (g * mask,))
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)
    _record("sigmoid", (a,), (out,), lambda g: (g * y * (1.0 - y),))
    return out


def tlog(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    ad = a.data
    _record("log", (a,), (out,), lambda g: (g / ad,))
    return out


def dropout(a: Tensor, p: float, rng=None) -> Tensor:
    """Inverted dropout. `rng` is a DropoutRng; None means inference (identity)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if rng is None or p == 0.0:
        return a
    keep = rng.mask(a.data.shape, p) / (1.0 - p)
    out = Tensor(a.data * keep)
    _record("dropout", (a,), (out,), lambda g: (g * keep,))
    return out


# ------------------------------------------------------------------ structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError.for_shapes("matmul", a.data.shape, b.data.shape)
    out = Tensor(np.matmul(a.data, b.data))
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    _record("matmul", (a, b), (out,), back)
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    # contiguous copy: reduction order downstream must not depend on strides
    out = Tensor(np.ascontiguousarray(np.transpose(a.data, axes)))
    inv = None if axes is None else tuple(np.argsort(axes))
    _record("transpose", (a,), (out,), lambda g: (np.ascontiguousarray(np.transpose(g, inv)),))
    return out


def swap_last(a: Tensor) -> Tensor:
    """Swap the two trailing axes (any number of leading batch axes)."""
    axes = list(range(a.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))
    orig = a.data.shape
    _record("reshape", (a,), (out,), lambda g: (g.reshape(orig),))
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    orig = a.data.shape
    _record("broadcast_to", (a,), (out,), lambda g: (_unbroadcast(g, orig),))
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    _record("concat", tuple(tensors), (out,), lambda g: tuple(np.split(g, splits, axis=axis)))
    return out


def split(a: Tensor, sizes, axis: int):
    sizes = list(sizes)
    if sum(sizes) != a.data.shape[axis]:
        raise DimensionError(
            f"split: sizes {sizes} do not sum to axis length {a.data.shape[axis]}"
        )
    pieces = np.split(a.data, np.cumsum(sizes)[:-1], axis=axis)
    outs = tuple(Tensor(p.copy()) for p in pieces)
    _record("split", (a,), outs, lambda *gs: (np.concatenate(gs, axis=axis),))
    return outs


# ----------------------------------------------------------------- reductions


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.data.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    _record("sum", (a,), (out,), back)
    return out


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    shape = a.data.shape
    count = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / count,)

    _record("mean", (a,), (out,), back)
    return out


def max_abs(a: Tensor, axis: int, keepdims=True) -> Tensor:
    """Max of |x| along an axis; gradient routes to the first argmax."""
    absd = np.abs(a.data)
    out = Tensor(absd.max(axis=axis, keepdims=keepdims))
    idx = np.expand_dims(absd.argmax(axis=axis), axis)
    onehot = np.zeros_like(a.data)
    np.put_along_axis(onehot, idx, 1.0, axis=axis)
    signed = onehot * np.sign(a.data)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * signed,)

    _record("max_abs", (a,), (out,), back)
    return out


# ----------------------------------------------------- softmax / norms / loss


def softmax(a: Tensor, axis: int) -> Tensor:
    if a.data.shape[axis] == 0:
        raise ValueError(f"softmax: empty axis {axis} for shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    _record("softmax", (a,), (out,), back)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis, then scale/shift by (gamma, beta)."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError.for_shapes("layer_norm", x.data.shape, gamma.data.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    gdat = gamma.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        dbeta = g.sum(axis=lead)
        dgamma = (g * xhat).sum(axis=lead)
        gx = g * gdat
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    _record("layer_norm", (x, gamma, beta), (out,), back)
    return out


def mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise DimensionError.for_shapes("mse", pred.data.shape, target.data.shape)
    diff = pred.data - target.data
    out = Tensor(np.mean(diff * diff))
    n = diff.size

    def back(g):
        base = g * 2.0 * diff / n
        return base, -base

    _record("mse", (pred, target), (out,), back)
    return out


def cross_entropy(target: Tensor, pred: Tensor, axis: int = 0) -> Tensor:
    """Mean over remaining axes of -sum(target * log(pred)) along `axis`.

    Both arguments are probability distributions along `axis`.
    """
    if pred.data.shape != target.data.shape:
        raise DimensionError.for_shapes("cross_entropy", target.data.shape, pred.data.shape)
    logp = np.log(np.maximum(pred.data, 1e-300))
    per = -(target.data * logp).sum(axis=axis)
    out = Tensor(np.mean(per))
    n_slices = max(per.size, 1)
    td, pd = target.data, pred.data

    def back(g):
        gp = -g * td / np.maximum(pd, 1e-300) / n_slices
        gt = -g * logp / n_slices
        return gt, gp

    _record("cross_entropy", (target, pred), (out,), back)
    return out


# ------------------------------------------------------------------- FFT pair


def rfft(x: Tensor) -> tuple[Tensor, Tensor]:
    """Real DFT along the last axis; returns (re, im) tensors of n/2+1 bins."""
    re_d, im_d = _fft.rfft_real(x.data)
    re, im = Tensor(re_d), Tensor(im_d)
    n = x.data.shape[-1]

    def back(gre, gim):
        a = gre.copy()
        b = gim.copy()
        a[..., 1:-1] *= 0.5
        b[..., 1:-1] *= 0.5
        b[..., 0] = 0.0
        b[..., -1] = 0.0
        return (n * _fft.irfft_real(a, b, n),)

    _record("rfft", (x,), (re, im), back)
    return re, im


def irfft(re: Tensor, im: Tensor, n: int) -> Tensor:
    """Inverse real DFT along the last axis, producing length-n signals."""
    out = Tensor(_fft.irfft_real(re.data, im.data, n))

    def back(g):
        r, i = _fft.rfft_real(g)
        gre = r / n
        gre[..., 1:-1] *= 2.0
        gim = i / n
        gim[..., 1:-1] *= 2.0
        gim[..., 0] = 0.0
        gim[..., -1] = 0.0
        return gre, gim

    _record("irfft", (re, im), (out,), back)
    return out


# ------------------------------------------------------------------- dispatch

_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "transpose": transpose,
    "reshape": reshape,
    "concat": concat,
    "split": split,
    "layer_norm": layer_norm,
    "gelu": gelu,
    "softmax": softmax,
    "dropout": dropout,
    "mse": mse,
    "cross_entropy": cross_entropy,
    "mean": tmean,
    "sum": tsum,
    "powc": powc,
    "clip_min": clip_min,
    "max_abs": max_abs,
    "sigmoid": sigmoid,
    "log": tlog,
    "broadcast_to": broadcast_to,
    "rfft": rfft,
    "irfft": irfft,
}


def forward_op(kind: str, *inputs, **kwargs):
    """Dispatch an operation by name; see `_OPS` for the supported kinds."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind: {kind!r}") from None
    return fn(*inputs, **kwargs)


class DropoutRng:
    """Counter-based Philox stream: mask i of a run depends only on (seed, i)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.calls = 0

    def mask(self, shape, p: float) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=self.seed, counter=[self.calls, 0, 0, 0]))
        self.calls += 1
        return (gen.random(shape) >= p).astype(np.float64)
