"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tape, Tensor, backward, no_grad


@dataclass
class CoordResult:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    worst: CoordResult
    h: float
    tol: float

    @property
    def max_rel_error(self) -> float:
        return self.worst.rel_error

    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self):
        lines = [f"gradcheck h={self.h:g} tol={self.tol:g} max_rel={self.max_rel_error:.3e}"]
        for name, err in sorted(self.per_param.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {name:<40s} {err:.3e}")
        return "\n".join(lines)


def finite_difference_check(
    model_closure,
    params: dict[str, Tensor],
    h: float = 1e-4,
    tol: float = 1e-4,
    samples_per_param: int | None = 8,
    rng: np.random.Generator | None = None,
    denom_floor: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of `model_closure` against central differences.

    `model_closure` takes no arguments, reads the current `.data` of the
    tensors in `params`, and returns a scalar loss Tensor. It must be
    deterministic (dropout off, fixed inputs); this is verified by a repeated
    base evaluation. For each parameter, up to `samples_per_param` coordinates
    are probed (all of them when None). The relative error per coordinate is
    |analytic - numeric| / max(|numeric|, denom_floor).
    """
    if rng is None:
        rng = np.random.default_rng(0)

    with Tape() as tape:
        loss = model_closure()
    base = float(loss.data)
    with no_grad():
        second = float(model_closure().data)
    if second != base:
        raise RuntimeError(
            f"finite_difference_check: closure is not deterministic ({base!r} != {second!r})"
        )
    grads = backward(tape, loss, params=params.values())

    def evaluate() -> float:
        with no_grad():
            return float(model_closure().data)

    per_param: dict[str, float] = {}
    worst = CoordResult("", (), 0.0, 0.0, -1.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if samples_per_param is None or n <= samples_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples_per_param, replace=False)
        analytic = grads.get(p).reshape(-1)
        worst_here = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = evaluate()
            flat[c] = orig - h
            f_minus = evaluate()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[c])
            rel = abs(a - numeric) / max(abs(numeric), denom_floor)
            if rel > worst_here:
                worst_here = rel
            if rel > worst.rel_error:
                idx = np.unravel_index(int(c), p.data.shape)
                worst = CoordResult(name, tuple(int(i) for i in idx), a, numeric, rel)
        per_param[name] = worst_here
    return GradCheckReport(per_param=per_param, worst=worst, h=h, tol=tol)
