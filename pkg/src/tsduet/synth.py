"""Synthetic signal generators (the eight base patterns plus sensitivity
families), desk-scale pre-training / search corpora, and the embedding
distortion metrics used to probe view disentanglement."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .preprocess import MaskPlan, Series, substitute_token

BASE_PATTERNS = (
    "sin",
    "modcos",
    "square-modcos",
    "gaussian-spike",
    "impulse",
    "randwalk",
    "sincos",
    "tanhmix",
)
EXTRA_PATTERNS = ("combo", "scaled-sine", "trend", "shape")
DEFAULT_LEN = 512


@dataclass
class GeneratorSpec:
    pattern: str
    freq: float = 1.0
    phase: float = 0.0
    noise: float = 0.0
    scale: float = 1.0
    length: int = DEFAULT_LEN
    seed: int = 0
    # combo extras
    op: str = "add"  # "add" | "mul"
    p1: str = "sin"
    p2: str = "sincos"
    # scaled-sine / shape extras
    exponent: float = 1.0
    shape: str = "F1"
    trend_power: float = 1.0

    def __post_init__(self):
        if self.pattern not in BASE_PATTERNS + EXTRA_PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.pattern == "combo":
            if self.op not in ("add", "mul"):
                raise ValueError(f"combo op must be 'add' or 'mul', got {self.op!r}")
            for p in (self.p1, self.p2):
                if p not in BASE_PATTERNS:
                    raise ValueError(f"combo component {p!r} is not a base pattern")
        if self.pattern == "shape" and self.shape not in ("F1", "F2", "F3"):
            raise ValueError(f"shape must be F1, F2 or F3, got {self.shape!r}")


def _base_values(pattern: str, f: float, phase: float, S: int, rng) -> np.ndarray:
    t = np.arange(S)
    b = 2.0 * np.pi * t * f / S + phase
    if pattern == "sin":
        return np.sin(b)
    if pattern == "modcos":
        return np.cos(b) * np.sin(b / 2.0)
    if pattern == "square-modcos":
        return np.sign(np.sin(b)) * np.abs(np.cos(2.0 * b))
    if pattern == "gaussian-spike":
        c = t * f / S + phase / (2.0 * np.pi)
        return np.exp(-40.0 * (c - f / 2.0) ** 2)
    if pattern == "impulse":
        period = max(int(round(10 * f)), 1)
        x = (np.mod(t, period) == 0).astype(np.float64)
        return np.roll(x, int(round(phase / (2.0 * np.pi) * S)))
    if pattern == "randwalk":
        return f + np.cumsum(rng.normal(size=S))
    if pattern == "sincos":
        return np.sin(b) * np.cos(2.0 * b)
    if pattern == "tanhmix":
        return np.tanh(np.sin(3.0 * b)) + 0.2 * rng.normal(size=S)
    raise ValueError(f"unknown base pattern {pattern!r}")


def _shape_fn(name: str, b: np.ndarray) -> np.ndarray:
    s = np.sin(b)
    if name == "F1":
        return s
    if name == "F2":
        return 2.0 * (s + 1.0) ** 4 - 1.0
    return 2.0 * (s + 1.0) ** 0.25 - 1.0  # F3


def generate(spec: GeneratorSpec) -> Series:
    """Deterministic univariate series for a generator spec."""
    rng = np.random.default_rng(spec.seed)
    S = spec.length
    t = np.arange(S)
    b = 2.0 * np.pi * t * spec.freq / S + spec.phase
    if spec.pattern in BASE_PATTERNS:
        x = _base_values(spec.pattern, spec.freq, spec.phase, S, rng)
    elif spec.pattern == "combo":
        a = _base_values(spec.p1, spec.freq, spec.phase, S, rng)
        c = _base_values(spec.p2, spec.freq, spec.phase, S, rng)
        x = a + c if spec.op == "add" else a * c
    elif spec.pattern == "scaled-sine":
        # sign-preserving power of a unit sine, kept in [-1, 1]
        x = 2.0 * ((np.sin(b) + 1.0) / 2.0) ** spec.exponent - 1.0
    elif spec.pattern == "trend":
        u = t / S
        x = u**spec.trend_power + np.sin(3.0 * np.pi * u * spec.freq + spec.phase)
    else:  # shape
        x = _shape_fn(spec.shape, b)
    x = spec.scale * x
    if spec.noise > 0:
        x = x + spec.noise * rng.normal(size=S)
    return Series(x[:, None])


def combo_catalog():
    """All 56 pattern pairings: 8C2 unordered pairs x {add, mul}."""
    out = []
    for p1, p2 in itertools.combinations(BASE_PATTERNS, 2):
        for op in ("add", "mul"):
            out.append((op, p1, p2))
    return out


def build_search_corpus(seed: int = 0, length: int = DEFAULT_LEN):
    """The 56 x 10 x 3 = 1,680 sample search benchmark corpus.

    Families are the 56 pattern combinations; fine labels add the frequency.
    Each (combo, frequency) yields three lightly perturbed variants (1%
    scaling, 1% noise).
    """
    root = np.random.SeedSequence(seed)
    samples, families, fines = [], [], []
    children = iter(root.spawn(56 * 10 * 3 + 8))
    for op, p1, p2 in combo_catalog():
        family = f"{op}:{p1}+{p2}"
        for f in range(1, 11):
            for _ in range(3):
                child = next(children)
                sub = np.random.default_rng(child)
                spec = GeneratorSpec(
                    pattern="combo",
                    op=op,
                    p1=p1,
                    p2=p2,
                    freq=f,
                    phase=0.0,
                    length=length,
                    seed=int(sub.integers(0, 2**31)),
                    scale=float(sub.uniform(0.99, 1.01)),
                )
                x = generate(spec).values
                # pattern products can collapse to a constant at some
                # lengths; floor the noise scale so variants stay distinct
                sigma = 0.01 * (x.std() if x.std() > 0 else 1.0)
                x = x + sigma * sub.normal(size=x.shape)
                samples.append(x)
                families.append(family)
                fines.append(f"{family}@f{f}")
    return samples, families, fines


def build_pretrain_corpus(n_windows: int, seed: int = 0, length: int = DEFAULT_LEN, future: int = 8):
    """Mixed-pattern univariate windows with `future` continuation points.

    Draws cycle through base patterns and combos with frequencies 1..10 and
    random phase/noise/scale; fully determined by (n_windows, seed).
    """
    if n_windows < 1:
        raise ValueError("n_windows must be >= 1")
    menu = list(BASE_PATTERNS) + [("combo",) + c for c in combo_catalog()]
    root = np.random.SeedSequence(seed)
    out = []
    for i, child in enumerate(root.spawn(n_windows)):
        sub = np.random.default_rng(child)
        entry = menu[i % len(menu)]
        kw = dict(
            freq=int(sub.integers(1, 11)),
            phase=float(sub.uniform(0, 2 * np.pi)),
            noise=float(sub.uniform(0.0, 0.1)),
            scale=float(sub.uniform(0.5, 2.0)),
            length=length + future,
            seed=int(sub.integers(0, 2**31)),
        )
        if isinstance(entry, tuple):
            spec = GeneratorSpec(pattern="combo", op=entry[1], p1=entry[2], p2=entry[3], **kw)
        else:
            spec = GeneratorSpec(pattern=entry, **kw)
        w = generate(spec).values[:, 0]
        out.append((w[:length], w[length:]))
    return out


# --------------------------------------------------------- sensitivity suites


def phase_suite(freq: float = 5.0, phases=None, length: int = DEFAULT_LEN,
                noise: float = 0.0, shape: str = "F2", seed: int = 0):
    """Samples of one non-linearly scaled sine at controlled phases."""
    phases = np.linspace(0.0, np.pi, 7) if phases is None else np.asarray(phases)
    samples = []
    for i, ph in enumerate(phases):
        spec = GeneratorSpec(pattern="shape", shape=shape, freq=freq, phase=float(ph),
                             noise=noise, length=length, seed=seed + i)
        samples.append(generate(spec).values)
    return samples, list(map(float, phases))


def noise_suite(etas, freqs=(3.0, 5.0, 7.0), per_freq: int = 8,
                length: int = DEFAULT_LEN, seed: int = 0):
    """dict eta -> aligned samples: index i is the same base signal across
    noise levels."""
    rng = np.random.default_rng(seed)
    bases = []
    for f in freqs:
        for _ in range(per_freq):
            ph = float(rng.uniform(0, 2 * np.pi))
            bases.append((f, ph))
    out = {}
    for eta in etas:
        group = []
        for i, (f, ph) in enumerate(bases):
            spec = GeneratorSpec(pattern="sin", freq=f, phase=ph, noise=float(eta),
                                 length=length, seed=seed * 7919 + i)
            group.append(generate(spec).values)
        out[float(eta)] = group
    return out


# ------------------------------------------------------------------ embedders


def model_embedder(params, view: str = "register"):
    """Embedding callable (x, mask=None) -> vector, backed by a checkpoint.

    A mask marks points as missing: they are replaced by the mask token
    (per in-patch offset) before the forward pass.
    """
    from .search import embed_view

    pl = params.cfg.patch_len

    def embed(x, mask=None):
        xs = x.values if isinstance(x, Series) else np.asarray(x, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[:, None]
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            S, C = xs.shape
            plan = MaskPlan(mask, mask.reshape(S // pl, pl, C).all(axis=1), float(mask.mean()))
            xs = substitute_token(xs, plan, params["mask_token"]).data
        return embed_view(xs, params, view)

    return embed


@dataclass
class DistortionResult:
    value: float
    pairs_used: int = 0
    skipped: int = 0


def _as_matrix(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(-1)


def distortion_mask(embed, samples, mask, n_pairs: int = 2000,
                    rng: np.random.Generator | None = None) -> DistortionResult:
    """Mask-induced distortion: how much pairwise embedding distances move
    when the same mask hides part of every input.

    `mask` is a boolean (S, C) array or a missing fraction in [0, 1].
    """
    if len(samples) < 2:
        raise ValueError("distortion_mask needs at least two samples")
    rng = rng or np.random.default_rng(0)
    first = samples[0].values if isinstance(samples[0], Series) else np.asarray(samples[0])
    if first.ndim == 1:
        first = first[:, None]
    if np.isscalar(mask):
        m = rng.random(first.shape) < float(mask)
    else:
        m = np.asarray(mask, dtype=bool)
    clean = [_as_matrix(embed(s, None)) for s in samples]
    masked = [_as_matrix(embed(s, m)) for s in samples]
    n = len(samples)
    total, used, skipped = 0.0, 0, 0
    for _ in range(n_pairs):
        i, j = rng.choice(n, size=2, replace=False)
        denom = np.linalg.norm(clean[i] - clean[j])
        if denom == 0.0:
            skipped += 1
            continue
        num = np.linalg.norm(masked[i] - masked[j])
        total += abs(1.0 - num / denom)
        used += 1
    if skipped:
        warnings.warn(f"distortion_mask: skipped {skipped} coincident-embedding pairs")
    if used == 0:
        raise ValueError("distortion_mask: all sampled pairs had coincident embeddings")
    return DistortionResult(total / used, used, skipped)


def distortion_noise(embed, clean_samples, noisy_samples) -> DistortionResult:
    """Noise-induced distortion: relative embedding-norm drift between
    index-aligned clean/noisy pairs."""
    if len(clean_samples) != len(noisy_samples):
        raise ValueError("clean/noisy sample lists must align by index")
    total, used, skipped = 0.0, 0, 0
    for c, nz in zip(clean_samples, noisy_samples):
        base = np.linalg.norm(_as_matrix(embed(c, None)))
        if base == 0.0:
            skipped += 1
            continue
        total += abs(np.linalg.norm(_as_matrix(embed(nz, None))) / base - 1.0)
        used += 1
    if skipped:
        warnings.warn(f"distortion_noise: skipped {skipped} zero-norm embeddings")
    if used == 0:
        raise ValueError("distortion_noise: no usable samples")
    return DistortionResult(total / used, used, skipped)


def distortion_phase(embed, samples, phases, phi: float, tol: float = 1e-9,
                     max_pairs: int = 2000) -> DistortionResult:
    """Phase-induced distortion over pairs whose phase difference is phi."""
    phases = np.asarray(phases, dtype=np.float64)
    if phases.size != len(samples):
        raise ValueError("phases must align with samples")
    vecs = [_as_matrix(embed(s, None)) for s in samples]
    total, used, skipped = 0.0, 0, 0
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            if abs(abs(phases[i] - phases[j]) - phi) > tol:
                continue
            ni, nj = np.linalg.norm(vecs[i]), np.linalg.norm(vecs[j])
            if min(ni, nj) == 0.0:
                skipped += 1
                continue
            total += np.linalg.norm(vecs[i] - vecs[j]) / min(ni, nj)
            used += 1
            if used >= max_pairs:
                break
        if used >= max_pairs:
            break
    if skipped:
        warnings.warn(f"distortion_phase: skipped {skipped} zero-norm pairs")
    if used == 0:
        raise ValueError(f"distortion_phase: no pairs with phase difference {phi}")
    return DistortionResult(total / used, used, skipped)
