"""Shared independent oracles for the test suite."""

import numpy as np


def naive_dft(x):
    """O(n^2) DFT straight from the definition: sum_t x_t e^{-2pi i k t / n}."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    t = np.arange(n)
    out_re = np.empty(x.shape[:-1] + (n // 2 + 1,))
    out_im = np.empty_like(out_re)
    for k in range(n // 2 + 1):
        ang = -2.0 * np.pi * k * t / n
        out_re[..., k] = (x * np.cos(ang)).sum(axis=-1)
        out_im[..., k] = (x * np.sin(ang)).sum(axis=-1)
    return out_re, out_im


def matmul_triple_loop(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def mixed_wave_corpus(n, S, F, seed=0):
    """Sine/square/rectified-sine windows with futures, for toy pre-training."""
    rng = np.random.default_rng(seed)
    out = []
    t = np.arange(S + F)
    for i in range(n):
        f = rng.integers(1, 6)
        ph = rng.uniform(0, 2 * np.pi)
        base = np.sin(2 * np.pi * f * t / S + ph)
        kind = i % 3
        w = base if kind == 0 else (np.sign(base) if kind == 1 else np.abs(base))
        w = rng.uniform(0.5, 2.0) * w + 0.02 * rng.normal(size=S + F)
        out.append((w[:S], w[S:]))
    return out


def sine_square_dataset(n_per_class, S0=96, C=2, seed=0, freq=3):
    """Two-class toy set: smooth sines vs square waves at one frequency."""
    rng = np.random.default_rng(seed)
    X, y = [], []
    t = np.arange(S0)
    for label in (0, 1):
        for _ in range(n_per_class):
            ph = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.8, 1.2)
            base = np.sin(2 * np.pi * freq * t / S0 + ph)
            wave = amp * (base if label == 0 else np.sign(base))
            X.append(np.stack([wave + 0.05 * rng.normal(size=S0) for _ in range(C)], axis=1))
            y.append(label)
    X, y = np.array(X), np.array(y)
    order = rng.permutation(len(y))
    return X[order], y[order]


def central_diff(f, x, h=1e-6):
    """Gradient of scalar f at array x by central differences, all coordinates."""
    x = np.asarray(x, dtype=np.float64).copy()
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g
