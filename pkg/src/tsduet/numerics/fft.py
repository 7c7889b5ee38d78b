"""Real FFT / inverse FFT on float64 arrays (last axis).

Power-of-two lengths go through an iterative radix-2 Cooley-Tukey kernel;
other even lengths fall back to a dense DFT matrix product. Odd lengths are
rejected. The naive O(n^2) DFT used as the test oracle lives in the test
suite, independent of this module.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_radix2(x: np.ndarray, sign: float) -> np.ndarray:
    """Complex FFT along the last axis, n a power of two. sign=-1: forward."""
    n = x.shape[-1]
    a = np.ascontiguousarray(x, dtype=np.complex128)[..., _bit_reverse_indices(n)]
    m = 1
    while m < n:
        tw = np.exp(sign * 1j * np.pi * np.arange(m) / m)
        a = a.reshape(a.shape[:-1] + (n // (2 * m), 2 * m))
        even = a[..., :m]
        odd = a[..., m:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1)
        a = a.reshape(a.shape[:-2] + (n,))
        m *= 2
    return a


def _dft_dense(x: np.ndarray, sign: float) -> np.ndarray:
    n = x.shape[-1]
    k = np.arange(n)
    mat = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    return np.asarray(x, dtype=np.complex128) @ mat.T


def _fft_complex(x: np.ndarray, sign: float) -> np.ndarray:
    if _is_pow2(x.shape[-1]):
        return _fft_radix2(x, sign)
    return _dft_dense(x, sign)


def rfft_real(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """DFT of a real signal along the last axis.

    Returns (re, im) arrays of length n/2+1 matching
    sum_t x_t * exp(-2*pi*i*k*t/n). Requires even n.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n == 0 or n % 2 != 0:
        raise DimensionError(f"rfft_real: length must be even and positive, got {n}")
    spec = _fft_complex(x, -1.0)[..., : n // 2 + 1]
    return np.ascontiguousarray(spec.real), np.ascontiguousarray(spec.imag)


def irfft_real(re: np.ndarray, im: np.ndarray, n: int) -> np.ndarray:
    """Inverse of rfft_real for an even-length real signal of length n.

    The imaginary parts of the DC and Nyquist bins are ignored (they do not
    contribute to a real signal).
    """
    re = np.asarray(re, dtype=np.float64)
    im = np.asarray(im, dtype=np.float64)
    if re.shape != im.shape:
        raise DimensionError.for_shapes("irfft_real", re.shape, im.shape)
    if n % 2 != 0 or re.shape[-1] != n // 2 + 1:
        raise DimensionError(
            f"irfft_real: expected {n // 2 + 1} bins for even n={n}, got {re.shape[-1]}"
        )
    half = re + 1j * im
    full = np.concatenate([half, np.conj(half[..., -2:0:-1])], axis=-1)
    # inverse transform via the forward kernel: ifft(X) = conj(fft(conj(X))) / n
    out = np.conj(_fft_complex(np.conj(full), -1.0)) / n
    return np.ascontiguousarray(out.real)
