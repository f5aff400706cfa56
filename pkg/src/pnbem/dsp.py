"""Linear operators of the OFDM signal model.

Conventions used throughout the package:

- DFT is unitary: forward ``X[k] = K**-0.5 * sum_n x[n] exp(-2j pi n k / K)``,
  inverse is its adjoint.
- ``cyclic_shift_apply(x, l)[n] = x[(n - l) mod K]`` (delay by ``l``).
- Stacked frequency-domain vectors are symbol-major: element ``m*K + k``.

Operators are applied implicitly (index arithmetic / FFT).  Each type also
offers a ``matrix()`` method so tests can build the dense counterpart.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when an input has the wrong length or shape."""


class ConfigError(ValueError):
    """Raised for inconsistent configuration values."""


@dataclass(frozen=True)
class DftOperator:
    """Unitary DFT of size ``K``."""

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError(f"DFT size must be positive, got {self.size}")

    def forward(self, x):
        return dft_apply(x, "forward", self.size)

    def inverse(self, x):
        return dft_apply(x, "inverse", self.size)

    def matrix(self) -> np.ndarray:
        k = np.arange(self.size)
        return np.exp(-2j * np.pi * np.outer(k, k) / self.size) / np.sqrt(self.size)


@dataclass(frozen=True)
class CyclicShift:
    """Circular delay permutation ``T**power`` of size ``K``."""

    size: int
    power: int = 0

    def apply(self, x):
        return cyclic_shift_apply(x, self.power)

    def compose(self, other: "CyclicShift") -> "CyclicShift":
        if other.size != self.size:
            raise DimensionError("cannot compose shifts of different sizes")
        return CyclicShift(self.size, (self.power + other.power) % self.size)

    def matrix(self) -> np.ndarray:
        return np.roll(np.eye(self.size), self.power % self.size, axis=0)


@dataclass(frozen=True)
class SelectionOperator:
    """Row selector picking ``indices`` out of a length ``source_length`` vector."""

    indices: np.ndarray
    source_length: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise DimensionError("selection indices must be one-dimensional")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.source_length):
            raise DimensionError("selection index out of bounds")
        if np.any(np.diff(idx) <= 0):
            raise DimensionError("selection indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return int(self.indices.size)

    def apply(self, v):
        v = np.asarray(v)
        if v.shape[0] != self.source_length:
            raise DimensionError(
                f"expected leading length {self.source_length}, got {v.shape[0]}")
        return v[self.indices]

    def adjoint(self, u):
        u = np.asarray(u)
        out = np.zeros((self.source_length,) + u.shape[1:], dtype=u.dtype)
        out[self.indices] = u
        return out

    def matrix(self) -> np.ndarray:
        A = np.zeros((len(self), self.source_length))
        A[np.arange(len(self)), self.indices] = 1.0
        return A


def _check_length(x, K):
    if K is not None and x.shape[-1] != K:
        raise DimensionError(f"expected length {K}, got {x.shape[-1]}")


def dft_apply(x, direction="forward", K=None):
    """Unitary DFT along the last axis.

    Parameters
    ----------
    x : array_like
        Complex samples; the transform acts on the last axis.
    direction : {"forward", "inverse"}
    K : int, optional
        Expected transform length, checked against ``x``.
    """
    x = np.asarray(x, dtype=complex)
    _check_length(x, K)
    if direction == "forward":
        return np.fft.fft(x, norm="ortho")
    if direction == "inverse":
        return np.fft.ifft(x, norm="ortho")
    raise ValueError(f"unknown direction {direction!r}")


def cp_insert(x, K_cp):
    """Prepend the last ``K_cp`` samples of each length-K row."""
    x = np.asarray(x)
    K = x.shape[-1]
    if not 0 <= K_cp < K:
        raise ConfigError(f"need 0 <= K_cp < K, got K_cp={K_cp}, K={K}")
    if K_cp == 0:
        return x.copy()
    return np.concatenate([x[..., K - K_cp:], x], axis=-1)


def cp_remove(y, K_cp, K=None):
    """Drop the first ``K_cp`` samples of each row."""
    y = np.asarray(y)
    if K is not None and y.shape[-1] != K + K_cp:
        raise DimensionError(f"expected length {K + K_cp}, got {y.shape[-1]}")
    if K_cp >= y.shape[-1]:
        raise DimensionError("cyclic prefix longer than the input")
    return y[..., K_cp:]


def cyclic_shift_apply(x, l):
    """Delay ``x`` circularly by ``l`` samples along the last axis."""
    x = np.asarray(x)
    return np.roll(x, int(l) % x.shape[-1], axis=-1)
