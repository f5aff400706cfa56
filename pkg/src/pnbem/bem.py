"""Basis expansion models over the N samples of a frame."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dsp import ConfigError, DimensionError
from .frame import FeasibilityError, FrameConfig

DPSS = "dpss"
CE = "ce"
PER_SYMBOL = "per_symbol"

ORDER_MARGIN = 2
# Fraction of Lorentzian PN power beyond c * B_3dB is about 2 / (pi c);
# c = 100 leaves roughly -22 dB unmodelled.
PN_TAIL_FACTOR = 100.0


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BemBasis:
    matrix: np.ndarray  # (N, Q+1)
    kind: str
    W: float | None = None
    orthonormal: bool = True

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.matrix.shape[1]

    @property
    def Q(self) -> int:
        return self.matrix.shape[1] - 1


def gen_ce_bem(N: int, Q: int) -> BemBasis:
    """Complex-exponential BEM, entry ``(n, q) = exp(j 2 pi (q - Q/2) n / N)``."""
    if Q < 0 or N < 1:
        raise ConfigError("need N >= 1 and Q >= 0")
    n = np.arange(N)[:, None]
    q = np.arange(Q + 1)[None, :]
    B = np.exp(2j * np.pi * (q - Q / 2) * n / N)
    return BemBasis(B, CE, orthonormal=False)


def dpss_tridiagonal(N: int, W: float):
    """Diagonal and off-diagonal of the tridiagonal matrix commuting with the
    prolate kernel of half-bandwidth ``W``."""
    n = np.arange(N)
    diag = ((N - 1 - 2 * n) / 2.0) ** 2 * np.cos(2 * np.pi * W)
    off = n[1:] * (N - n[1:]) / 2.0
    return diag, off


def gen_dpss(N: int, Q: int, W: float) -> BemBasis:
    """Leading ``Q+1`` Slepian sequences of length ``N`` and half-bandwidth ``W``.

    Columns are unit-norm, ordered by decreasing energy concentration, with the
    sign fixed so each column has a positive sum (or positive first lobe for
    odd sequences).
    """
    if not 0 < W < 0.5:
        raise ConfigError(f"DPSS half-bandwidth must be in (0, 1/2), got {W}")
    if not 0 <= Q < N:
        raise ConfigError(f"need 0 <= Q < N, got Q={Q}, N={N}")
    if Q + 1 > 2 * N * W + 1 + 4:
        warnings.warn(f"{Q + 1} DPSS beyond the Shannon number {2 * N * W:.1f} "
                      "are poorly concentrated", stacklevel=2)
    d, e = dpss_tridiagonal(N, W)
    _, v = linalg.eigh_tridiagonal(d, e, select="i", select_range=(N - Q - 1, N - 1))
    v = v[:, ::-1]
    # re-orthonormalize: inverse iteration on clustered eigenvalues can drift
    q, r = np.linalg.qr(v)
    v = q * np.sign(np.diag(r))
    for i in range(v.shape[1]):
        s = v[:, i].sum() if i % 2 == 0 else v[: N // 2, i].sum()
        if s < 0:
            v[:, i] = -v[:, i]
    return BemBasis(v.astype(complex), DPSS, W=W)


def prolate_kernel(N: int, W: float) -> np.ndarray:
    """Dense ``sin(2 pi W (m-n)) / (pi (m-n))`` kernel, diagonal ``2W``."""
    d = np.subtract.outer(np.arange(N), np.arange(N)).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        C = np.sin(2 * np.pi * W * d) / (np.pi * d)
    C[d == 0] = 2 * W
    return C


def dpss_concentration(B: BemBasis) -> np.ndarray:
    """Energy concentrations ``v^T C v`` of the columns (dense; small N only)."""
    C = prolate_kernel(B.N, B.W)
    V = B.matrix.real
    return np.einsum("ni,nm,mi->i", V, C, V)


def gen_per_symbol_constant(cfg: FrameConfig) -> BemBasis:
    """One unit-norm indicator column per OFDM symbol (CP included)."""
    L = cfg.symbol_len
    B = np.zeros((cfg.N, cfg.M), dtype=complex)
    for m in range(cfg.M):
        B[m * L:(m + 1) * L, m] = 1.0 / np.sqrt(L)
    return BemBasis(B, PER_SYMBOL)


def lstsq(A, b, rcond: float = 1e-10):
    """Minimum-norm least squares via column-pivoted QR.

    Returns ``(x, rank)``.
    """
    A = np.asarray(A)
    x, _, rank, _ = linalg.lstsq(A, b, cond=rcond, lapack_driver="gelsy")
    return x, rank


def fit(B: BemBasis, samples) -> np.ndarray:
    """Least-squares coefficients of ``samples`` (last axis length N)."""
    samples = np.asarray(samples, dtype=complex)
    if samples.shape[-1] != B.N:
        raise DimensionError(f"basis has {B.N} rows, samples have {samples.shape[-1]}")
    if B.orthonormal:
        return samples @ B.matrix.conj()
    x, rank = lstsq(B.matrix, samples.T)
    if rank < B.n_coeffs:
        warnings.warn("rank-deficient basis; minimum-norm fit", RankDeficiencyWarning,
                      stacklevel=2)
    return x.T


def reconstruct(B: BemBasis, coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    if coeffs.shape[-1] != B.n_coeffs:
        raise DimensionError(f"basis has {B.n_coeffs} columns, got {coeffs.shape[-1]} coeffs")
    return coeffs @ B.matrix.T


def restrict_to_postcp(B: BemBasis | np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Stack post-CP rows of each symbol: ``(M*K, Q+1)``, symbol-major."""
    mat = B.matrix if isinstance(B, BemBasis) else np.asarray(B)
    if mat.shape[0] != cfg.N:
        raise DimensionError(f"basis has {mat.shape[0]} rows, frame has {cfg.N} samples")
    return mat[cfg.postcp_indices().ravel()]


def order_for_bandwidth(f_max: float, cfg: FrameConfig, margin: int = ORDER_MARGIN) -> int:
    return 2 * math.ceil(f_max * cfg.N * cfg.dt) + margin


def dpss_halfbandwidth(f_max: float, Q: int, cfg: FrameConfig) -> float:
    """Normalized half-bandwidth for an order-Q DPSS basis spanning ``f_max``.

    ``W = f_max dt``, so the basis concentrates on the band the process
    actually occupies. It is capped where the Shannon number ``2NW`` reaches
    ``Q+1`` (a wider band than the basis can resolve only spreads the leading
    sequences over unused spectrum) and floored at ``2NW = 1`` so a static
    process still gets a well-defined basis.
    """
    lo = 0.5 / cfg.N
    hi = max((Q + 1) / (2.0 * cfg.N), lo)
    return min(max(f_max * cfg.dt, lo), hi, 0.499)


@dataclass(frozen=True)
class Orders:
    Q_ch: int
    Q_pn: int
    Q_chpn: int
    W_ch: float
    W_pn: float
    W_chpn: float


def select_orders(f_d: float, B_3dB: float, cfg: FrameConfig, c_pn: float = PN_TAIL_FACTOR,
                  margin: int = ORDER_MARGIN, max_unknowns: int | None = None,
                  n_paths: int = 1, max_pn_coeffs: int | None = None) -> Orders:
    """Model orders spanning the Doppler and PN bandwidths.

    ``Q = 2 ceil(f_max N dt) + margin`` with ``f_max = f_d`` for the channel,
    ``c_pn B_3dB`` for PN and their sum for the single product basis. When
    ``max_unknowns`` (observations available) is given, orders are clamped so
    each estimator stays determined; a channel order that cannot fit even at
    ``Q = 0`` raises :class:`FeasibilityError`. ``max_pn_coeffs`` further caps
    the PN basis size (e.g. at the number of OFDM symbols carrying pilots,
    which bounds the time resolution of the PN observations).
    """
    if f_d < 0 or B_3dB < 0:
        raise ConfigError("rates must be non-negative")
    f_pn = c_pn * B_3dB
    Q_ch = order_for_bandwidth(f_d, cfg, margin)
    Q_pn = order_for_bandwidth(f_pn, cfg, margin)
    Q_chpn = order_for_bandwidth(f_d + f_pn, cfg, margin)
    if max_unknowns is not None:
        if n_paths > max_unknowns:
            raise FeasibilityError(max_unknowns, n_paths, "channel BEM")
        Q_ch = min(Q_ch, max_unknowns // n_paths - 1)
        Q_chpn = min(Q_chpn, max_unknowns // n_paths - 1)
        Q_pn = min(Q_pn, max_unknowns - 1)
    if max_pn_coeffs is not None:
        Q_pn = max(0, min(Q_pn, max_pn_coeffs - 1))
    return Orders(Q_ch, Q_pn, Q_chpn,
                  dpss_halfbandwidth(f_d, Q_ch, cfg),
                  dpss_halfbandwidth(f_pn, Q_pn, cfg),
                  dpss_halfbandwidth(f_d + f_pn, Q_chpn, cfg))


def make_basis(kind: str, Q: int, cfg: FrameConfig, W: float | None = None) -> BemBasis:
    if kind == DPSS:
        return gen_dpss(cfg.N, Q, W if W is not None else (Q + 1) / (2.0 * cfg.N))
    if kind == CE:
        return gen_ce_bem(cfg.N, Q)
    if kind == PER_SYMBOL:
        return gen_per_symbol_constant(cfg)
    raise ConfigError(f"unknown basis kind {kind!r}")
