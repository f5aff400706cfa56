"""Receiver back end: PN compensation, FD channel matrices, LMMSE, scoring."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg

from .dsp import ConfigError, DftOperator, DimensionError
from .frame import FrameConfig, ResourceGrid, demap_qam, qam_slice

PN_FLOOR = 1e-6


class PnClampWarning(UserWarning):
    pass


def compensate_pn(r, p_hat, floor: float = PN_FLOOR) -> np.ndarray:
    """Divide out the estimated PN sample-wise; tiny estimates are clamped."""
    r = np.asarray(r, dtype=complex)
    p_hat = np.asarray(p_hat, dtype=complex)
    if r.shape != p_hat.shape:
        raise DimensionError(f"signal {r.shape} and PN {p_hat.shape} differ")
    mag = np.abs(p_hat)
    small = mag < floor
    if np.any(small):
        warnings.warn(f"{int(small.sum())} PN samples clamped to modulus {floor}",
                      PnClampWarning, stacklevel=2)
        phase = np.where(mag > 0, p_hat / np.where(mag > 0, mag, 1), 1)
        p_hat = np.where(small, floor * phase, p_hat)
    return r / p_hat


@lru_cache(maxsize=8)
def _dft_matrix(K: int) -> np.ndarray:
    return DftOperator(K).matrix()


def td_channel_postcp(h_hat, delays, cfg: FrameConfig, m: int) -> np.ndarray:
    """``sum_p diag(h_p[post-CP of symbol m]) T^{l_p}`` as a dense K x K matrix."""
    h_hat = np.asarray(h_hat)
    if max(delays) > cfg.K_cp:
        raise ConfigError(f"path delay {max(delays)} exceeds CP length {cfg.K_cp}")
    K = cfg.K
    start = cfg.symbol_start(m) + cfg.K_cp
    rows = np.arange(K)
    H = np.zeros((K, K), dtype=complex)
    for p, l in enumerate(delays):
        H[rows, (rows - l) % K] += h_hat[p, start:start + K]
    return H


def fd_channel_matrix(h_hat, delays, cfg: FrameConfig, m: int) -> np.ndarray:
    """Frequency-domain channel ``F H_td F^H`` of symbol ``m`` (post-CP taps)."""
    F = _dft_matrix(cfg.K)
    return F @ td_channel_postcp(h_hat, delays, cfg, m) @ F.conj().T


def lmmse_detect(y, H, sigma2: float) -> np.ndarray:
    """``(H^H H + sigma2 I)^{-1} H^H y`` for unit-energy symbols."""
    H = np.asarray(H)
    G = H.conj().T @ H
    G[np.diag_indices_from(G)] += sigma2
    s = linalg.solve(G, H.conj().T @ np.asarray(y), assume_a="her")
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("non-finite LMMSE output")
    return s


def detect_frame(y_stacked, grid: ResourceGrid, h_hat, delays, cfg: FrameConfig,
                 sigma2: float) -> np.ndarray:
    """Per-symbol LMMSE over data REs after cancelling the known pilots.

    Returns a K x M grid of soft estimates (non-data REs hold the known values).
    """
    Y = np.asarray(y_stacked).reshape(cfg.M, cfg.K)
    out = grid.values.copy()
    data = grid.data_mask
    for m in range(cfg.M):
        d = data[:, m]
        if not d.any():
            continue
        H = fd_channel_matrix(h_hat, delays, cfg, m)
        resid = Y[m] - H[:, ~d] @ grid.values[~d, m]
        out[d, m] = lmmse_detect(resid, H[:, d], sigma2)
    return out


def align_scalar(est, ref) -> complex:
    """Least-squares scalar ``c`` minimizing ``||c est - ref||^2``."""
    den = np.vdot(est, est)
    return np.vdot(est, ref) / den if den != 0 else 1.0 + 0j


@dataclass
class FrameMetrics:
    pn_mse: float
    ch_nmse: float
    ser: float
    ber: float
    block_error: bool
    n_symbols: int = 0
    n_bits: int = 0


def pn_mse(p_hat, p_true, cfg: FrameConfig) -> float:
    """Gauge-aligned PN MSE over post-CP samples."""
    idx = cfg.postcp_indices().ravel()
    e, r = np.asarray(p_hat)[idx], np.asarray(p_true)[idx]
    c = align_scalar(e, r)
    return float(np.mean(np.abs(c * e - r) ** 2))


def demap_and_score(s_hat, grid: ResourceGrid, cfg: FrameConfig, p_true=None, p_hat=None,
                    h_true=None, h_hat=None) -> FrameMetrics:
    """Hard decisions on data REs plus estimation errors.

    ``s_hat`` is a K x M soft grid. PN error is gauge-aligned; the channel
    error is computed after undoing the same scalar (``h_hat / c``). Missing
    estimates give NaN.
    """
    s_hat = np.asarray(s_hat)
    if s_hat.shape != grid.values.shape:
        raise DimensionError(f"soft grid {s_hat.shape} != {grid.values.shape}")
    d = grid.data_mask.T  # symbol-major order, as the payload was mapped
    soft = s_hat.T[d]
    truth = grid.values.T[d]
    ser = float(np.mean(~np.isclose(qam_slice(soft, grid.order), truth))) if soft.size else 0.0
    bits = demap_qam(soft, grid.order) if soft.size else np.zeros(0, dtype=int)
    nerr = int(np.count_nonzero(bits != grid.payload_bits))
    ber = nerr / bits.size if bits.size else 0.0

    idx = cfg.postcp_indices().ravel()
    pm = np.nan
    c = 1.0 + 0j
    if p_true is not None and p_hat is not None:
        e, r = np.asarray(p_hat)[idx], np.asarray(p_true)[idx]
        c = align_scalar(e, r)
        pm = float(np.mean(np.abs(c * e - r) ** 2))
    cn = np.nan
    if h_true is not None and h_hat is not None:
        ht = np.asarray(h_true)[:, idx]
        he = np.asarray(h_hat)[:, idx] / c
        cn = float(np.linalg.norm(he - ht) ** 2 / np.linalg.norm(ht) ** 2)
    return FrameMetrics(pm, cn, ser, ber, nerr > 0, int(soft.size), int(bits.size))
