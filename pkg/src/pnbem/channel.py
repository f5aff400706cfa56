"""Impairment simulation: time-varying taps, phase noise, AWGN, FD reception."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dsp import ConfigError, DimensionError, cp_remove, dft_apply
from .frame import FrameConfig

SPEED_OF_LIGHT = 299_792_458.0
N_SINUSOIDS = 32

# 3GPP TR 38.901 TDL-C: normalized delays and powers (dB)
_TDL_C = np.array([
    [0.0, -4.4], [0.2099, -1.2], [0.2219, -3.5], [0.2329, -5.2],
    [0.2176, -2.5], [0.6366, 0.0], [0.6448, -2.2], [0.6560, -3.9],
    [0.6584, -7.4], [0.7935, -7.1], [0.8213, -10.7], [0.9336, -11.1],
    [1.2285, -5.1], [1.3083, -6.8], [2.1704, -8.7], [2.7105, -13.2],
    [4.2589, -13.9], [4.6003, -13.9], [5.4902, -15.8], [5.6077, -17.1],
    [6.3065, -16.0], [6.6374, -15.7], [7.0427, -21.6], [8.6523, -22.8],
])


class DopplerStressWarning(UserWarning):
    """Maximum Doppler is at least half the subcarrier spacing."""


@dataclass(frozen=True)
class TdlProfile:
    """Sample-spaced tapped delay line with a common maximum Doppler."""

    delays: tuple[int, ...]
    powers: tuple[float, ...]
    doppler_hz: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=int)
        p = np.asarray(self.powers, dtype=float)
        if d.size == 0 or d.size != p.size:
            raise ConfigError("delays and powers must be non-empty and equal length")
        if d[0] < 0 or np.any(np.diff(d) <= 0):
            raise ConfigError("delays must be non-negative and strictly increasing")
        if np.any(p <= 0):
            raise ConfigError("path powers must be positive")
        if self.doppler_hz < 0:
            raise ConfigError("Doppler must be non-negative")
        object.__setattr__(self, "delays", tuple(int(x) for x in d))
        object.__setattr__(self, "powers", tuple(float(x) for x in p / p.sum()))

    @property
    def P(self) -> int:
        return len(self.delays)

    def with_doppler(self, doppler_hz: float) -> "TdlProfile":
        return TdlProfile(self.delays, self.powers, doppler_hz)

    def check(self, cfg: FrameConfig):
        if self.delays[-1] > cfg.K_cp:
            raise ConfigError(
                f"largest delay {self.delays[-1]} exceeds the CP length {cfg.K_cp}")


def doppler_hz(speed_kmh: float, f_c: float) -> float:
    """Maximum Doppler shift ``v f_c / c``."""
    return speed_kmh / 3.6 * f_c / SPEED_OF_LIGHT


def tdl_c(cfg: FrameConfig, delay_spread: float = 100e-9, doppler: float = 0.0) -> TdlProfile:
    """TDL-C scaled to ``delay_spread``, rounded onto the sample grid.

    Taps landing on the same sample index are power-combined.
    """
    delays = np.rint(_TDL_C[:, 0] * delay_spread / cfg.dt).astype(int)
    powers = 10.0 ** (_TDL_C[:, 1] / 10.0)
    uniq = np.unique(delays)
    merged = np.array([powers[delays == d].sum() for d in uniq])
    return TdlProfile(tuple(uniq), tuple(merged), doppler)


def profile_by_name(name: str, cfg: FrameConfig, doppler: float = 0.0) -> TdlProfile:
    key = name.upper().replace("-", "").replace("_", "")
    if key.startswith("TDLC"):
        ds = key[4:] or "100"
        try:
            return tdl_c(cfg, float(ds) * 1e-9, doppler)
        except ValueError:
            pass
    raise ConfigError(f"unknown channel profile {name!r}")


@dataclass
class ChannelRealization:
    taps: np.ndarray  # (P, N)
    delays: tuple[int, ...]

    @property
    def P(self) -> int:
        return self.taps.shape[0]


@dataclass
class PhaseNoiseRealization:
    theta: np.ndarray  # (N,)

    @property
    def samples(self) -> np.ndarray:
        return np.exp(1j * self.theta)


def gen_channel(profile: TdlProfile, cfg: FrameConfig, seed, n_sinusoids: int = N_SINUSOIDS
                ) -> ChannelRealization:
    """Jakes sum-of-sinusoids taps, one independent process per path.

    Each path is ``sqrt(power / S) * sum_i exp(j(2 pi f_d cos(a_i) t + phi_i))``
    with uniform random arrival angles ``a_i`` and phases ``phi_i``.
    """
    profile.check(cfg)
    f_d = profile.doppler_hz
    if f_d >= cfg.delta_f / 2:
        warnings.warn(f"Doppler {f_d:.1f} Hz >= half the subcarrier spacing",
                      DopplerStressWarning, stacklevel=2)
    rng = np.random.default_rng(seed)
    P, N = profile.P, cfg.N
    t = np.arange(N) * cfg.dt
    taps = np.empty((P, N), dtype=complex)
    for p, power in enumerate(profile.powers):
        aoa = rng.uniform(-np.pi, np.pi, n_sinusoids)
        phi = rng.uniform(-np.pi, np.pi, n_sinusoids)
        if f_d == 0.0:
            taps[p] = np.exp(1j * phi).sum()
        else:
            taps[p] = np.exp(1j * (2 * np.pi * f_d * np.outer(np.cos(aoa), t)
                                   + phi[:, None])).sum(axis=0)
        taps[p] *= np.sqrt(power / n_sinusoids)
    return ChannelRealization(taps, profile.delays)


def pn_innovation_variance(B_3dB: float, cfg: FrameConfig) -> float:
    return 4.0 * np.pi * B_3dB * cfg.dt


def gen_phase_noise(B_3dB: float, cfg: FrameConfig, seed, ar_coeff: float = 1.0
                    ) -> PhaseNoiseRealization:
    """AR(1) phase walk ``theta[n+1] = a theta[n] + w[n]`` with ``theta[0] = 0``.

    ``a = 1`` (default) is the Wiener model of a free-running oscillator.
    """
    if B_3dB < 0:
        raise ConfigError("PN 3 dB bandwidth must be non-negative")
    N = cfg.N
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, np.sqrt(pn_innovation_variance(B_3dB, cfg)), N - 1)
    if ar_coeff == 1.0:
        theta = np.concatenate([[0.0], np.cumsum(w)])
    else:
        theta = np.zeros(N)
        for n in range(N - 1):
            theta[n + 1] = ar_coeff * theta[n] + w[n]
    return PhaseNoiseRealization(theta)


def apply_channel_pn(x, ch: ChannelRealization, pn: PhaseNoiseRealization | np.ndarray | None = None
                     ) -> np.ndarray:
    """``r[n] = p[n] * sum_p h[p, n] x[n - l_p]`` with zero history before ``n = 0``."""
    x = np.asarray(x, dtype=complex)
    N = x.size
    if ch.taps.shape[1] != N:
        raise DimensionError(f"taps cover {ch.taps.shape[1]} samples, signal has {N}")
    r = np.zeros(N, dtype=complex)
    for p, l in enumerate(ch.delays):
        r[l:] += ch.taps[p, l:] * x[:N - l]
    if pn is not None:
        p_n = pn.samples if isinstance(pn, PhaseNoiseRealization) else np.asarray(pn)
        if p_n.size != N:
            raise DimensionError("phase-noise length mismatch")
        r *= p_n
    return r


def noise_variance(snr_db: float, signal_power_ref: float = 1.0) -> float:
    return signal_power_ref / 10.0 ** (snr_db / 10.0)


def add_awgn(r, snr_db: float, signal_power_ref: float = 1.0, seed=None):
    """Add circular complex Gaussian noise; returns ``(noisy, sigma2)``."""
    r = np.asarray(r, dtype=complex)
    sigma2 = noise_variance(snr_db, signal_power_ref)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape)
    return r + np.sqrt(sigma2 / 2.0) * w, sigma2


def receive_fd(r, cfg: FrameConfig) -> np.ndarray:
    """CP removal and forward DFT per symbol; returns the stacked length-MK vector."""
    r = np.asarray(r)
    if r.size != cfg.N:
        raise DimensionError(f"expected {cfg.N} samples, got {r.size}")
    seg = cp_remove(r.reshape(cfg.M, cfg.symbol_len), cfg.K_cp)
    return dft_apply(seg, "forward").ravel()
