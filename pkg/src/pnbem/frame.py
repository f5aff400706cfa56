"""Transmit side: numerology, QAM, pilot geometry, grid assembly, OFDM modulation."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .dsp import ConfigError, DimensionError, SelectionOperator, cp_insert, dft_apply

K_RB = 12


class FeasibilityError(ValueError):
    """Pilot pattern provides fewer observations than there are unknowns."""

    def __init__(self, observations, unknowns, what="estimator"):
        self.observations = observations
        self.unknowns = unknowns
        self.deficit = unknowns - observations
        super().__init__(
            f"infeasible pilot pattern for {what}: {observations} observations "
            f"< {unknowns} unknowns (deficit {self.deficit})")


class Role(IntEnum):
    DATA = 0
    DMRS = 1
    PTRS = 2
    GUARD = 3


@dataclass(frozen=True)
class FrameConfig:
    """OFDM numerology. Defaults follow the 30 GHz, 8.64 MHz setup."""

    K: int = 144
    K_cp: int = 36
    M: int = 28
    delta_f: float = 60e3
    f_c: float = 30e9

    def __post_init__(self):
        if not (self.K > self.K_cp > 0):
            raise ConfigError(f"need K > K_cp > 0, got K={self.K}, K_cp={self.K_cp}")
        if self.M < 1:
            raise ConfigError(f"need M >= 1, got {self.M}")
        if self.delta_f <= 0:
            raise ConfigError("subcarrier spacing must be positive")

    @property
    def dt(self) -> float:
        """Sample duration in seconds."""
        return 1.0 / (self.K * self.delta_f)

    @property
    def symbol_len(self) -> int:
        return self.K + self.K_cp

    @property
    def N(self) -> int:
        return self.M * (self.K + self.K_cp)

    @property
    def bandwidth(self) -> float:
        return self.K * self.delta_f

    def symbol_start(self, m: int) -> int:
        return m * self.symbol_len

    def postcp_indices(self) -> np.ndarray:
        """(M, K) array of sample indices of the post-CP part of each symbol."""
        starts = np.arange(self.M) * self.symbol_len + self.K_cp
        return starts[:, None] + np.arange(self.K)[None, :]


def default_dmrs_symbols(M: int, count: int) -> tuple[int, ...]:
    """``count`` DMRS symbol indices spread evenly over ``M`` symbols."""
    if count <= 0:
        return ()
    if count > M:
        raise ConfigError(f"cannot place {count} DMRS symbols in {M} symbols")
    return tuple(int(i) for i in np.unique(np.round(np.linspace(0, M - 1, count))))


@dataclass(frozen=True)
class PilotParams:
    """User-facing pilot pattern parameters (strides and DMRS placement)."""

    dmrs_symbols: tuple[int, ...] = ()
    dmrs_comb: int = 2
    ptrs_df: int = 3 * K_RB
    ptrs_dt: int = 1
    guard_width: int = 1
    ptrs: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dmrs_symbols", tuple(int(m) for m in self.dmrs_symbols))
        if self.dmrs_comb < 1 or self.ptrs_df < 1 or self.ptrs_dt < 1:
            raise ConfigError("pilot strides must be positive")
        if self.guard_width < 0:
            raise ConfigError("guard width must be non-negative")


@dataclass(frozen=True)
class PilotPattern:
    """Resolved role map. ``roles`` is K x M (subcarrier, symbol)."""

    params: PilotParams
    roles: np.ndarray

    @property
    def observed(self) -> np.ndarray:
        return self.roles != Role.DATA

    @property
    def pilots(self) -> np.ndarray:
        return (self.roles == Role.DMRS) | (self.roles == Role.PTRS)

    @property
    def data(self) -> np.ndarray:
        return self.roles == Role.DATA

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    def histogram(self) -> dict[str, int]:
        return {r.name.lower(): int((self.roles == r).sum()) for r in Role}


def build_pilot_pattern(cfg: FrameConfig, params: PilotParams, unknowns: int | None = None,
                        what: str = "estimator") -> PilotPattern:
    """Resolve pilot and guard positions on the K x M grid.

    PTRS sits on subcarriers ``0, df, 2df, ...`` of symbols ``0, dt, 2dt, ...``
    that are not DMRS symbols, with ``guard_width`` nulled neighbours on each
    side (cyclic in frequency). DMRS fills every ``dmrs_comb``-th subcarrier of
    its symbols; the remaining REs of a DMRS symbol carry data.

    If ``unknowns`` is given, raise :class:`FeasibilityError` when the number of
    observed REs (pilots plus guards) is smaller.
    """
    K, M = cfg.K, cfg.M
    for m in params.dmrs_symbols:
        if not 0 <= m < M:
            raise ConfigError(f"DMRS symbol index {m} outside [0, {M})")
    roles = np.full((K, M), Role.DATA, dtype=np.int8)
    dmrs = set(params.dmrs_symbols)
    for m in sorted(dmrs):
        roles[::params.dmrs_comb, m] = Role.DMRS
    if params.ptrs:
        sc = np.arange(0, K, params.ptrs_df)
        for m in range(0, M, params.ptrs_dt):
            if m in dmrs:
                continue
            roles[sc, m] = Role.PTRS
            for g in range(1, params.guard_width + 1):
                for k in np.concatenate([(sc - g) % K, (sc + g) % K]):
                    if roles[k, m] == Role.DATA:
                        roles[k, m] = Role.GUARD
    pattern = PilotPattern(params, roles)
    if unknowns is not None and pattern.n_observed < unknowns:
        raise FeasibilityError(pattern.n_observed, unknowns, what)
    return pattern


# --- QAM -----------------------------------------------------------------

def _qam_axis(order: int):
    if order not in (4, 16, 64, 256):
        raise ValueError(f"unsupported QAM order {order}")
    bits_per_axis = int(np.log2(order)) // 2
    L = 2 ** bits_per_axis
    scale = np.sqrt(2.0 * (L * L - 1) / 3.0)
    return bits_per_axis, L, scale


def _bits_to_int(bits):
    w = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ w


def map_qam(bits, order: int = 64) -> np.ndarray:
    """Gray-mapped square QAM with unit average energy.

    The first half of each symbol's bits selects the in-phase level, the second
    half the quadrature level; bit value 0 in the leading position maps to the
    positive half-plane.
    """
    bpa, L, scale = _qam_axis(order)
    bits = np.asarray(bits, dtype=np.int64).ravel()
    bps = 2 * bpa
    if bits.size % bps:
        raise ValueError(f"bit count {bits.size} not divisible by {bps}")
    b = bits.reshape(-1, 2, bpa)
    g = _bits_to_int(b)
    # gray -> binary index
    idx = g.copy()
    shift = g >> 1
    while np.any(shift):
        idx ^= shift
        shift >>= 1
    amp = (L - 1 - 2 * idx).astype(float)
    return (amp[:, 0] + 1j * amp[:, 1]) / scale


def demap_qam(symbols, order: int = 64) -> np.ndarray:
    """Hard nearest-point decisions back to bits (inverse of :func:`map_qam`)."""
    bpa, L, scale = _qam_axis(order)
    s = np.asarray(symbols, dtype=complex).ravel() * scale
    out = []
    for axis in (s.real, s.imag):
        idx = np.clip(np.round((L - 1 - axis) / 2), 0, L - 1).astype(np.int64)
        g = idx ^ (idx >> 1)
        out.append((g[:, None] >> np.arange(bpa - 1, -1, -1)) & 1)
    return np.concatenate(out, axis=1).ravel()


def qam_slice(symbols, order: int = 64) -> np.ndarray:
    return map_qam(demap_qam(symbols, order), order)


# --- grid ----------------------------------------------------------------

@dataclass
class ResourceGrid:
    """Frequency-domain frame: ``values`` and ``roles`` are K x M."""

    values: np.ndarray
    roles: np.ndarray
    payload_bits: np.ndarray
    order: int = 64
    pilot_seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    @property
    def data_mask(self):
        return self.roles == Role.DATA

    @property
    def pilot_mask(self):
        return (self.roles == Role.DMRS) | (self.roles == Role.PTRS)

    def pilot_only(self) -> np.ndarray:
        """Copy of ``values`` with everything except pilots set to zero."""
        return np.where(self.pilot_mask, self.values, 0)

    def data_capacity_bits(self) -> int:
        return int(self.data_mask.sum()) * int(np.log2(self.order))


def data_capacity_bits(pattern: PilotPattern, order: int) -> int:
    return int(pattern.data.sum()) * int(np.log2(order))


def pilot_values(n: int, seed) -> np.ndarray:
    """Seeded QPSK pilot sequence, reproducible at the receiver."""
    rng = np.random.default_rng(seed)
    return map_qam(rng.integers(0, 2, size=2 * n), 4)


def assemble_frame(cfg: FrameConfig, pattern: PilotPattern, payload_bits, pilot_seed,
                   order: int = 64) -> ResourceGrid:
    roles = pattern.roles
    if roles.shape != (cfg.K, cfg.M):
        raise DimensionError(f"pattern shape {roles.shape} != {(cfg.K, cfg.M)}")
    bits = np.asarray(payload_bits, dtype=np.int8).ravel()
    cap = data_capacity_bits(pattern, order)
    if bits.size != cap:
        raise ValueError(f"payload has {bits.size} bits, data capacity is {cap}")
    values = np.zeros((cfg.K, cfg.M), dtype=complex)
    # symbol-major fill order (transpose) so flattening matches stacked vectors
    vt = values.T
    rt = roles.T
    pil = (rt == Role.DMRS) | (rt == Role.PTRS)
    vt[pil] = pilot_values(int(pil.sum()), pilot_seed)
    if bits.size:
        vt[rt == Role.DATA] = map_qam(bits, order)
    return ResourceGrid(values, roles.copy(), bits, order, pilot_seed)


def ofdm_modulate(grid: ResourceGrid | np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Inverse DFT and CP insertion per symbol, concatenated in symbol order."""
    values = grid.values if isinstance(grid, ResourceGrid) else np.asarray(grid)
    if values.shape != (cfg.K, cfg.M):
        raise DimensionError(f"grid shape {values.shape} != {(cfg.K, cfg.M)}")
    td = dft_apply(values.T, "inverse")
    return cp_insert(td, cfg.K_cp).ravel()


def pilot_observation_selector(pattern: PilotPattern, cfg: FrameConfig) -> SelectionOperator:
    """Selector of pilot and guard REs in the symbol-major length-MK vector."""
    idx = np.flatnonzero(pattern.observed.T.ravel())
    return SelectionOperator(idx, cfg.M * cfg.K)
