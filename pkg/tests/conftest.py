import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pnbem.channel import ChannelRealization, apply_channel_pn, receive_fd  # noqa: E402
from pnbem.frame import (  # noqa: E402
    FrameConfig, PilotParams, assemble_frame, build_pilot_pattern, data_capacity_bits,
    ofdm_modulate,
)

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return FrameConfig(K=16, K_cp=4, M=3)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def full_pilot_frame(cfg, seed=0, order=4, comb=1):
    """Every symbol a DMRS symbol (comb ``comb``), no PTRS."""
    pat = build_pilot_pattern(cfg, PilotParams(dmrs_symbols=tuple(range(cfg.M)),
                                               dmrs_comb=comb, ptrs=False))
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, data_capacity_bits(pat, order))
    return pat, assemble_frame(cfg, pat, bits, seed, order)


def random_frame(cfg, params, seed=0, order=16):
    pat = build_pilot_pattern(cfg, params)
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, data_capacity_bits(pat, order))
    return pat, assemble_frame(cfg, pat, bits, seed, order)


def transmit(grid, cfg, taps, delays, pn=None):
    """Noiseless stacked FD receive vector through taps/PN."""
    x = ofdm_modulate(grid, cfg)
    return receive_fd(apply_channel_pn(x, ChannelRealization(taps, tuple(delays)), pn), cfg)
