"""Joint phase-noise and time-varying channel estimation for OFDM links.

Basis-expansion (BEM) estimators for oscillator phase noise and
doubly-selective channels, a link-level simulator to exercise them, and a
Monte-Carlo harness with CSV/plot output.
"""
__version__ = "0.1.0"
