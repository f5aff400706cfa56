"""Pilot-based BEM estimators of time-varying taps and phase noise.

All estimators observe ``y_o``: the received frequency-domain samples at
pilot and guard REs, symbol-major. Only pilot values enter the model; data
leakage onto the observed REs is treated as noise.

For symbol ``m`` and path ``p`` the post-CP model is

    y_m = F sum_p diag(p_m * h_{p,m}) T^{l_p} F^H s_m

so with ``u_{p,m} = T^{l_p} F^H s_m^o`` each unknown trajectory ``g`` (restricted
to post-CP samples, ``g = B alpha``) enters through ``F diag(u_{p,m} * other) B``.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bem as bemmod
from .bem import BemBasis, RankDeficiencyWarning, fit, lstsq, reconstruct, restrict_to_postcp
from .dsp import ConfigError, SelectionOperator, dft_apply
from .frame import (
    FeasibilityError, FrameConfig, PilotPattern, ResourceGrid, pilot_observation_selector,
)

COND_FLAG = 1e8


class EstimationError(RuntimeError):
    pass


@dataclass
class PilotContext:
    """Per-frame quantities shared by every sensing matrix."""

    cfg: FrameConfig
    delays: tuple[int, ...]
    selector: SelectionOperator
    shifted: np.ndarray  # (M, P, K): T^{l_p} F^H s_m^o
    y_o: np.ndarray | None = None

    @classmethod
    def build(cls, grid: ResourceGrid, pattern: PilotPattern, cfg: FrameConfig, delays, y=None):
        delays = tuple(int(l) for l in delays)
        if max(delays) > cfg.K_cp:
            raise ConfigError(f"path delay {max(delays)} exceeds CP length {cfg.K_cp}")
        sel = pilot_observation_selector(pattern, cfg)
        if len(sel) == 0:
            raise FeasibilityError(0, 1, "pilot observations")
        u = dft_apply(grid.pilot_only().T, "inverse")  # (M, K)
        shifted = np.stack([np.roll(u, l, axis=-1) for l in delays], axis=1)
        y_o = None if y is None else sel.apply(np.asarray(y))
        return cls(cfg, delays, sel, shifted, y_o)

    @property
    def P(self) -> int:
        return len(self.delays)

    @property
    def n_obs(self) -> int:
        return len(self.selector)

    def compose(self, factors: np.ndarray, basis_post: np.ndarray) -> np.ndarray:
        """Rows of ``F diag(v) B_m`` at observed REs.

        ``factors`` is (M, P, K) giving one column block per path, or (M, K)
        for a single block. ``basis_post`` is the (M*K, C) post-CP basis.
        """
        cfg = self.cfg
        Bm = basis_post.reshape(cfg.M, cfg.K, -1)
        if factors.ndim == 2:
            blk = dft_apply(np.swapaxes(factors[:, :, None] * Bm, 1, 2), "forward")  # (M, C, K)
            full = np.swapaxes(blk, 1, 2).reshape(cfg.M * cfg.K, -1)
        else:
            prod = factors[:, :, :, None] * Bm[:, None, :, :]  # (M, P, K, C)
            blk = dft_apply(np.swapaxes(prod, 2, 3), "forward")  # (M, P, C, K)
            full = blk.transpose(0, 3, 1, 2).reshape(cfg.M * cfg.K, -1)
        return full[self.selector.indices]

    def model(self, products_post: np.ndarray) -> np.ndarray:
        """Noise-free observations for per-path products ``p*h`` given as (P, M, K)."""
        v = (np.swapaxes(products_post, 0, 1) * self.shifted).sum(axis=1)
        return dft_apply(v, "forward").ravel()[self.selector.indices]


@dataclass
class SensingProblem:
    S_eff: np.ndarray
    y_o: np.ndarray | None
    basis: BemBasis | None = None
    n_paths: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.S_eff.shape

    @property
    def cond(self) -> float:
        s = np.linalg.svd(self.S_eff, compute_uv=False)
        return float(s[0] / s[-1]) if s[-1] > 0 else np.inf

    @property
    def ill_conditioned(self) -> bool:
        return self.cond > COND_FLAG


def _post(x: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Post-CP samples of a (..., N) trajectory as (..., M, K)."""
    return x[..., cfg.postcp_indices()]


def _check_feasible(ctx: PilotContext, unknowns: int, what: str):
    if ctx.n_obs < unknowns:
        raise FeasibilityError(ctx.n_obs, unknowns, what)


def build_sensing_single(grid, pattern, cfg, delays, B_chpn: BemBasis, y=None) -> SensingProblem:
    """Sensing matrix of the single product BEM: columns ``[alpha_1; ...; alpha_P]``."""
    ctx = PilotContext.build(grid, pattern, cfg, delays, y)
    return _single_problem(ctx, B_chpn)


def _single_problem(ctx: PilotContext, B: BemBasis) -> SensingProblem:
    _check_feasible(ctx, ctx.P * B.n_coeffs, "single-BEM")
    S = ctx.compose(ctx.shifted, restrict_to_postcp(B, ctx.cfg))
    return SensingProblem(S, ctx.y_o, B, ctx.P, {"step": "single", "kind": B.kind})


def build_sensing_pn_step(grid, pattern, cfg, delays, B_pn: BemBasis, taps, y=None
                          ) -> SensingProblem:
    """Sensing matrix for the shared PN coefficients given channel taps (P, N)."""
    ctx = PilotContext.build(grid, pattern, cfg, delays, y)
    return _pn_problem(ctx, restrict_to_postcp(B_pn, cfg), _post(np.asarray(taps), cfg), B_pn)


def _pn_problem(ctx, Bpn_post, h_post, B_pn=None) -> SensingProblem:
    _check_feasible(ctx, Bpn_post.shape[1], "PN step")
    v = (np.swapaxes(h_post, 0, 1) * ctx.shifted).sum(axis=1)  # (M, K)
    return SensingProblem(ctx.compose(v, Bpn_post), ctx.y_o, B_pn, 1, {"step": "pn"})


def build_sensing_ch_step(grid, pattern, cfg, delays, B_ch: BemBasis, pn, y=None
                          ) -> SensingProblem:
    """Sensing matrix for per-path channel coefficients given PN samples (N,)."""
    ctx = PilotContext.build(grid, pattern, cfg, delays, y)
    return _ch_problem(ctx, restrict_to_postcp(B_ch, cfg), _post(np.asarray(pn), cfg), B_ch)


def _ch_problem(ctx, Bch_post, p_post, B_ch=None) -> SensingProblem:
    _check_feasible(ctx, ctx.P * Bch_post.shape[1], "channel step")
    v = ctx.shifted * p_post[:, None, :]
    return SensingProblem(ctx.compose(v, Bch_post), ctx.y_o, B_ch, ctx.P, {"step": "ch"})


def solve(problem: SensingProblem, rcond: float = 1e-10):
    """Minimum-norm LS solution of a sensing problem; returns ``(alpha, rank)``."""
    if problem.y_o is None:
        raise EstimationError("sensing problem has no observations")
    alpha, rank = lstsq(problem.S_eff, problem.y_o, rcond)
    if not np.all(np.isfinite(alpha)):
        raise EstimationError(f"non-finite solution for {problem.meta}, shape {problem.shape}")
    return alpha, rank


@dataclass
class SingleBemEstimate:
    alpha: np.ndarray  # (P, Q+1)
    products: np.ndarray  # (P, N): estimated p * h_p
    rank: int
    rank_deficient: bool


def ml_single_bem(problem: SensingProblem, rcond: float = 1e-10) -> SingleBemEstimate:
    alpha, rank = solve(problem, rcond)
    alpha = alpha.reshape(problem.n_paths, -1)
    prod = reconstruct(problem.basis, alpha) if problem.basis is not None else None
    return SingleBemEstimate(alpha, prod, rank, rank < problem.S_eff.shape[1])


@dataclass
class EstimatorConfig:
    Q_ch: int = 4
    Q_pn: int = 56
    t_max: int = 10
    eps: float | None = None  # None: 1e-6 * ||alpha_ch^(1)||^2
    ch_kind: str = bemmod.DPSS
    pn_kind: str = bemmod.DPSS
    W_ch: float | None = None
    W_pn: float | None = None
    unit_modulus: bool = False
    rcond: float = 1e-10

    def __post_init__(self):
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.eps is not None and self.eps <= 0:
            raise ConfigError("eps must be positive")

    def bases(self, cfg: FrameConfig) -> tuple[BemBasis, BemBasis]:
        return (bemmod.make_basis(self.ch_kind, self.Q_ch, cfg, self.W_ch),
                bemmod.make_basis(self.pn_kind, self.Q_pn, cfg, self.W_pn))


@dataclass
class JointEstimate:
    alpha_ch: np.ndarray  # (P, Q_ch+1)
    alpha_pn: np.ndarray  # (Q_pn+1,)
    h_hat: np.ndarray  # (P, N)
    p_hat: np.ndarray  # (N,)
    likelihood_trace: list[float]
    iterations_used: int
    converged: bool
    rank_deficient: bool = False
    wall_ms: float = 0.0


def gauge_scalar(p_hat: np.ndarray) -> complex:
    """Scalar ``c`` so that ``c * p_hat`` has unit mean modulus and zero-phase mean."""
    mean = p_hat.mean()
    mod = np.abs(p_hat).mean()
    if mod == 0 or mean == 0:
        return 1.0 + 0j
    return np.exp(-1j * np.angle(mean)) / mod


def alternating_estimate(grid, pattern, cfg, delays, est_cfg: EstimatorConfig, y,
                         B_ch: BemBasis | None = None, B_pn: BemBasis | None = None,
                         init_taps=None) -> JointEstimate:
    """Alternating LS over PN and channel BEM coefficients.

    Starts from unit taps (or ``init_taps``) projected onto the channel
    basis, solves the PN step then the
    channel step per iteration, and stops after ``t_max`` iterations or once
    the squared change of the channel coefficients drops below ``eps``. After
    each PN step the scalar gauge between PN and channel is fixed so that the
    PN trajectory has unit mean modulus and zero mean phase; the likelihood is
    unaffected. The likelihood after every half-step is recorded.
    """
    t0 = time.perf_counter()
    if B_ch is None or B_pn is None:
        b_ch, b_pn = est_cfg.bases(cfg)
        B_ch = B_ch or b_ch
        B_pn = B_pn or b_pn
    ctx = PilotContext.build(grid, pattern, cfg, delays, y)
    _check_feasible(ctx, max(ctx.P * B_ch.n_coeffs, B_pn.n_coeffs), "alternating estimator")
    Bch_post = restrict_to_postcp(B_ch, cfg)
    Bpn_post = restrict_to_postcp(B_pn, cfg)

    # the initial taps are projected onto the channel basis: a starting point
    # outside the span would let the first channel step raise the likelihood
    h0 = np.ones((ctx.P, cfg.N), dtype=complex) if init_taps is None else np.asarray(
        init_taps, dtype=complex)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        h_post = _post(reconstruct(B_ch, fit(B_ch, h0)), cfg)
    y_o = ctx.y_o
    trace: list[float] = []
    alpha_ch_prev = None
    alpha_ch = alpha_pn = None
    eps = est_cfg.eps
    converged = False
    deficient = False
    t = 0
    for t in range(1, est_cfg.t_max + 1):
        prob = _pn_problem(ctx, Bpn_post, h_post)
        alpha_pn, rank = solve(prob, est_cfg.rcond)
        deficient |= rank < prob.S_eff.shape[1]
        trace.append(float(np.linalg.norm(y_o - prob.S_eff @ alpha_pn) ** 2))

        c = gauge_scalar(reconstruct(B_pn, alpha_pn))
        alpha_pn = alpha_pn * c
        if alpha_ch_prev is not None:
            alpha_ch_prev = alpha_ch_prev / c

        p_post = (Bpn_post @ alpha_pn).reshape(cfg.M, cfg.K)
        prob = _ch_problem(ctx, Bch_post, p_post)
        a, rank = solve(prob, est_cfg.rcond)
        deficient |= rank < prob.S_eff.shape[1]
        trace.append(float(np.linalg.norm(y_o - prob.S_eff @ a) ** 2))
        alpha_ch = a.reshape(ctx.P, -1)
        h_post = (alpha_ch @ Bch_post.T).reshape(ctx.P, cfg.M, cfg.K)

        if eps is None:
            eps = 1e-6 * float(np.linalg.norm(alpha_ch) ** 2)
        if alpha_ch_prev is not None and np.linalg.norm(alpha_ch - alpha_ch_prev) ** 2 < eps:
            converged = True
            break
        alpha_ch_prev = alpha_ch

    p_hat = reconstruct(B_pn, alpha_pn)
    if est_cfg.unit_modulus:
        p_hat = np.exp(1j * np.angle(p_hat))
    return JointEstimate(alpha_ch, alpha_pn, reconstruct(B_ch, alpha_ch), p_hat, trace, t,
                         converged, deficient, 1e3 * (time.perf_counter() - t0))


def estimate_cpe(grid, pattern, cfg, delays, est_cfg: EstimatorConfig, y,
                 B_ch: BemBasis | None = None, init_taps=None) -> JointEstimate:
    """Alternating estimator with one PN coefficient per OFDM symbol."""
    if B_ch is None:
        B_ch = bemmod.make_basis(est_cfg.ch_kind, est_cfg.Q_ch, cfg, est_cfg.W_ch)
    return alternating_estimate(grid, pattern, cfg, delays, est_cfg, y, B_ch,
                                bemmod.gen_per_symbol_constant(cfg), init_taps)


def estimate_pn_known_channel(grid, pattern, cfg, delays, taps, B_pn: BemBasis, y,
                              rcond: float = 1e-10) -> JointEstimate:
    """One PN step with the channel taps given (no gauge freedom remains)."""
    t0 = time.perf_counter()
    prob = build_sensing_pn_step(grid, pattern, cfg, delays, B_pn, taps, y)
    alpha_pn, rank = solve(prob, rcond)
    L = float(np.linalg.norm(prob.y_o - prob.S_eff @ alpha_pn) ** 2)
    taps = np.asarray(taps)
    return JointEstimate(None, alpha_pn, taps, reconstruct(B_pn, alpha_pn), [L], 1, True,
                         rank < prob.S_eff.shape[1], 1e3 * (time.perf_counter() - t0))


def log_likelihood(grid, pattern, cfg, delays, alpha_pn, alpha_ch, B_pn: BemBasis,
                   B_ch: BemBasis, y) -> float:
    """Squared residual ``||y_o - z(alpha_pn, alpha_ch)||^2`` at observed REs."""
    ctx = PilotContext.build(grid, pattern, cfg, delays, y)
    p = _post(reconstruct(B_pn, np.asarray(alpha_pn)), cfg)
    h = _post(reconstruct(B_ch, np.asarray(alpha_ch).reshape(ctx.P, -1)), cfg)
    z = ctx.model(h * p[None])
    return float(np.linalg.norm(ctx.y_o - z) ** 2)
