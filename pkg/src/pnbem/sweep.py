"""Monte-Carlo engine: seeded trials over the configured sweep grid."""
from __future__ import annotations

import itertools
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import bem
from .channel import (
    ChannelRealization, TdlProfile, add_awgn, apply_channel_pn, doppler_hz, gen_channel,
    gen_phase_noise, profile_by_name, receive_fd,
)
from .config import RunConfig
from .detector import align_scalar, compensate_pn, demap_and_score, detect_frame
from .estimators import (
    EstimatorConfig, alternating_estimate, build_sensing_single, estimate_pn_known_channel,
    ml_single_bem,
)
from .frame import (
    FeasibilityError, FrameConfig, PilotParams, PilotPattern, assemble_frame,
    build_pilot_pattern, data_capacity_bits, ofdm_modulate,
)

log = logging.getLogger(__name__)

RESULT_COLUMNS = (
    "estimator", "snr_db", "speed_kmh", "B_3dB", "d_f", "d_t", "trials", "pn_mse_mean",
    "ch_nmse_mean", "ser", "ber", "frame_error_rate", "mean_iterations", "mean_wall_ms",
    "status",
)
# columns that depend on scheduling/hardware rather than (config, seed)
NONDETERMINISTIC = ("mean_wall_ms",)


@dataclass(frozen=True)
class Point:
    index: int
    pilot_index: int
    speed_kmh: float
    B_3dB: float
    snr_db: float


@dataclass
class ResultRow:
    estimator: str
    snr_db: float
    speed_kmh: float
    B_3dB: float
    d_f: int
    d_t: int
    trials: int
    pn_mse_mean: float
    ch_nmse_mean: float
    ser: float
    ber: float
    frame_error_rate: float
    mean_iterations: float
    mean_wall_ms: float
    status: str = "ok"


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def select(self, **kw) -> list[ResultRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def records(self, deterministic_only: bool = False) -> list[dict]:
        out = []
        for r in self.rows:
            d = asdict(r)
            if deterministic_only:
                for k in NONDETERMINISTIC:
                    d.pop(k)
            out.append(d)
        return out


def sweep_points(cfg: RunConfig) -> list[Point]:
    grid = itertools.product(range(len(cfg.pilots)), cfg.speed_kmh, cfg.B_3dB, cfg.snr_db)
    return [Point(i, *g) for i, g in enumerate(grid)]


def resolve_profile(cfg: RunConfig, speed_kmh: float) -> TdlProfile:
    f_d = doppler_hz(speed_kmh, cfg.frame.f_c)
    if isinstance(cfg.channel, str):
        return profile_by_name(cfg.channel, cfg.frame, f_d)
    return TdlProfile(tuple(cfg.channel["delays"]), tuple(cfg.channel["powers"]), f_d)


def trial_seeds(base_seed: int, point_index: int, trial: int) -> dict:
    """Independent child seeds for every random stage of one trial."""
    ss = np.random.SeedSequence([base_seed, point_index, trial])
    names = ("bits", "pilots", "channel", "pn", "noise")
    return dict(zip(names, ss.spawn(len(names))))


@lru_cache(maxsize=32)
def _basis(kind: str, Q: int, W: float, frame: FrameConfig) -> bem.BemBasis:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return bem.make_basis(kind, Q, frame, W)


@lru_cache(maxsize=32)
def _pattern(frame: FrameConfig, params: PilotParams) -> PilotPattern:
    return build_pilot_pattern(frame, params)


def pilot_symbol_count(pattern: PilotPattern) -> int:
    return int(pattern.pilots.any(axis=0).sum())


@dataclass(frozen=True)
class ResolvedOrders:
    Q_ch: int
    Q_pn: int
    Q_chpn: int
    W_ch: float
    W_pn: float
    W_chpn: float


def resolve_orders(cfg: RunConfig, pattern: PilotPattern, profile: TdlProfile,
                   B_3dB: float) -> ResolvedOrders:
    o = cfg.orders
    auto = bem.select_orders(
        profile.doppler_hz, B_3dB, cfg.frame, c_pn=o.c_pn, margin=o.margin,
        max_unknowns=pattern.n_observed, n_paths=profile.P,
        max_pn_coeffs=o.pn_coeffs_per_pilot_symbol * pilot_symbol_count(pattern))
    Q_ch = auto.Q_ch if o.Q_ch is None else o.Q_ch
    Q_pn = auto.Q_pn if o.Q_pn is None else o.Q_pn
    Q_chpn = auto.Q_chpn if o.Q_chpn is None else o.Q_chpn
    f_d, f_pn = profile.doppler_hz, o.c_pn * B_3dB
    return ResolvedOrders(Q_ch, Q_pn, Q_chpn,
                          bem.dpss_halfbandwidth(f_d, Q_ch, cfg.frame),
                          bem.dpss_halfbandwidth(f_pn, Q_pn, cfg.frame),
                          bem.dpss_halfbandwidth(f_d + f_pn, Q_chpn, cfg.frame))


def unknowns_per_estimator(orders: ResolvedOrders, n_paths: int, M: int,
                           genie_channel: bool = False) -> dict[str, int]:
    """Largest per-solve unknown count of each estimator."""
    ch = 0 if genie_channel else n_paths * (orders.Q_ch + 1)
    return {
        "cpe": max(ch, M),
        "single_bem": n_paths * (orders.Q_chpn + 1),
        "separate_bem": max(ch, orders.Q_pn + 1),
        "genie": 0,
    }


@dataclass
class TrialOutcome:
    point: int
    trial: int
    estimator: str
    pn_mse: float
    ch_nmse: float
    ser: float
    ber: float
    block_error: bool
    iterations: int
    wall_ms: float
    feasible: bool = True


@dataclass
class TrialData:
    """Everything generated for one (point, trial): shared by all estimators."""

    frame: FrameConfig
    pattern: PilotPattern
    grid: object
    profile: TdlProfile
    channel: ChannelRealization
    pn: np.ndarray
    r: np.ndarray
    y: np.ndarray
    sigma2: float


def simulate_trial(cfg: RunConfig, point: Point, trial: int) -> TrialData:
    frame = cfg.frame
    seeds = trial_seeds(cfg.seed, point.index, trial)
    pattern = _pattern(frame, cfg.pilots[point.pilot_index])
    profile = resolve_profile(cfg, point.speed_kmh)
    bits = np.random.default_rng(seeds["bits"]).integers(
        0, 2, data_capacity_bits(pattern, cfg.qam_order), dtype=np.int8)
    pilot_seed = int(seeds["pilots"].generate_state(1)[0])
    grid = assemble_frame(frame, pattern, bits, pilot_seed, cfg.qam_order)
    x = ofdm_modulate(grid, frame)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ch = gen_channel(profile, frame, seeds["channel"])
    pn = gen_phase_noise(point.B_3dB, frame, seeds["pn"], cfg.ar_coeff).samples
    r, sigma2 = add_awgn(apply_channel_pn(x, ch, pn), point.snr_db,
                         float(np.mean(np.abs(x) ** 2)), seeds["noise"])
    return TrialData(frame, pattern, grid, profile, ch, pn, r, receive_fd(r, frame), sigma2)


def run_estimator(name: str, cfg: RunConfig, data: TrialData, orders: ResolvedOrders):
    """Returns ``(h_hat, p_hat, iterations, wall_ms, h_reference)``.

    ``p_hat`` is ``None`` for the single-BEM method, whose channel estimate is
    the PN-channel product; ``h_reference`` is the truth it is scored against.
    """
    frame, pattern, grid = data.frame, data.pattern, data.grid
    delays = data.profile.delays
    o = cfg.orders
    taps = data.channel.taps
    if name == "genie":
        return taps, data.pn, 0, 0.0, taps
    if name == "single_bem":
        t0 = time.perf_counter()
        B = _basis(o.chpn_kind, orders.Q_chpn, orders.W_chpn, frame)
        prob = build_sensing_single(grid, pattern, frame, delays, B, data.y)
        est = ml_single_bem(prob)
        return est.products, None, 1, 1e3 * (time.perf_counter() - t0), taps * data.pn
    if name == "cpe":
        B_pn = bem.gen_per_symbol_constant(frame)
    else:
        B_pn = _basis(o.pn_kind, orders.Q_pn, orders.W_pn, frame)
    if cfg.genie_channel:
        est = estimate_pn_known_channel(grid, pattern, frame, delays, taps, B_pn, data.y)
    else:
        B_ch = _basis(o.ch_kind, orders.Q_ch, orders.W_ch, frame)
        ecfg = EstimatorConfig(Q_ch=orders.Q_ch, Q_pn=B_pn.Q, t_max=o.t_max, eps=o.eps,
                               unit_modulus=o.unit_modulus)
        est = alternating_estimate(grid, pattern, frame, delays, ecfg, data.y, B_ch, B_pn)
    return est.h_hat, est.p_hat, est.iterations_used, est.wall_ms, taps


def run_trial(cfg: RunConfig, point: Point, trial: int) -> list[TrialOutcome]:
    data = simulate_trial(cfg, point, trial)
    orders = resolve_orders(cfg, data.pattern, data.profile, point.B_3dB)
    out = []
    for name in cfg.estimators:
        try:
            h_hat, p_hat, iters, wall, h_ref = run_estimator(name, cfg, data, orders)
        except FeasibilityError as exc:
            log.debug("point %d trial %d %s infeasible: %s", point.index, trial, name, exc)
            out.append(TrialOutcome(point.index, trial, name, *([math.nan] * 4), False, 0, 0.0,
                                    feasible=False))
            continue
        with warnings.catch_warnings():
            # poor estimates (e.g. an over-parameterized single BEM) legitimately
            # produce near-singular equalizers; they are scored, not reported
            warnings.simplefilter("ignore")
            rc = data.r if p_hat is None else compensate_pn(data.r, p_hat)
            soft = detect_frame(receive_fd(rc, data.frame), data.grid, h_hat,
                                data.profile.delays, data.frame, data.sigma2)
        m = demap_and_score(soft, data.grid, data.frame, data.pn, p_hat, h_ref, h_hat)
        out.append(TrialOutcome(point.index, trial, name, m.pn_mse, m.ch_nmse, m.ser, m.ber,
                                m.block_error, iters, wall))
    return out


def _run_chunk(args):
    cfg, point, trials = args
    res = []
    for t in trials:
        res.extend(run_trial(cfg, point, t))
    return res


def _mean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else math.nan


def aggregate(cfg: RunConfig, points: list[Point], outcomes: list[TrialOutcome]) -> ResultTable:
    outcomes = sorted(outcomes, key=lambda o: (o.point, o.trial, cfg.estimators.index(o.estimator)))
    by_key: dict[tuple[int, str], list[TrialOutcome]] = {}
    for o in outcomes:
        by_key.setdefault((o.point, o.estimator), []).append(o)
    table = ResultTable()
    for pt in points:
        pp = cfg.pilots[pt.pilot_index]
        for name in cfg.estimators:
            group = by_key.get((pt.index, name), [])
            ok = [o for o in group if o.feasible]
            common = dict(estimator=name, snr_db=pt.snr_db, speed_kmh=pt.speed_kmh,
                          B_3dB=pt.B_3dB, d_f=pp.ptrs_df, d_t=pp.ptrs_dt)
            if not ok:
                table.rows.append(ResultRow(**common, trials=0, pn_mse_mean=math.nan,
                                            ch_nmse_mean=math.nan, ser=math.nan, ber=math.nan,
                                            frame_error_rate=math.nan, mean_iterations=math.nan,
                                            mean_wall_ms=math.nan, status="infeasible"))
                continue
            table.rows.append(ResultRow(
                **common, trials=len(ok),
                pn_mse_mean=_mean(o.pn_mse for o in ok),
                ch_nmse_mean=_mean(o.ch_nmse for o in ok),
                ser=_mean(o.ser for o in ok),
                ber=_mean(o.ber for o in ok),
                frame_error_rate=_mean(float(o.block_error) for o in ok),
                mean_iterations=_mean(float(o.iterations) for o in ok),
                mean_wall_ms=_mean(o.wall_ms for o in ok),
            ))
    return table


def run_sweep(cfg: RunConfig, parallel: int | None = None, chunk: int = 25) -> ResultTable:
    """Run every (point, trial) and aggregate per point and estimator.

    The result depends only on ``(cfg, cfg.seed)``: trials are seeded from
    ``(seed, point index, trial index)`` and gathered in sorted order before a
    sequential reduction, whatever the number of workers.
    """
    parallel = cfg.parallel if parallel is None else parallel
    points = sweep_points(cfg)
    tasks = [(cfg, pt, range(s, min(s + chunk, cfg.trials)))
             for pt in points for s in range(0, cfg.trials, chunk)]
    outcomes: list[TrialOutcome] = []
    if parallel <= 1:
        for t in tasks:
            outcomes.extend(_run_chunk(t))
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for res in pool.map(_run_chunk, tasks):
                outcomes.extend(res)
    return aggregate(cfg, points, outcomes)


@dataclass
class PnTrace:
    """Sampled PN phases of one trial: truth and the CPE / BEM estimates."""

    point: int
    n: np.ndarray
    theta_true: np.ndarray
    theta_cpe: np.ndarray
    theta_bem: np.ndarray


def _aligned_phase(p_hat, p_true, idx) -> np.ndarray:
    c = align_scalar(p_hat[idx], p_true[idx])
    return np.unwrap(np.angle(c * p_hat))


def pn_trace(cfg: RunConfig, point_index: int, trial: int = 0) -> PnTrace:
    """PN trajectories of ``trial`` at sweep point ``point_index``.

    Both estimates are gauge-aligned to the truth before taking phases.
    """
    points = sweep_points(cfg)
    if not 0 <= point_index < len(points):
        raise IndexError(f"point {point_index} out of range [0, {len(points)})")
    point = points[point_index]
    data = simulate_trial(cfg, point, trial)
    orders = resolve_orders(cfg, data.pattern, data.profile, point.B_3dB)
    idx = data.frame.postcp_indices().ravel()
    thetas = {}
    for name in ("cpe", "separate_bem"):
        _, p_hat, *_ = run_estimator(name, cfg, data, orders)
        thetas[name] = _aligned_phase(p_hat, data.pn, idx)
    n = np.arange(data.frame.N)
    return PnTrace(point_index, n, np.unwrap(np.angle(data.pn)), thetas["cpe"],
                   thetas["separate_bem"])
