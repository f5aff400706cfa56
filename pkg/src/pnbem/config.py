"""Run configuration: a JSON key/value tree with every default echoed back."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .bem import DPSS, ORDER_MARGIN, PN_TAIL_FACTOR
from .dsp import ConfigError
from .frame import FrameConfig, PilotParams, default_dmrs_symbols

ESTIMATORS = ("cpe", "single_bem", "separate_bem", "genie")
OUT_ENV = "PNBEM_OUT"


@dataclass
class OrderConfig:
    """Model-order selection and overrides (``None`` means automatic)."""

    Q_ch: int | None = None
    Q_pn: int | None = None
    Q_chpn: int | None = None
    c_pn: float = PN_TAIL_FACTOR
    margin: int = ORDER_MARGIN
    pn_coeffs_per_pilot_symbol: int = 1
    ch_kind: str = DPSS
    pn_kind: str = DPSS
    chpn_kind: str = DPSS
    t_max: int = 10
    eps: float | None = None
    unit_modulus: bool = False


@dataclass
class RunConfig:
    frame: FrameConfig = field(default_factory=FrameConfig)
    channel: str | dict = "TDLC100"
    speed_kmh: list[float] = field(default_factory=lambda: [30.0])
    B_3dB: list[float] = field(default_factory=lambda: [450.0])
    snr_db: list[float] = field(default_factory=lambda: [float(s) for s in range(0, 31, 2)])
    pilots: list[PilotParams] = field(default_factory=lambda: [
        PilotParams(dmrs_symbols=default_dmrs_symbols(28, 10))])
    estimators: list[str] = field(default_factory=lambda: ["cpe", "single_bem", "separate_bem"])
    orders: OrderConfig = field(default_factory=OrderConfig)
    genie_channel: bool = False
    qam_order: int = 64
    trials: int = 500
    seed: int = 0
    out_dir: str = "results"
    ar_coeff: float = 1.0
    parallel: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("speed_kmh", "B_3dB", "snr_db", "pilots", "estimators"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be a non-empty list")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ConfigError(f"unknown estimators {unknown}; choose from {ESTIMATORS}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.qam_order not in (4, 16, 64, 256):
            raise ConfigError(f"unsupported QAM order {self.qam_order}")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pilots"] = [dict(p, dmrs_symbols=list(p["dmrs_symbols"])) for p in d["pilots"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        allowed = {f.name for f in fields(cls)}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        try:
            frame = FrameConfig(**d.pop("frame", {}))
            orders = OrderConfig(**d.pop("orders", {}))
            pilots = [_pilot_params(p, frame) for p in d.pop("pilots", [{}])]
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        for key in ("speed_kmh", "B_3dB", "snr_db"):
            if key in d:
                vals = d[key] if isinstance(d[key], list) else [d[key]]
                try:
                    d[key] = [float(v) for v in vals]
                except (TypeError, ValueError):
                    raise ConfigError(f"{key} must be numeric") from None
        return cls(frame=frame, orders=orders, pilots=pilots, **d)


def _pilot_params(p: dict, frame: FrameConfig) -> PilotParams:
    p = dict(p)
    n = p.pop("n_dmrs", None)
    if n is not None:
        if "dmrs_symbols" in p:
            raise ConfigError("give either n_dmrs or dmrs_symbols, not both")
        p["dmrs_symbols"] = default_dmrs_symbols(frame.M, n)
    return PilotParams(**p)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(data)
