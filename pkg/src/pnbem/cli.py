"""Command-line front end: ``pnbem run | validate | trace``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .config import OUT_ENV, RunConfig, load_config
from .dsp import ConfigError
from .frame import FeasibilityError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("pnbem")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; usage problems are config errors here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pnbem", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="Monte-Carlo sweep; writes results.csv, run.json, plots")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or config)")
    run.add_argument("--seed", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--parallel", type=int)
    run.add_argument("--no-plots", action="store_true", help="skip the PNG figures")

    val = sub.add_parser("validate", help="pilot budget vs unknowns for each estimator")
    val.add_argument("--config", required=True, type=Path)

    tr = sub.add_parser("trace", help="write pn_trace_<point>.csv for one sweep point")
    tr.add_argument("--config", required=True, type=Path)
    tr.add_argument("--point", required=True, type=int)
    tr.add_argument("--trial", type=int, default=0)
    tr.add_argument("--out", type=Path)
    tr.add_argument("--no-plots", action="store_true")
    return p


def _out_dir(args, cfg: RunConfig) -> Path:
    if getattr(args, "out", None) is not None:
        return args.out
    return Path(os.environ.get(OUT_ENV) or cfg.out_dir)


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {k: getattr(args, k, None) for k in ("seed", "trials", "parallel")}
    d = cfg.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d)


def cmd_run(args) -> int:
    from .io import write_results
    from .sweep import run_sweep

    cfg = _load(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    table = run_sweep(cfg)
    elapsed = time.perf_counter() - t0
    paths = write_results(table, out, cfg, {"elapsed_s": round(elapsed, 3)})
    print(f"{len(table)} rows -> {paths['results']}")
    if not args.no_plots:
        from .plots import plot_results

        for p in plot_results(table, out):
            print(f"figure -> {p}")
    infeasible = sum(r.status != "ok" for r in table)
    if infeasible:
        print(f"{infeasible} rows infeasible (see status column)")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .sweep import (
        _pattern, resolve_orders, resolve_profile, unknowns_per_estimator,
    )

    cfg = _load(args)
    ok = True
    for i, pp in enumerate(cfg.pilots):
        pattern = _pattern(cfg.frame, pp)
        for speed in cfg.speed_kmh:
            prof = resolve_profile(cfg, speed)
            for b3 in cfg.B_3dB:
                try:
                    orders = resolve_orders(cfg, pattern, prof, b3)
                except FeasibilityError as exc:
                    print(f"pilots[{i}] {speed:g} km/h B_3dB={b3:g}: {exc}")
                    ok = False
                    continue
                need = unknowns_per_estimator(orders, prof.P, cfg.frame.M, cfg.genie_channel)
                K_o = pattern.n_observed
                print(f"pilots[{i}] d_f={pp.ptrs_df} d_t={pp.ptrs_dt} {speed:g} km/h "
                      f"B_3dB={b3:g} Hz: K_o={K_o} P={prof.P} Q_ch={orders.Q_ch} "
                      f"Q_pn={orders.Q_pn} Q_chpn={orders.Q_chpn}")
                for est in cfg.estimators:
                    if est == "genie":
                        continue
                    margin = K_o - need[est]
                    verdict = "feasible" if margin >= 0 else "INFEASIBLE"
                    ok &= margin >= 0
                    print(f"  {est:<13} unknowns={need[est]:<5} margin={margin:<6} {verdict}")
    return EXIT_OK if ok else EXIT_CONFIG


def cmd_trace(args) -> int:
    from .io import write_trace
    from .sweep import pn_trace

    cfg = _load(args)
    out = _out_dir(args, cfg)
    try:
        trace = pn_trace(cfg, args.point, args.trial)
    except IndexError as exc:
        raise ConfigError(str(exc)) from None
    path = write_trace(trace, out)
    print(f"trace -> {path}")
    if not args.no_plots:
        from .plots import plot_trace

        print(f"figure -> {plot_trace(trace, out / f'pn_trace_{args.point}.png')}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "trace": cmd_trace}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 2
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
