"""``gals-sim`` command line: validate | run | spectrum | thermal | resources.

Outputs go to ``<root>/<config-stem>/<command>/`` where ``<root>`` is
``--out-dir``, else ``$GALS_SIM_OUT_DIR``, else ``out``. Every failure exits
nonzero after printing one line of the form ``error[<Code>]: <message>``.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace

from . import __version__
from .analysis import resource_table, throughput
from .config import format_time, load, parse_time
from .core import validate_topology
from .errors import ConfigError, GalsError
from .experiments import Experiment, run, spectrum_compare, thermal_run
from .trace import write_rows

OUT_ENV = "GALS_SIM_OUT_DIR"
DEFAULT_MAX_EVENTS = 10_000_000  # safety cap when neither config nor flags bound a run
EXIT_ERROR = 2
EXIT_STRICT = 1


class _Fail(Exception):
    def __init__(self, code: str, message: str, status: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Fail("UsageError", message)


def _global_flags() -> argparse.ArgumentParser:
    # defaults suppressed so flags may appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="override sim.seed (LFSR and sensor-noise seeds derive from it)")
    p.add_argument("--out-dir", default=argparse.SUPPRESS,
                   help=f"output root (default ${OUT_ENV} or ./out)")
    p.add_argument("--until", default=argparse.SUPPRESS,
                   help="simulated time limit, e.g. 100000ps, 5us, or an event count 20000ev")
    p.add_argument("--strict", action="store_true", default=argparse.SUPPRESS,
                   help="treat validation warnings as errors")
    return p


def build_parser() -> argparse.ArgumentParser:
    flags = _global_flags()
    ap = _Parser(prog="gals-sim", parents=[flags],
                 description="Event-driven simulator for self-timed GALS networks.")
    ap.add_argument("--version", action="version", version=f"gals-sim {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)
    for name, text in (("validate", "check structure and bundling constraints"),
                       ("run", "simulate and write trace CSVs"),
                       ("spectrum", "compare clock spectra of two policy variants"),
                       ("thermal", "run with thermal coupling; write the time series"),
                       ("resources", "per-GPRM LUT / T-FF estimate")):
        sp = sub.add_parser(name, parents=[flags], help=text, description=text)
        sp.add_argument("config", help="topology config (TOML)")
        if name == "spectrum":
            sp.add_argument("--compare", default="fixed,spread",
                            help="two variants, e.g. fixed,spread (default) or fixed,fixed")
    return ap


# -- helpers -------------------------------------------------------------------

def _out_dir(args, config: str, command: str) -> str:
    root = getattr(args, "out_dir", None) or os.environ.get(OUT_ENV) or "out"
    stem = os.path.splitext(os.path.basename(config))[0]
    path = os.path.join(root, stem, command)
    os.makedirs(path, exist_ok=True)
    return path


def _load(args) -> Experiment:
    exp = load(args.config, getattr(args, "seed", None))
    until = getattr(args, "until", None)
    if until is not None:
        try:
            v, unit = parse_time(until, allow_events=True)
        except ValueError as e:
            raise ConfigError(str(e), "--until", source=args.config) from None
        sim = replace(exp.sim, until=None, max_events=v) if unit == "ev" else \
            replace(exp.sim, until=v, max_events=None)
        exp = replace(exp, sim=sim)
    return exp


def _bounded(exp: Experiment) -> Experiment:
    if exp.sim.until is None and exp.sim.max_events is None:
        return replace(exp, sim=replace(exp.sim, max_events=DEFAULT_MAX_EVENTS))
    return exp


def _note_cap(exp: Experiment, events: int, out) -> None:
    if exp.sim.max_events == DEFAULT_MAX_EVENTS and events >= DEFAULT_MAX_EVENTS:
        print(f"note: no limit given; stopped at the {DEFAULT_MAX_EVENTS}-event safety cap",
              file=out)


def _strict_check(args, exp, out) -> None:
    report = validate_topology(exp.network)
    if report.warnings:
        print(report.format(), file=out)
        if getattr(args, "strict", False):
            raise _Fail("StrictValidation", f"{len(report.warnings)} warnings with --strict",
                        EXIT_STRICT)


# -- commands ------------------------------------------------------------------

def cmd_validate(args, out) -> int:
    exp = _load(args)
    report = validate_topology(exp.network)
    print(report.format(), file=out)
    if report.warnings and getattr(args, "strict", False):
        raise _Fail("StrictValidation", f"{len(report.warnings)} warnings with --strict",
                    EXIT_STRICT)
    return 0


def cmd_run(args, out) -> int:
    exp = _bounded(_load(args))
    _strict_check(args, exp, out)
    _, trace = run(exp)
    _note_cap(exp, trace.events, out)
    d = _out_dir(args, args.config, "run")
    trace.write_csv(d)
    if exp.sim.sink is not None:
        throughput(trace, exp.sim.window, exp.sim.sink).write_csv(
            os.path.join(d, "throughput.csv"))
    for gid in trace.order:
        print(f"edges {gid}: {len(trace.edges[gid])}", file=out)
    delivered = sum(len(v) for v in trace.deliveries.values())
    print(f"delivered: {delivered}, violations: {len(trace.violations)}", file=out)
    print(f"end: {trace.end} ps, events: {trace.events}", file=out)
    print(f"wrote {d}", file=out)
    return 0


def cmd_spectrum(args, out) -> int:
    modes = tuple(m.strip() for m in args.compare.split(","))
    if len(modes) != 2 or not all(modes):
        raise ConfigError("expected two variants such as fixed,spread", "--compare")
    exp = _bounded(_load(args))
    _strict_check(args, exp, out)
    cmp = spectrum_compare(exp, modes)
    _note_cap(exp, max(t.events for t in cmp.traces), out)
    d = _out_dir(args, args.config, "spectrum")
    names = []
    for i, (mode, spec) in enumerate(zip(modes, cmp.spectra)):
        name = f"spectrum_{mode}.csv" if modes[0] != modes[1] else f"spectrum_{mode}_{i + 1}.csv"
        spec.write_csv(os.path.join(d, name))
        names.append(name)
    lo, hi = cmp.band
    print(f"edges per run: {cmp.edges}, bin: {format_time(exp.sim.spectrum_bin)}, "
          f"nfft: {len(cmp.spectra[0].power) * 2 - 2}", file=out)
    print(f"band: {lo / 1e6:.3f}-{hi / 1e6:.3f} MHz", file=out)
    for mode, spec in zip(modes, cmp.spectra):
        f, p = spec.peak(cmp.band)
        print(f"peak {mode}: {f / 1e6:.3f} MHz, {10 * math.log10(max(p, 1e-300)):.2f} dB", file=out)
    print(f"peak reduction: {cmp.reduction_db:.2f} dB", file=out)
    write_rows(os.path.join(d, "reduction.csv"),
               ("reference", "compared", "band_lo_hz", "band_hi_hz", "reduction_db"),
               [(modes[0], modes[1], f"{lo:.3f}", f"{hi:.3f}", f"{cmp.reduction_db:.6f}")])
    print(f"wrote {d}", file=out)
    return 0


def cmd_thermal(args, out) -> int:
    exp = _load(args)
    if exp.environment is None:
        raise ConfigError("thermal needs an [environment] block", "environment",
                          source=args.config)
    if exp.sim.until is None and exp.sim.max_events is None:
        raise ConfigError("thermal needs a limit (sim.until or --until)", "sim.until",
                          source=args.config)
    _strict_check(args, exp, out)
    res = thermal_run(exp)
    d = _out_dir(args, args.config, "thermal")
    write_rows(os.path.join(d, "thermal.csv"),
               ("time_ps", "temperature_c", "r_th", "edge_rate_per_s", "items_per_s",
                "items_in_window"),
               [(s.time, f"{s.temperature:.9f}", f"{s.r_th:.9g}", f"{s.edge_rate:.9g}",
                 f"{tp:.9g}", n) for s, tp, n in zip(res.samples, res.throughput, res.items)])
    if res.failure_time is not None:
        print(f"failure at {format_time(res.failure_time)}: pre-failure edge rate "
              f"{res.pre_rate:.6g} /s", file=out)
    print(f"final: temperature {res.final_temperature:.4f} C, edge rate "
          f"{res.final_rate:.6g} /s, throughput {res.throughput[-1]:.6g} items/s", file=out)
    if res.oracle_temperature is not None:
        print(f"fixed point (frozen-rate bisection): {res.oracle_temperature:.4f} C", file=out)
    verdict = "converged" if res.residual < 0.1 else "not converged"
    print(f"fixed-point residual: {res.residual:.4g} C ({verdict})", file=out)
    print(f"wrote {d}", file=out)
    return 0


def cmd_resources(args, out) -> int:
    exp = _load(args)
    print(resource_table(exp.network), file=out)
    return 0


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "spectrum": cmd_spectrum,
            "thermal": cmd_thermal, "resources": cmd_resources}


def main(argv: list[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr

    def fail(code, exc, status=EXIT_ERROR):
        msg = " ".join(str(exc).split())
        print(f"error[{code}]: {msg}", file=err)
        return status

    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except _Fail as e:
        return fail(e.code, e, e.status)
    except GalsError as e:
        return fail(e.code, e)
    except OSError as e:
        return fail("IOError", e)
    except ValueError as e:
        return fail("ValueError", e)


if __name__ == "__main__":
    sys.exit(main())
