"""TOML topology configs: parse to an :class:`Experiment`, serialize back.

The document grammar is in ``docs/config.md``. Every diagnostic carries the
source line and a dotted field path such as ``link[2].fwd``. Time values are
integers (picoseconds) or strings with a unit suffix: ``"5ns"``, ``"2.5us"``.
``sim.until`` also accepts an event count, ``"20000ev"``.
"""

from __future__ import annotations

import re
import sys
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .core import Apb, Link, LinkKind, Network, check_structure
from .errors import ConfigError, GalsError
from .experiments import Experiment, SimSettings
from .logic import KINDS as LOGIC_KINDS, Logic
from .policies import (DEFAULT_TAPS, Adaptive, Burst, FixedForward, LfsrState,
                       SpreadSpectrum)
from .thermal import Environment, FailureStep, ThermalModel

UNITS = {"ps": 1, "ns": 1_000, "us": 1_000_000, "ms": 1_000_000_000, "s": 1_000_000_000_000}
_TIME = re.compile(r"^\s*([0-9]+(?:\.[0-9]*)?(?:[eE][+-]?[0-9]+)?)\s*(ps|ns|us|ms|s|ev)\s*$")
_KEY = re.compile(r'^\s*"?([A-Za-z0-9_.\-]+)"?\s*=')
_HEADER = re.compile(r"^\s*(\[\[?)\s*([A-Za-z_][A-Za-z0-9_.\-]*)\s*\]\]?")


# -- locations -----------------------------------------------------------------

class _Locator:
    """Maps dotted field paths to 1-based source lines."""

    def __init__(self, text: str):
        self.lines: dict[str, int] = {}
        counts: dict[str, int] = {}
        current = ""
        array_idx: dict[str, int] = {}
        for no, line in enumerate(text.splitlines(), 1):
            stripped = line.split("#", 1)[0]
            m = _HEADER.match(stripped)
            if m:
                name = m.group(2)
                parts = name.split(".")
                if m.group(1) == "[[":
                    counts[name] = counts.get(name, -1) + 1
                    array_idx[name] = counts[name]
                # resolve each prefix to its latest array index
                path, acc = [], []
                for p in parts:
                    acc.append(p)
                    key = ".".join(acc)
                    path.append(f"{p}[{array_idx[key]}]" if key in array_idx else p)
                current = ".".join(path)
                self.lines.setdefault(current, no)
                continue
            k = _KEY.match(stripped)
            if k:
                full = f"{current}.{k.group(1)}" if current else k.group(1)
                self.lines.setdefault(full, no)

    def line(self, path: str) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            cut = max(path.rfind("."), path.rfind("["))
            path = path[:cut] if cut > 0 else ""
        return None


class _Ctx:
    def __init__(self, text: str, source: str):
        self.loc = _Locator(text)
        self.source = source

    def error(self, path: str, msg: str) -> ConfigError:
        return ConfigError(msg, path, self.loc.line(path), self.source)


# -- scalar helpers ------------------------------------------------------------

def parse_time(value: Any, *, allow_events: bool = False) -> tuple[int, str]:
    """``5000`` / ``"5ns"`` -> (5000, "ps"); ``"10ev"`` -> (10, "ev") when allowed."""
    if isinstance(value, bool):
        raise ValueError(f"expected a time, got {value!r}")
    if isinstance(value, int):
        if value < 0:
            raise ValueError(f"negative time {value}")
        return value, "ps"
    if not isinstance(value, str):
        raise ValueError(f"expected a time like \"5ns\", got {value!r}")
    m = _TIME.match(value)
    if not m:
        raise ValueError(f"bad time {value!r} (units: ps, ns, us, ms, s)")
    num, unit = m.groups()
    if unit == "ev":
        if not allow_events:
            raise ValueError(f"event counts are only valid for sim.until, got {value!r}")
        if not num.isdigit():
            raise ValueError(f"event count must be an integer, got {value!r}")
        return int(num), "ev"
    scaled = float(num) * UNITS[unit]
    if scaled != int(scaled) and abs(scaled - round(scaled)) > 1e-6:
        raise ValueError(f"{value!r} is not a whole number of picoseconds")
    return int(round(scaled)), "ps"


def format_time(ps: int) -> str:
    for unit in ("s", "ms", "us", "ns"):
        if ps and ps % UNITS[unit] == 0:
            return f"{ps // UNITS[unit]}{unit}"
    return f"{ps}ps"


def derive_seed(seed: int, index: int, width: int = 16) -> int:
    """Nonzero LFSR start state for the ``index``-th APB from the run seed."""
    period = (1 << width) - 1
    return (seed * 2_654_435_761 + 40_503 * (index + 1)) % period + 1


# -- parsing -------------------------------------------------------------------

_SIM_KEYS = {"seed", "until", "gprm_overhead", "window", "spectrum_bin", "nfft",
             "spectrum_edges", "sink"}
_APB_KEYS = {"id", "logic", "width", "init", "items", "table", "default", "datapath", "policy"}
_LINK_KEYS = {"id", "kind", "from", "to", "fwd", "bwd", "xnor", "apb", "channels"}
_ENV_KEYS = {"t_ambient", "t_device", "r_th", "c_th", "p_static", "p_per_edge", "k", "t_ref",
             "dt", "failures"}
_POLICY_KEYS = {
    "fixed": {"kind", "channels"},
    "spread": {"kind", "channels", "link", "pair", "fixed", "seed", "taps"},
    "adaptive": {"kind", "channels", "link", "thresholds", "noise", "seed"},
    "burst": {"kind", "channels", "period"},
}


def _keys(ctx, path, table, allowed):
    if not isinstance(table, dict):
        raise ctx.error(path, f"expected a table, got {type(table).__name__}")
    for k in table:
        if k not in allowed:
            raise ctx.error(f"{path}.{k}", f"unknown field {k!r} (allowed: "
                                           f"{', '.join(sorted(allowed))})")


def _req(ctx, path, table, key):
    if key not in table:
        raise ctx.error(path, f"missing required field {key!r}")
    return table[key]


def _int(ctx, path, value, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ctx.error(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ctx.error(path, f"must be >= {lo}, got {value}")
    return value


def _num(ctx, path, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ctx.error(path, f"expected a number, got {value!r}")
    return float(value)


def _str(ctx, path, value):
    if not isinstance(value, str) or not value:
        raise ctx.error(path, f"expected a non-empty string, got {value!r}")
    return value


def _time(ctx, path, value, positive=False):
    try:
        t, _ = parse_time(value)
    except ValueError as e:
        raise ctx.error(path, str(e)) from None
    if positive and t <= 0:
        raise ctx.error(path, "must be > 0")
    return t


def _times(ctx, path, value):
    if not isinstance(value, list):
        value = [value]
    return [_time(ctx, f"{path}[{i}]", v, positive=True) for i, v in enumerate(value)]


def _parse_sim(ctx, doc, seed_override):
    t = doc.get("sim", {})
    _keys(ctx, "sim", t, _SIM_KEYS)
    until = events = None
    if "until" in t:
        try:
            v, unit = parse_time(t["until"], allow_events=True)
        except ValueError as e:
            raise ctx.error("sim.until", str(e)) from None
        until, events = (None, v) if unit == "ev" else (v, None)
    seed = _int(ctx, "sim.seed", t.get("seed", 0), 0)
    if seed_override is not None:
        seed = seed_override
    return SimSettings(
        seed=seed, until=until, max_events=events,
        gprm_overhead=_time(ctx, "sim.gprm_overhead", t.get("gprm_overhead", 0)),
        window=_time(ctx, "sim.window", t.get("window", "1us"), positive=True),
        spectrum_bin=_time(ctx, "sim.spectrum_bin", t.get("spectrum_bin", "1ns"), positive=True),
        nfft=_int(ctx, "sim.nfft", t.get("nfft", 0), 0),
        spectrum_edges=_int(ctx, "sim.spectrum_edges", t.get("spectrum_edges", 0), 0),
        sink=_str(ctx, "sim.sink", t["sink"]) if "sink" in t else None,
    )


def _channel_map(ctx, path, value):
    _keys(ctx, path, value, set(value) if isinstance(value, dict) else set())
    out = {}
    for link, ch in value.items():
        if ch == "keep":
            out[link] = None
        else:
            out[link] = _int(ctx, f"{path}.{link}", ch, 0)
    return out


def _parse_policy(ctx, path, t, index, seed):
    if t is None:
        return FixedForward()
    if not isinstance(t, dict):
        raise ctx.error(path, "expected a table")
    kind = _str(ctx, f"{path}.kind", t.get("kind", "fixed"))
    if kind not in _POLICY_KEYS:
        raise ctx.error(f"{path}.kind", f"unknown policy kind {kind!r} "
                                        f"(one of {', '.join(_POLICY_KEYS)})")
    _keys(ctx, path, t, _POLICY_KEYS[kind])
    base = FixedForward(_channel_map(ctx, f"{path}.channels", t.get("channels", {})))
    if kind == "fixed":
        return base
    if kind == "burst":
        return Burst(_int(ctx, f"{path}.period", _req(ctx, path, t, "period"), 1), base)
    link = _str(ctx, f"{path}.link", _req(ctx, path, t, "link"))
    if kind == "spread":
        pair = _req(ctx, path, t, "pair")
        if not isinstance(pair, list) or len(pair) != 2:
            raise ctx.error(f"{path}.pair", "expected two channel indices")
        pair = tuple(_int(ctx, f"{path}.pair[{i}]", c, 0) for i, c in enumerate(pair))
        taps = t.get("taps", list(DEFAULT_TAPS))
        if not isinstance(taps, list) or not taps:
            raise ctx.error(f"{path}.taps", "expected a list of tap positions")
        taps = tuple(_int(ctx, f"{path}.taps[{i}]", v, 1) for i, v in enumerate(taps))
        reg = t.get("seed")
        reg = derive_seed(seed, index, max(taps)) if reg is None else \
            _int(ctx, f"{path}.seed", reg, 0)
        try:
            lfsr = LfsrState(reg, taps)
        except GalsError as e:
            raise ctx.error(f"{path}.seed", str(e)) from None
        fixed = t.get("fixed")
        fixed = None if fixed is None else _int(ctx, f"{path}.fixed", fixed, 0)
        return SpreadSpectrum(link, pair, lfsr, base, fixed)
    rows = _req(ctx, path, t, "thresholds")
    if not isinstance(rows, list):
        raise ctx.error(f"{path}.thresholds", "expected [[temperature, channel], ...]")
    thresholds = []
    for i, row in enumerate(rows):
        p = f"{path}.thresholds[{i}]"
        if not isinstance(row, list) or len(row) != 2:
            raise ctx.error(p, "expected [temperature, channel]")
        thresholds.append((_num(ctx, p, row[0]), _int(ctx, p, row[1], 0)))
    noise = _num(ctx, f"{path}.noise", t.get("noise", 0.0))
    s = t.get("seed")
    s = seed * 1000 + index if s is None else _int(ctx, f"{path}.seed", s, 0)
    return Adaptive(link, tuple(thresholds), base, noise, s)


def _parse_apb(ctx, i, t, seed):
    path = f"apb[{i}]"
    _keys(ctx, path, t, _APB_KEYS)
    aid = _str(ctx, f"{path}.id", _req(ctx, path, t, "id"))
    kind = _str(ctx, f"{path}.logic", _req(ctx, path, t, "logic"))
    if kind not in LOGIC_KINDS:
        raise ctx.error(f"{path}.logic", f"unknown logic {kind!r} "
                                         f"(one of {', '.join(LOGIC_KINDS)})")
    table, default = (), None
    if kind == "custom-table":
        rows = t.get("table", [])
        if not isinstance(rows, list):
            raise ctx.error(f"{path}.table", "expected a list of rows")
        table = []
        for j, row in enumerate(rows):
            p = f"{path}.table[{j}]"
            if not isinstance(row, list) or len(row) < 2:
                raise ctx.error(p, "row is [register, *inputs, next]")
            table.append(tuple(_int(ctx, p, v, 0) for v in row))
        table = tuple(table)
        if "default" in t:
            default = _int(ctx, f"{path}.default", t["default"], 0)
    elif "table" in t or "default" in t:
        raise ctx.error(f"{path}.table", "table/default only apply to logic = \"custom-table\"")
    dp = t.get("datapath", {})
    _keys(ctx, f"{path}.datapath", dp, set(dp) if isinstance(dp, dict) else set())
    datapath = {k: _time(ctx, f"{path}.datapath.{k}", v) for k, v in dp.items()}
    items = t.get("items")
    return Apb(
        aid, Logic(kind, table, default),
        _parse_policy(ctx, f"{path}.policy", t.get("policy"), i, seed),
        init=_int(ctx, f"{path}.init", t.get("init", 0), 0),
        width=_int(ctx, f"{path}.width", t.get("width", 16), 1),
        datapath=datapath,
        fire_limit=None if items is None else _int(ctx, f"{path}.items", items, 0),
    )


def _parse_link(ctx, i, t, apb_ids):
    path = f"link[{i}]"
    _keys(ctx, path, t, _LINK_KEYS)
    lid = _str(ctx, f"{path}.id", _req(ctx, path, t, "id"))
    kind = t.get("kind", "communication")

    def known(field):
        name = _str(ctx, f"{path}.{field}", _req(ctx, path, t, field))
        if name not in apb_ids:
            raise ctx.error(f"{path}.{field}", f"undefined GPRM {name!r}")
        return name

    if kind == "loop":
        for bad in ("from", "to", "fwd", "bwd", "xnor"):
            if bad in t:
                raise ctx.error(f"{path}.{bad}", "loops take 'apb' and 'channels' only")
        return Link.loop(lid, known("apb"), _times(ctx, f"{path}.channels",
                                                   _req(ctx, path, t, "channels")))
    if kind != "communication":
        raise ctx.error(f"{path}.kind", f"link kind must be communication or loop, got {kind!r}")
    for bad in ("apb", "channels"):
        if bad in t:
            raise ctx.error(f"{path}.{bad}", "communication links take from/to/fwd/bwd")
    xnor = t.get("xnor", "from")
    if xnor not in ("from", "to"):
        raise ctx.error(f"{path}.xnor", f"xnor must be \"from\" or \"to\", got {xnor!r}")
    src, dst = known("from"), known("to")
    if src == dst:
        raise ctx.error(f"{path}.to", "a link to itself must be declared with kind = \"loop\"")
    return Link.communication(lid, src, dst,
                              _times(ctx, f"{path}.fwd", _req(ctx, path, t, "fwd")),
                              _times(ctx, f"{path}.bwd", _req(ctx, path, t, "bwd")),
                              "a" if xnor == "from" else "b")


def _parse_env(ctx, doc):
    if "environment" not in doc:
        return None
    t = doc["environment"]
    _keys(ctx, "environment", t, _ENV_KEYS)
    vals = {}
    for k in ("t_ambient", "r_th", "c_th", "p_static", "p_per_edge", "k", "t_ref"):
        if k in t:
            vals[k] = _num(ctx, f"environment.{k}", t[k])
    for k in ("r_th", "c_th"):
        if k in vals and vals[k] <= 0:
            raise ctx.error(f"environment.{k}", "must be > 0")
    eq = t.get("t_device") == "equilibrium"
    if "t_device" in t and not eq:
        vals["t_device"] = _num(ctx, "environment.t_device", t["t_device"])
    elif "t_ambient" in vals:
        vals["t_device"] = vals["t_ambient"]
    steps = []
    fl = t.get("failures", [])
    if not isinstance(fl, list):
        raise ctx.error("environment.failures", "expected an array of tables")
    for i, f in enumerate(fl):
        p = f"environment.failures[{i}]"
        _keys(ctx, p, f, {"at", "r_th_factor"})
        factor = _num(ctx, f"{p}.r_th_factor", f.get("r_th_factor", 2.0))
        if factor <= 0:
            raise ctx.error(f"{p}.r_th_factor", "must be > 0")
        steps.append(FailureStep(_time(ctx, f"{p}.at", _req(ctx, p, f, "at")), factor))
    dt = _time(ctx, "environment.dt", t.get("dt", "20us"), positive=True)
    return Environment(ThermalModel(**vals), dt, tuple(steps), equilibrium_start=eq)


def parse(text: str, source: str = "<string>", seed: int | None = None) -> Experiment:
    """Parse a TOML document; ``seed`` overrides ``sim.seed`` before seeds are derived."""
    ctx = _Ctx(text, source)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError(f"syntax error: {e}", "", int(m.group(1)) if m else None,
                          source) from None
    _keys(ctx, "", doc, {"sim", "apb", "link", "environment"})
    sim = _parse_sim(ctx, doc, seed)
    apb_tables = doc.get("apb", [])
    if not isinstance(apb_tables, list) or not apb_tables:
        raise ctx.error("apb", "at least one [[apb]] entry is required")
    apbs = [_parse_apb(ctx, i, t, sim.seed) for i, t in enumerate(apb_tables)]
    ids = [a.id for a in apbs]
    for i, a in enumerate(ids):
        if a in ids[:i]:
            raise ctx.error(f"apb[{i}].id", f"duplicate APB id {a!r}")
    link_tables = doc.get("link", [])
    if not isinstance(link_tables, list):
        raise ctx.error("link", "expected [[link]] entries")
    links = [_parse_link(ctx, i, t, set(ids)) for i, t in enumerate(link_tables)]
    if sim.sink is not None and sim.sink not in ids:
        raise ctx.error("sim.sink", f"undefined GPRM {sim.sink!r}")
    network = Network(tuple(apbs), tuple(links))
    try:
        check_structure(network)
    except GalsError as e:
        raise ctx.error(_blame(network, str(e)), f"{e.code}: {e}") from None
    return Experiment(network, sim, _parse_env(ctx, doc))


def _blame(network, message):
    """Field path for a structural error message of the form ``apb X: ...``."""
    m = re.match(r"(apb|link) (\S+?):", message)
    if m:
        items = network.apbs if m.group(1) == "apb" else network.links
        for i, item in enumerate(items):
            if item.id == m.group(2):
                return f"{m.group(1)}[{i}]"
    for i, a in enumerate(network.apbs):
        if re.search(rf"\b{re.escape(a.id)}\b", message):
            return f"apb[{i}]"
    return ""


def load(path: str, seed: int | None = None) -> Experiment:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", "", None, path) from None
    return parse(text, path, seed)


# -- serialization -------------------------------------------------------------

def _channels_out(policy: FixedForward) -> dict:
    return {k: ("keep" if v is None else v) for k, v in policy.channels.items()}


def _policy_out(p) -> dict:
    if isinstance(p, SpreadSpectrum):
        out = {"kind": "spread", "link": p.endpoint, "pair": list(p.pair),
               "seed": p.lfsr.register, "taps": list(p.lfsr.taps)}
        if p.fixed_channel is not None:
            out["fixed"] = p.fixed_channel
        base = p.base
    elif isinstance(p, Adaptive):
        out = {"kind": "adaptive", "link": p.endpoint,
               "thresholds": [[t, c] for t, c in p.thresholds],
               "noise": p.sensor_noise, "seed": p.seed}
        base = p.base
    elif isinstance(p, Burst):
        out, base = {"kind": "burst", "period": p.period}, p.base
    elif isinstance(p, FixedForward):
        out, base = {"kind": "fixed"}, p
    else:
        raise ConfigError(f"policy {type(p).__name__} has no config form", "apb.policy")
    if base.channels:
        out["channels"] = _channels_out(base)
    return out


def to_dict(exp: Experiment) -> dict:
    s = exp.sim
    sim: dict[str, Any] = {"seed": s.seed}
    if s.max_events is not None:
        sim["until"] = f"{s.max_events}ev"
    elif s.until is not None:
        sim["until"] = format_time(s.until)
    sim.update(gprm_overhead=format_time(s.gprm_overhead), window=format_time(s.window),
               spectrum_bin=format_time(s.spectrum_bin), nfft=s.nfft,
               spectrum_edges=s.spectrum_edges)
    if s.sink is not None:
        sim["sink"] = s.sink
    doc: dict[str, Any] = {"sim": sim, "apb": [], "link": []}
    for a in exp.network.apbs:
        t: dict[str, Any] = {"id": a.id, "logic": a.logic.kind, "width": a.width, "init": a.init}
        if a.fire_limit is not None:
            t["items"] = a.fire_limit
        if a.logic.kind == "custom-table":
            t["table"] = [list(r) for r in a.logic.table]
            if a.logic.default is not None:
                t["default"] = a.logic.default
        if a.datapath:
            t["datapath"] = {k: format_time(v) for k, v in a.datapath.items()}
        t["policy"] = _policy_out(a.policy)
        doc["apb"].append(t)
    for l in exp.network.links:
        if l.kind is LinkKind.CLOSED_LOOP:
            doc["link"].append({"id": l.id, "kind": "loop", "apb": l.a,
                                "channels": [format_time(c.delay) for c in l.fwd]})
        else:
            doc["link"].append({"id": l.id, "from": l.a, "to": l.b,
                                "fwd": [format_time(c.delay) for c in l.fwd],
                                "bwd": [format_time(c.delay) for c in l.bwd],
                                "xnor": "from" if l.xnor_side == "a" else "to"})
    env = exp.environment
    if env is not None:
        m = env.model
        e: dict[str, Any] = {"t_ambient": m.t_ambient,
                             "t_device": "equilibrium" if env.equilibrium_start else m.t_device,
                             "r_th": m.r_th, "c_th": m.c_th, "p_static": m.p_static,
                             "p_per_edge": m.p_per_edge, "k": m.k, "t_ref": m.t_ref,
                             "dt": format_time(env.dt)}
        if env.steps:
            e["failures"] = [{"at": format_time(f.at), "r_th_factor": f.r_th_factor}
                             for f in env.steps]
        doc["environment"] = e
    return doc


def dumps(exp: Experiment) -> str:
    return tomli_w.dumps(to_dict(exp))

