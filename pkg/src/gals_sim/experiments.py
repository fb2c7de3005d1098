"""Run settings plus the three experiment drivers: plain run, EMI comparison, thermal."""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field, replace

from .analysis import (Spectrum, band_around, clock_rate, clock_spectrum, next_pow2,
                       peak_reduction)
from .core import Apb, Network, validate_topology
from .engine import Simulator, reset
from .errors import ConfigError
from .thermal import Environment, solve_fixed_point
from .trace import Trace


@dataclass(frozen=True)
class SimSettings:
    seed: int = 0
    until: int | None = None          # ps
    max_events: int | None = None
    gprm_overhead: int = 0            # ps
    window: int = 1_000_000           # throughput window, ps
    spectrum_bin: int = 1000          # ps
    nfft: int = 0                     # 0: smallest power of two that fits
    spectrum_edges: int = 0           # 0: equal-count truncation to the shorter run
    sink: str | None = None


@dataclass(frozen=True)
class Experiment:
    network: Network
    sim: SimSettings = field(default_factory=SimSettings)
    environment: Environment | None = None


def run(exp: Experiment, until: int | None = None, max_events: int | None = None, *,
        check: bool = False, environment: Environment | None = None) -> tuple[Simulator, Trace]:
    until = exp.sim.until if until is None and max_events is None else until
    max_events = exp.sim.max_events if max_events is None else max_events
    env = exp.environment if environment is None else environment
    if env is not None and env.equilibrium_start and not env.frozen:
        env = replace(env, model=replace(env.model, t_device=steady_state(exp, env)))
    sim = reset(exp.network, env, gprm_overhead=exp.sim.gprm_overhead, check=check)
    if until is None and max_events is None and env is not None and not env.frozen:
        raise ConfigError("a thermal run needs a time or event limit", "sim.until")
    trace = sim.run_until(until, max_events)
    return sim, trace


# -- spread-spectrum comparison ------------------------------------------------

def with_variant(network: Network, mode: str) -> Network:
    apbs = tuple(Apb(a.id, a.logic, a.policy.variant(mode), a.init, a.width, a.datapath,
                     a.fire_limit) for a in network.apbs)
    return Network(apbs, network.links)


def has_spread(network: Network) -> bool:
    return any(getattr(a.policy, "has_spread", False) for a in network.apbs)


@dataclass
class SpectrumComparison:
    modes: tuple[str, str]
    spectra: tuple[Spectrum, Spectrum]
    traces: tuple[Trace, Trace]
    band: tuple[float, float]
    reduction_db: float
    edges: int


def spectrum_compare(exp: Experiment, modes: tuple[str, str] = ("fixed", "spread"),
                     until: int | None = None) -> SpectrumComparison:
    """Run both variants with identical settings; compare fundamental-band peaks.

    Both edge streams are truncated to the same count before binning, and
    the band is +-20 % around the reference run's clock rate.
    """
    for m in modes:
        if m not in ("fixed", "spread"):
            raise ConfigError(f"unknown comparison mode {m!r}", "--compare")
    if not has_spread(exp.network):
        raise ConfigError("no APB has a spread-spectrum policy (spread pair undefined)",
                          "apb.policy")
    traces = []
    for m in modes:
        net = with_variant(exp.network, m)
        validate_topology(net)
        _, tr = run(replace(exp, network=net), until)
        traces.append(tr)
    streams = [tr.all_edges() for tr in traces]
    n = min(len(s) for s in streams)
    if exp.sim.spectrum_edges:
        n = min(n, exp.sim.spectrum_edges)
    streams = [s[:n] for s in streams]
    b = exp.sim.spectrum_bin
    nfft = exp.sim.nfft or next_pow2(max(s[-1] for s in streams) // b + 1)
    spectra = tuple(clock_spectrum(s, b, nfft) for s in streams)
    band = band_around(clock_rate(traces[0]))
    band = (band[0], min(band[1], spectra[0].sample_rate / 2))
    red = peak_reduction(spectra[0], spectra[1], band)
    return SpectrumComparison(tuple(modes), spectra, tuple(traces), band, red, n)


# -- thermal ------------------------------------------------------------------

def frozen_rate(exp: Experiment, temperature: float, events: int = 4000) -> float:
    """Steady edge rate (edges/s, all GPRMs) with every delay pinned at ``temperature``."""
    env = (exp.environment or Environment()).at_temperature(temperature)
    sim = reset(exp.network, env, gprm_overhead=exp.sim.gprm_overhead)
    sim.run_until(max_events=events)
    sim.edge_rate()
    sim.run_until(max_events=events)
    return sim.edge_rate()


def steady_state(exp: Experiment, env: Environment | None = None, tol: float = 1e-6,
                 events: int = 4000) -> float:
    """Fixed point T* = T_amb + R * P(rate(T*)) by bisection on measured frozen rates.

    Independent of the coupled run: each probe is a separate simulation at
    a pinned temperature, so it serves as the oracle for the dynamic result.
    """
    env = env or exp.environment
    m = env.model
    e = replace(exp, environment=env)

    def g(t):
        return m.t_ambient + m.r_th * m.power(frozen_rate(e, t, events)) - t

    hi = m.t_ambient + m.r_th * m.power(frozen_rate(e, m.t_ambient, events))
    return solve_fixed_point(g, m.t_ambient, hi + 1e-9, tol=tol)


@dataclass
class ThermalResult:
    samples: list                      # EnvSample per environment step
    throughput: list[float]            # sink items/s, period-exact, window ending at each sample
    items: list[int]                   # sink deliveries counted in the same window
    trace: Trace
    failure_time: int | None
    pre_rate: float                    # edge rate just before the first failure step
    final_rate: float
    final_temperature: float
    residual: float                    # |P(rate)*R - (T - T_amb)| at the end
    oracle_temperature: float | None

    def post_failure(self) -> list:
        if self.failure_time is None:
            return list(self.samples)
        return [s for s in self.samples if s.time > self.failure_time]


def thermal_run(exp: Experiment, until: int | None = None, oracle: bool = True) -> ThermalResult:
    env = exp.environment
    if env is None:
        raise ConfigError("thermal run needs an [environment] block", "environment")
    sim, trace = run(exp, until)
    samples = trace.environment
    if not samples:
        raise ConfigError("run shorter than one environment step", "sim.until")
    fail = env.steps[0].at if env.steps else None
    pre = [s for s in samples if fail is None or s.time <= fail]
    pre_rate = pre[-1].edge_rate if pre else samples[0].edge_rate
    last = samples[-1]
    model = replace(sim.model, t_device=last.temperature)
    sink = exp.sim.sink
    if sink is not None:
        g = trace.order.index(sink)
        tput = [s.rates[g] for s in samples]
        edges = trace.edges[sink]
        items = [bisect_left(edges, s.time) - bisect_left(edges, s.time - env.dt)
                 for s in samples]
    else:
        tput = [s.edge_rate for s in samples]
        items = [0] * len(samples)
    oracle_t = None
    if oracle:
        final_env = replace(env, model=replace(env.model, r_th=model.r_th))
        oracle_t = steady_state(exp, final_env)
    return ThermalResult(samples, tput, items, trace, fail, pre_rate, last.edge_rate,
                         last.temperature, model.residual(last.edge_rate), oracle_t)
