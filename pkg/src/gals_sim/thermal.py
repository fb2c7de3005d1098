"""Lumped first-order thermal model and temperature-dependent delays.

The device is a single RC node: dT/dt = (P - (T - T_amb) / R) / C with
P = p_static + p_per_edge * edge_rate. Every delay in the network (channel
delay units and worst-case data paths alike) scales linearly with
temperature around ``t_ref``, so heating slows the whole self-timed
network, which lowers the edge rate and therefore the dissipated power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

from .core import Time

PS = 1e-12


@dataclass(frozen=True)
class ThermalModel:
    t_ambient: float = 25.0
    t_device: float = 25.0
    r_th: float = 10.0        # degC / W
    c_th: float = 1e-4        # J / degC
    p_static: float = 0.5     # W
    p_per_edge: float = 3e-7  # J per clock edge
    k: float = 0.002          # fractional delay increase per degC
    t_ref: float = 25.0

    def power(self, edge_rate: float) -> float:
        return self.p_static + self.p_per_edge * edge_rate

    def residual(self, edge_rate: float) -> float:
        """|P(rate) * R - (T - T_amb)|, zero at a stationary point."""
        return abs(self.power(edge_rate) * self.r_th - (self.t_device - self.t_ambient))


def thermal_step(model: ThermalModel, edges_in_window: float, dt: float) -> ThermalModel:
    """Explicit Euler step over ``dt`` seconds.

    ``edges_in_window`` may be fractional; the engine passes
    ``rate * dt`` with a period-exact rate estimate.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    p = model.p_static + model.p_per_edge * edges_in_window / dt
    t = model.t_device + dt * (p - (model.t_device - model.t_ambient) / model.r_th) / model.c_th
    return replace(model, t_device=t)


def delay_scale(model: ThermalModel, temperature: float | None = None) -> float:
    t = model.t_device if temperature is None else temperature
    return 1.0 + model.k * (t - model.t_ref)


def effective_delay(d0: Time, model: ThermalModel, temperature: float | None = None) -> Time:
    """``d0 * (1 + k (T - t_ref))`` rounded half-up to a picosecond, floored at 1."""
    return max(1, math.floor(d0 * delay_scale(model, temperature) + 0.5))


@dataclass(frozen=True)
class FailureStep:
    """At ``at`` ps multiply the thermal resistance by ``r_th_factor`` (fan failure)."""

    at: Time
    r_th_factor: float = 2.0


@dataclass(frozen=True)
class Environment:
    """Thermal coupling for a run: model, update interval and failure schedule.

    ``frozen`` pins the temperature (delays scaled once, no updates).
    ``equilibrium_start`` replaces the initial device temperature with the
    stationary point of the unfailed system before the run starts.
    """

    model: ThermalModel = field(default_factory=ThermalModel)
    dt: Time = 20_000_000  # 20 us
    steps: tuple[FailureStep, ...] = ()
    frozen: bool = False
    equilibrium_start: bool = False

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(sorted(self.steps, key=lambda s: s.at)))
        if self.dt <= 0:
            raise ValueError("environment dt must be > 0")

    def at_temperature(self, t: float) -> "Environment":
        return replace(self, model=replace(self.model, t_device=t), frozen=True, steps=(),
                       equilibrium_start=False)


def solve_fixed_point(g: Callable[[float], float], lo: float, hi: float,
                      tol: float = 1e-6, max_iter: int = 200) -> float:
    """Root of a non-increasing scalar function by bisection, g(lo) >= 0 >= g(hi)."""
    glo, ghi = g(lo), g(hi)
    if glo < 0 or ghi > 0:
        raise ValueError(f"root not bracketed: g({lo})={glo}, g({hi})={ghi}")
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
