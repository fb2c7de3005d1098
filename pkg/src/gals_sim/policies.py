"""Flow-control logic: which tokens leave at a clock pulse, and on which channel.

A policy is an immutable value. ``decide`` is called exactly once per
firing with the pre-firing register and input snapshots, and returns the
plan together with the policy value to use at the next firing. A plan maps
every endpoint's link id to a channel index (send) or ``None`` (keep).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .core import Endpoint, LinkRole
from .errors import UnknownChannel, ZeroState

Plan = Mapping[str, "int | None"]

DEFAULT_TAPS = (16, 15, 13, 4)


# -- PN generator ------------------------------------------------------------

@dataclass(frozen=True)
class LfsrState:
    register: int
    taps: tuple[int, ...] = DEFAULT_TAPS

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(int(t) for t in self.taps))
        if not self.taps or min(self.taps) < 1:
            raise ValueError(f"bad LFSR taps {self.taps}")
        if self.register == 0 or self.register >> self.width:
            raise ZeroState(f"LFSR register must be a nonzero {self.width}-bit word, "
                            f"got {self.register:#x}")

    @property
    def width(self) -> int:
        return max(self.taps)


def lfsr_next(state: LfsrState) -> tuple[int, LfsrState]:
    """One Fibonacci step; returns the low bit before the shift.

    Tap ``t`` reads bit ``width - t`` of the register; the XOR of the
    tapped bits is shifted in at the top.
    """
    reg = state.register
    if reg == 0:
        raise ZeroState("LFSR register is zero")
    w = state.width
    fb = 0
    for t in state.taps:
        fb ^= reg >> (w - t)
    out = reg & 1
    reg = (reg >> 1) | ((fb & 1) << (w - 1))
    return out, LfsrState(reg, state.taps)


def lfsr_period(state: LfsrState) -> int:
    """Brute-force cycle length from ``state``."""
    start = state.register
    n = 0
    while True:
        _, state = lfsr_next(state)
        n += 1
        if state.register == start:
            return n


# -- policies ----------------------------------------------------------------

class FlowPolicy:
    """Shared defaults. Subclasses are frozen dataclasses."""

    def decide(self, endpoints: Sequence[Endpoint], register: int, inputs: tuple[int, ...],
               temperature: float | None = None) -> tuple[Plan, "FlowPolicy"]:
        raise NotImplementedError

    def check(self, endpoints: Sequence[Endpoint]) -> None:
        pass

    def may_retain_all(self, endpoints: Sequence[Endpoint]) -> bool:
        """Can some firing keep every communication token?"""
        return False

    def lockstep(self) -> bool:
        """Does every firing send on every endpoint (so T-FFs may be shared)?"""
        return False

    def variant(self, mode: str) -> "FlowPolicy":
        """The same policy with spreading forced ``'fixed'`` or left ``'spread'``."""
        return self

    @property
    def has_spread(self) -> bool:
        return False


def _check_channel(endpoints, link, ch, what):
    for ep in endpoints:
        if ep.link == link:
            if ch is not None and not 0 <= ch < ep.n_channels:
                raise UnknownChannel(f"{what}: link {link} has no channel {ch} "
                                     f"(drives {ep.n_channels})")
            return
    raise UnknownChannel(f"{what}: GPRM does not control link {link!r}")


@dataclass(frozen=True)
class FixedForward(FlowPolicy):
    """Constant plan: channel per link id, ``None`` to keep; unlisted links send on 0."""

    channels: Mapping[str, int | None] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def plan(self, endpoints) -> dict:
        """The constant plan; callers must not mutate it."""
        hit = self._cache.get(id(endpoints))
        if hit is not None and hit[0] is endpoints:
            return hit[1]
        plan = {ep.link: self.channels.get(ep.link, 0) for ep in endpoints}
        self._cache[id(endpoints)] = (endpoints, plan)
        return plan

    def decide(self, endpoints, register, inputs, temperature=None):
        return self.plan(endpoints), self

    def check(self, endpoints):
        for link, ch in self.channels.items():
            _check_channel(endpoints, link, ch, "fixed policy")

    def may_retain_all(self, endpoints):
        comm = [ep.link for ep in endpoints if ep.role is not LinkRole.LOOP]
        return bool(comm) and all(self.channels.get(l, 0) is None for l in comm)

    def lockstep(self):
        return all(ch is not None for ch in self.channels.values())


@dataclass(frozen=True)
class SpreadSpectrum(FlowPolicy):
    """Pseudo-random choice between two channels on one endpoint.

    ``fixed_channel`` is the channel used by the non-dithered comparison
    variant; the base policy drives every other endpoint.
    """

    endpoint: str
    pair: tuple[int, int]
    lfsr: LfsrState
    base: FixedForward = field(default_factory=FixedForward)
    fixed_channel: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "pair", tuple(self.pair))

    def decide(self, endpoints, register, inputs, temperature=None):
        plan = self.base.plan(endpoints)
        bit, nxt = lfsr_next(self.lfsr)
        if plan.get(self.endpoint) is not None:
            plan = dict(plan)
            plan[self.endpoint] = self.pair[bit]
        return plan, SpreadSpectrum(self.endpoint, self.pair, nxt, self.base, self.fixed_channel)

    def check(self, endpoints):
        self.base.check(endpoints)
        for ch in self.pair:
            _check_channel(endpoints, self.endpoint, ch, "spread policy")
        if self.fixed_channel is not None:
            _check_channel(endpoints, self.endpoint, self.fixed_channel, "spread policy")

    def may_retain_all(self, endpoints):
        return self.base.may_retain_all(endpoints)

    def lockstep(self):
        return self.base.lockstep()

    def variant(self, mode):
        if mode == "spread":
            return self
        if mode != "fixed":
            raise ValueError(f"unknown variant {mode!r}")
        chans = dict(self.base.channels)
        chans[self.endpoint] = self.pair[0] if self.fixed_channel is None else self.fixed_channel
        return FixedForward(chans)

    @property
    def has_spread(self):
        return True


@dataclass(frozen=True)
class Adaptive(FlowPolicy):
    """Sensed adaptation: channel for ``endpoint`` from a temperature threshold table.

    The hottest threshold not above the sensed temperature wins; below every
    threshold the base policy's channel is used. Sensor noise is Gaussian,
    drawn from a stream keyed by ``(seed, reads)`` so decisions replay.
    """

    endpoint: str
    thresholds: tuple[tuple[float, int], ...]
    base: FixedForward = field(default_factory=FixedForward)
    sensor_noise: float = 0.0
    seed: int = 0
    reads: int = 0

    def __post_init__(self):
        rows = tuple(sorted((float(t), int(c)) for t, c in self.thresholds))
        object.__setattr__(self, "thresholds", rows)

    def sensed(self, temperature: float) -> float:
        if self.sensor_noise:
            rng = random.Random(self.seed * 1_000_003 + self.reads)
            return temperature + rng.gauss(0.0, self.sensor_noise)
        return temperature

    def decide(self, endpoints, register, inputs, temperature=None):
        plan = self.base.plan(endpoints)
        if temperature is not None and plan.get(self.endpoint) is not None:
            t = self.sensed(temperature)
            chosen = None
            for threshold, ch in self.thresholds:
                if t >= threshold:
                    chosen = ch
            if chosen is not None:
                plan = dict(plan)
                plan[self.endpoint] = chosen
        nxt = Adaptive(self.endpoint, self.thresholds, self.base, self.sensor_noise,
                       self.seed, self.reads + 1)
        return plan, nxt

    def check(self, endpoints):
        self.base.check(endpoints)
        for _, ch in self.thresholds:
            _check_channel(endpoints, self.endpoint, ch, "adaptive policy")

    def may_retain_all(self, endpoints):
        return self.base.may_retain_all(endpoints)

    def lockstep(self):
        return self.base.lockstep()


@dataclass(frozen=True)
class Burst(FlowPolicy):
    """Sequential-machine controller.

    Loop endpoints follow the base plan at every firing. Communication
    endpoints follow it only on every ``period``-th firing and are kept
    otherwise, so the closed loop produces a burst of ``period`` pulses per
    data item.
    """

    period: int
    base: FixedForward = field(default_factory=FixedForward)
    count: int = 0

    def decide(self, endpoints, register, inputs, temperature=None):
        plan = self.base.plan(endpoints)
        if self.count % self.period:
            plan = {ep.link: (plan[ep.link] if ep.role is LinkRole.LOOP else None)
                    for ep in endpoints}
        return plan, Burst(self.period, self.base, self.count + 1)

    def check(self, endpoints):
        if self.period < 1:
            raise ValueError("burst period must be >= 1")
        self.base.check(endpoints)

    def may_retain_all(self, endpoints):
        return self.period > 1 or self.base.may_retain_all(endpoints)


@dataclass(frozen=True)
class Custom(FlowPolicy):
    """Arbitrary pure decision function (library use only; not serializable).

    ``fn(endpoints, register, inputs, temperature, state) -> (plan, state)``
    """

    fn: Callable[..., tuple[Plan, Any]]
    state: Any = None
    retains: bool = False

    def decide(self, endpoints, register, inputs, temperature=None):
        plan, state = self.fn(endpoints, register, inputs, temperature, self.state)
        return plan, Custom(self.fn, state, self.retains)

    def may_retain_all(self, endpoints):
        return self.retains
