"""Built-in catalog of registered logic functions.

A logic function maps ``(register, inputs)`` to the next register value,
where ``inputs`` holds the input-link snapshots in link declaration order.
The engine masks the result to the register width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .errors import MalformedNetwork

KINDS = ("counter-source", "recording-sink", "passthrough", "accumulator", "adder",
         "custom-table")


def _counter(reg, inputs):
    return reg + 1


def _sink(reg, inputs):
    return inputs[0]


def _passthrough(reg, inputs):
    return inputs[0] if inputs else reg


def _accumulator(reg, inputs):
    return reg + sum(inputs)


def _adder(reg, inputs):
    return sum(inputs)


_FUNCS: dict[str, Callable] = {
    "counter-source": _counter,
    "recording-sink": _sink,
    "passthrough": _passthrough,
    "accumulator": _accumulator,
    "adder": _adder,
}


@dataclass(frozen=True)
class Logic:
    """A catalog entry. ``table``/``default`` only apply to ``custom-table``.

    ``table`` rows are ``(register, *inputs, next)``; unmatched rows yield
    ``default``, or keep the register when ``default`` is None.
    """

    kind: str
    table: tuple[tuple[int, ...], ...] = ()
    default: int | None = None
    _fn: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MalformedNetwork(f"unknown logic function {self.kind!r}; "
                                   f"expected one of {', '.join(KINDS)}")
        if self.kind == "custom-table":
            rows = tuple(tuple(int(v) for v in r) for r in self.table)
            object.__setattr__(self, "table", rows)
            lookup = {r[:-1]: r[-1] for r in rows}
            default = self.default

            def fn(reg, inputs):
                out = lookup.get((reg, *inputs))
                if out is None:
                    return reg if default is None else default
                return out
        else:
            fn = _FUNCS[self.kind]
        object.__setattr__(self, "_fn", fn)

    def __call__(self, register: int, inputs: tuple[int, ...]) -> int:
        return self._fn(register, inputs)

    @property
    def is_sink(self) -> bool:
        return self.kind == "recording-sink"

    def check(self, apb_id: str, n_inputs: int) -> None:
        if self.kind == "recording-sink" and n_inputs != 1:
            raise MalformedNetwork(f"apb {apb_id}: recording-sink needs exactly one input link")
        if self.kind == "passthrough" and n_inputs > 1:
            raise MalformedNetwork(f"apb {apb_id}: passthrough takes at most one input link")
        if self.kind == "custom-table":
            for row in self.table:
                if len(row) != n_inputs + 2:
                    raise MalformedNetwork(f"apb {apb_id}: custom-table rows need "
                                           f"{n_inputs + 2} entries (register, inputs, next)")


def counter_source() -> Logic:
    return Logic("counter-source")


def recording_sink() -> Logic:
    return Logic("recording-sink")


def passthrough() -> Logic:
    return Logic("passthrough")


def accumulator() -> Logic:
    return Logic("accumulator")


def adder() -> Logic:
    return Logic("adder")
