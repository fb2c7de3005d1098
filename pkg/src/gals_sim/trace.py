"""Simulation records and their CSV export."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

HEADER = ("time_ps", "kind", "gprm_or_link", "detail", "value")


class TokenMove(NamedTuple):
    time: int
    kind: str      # "send" or "recv"
    link: str
    src: str
    dst: str
    channel: int


class Violation(NamedTuple):
    """A token announced data before the data path settled (slack < 0)."""

    time: int
    link: str
    gprm: str
    slack: int


class EnvSample(NamedTuple):
    time: int
    temperature: float
    edge_rate: float   # clock edges per second, all GPRMs
    r_th: float
    rates: tuple[float, ...] = ()   # per GPRM, in Trace.order


@dataclass
class Trace:
    order: tuple[str, ...] = ()
    edges: dict[str, list[int]] = field(default_factory=dict)
    registers: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    raw_tokens: list[tuple] = field(default_factory=list, repr=False)
    violations: list[Violation] = field(default_factory=list)
    deliveries: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    environment: list[EnvSample] = field(default_factory=list)
    end: int = 0
    events: int = 0
    token_decoder: Callable[[tuple], TokenMove] | None = field(default=None, repr=False,
                                                                compare=False)
    _tokens: list[TokenMove] | None = field(default=None, init=False, repr=False,
                                            compare=False)

    @property
    def tokens(self) -> list[TokenMove]:
        """Token-movement log, decoded on first access."""
        if self._tokens is None:
            dec = self.token_decoder
            self._tokens = [dec(r) for r in self.raw_tokens] if dec else list(self.raw_tokens)
        return self._tokens

    def all_edges(self) -> list[int]:
        return sorted(t for ts in self.edges.values() for t in ts)

    def delivered(self, sink: str) -> list[int]:
        return [v for _, v in self.deliveries.get(sink, ())]

    def _merged(self, per_id):
        rows = []
        for rank, gid in enumerate(self.order):
            for i, item in enumerate(per_id.get(gid, ())):
                rows.append((item[0] if isinstance(item, tuple) else item, rank, i, gid, item))
        rows.sort(key=lambda r: r[:3])
        return rows

    def rows(self, kind: str) -> list[tuple]:
        if kind == "edges":
            return [(t, "edge", gid, "", i) for t, _, i, gid, _ in self._merged(self.edges)]
        if kind == "registers":
            return [(t, "register", gid, "", v[1]) for t, _, _, gid, v in
                    self._merged(self.registers)]
        if kind == "tokens":
            return [(m.time, m.kind, m.link, f"{m.src}>{m.dst}", m.channel) for m in self.tokens]
        if kind == "violations":
            return [(v.time, "bundling", v.link, v.gprm, v.slack) for v in self.violations]
        raise ValueError(kind)

    def write_csv(self, out_dir: str) -> list[str]:
        """Write edges/registers/tokens/violations CSVs (plus environment when present)."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for kind in ("edges", "registers", "tokens", "violations"):
            path = os.path.join(out_dir, f"{kind}.csv")
            write_rows(path, HEADER, self.rows(kind))
            paths.append(path)
        if self.environment:
            path = os.path.join(out_dir, "environment.csv")
            write_rows(path, ("time_ps", "temperature_c", "r_th", "edge_rate_per_s"),
                       [(e.time, f"{e.temperature:.9f}", f"{e.r_th:.9g}", f"{e.edge_rate:.9g}")
                        for e in self.environment])
            paths.append(path)
        return paths


def write_rows(path: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
