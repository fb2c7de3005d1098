"""Builders for the network shapes used in experiments and tests."""

from __future__ import annotations

import random
from typing import Sequence

from .core import Apb, Link, Network
from .logic import Logic
from .policies import Burst, FixedForward, FlowPolicy, LfsrState, SpreadSpectrum

NS = 1000


def oscillator(loop_delay: int | Sequence[int] = 10 * NS, *, policy: FlowPolicy | None = None,
               worst: int | None = None, name: str = "osc") -> Network:
    """A lone GPRM cycling its closed loop: one clock edge per loop delay."""
    delays = [loop_delay] if isinstance(loop_delay, int) else list(loop_delay)
    loop = Link.loop(f"{name}.loop", name, delays)
    worst = min(delays) - 1 if worst is None else worst
    apb = Apb(name, Logic("counter-source"), policy or FixedForward(), datapath={loop.id: worst})
    return Network((apb,), (loop,))


def spread_oscillator(fixed: int = 10 * NS, pair: tuple[int, int] = (9 * NS, 11 * NS),
                      seed: int = 1, name: str = "osc") -> Network:
    """Oscillator whose loop has channels (fixed, pair[0], pair[1]) and dithers the pair."""
    net = oscillator([fixed, *pair], name=name)
    pol = SpreadSpectrum(f"{name}.loop", (1, 2), LfsrState(seed), fixed_channel=0)
    return Network((_with_policy(net.apbs[0], pol),), net.links)


def _with_policy(apb: Apb, policy: FlowPolicy) -> Apb:
    return Apb(apb.id, apb.logic, policy, apb.init, apb.width, apb.datapath, apb.fire_limit)


def pipeline(stages: int, *, items: int | None = None, fwd: Sequence[int] | None = None,
             bwd: Sequence[int] | None = None, worst: Sequence[int] | None = None,
             width: int = 16) -> Network:
    """``src -> s1 -> ... -> sN -> sink`` with one channel per direction.

    ``fwd``/``bwd``/``worst`` give one value per link (stages + 1 links);
    defaults are 5 ns forward, 2 ns backward, 4 ns worst-case datapath.
    """
    n_links = stages + 1
    fwd = list(fwd) if fwd is not None else [5 * NS] * n_links
    bwd = list(bwd) if bwd is not None else [2 * NS] * n_links
    worst = list(worst) if worst is not None else [4 * NS] * n_links
    names = ["src"] + [f"s{i}" for i in range(1, stages + 1)] + ["sink"]
    links = [Link.communication(f"l{i}", names[i], names[i + 1], [fwd[i]], [bwd[i]])
             for i in range(n_links)]
    apbs = [Apb("src", Logic("counter-source"), FixedForward(), width=width,
                datapath={"l0": worst[0]}, fire_limit=items)]
    for i in range(1, stages + 1):
        apbs.append(Apb(names[i], Logic("passthrough"), FixedForward(), width=width,
                        datapath={f"l{i}": worst[i]}))
    apbs.append(Apb("sink", Logic("recording-sink"), FixedForward(), width=width))
    return Network(tuple(apbs), tuple(links))


def fork_join(*, items: int | None = None, delays: Sequence[int] | None = None,
              width: int = 16) -> Network:
    """``src -> fork -> (b1, b2) -> join(adder) -> sink``; sink sees 2x each item."""
    d = list(delays) if delays is not None else [5 * NS] * 6
    spec = [("l0", "src", "fork"), ("l1", "fork", "b1"), ("l2", "fork", "b2"),
            ("l3", "b1", "join"), ("l4", "b2", "join"), ("l5", "join", "sink")]
    links = [Link.communication(lid, a, b, [d[i]], [max(1, d[i] // 2)])
             for i, (lid, a, b) in enumerate(spec)]
    w = {lid: max(0, d[i] - 1) for i, (lid, _, _) in enumerate(spec)}
    apbs = (
        Apb("src", Logic("counter-source"), FixedForward(), width=width,
            datapath={"l0": w["l0"]}, fire_limit=items),
        Apb("fork", Logic("passthrough"), FixedForward(), width=width,
            datapath={"l1": w["l1"], "l2": w["l2"]}),
        Apb("b1", Logic("passthrough"), FixedForward(), width=width, datapath={"l3": w["l3"]}),
        Apb("b2", Logic("passthrough"), FixedForward(), width=width, datapath={"l4": w["l4"]}),
        Apb("join", Logic("adder"), FixedForward(), width=width, datapath={"l5": w["l5"]}),
        Apb("sink", Logic("recording-sink"), FixedForward(), width=width),
    )
    return Network(apbs, tuple(links))


def ring(stages: int, tokens: int, *, fwd: Sequence[int] | None = None,
         bwd: Sequence[int] | None = None, width: int = 16) -> Network:
    """Ring of passthrough stages; ``tokens`` links start with data at the consumer.

    Stage ``i`` starts with register value ``i``. A ring needs
    ``0 < tokens < stages`` to make progress.
    """
    fwd = list(fwd) if fwd is not None else [5 * NS] * stages
    bwd = list(bwd) if bwd is not None else [2 * NS] * stages
    names = [f"r{i}" for i in range(stages)]
    links = []
    for i in range(stages):
        side = "b" if i < tokens else "a"
        links.append(Link.communication(f"l{i}", names[i], names[(i + 1) % stages],
                                        [fwd[i]], [bwd[i]], xnor_side=side))
    apbs = tuple(Apb(names[i], Logic("passthrough"), FixedForward(), init=i, width=width,
                     datapath={f"l{i}": fwd[i] - 1}) for i in range(stages))
    return Network(apbs, tuple(links))


def sequential_machine(*, period: int = 4, loop_delay: int = 3 * NS, items: int | None = None,
                       fwd: int = 5 * NS, bwd: int = 2 * NS, width: int = 16) -> Network:
    """``src -> seq -> sink`` where seq runs ``period`` loop pulses per item."""
    links = (
        Link.communication("in", "src", "seq", [fwd], [bwd]),
        Link.communication("out", "seq", "sink", [fwd], [bwd]),
        Link.loop("seq.loop", "seq", [loop_delay]),
    )
    apbs = (
        Apb("src", Logic("counter-source"), FixedForward(), width=width,
            datapath={"in": fwd - 1}, fire_limit=items),
        Apb("seq", Logic("accumulator"), Burst(period), width=width,
            datapath={"out": fwd - 1, "seq.loop": loop_delay - 1}),
        Apb("sink", Logic("recording-sink"), FixedForward(), width=width),
    )
    return Network(apbs, links)


# -- randomized legal networks ----------------------------------------------

KINDS = ("pipeline", "fork-join", "ring", "sequential")


def random_network(rng: random.Random, kind: str | None = None,
                   min_delay: int = 1 * NS, max_delay: int = 100 * NS,
                   items: int | None = None) -> tuple[str, Network]:
    """A random legal network (all bundling constraints met), delays in ps."""
    kind = kind or rng.choice(KINDS)

    def d():
        return rng.randint(min_delay, max_delay)

    if kind == "pipeline":
        stages = rng.randint(1, 6)
        n = stages + 1
        fwd = [d() for _ in range(n)]
        worst = [rng.randint(0, f - 1) for f in fwd]
        return kind, pipeline(stages, items=items, fwd=fwd, bwd=[d() for _ in range(n)],
                              worst=worst)
    if kind == "fork-join":
        return kind, fork_join(items=items, delays=[max(2, d()) for _ in range(6)])
    if kind == "ring":
        stages = rng.randint(2, 6)
        return kind, ring(stages, rng.randint(1, stages - 1),
                          fwd=[max(2, d()) for _ in range(stages)],
                          bwd=[d() for _ in range(stages)])
    if kind == "sequential":
        return kind, sequential_machine(period=rng.randint(1, 5), loop_delay=max(2, d()),
                                        items=items, fwd=max(2, d()), bwd=d())
    raise ValueError(f"unknown topology kind {kind!r}")
