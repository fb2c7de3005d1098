"""Links, parity-encoded tokens, rendezvous modules and processing blocks.

Everything here is a pure value layer. The simulator keeps its own packed
copy of the link state for speed, but it follows exactly the equations in
:func:`evaluate_parity` and :func:`toggle_channel`, and it can hand back a
:class:`LinkState` snapshot for any link at any time.

Bits are stored as tuples of 0/1. A side's parity is the XOR of the
flip-flops it drives plus the wires it receives; the XNOR side inverts it.
All flip-flops start at 0, so the token starts at the XNOR side.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple, Sequence

from .errors import MalformedNetwork, TokenNotHeld, TransitionInFlight, ProtocolViolation

Time = int  # picoseconds


class LinkKind(enum.Enum):
    COMMUNICATION = "communication"
    CLOSED_LOOP = "loop"


class LinkRole(enum.Enum):
    OUTPUT = "output"
    INPUT = "input"
    LOOP = "loop"


class Convention(enum.Enum):
    XOR = "xor"
    XNOR = "xnor"


class Direction(enum.Enum):
    A_TO_B = "a->b"
    B_TO_A = "b->a"


class TokenLocation(enum.Enum):
    AT_A = "a"
    AT_B = "b"
    IN_FLIGHT = "flight"


@dataclass(frozen=True)
class Channel:
    id: int
    delay: Time

    def __post_init__(self):
        if self.delay <= 0:
            raise MalformedNetwork(f"channel {self.id}: delay must be > 0 ps, got {self.delay}")


def channels(*delays: int) -> tuple[Channel, ...]:
    """``channels(5000, 7000)`` -> channel 0 at 5 ns, channel 1 at 7 ns."""
    return tuple(Channel(i, int(d)) for i, d in enumerate(delays))


@dataclass(frozen=True)
class Link:
    """A token channel bundle.

    For a communication link ``a`` is the producer (Output role) and ``b``
    the consumer (Input role); ``fwd`` carries data-announcing transitions
    a->b and ``bwd`` carries update requests b->a. A closed loop has
    ``a == b``, no ``bwd`` channels, and its XNOR side is always ``a``.
    """

    id: str
    kind: LinkKind
    a: str
    b: str
    fwd: tuple[Channel, ...]
    bwd: tuple[Channel, ...] = ()
    xnor_side: str = "a"

    @classmethod
    def communication(cls, id, producer, consumer, fwd, bwd, xnor_side="a") -> "Link":
        return cls(id, LinkKind.COMMUNICATION, producer, consumer, _as_channels(fwd),
                   _as_channels(bwd), xnor_side)

    @classmethod
    def loop(cls, id, gprm, chans) -> "Link":
        return cls(id, LinkKind.CLOSED_LOOP, gprm, gprm, _as_channels(chans), (), "a")

    @property
    def is_loop(self) -> bool:
        return self.kind is LinkKind.CLOSED_LOOP

    def convention(self, side: str) -> Convention:
        return Convention.XNOR if side == self.xnor_side else Convention.XOR

    def channels_from(self, side: str) -> tuple[Channel, ...]:
        return self.fwd if side == "a" else self.bwd


def _as_channels(spec) -> tuple[Channel, ...]:
    spec = tuple(spec)
    if all(isinstance(c, Channel) for c in spec):
        return spec
    return channels(*spec)


class InFlight(NamedTuple):
    direction: Direction
    channel: int
    arrival: Time


class Arrival(NamedTuple):
    """A scheduled parity transition reaching the far side of a link."""

    time: Time
    link: str
    direction: Direction
    channel: int


@dataclass(frozen=True)
class LinkState:
    """Flip-flop outputs and received wire values at both ends of one link.

    ``received_a`` holds what side ``a`` sees (the b-driven wires, or for a
    closed loop its own wires after the delay unit); ``received_b`` holds
    what ``b`` sees of the a-driven wires.
    """

    ff_a: tuple[int, ...]
    ff_b: tuple[int, ...]
    received_a: tuple[int, ...]
    received_b: tuple[int, ...]
    in_flight: InFlight | None = None


def initial_link_state(link: Link) -> LinkState:
    nf, nb = len(link.fwd), len(link.bwd)
    if link.is_loop:
        return LinkState((0,) * nf, (), (0,) * nf, ())
    return LinkState((0,) * nf, (0,) * nb, (0,) * nb, (0,) * nf)


def evaluate_parity(own_ffs: Sequence[int], received: Sequence[int], convention: Convention) -> int:
    """XOR of every bit, inverted for the XNOR side. 1 means token present."""
    p = (sum(own_ffs) + sum(received)) & 1
    return p ^ 1 if convention is Convention.XNOR else p


def side_parity(state: LinkState, link: Link, side: str) -> int:
    if side == "a":
        return evaluate_parity(state.ff_a, state.received_a, link.convention("a"))
    return evaluate_parity(state.ff_b, state.received_b, link.convention("b"))


def token_location(state: LinkState, link: Link) -> TokenLocation:
    pa = side_parity(state, link, "a")
    if link.is_loop:
        return TokenLocation.AT_A if pa else TokenLocation.IN_FLIGHT
    pb = side_parity(state, link, "b")
    if pa and pb:
        raise ProtocolViolation(f"link {link.id}: token present at both endpoints")
    if pa:
        return TokenLocation.AT_A
    if pb:
        return TokenLocation.AT_B
    return TokenLocation.IN_FLIGHT


def _flip(bits: tuple[int, ...], i: int) -> tuple[int, ...]:
    return bits[:i] + (bits[i] ^ 1,) + bits[i + 1:]


def toggle_channel(state: LinkState, link: Link, direction: Direction, channel: int,
                   now: Time) -> tuple[LinkState, Arrival]:
    """Invert the sender's flip-flop for ``channel`` and schedule its arrival."""
    sender = "a" if direction is Direction.A_TO_B else "b"
    if link.is_loop and direction is not Direction.A_TO_B:
        raise MalformedNetwork(f"link {link.id}: closed loops only carry a->a transitions")
    chans = link.channels_from(sender)
    if not 0 <= channel < len(chans):
        raise MalformedNetwork(f"link {link.id}: no channel {channel} from side {sender}")
    if state.in_flight is not None:
        raise TransitionInFlight(f"link {link.id}: a transition is already in flight")
    if not side_parity(state, link, sender):
        raise TokenNotHeld(f"link {link.id}: side {sender} does not hold the token")
    arrival = now + chans[channel].delay
    flight = InFlight(direction, channel, arrival)
    if sender == "a":
        new = LinkState(_flip(state.ff_a, channel), state.ff_b, state.received_a,
                        state.received_b, flight)
    else:
        new = LinkState(state.ff_a, _flip(state.ff_b, channel), state.received_a,
                        state.received_b, flight)
    return new, Arrival(arrival, link.id, direction, channel)


def deliver(state: LinkState, link: Link) -> LinkState:
    """Complete the in-flight transition: the far side now sees the driver value."""
    flight = state.in_flight
    if flight is None:
        raise ProtocolViolation(f"link {link.id}: nothing in flight to deliver")
    ch = flight.channel
    if link.is_loop:
        received_a = state.received_a[:ch] + (state.ff_a[ch],) + state.received_a[ch + 1:]
        return LinkState(state.ff_a, state.ff_b, received_a, state.received_b, None)
    if flight.direction is Direction.A_TO_B:
        received_b = state.received_b[:ch] + (state.ff_a[ch],) + state.received_b[ch + 1:]
        return LinkState(state.ff_a, state.ff_b, state.received_a, received_b, None)
    received_a = state.received_a[:ch] + (state.ff_b[ch],) + state.received_a[ch + 1:]
    return LinkState(state.ff_a, state.ff_b, received_a, state.received_b, None)


class Endpoint(NamedTuple):
    """One link as seen by the GPRM that controls it."""

    link: str
    role: LinkRole
    n_channels: int  # channels this GPRM drives on the link


@dataclass(frozen=True)
class Gprm:
    id: str
    endpoints: tuple[Endpoint, ...]

    def role_of(self, link_id: str) -> LinkRole:
        for ep in self.endpoints:
            if ep.link == link_id:
                return ep.role
        raise KeyError(link_id)


@dataclass(frozen=True)
class Apb:
    """Register + logic function + flow-control policy, clocked by its own GPRM.

    ``datapath`` maps every output link and loop link id to the worst-case
    data path delay (ps) that its forward channels must exceed.
    ``fire_limit`` models an exhausted environment: after that many clock
    pulses the AND output is held low again.
    """

    id: str
    logic: Any
    policy: Any
    init: int = 0
    width: int = 16
    datapath: Mapping[str, Time] = field(default_factory=dict)
    fire_limit: int | None = None

    @property
    def gprm(self) -> str:
        return self.id

    @property
    def mask(self) -> int:
        return (1 << self.width) - 1


@dataclass(frozen=True)
class Network:
    apbs: tuple[Apb, ...]
    links: tuple[Link, ...]

    def __post_init__(self):
        object.__setattr__(self, "apbs", tuple(self.apbs))
        object.__setattr__(self, "links", tuple(self.links))

    def apb(self, apb_id: str) -> Apb:
        for a in self.apbs:
            if a.id == apb_id:
                return a
        raise KeyError(apb_id)

    def link(self, link_id: str) -> Link:
        for l in self.links:
            if l.id == link_id:
                return l
        raise KeyError(link_id)

    def gprm(self, gprm_id: str) -> Gprm:
        eps = []
        for l in self.links:
            if l.is_loop:
                if l.a == gprm_id:
                    eps.append(Endpoint(l.id, LinkRole.LOOP, len(l.fwd)))
            elif l.a == gprm_id:
                eps.append(Endpoint(l.id, LinkRole.OUTPUT, len(l.fwd)))
            elif l.b == gprm_id:
                eps.append(Endpoint(l.id, LinkRole.INPUT, len(l.bwd)))
        return Gprm(gprm_id, tuple(eps))

    def gprms(self) -> tuple[Gprm, ...]:
        return tuple(self.gprm(a.id) for a in self.apbs)


# -- static validation -------------------------------------------------------

@dataclass(frozen=True)
class BundlingWarning:
    apb: str
    link: str
    channel: int
    delay: Time
    worst_case: Time

    @property
    def slack(self) -> int:
        return self.delay - self.worst_case

    def __str__(self):
        return (f"bundling: apb {self.apb} link {self.link} channel {self.channel}: "
                f"delay {self.delay} ps <= worst-case datapath {self.worst_case} ps "
                f"(slack {self.slack} ps)")


@dataclass(frozen=True)
class DeadlockRisk:
    apb: str

    def __str__(self):
        return (f"deadlock-risk: apb {self.apb} may retain every communication token "
                f"but has no closed-loop link")


@dataclass(frozen=True)
class ValidationReport:
    warnings: tuple[BundlingWarning | DeadlockRisk, ...] = ()

    @property
    def bundling(self) -> tuple[BundlingWarning, ...]:
        return tuple(w for w in self.warnings if isinstance(w, BundlingWarning))

    @property
    def deadlock(self) -> tuple[DeadlockRisk, ...]:
        return tuple(w for w in self.warnings if isinstance(w, DeadlockRisk))

    def format(self) -> str:
        lines = [str(w) for w in self.warnings]
        lines.append(f"{len(self.warnings)} warnings")
        return "\n".join(lines)


def check_structure(network: Network) -> None:
    """Raise MalformedNetwork on dangling references or inconsistent roles."""
    apb_ids = [a.id for a in network.apbs]
    if len(set(apb_ids)) != len(apb_ids):
        raise MalformedNetwork("duplicate apb id")
    link_ids = [l.id for l in network.links]
    if len(set(link_ids)) != len(link_ids):
        raise MalformedNetwork("duplicate link id")
    known = set(apb_ids)
    for l in network.links:
        for end in (l.a, l.b):
            if end not in known:
                raise MalformedNetwork(f"link {l.id}: endpoint {end!r} is not a known GPRM")
        if not l.fwd:
            raise MalformedNetwork(f"link {l.id}: needs at least one forward channel")
        if l.xnor_side not in ("a", "b"):
            raise MalformedNetwork(f"link {l.id}: xnor side must be 'a' or 'b'")
        if l.is_loop:
            if l.a != l.b or l.bwd or l.xnor_side != "a":
                raise MalformedNetwork(f"link {l.id}: closed loop must be a self-link "
                                       "without backward channels")
        else:
            if l.a == l.b:
                raise MalformedNetwork(f"link {l.id}: communication link joins a GPRM to itself")
            if not l.bwd:
                raise MalformedNetwork(f"link {l.id}: needs at least one backward channel")
        for chans in (l.fwd, l.bwd):
            if [c.id for c in chans] != list(range(len(chans))):
                raise MalformedNetwork(f"link {l.id}: channel ids must be 0..n-1")
    for a in network.apbs:
        g = network.gprm(a.id)
        if not g.endpoints:
            raise MalformedNetwork(f"apb {a.id}: GPRM controls no links")
        for ep in g.endpoints:
            if ep.role in (LinkRole.OUTPUT, LinkRole.LOOP) and ep.link not in a.datapath:
                raise MalformedNetwork(f"apb {a.id}: no worst-case datapath delay "
                                       f"declared for {ep.role.value} link {ep.link}")
        extra = set(a.datapath) - {ep.link for ep in g.endpoints
                                   if ep.role is not LinkRole.INPUT}
        if extra:
            raise MalformedNetwork(f"apb {a.id}: datapath delay for non-output link(s) "
                                   f"{sorted(extra)}")
        if a.width < 1:
            raise MalformedNetwork(f"apb {a.id}: register width must be >= 1")
        if a.fire_limit is not None and a.fire_limit < 0:
            raise MalformedNetwork(f"apb {a.id}: fire limit must be >= 0")
        check = getattr(a.policy, "check", None)
        if check is not None:
            check(g.endpoints)
        lcheck = getattr(a.logic, "check", None)
        if lcheck is not None:
            lcheck(a.id, sum(ep.role is LinkRole.INPUT for ep in g.endpoints))


def validate_topology(network: Network) -> ValidationReport:
    check_structure(network)
    warnings: list[BundlingWarning | DeadlockRisk] = []
    for a in network.apbs:
        g = network.gprm(a.id)
        for ep in g.endpoints:
            if ep.role is LinkRole.INPUT:
                continue  # update requests carry no data
            worst = a.datapath[ep.link]
            for ch in network.link(ep.link).fwd:
                if ch.delay <= worst:
                    warnings.append(BundlingWarning(a.id, ep.link, ch.id, ch.delay, worst))
        comm = [ep for ep in g.endpoints if ep.role is not LinkRole.LOOP]
        has_loop = any(ep.role is LinkRole.LOOP for ep in g.endpoints)
        retains = getattr(a.policy, "may_retain_all", None)
        if comm and not has_loop and retains is not None and retains(g.endpoints):
            warnings.append(DeadlockRisk(a.id))
    return ValidationReport(tuple(warnings))
