"""Deterministic discrete-event kernel for GPRM networks.

Each link keeps its flip-flops and received wires as integer bitmasks, and
every token test goes through the same XOR/XNOR parity as
:func:`gals_sim.core.evaluate_parity`. A GPRM counts how many of its
endpoints currently see odd parity; it fires when the count reaches the
number of endpoints and its reset hold is released.

Event order is ``(time, priority, seq)`` with environment updates first,
then releases, then parity arrivals. All events sharing a timestamp are
applied before any GPRM fires; ready GPRMs then fire in ascending id
(declaration) order. Since every channel delay is positive, a firing never
enables another GPRM at the same instant, so one pass reaches the fixpoint.
"""

from __future__ import annotations

import heapq
import operator
from dataclasses import replace
from typing import NamedTuple

from .core import (Arrival, Direction, Endpoint, InFlight, LinkRole, LinkState, Network,
                   TokenLocation, check_structure, token_location)
from .errors import (ProtocolViolation, StallDecision, TokenNotHeld, TransitionInFlight,
                     UnknownChannel)
from .policies import FixedForward
from .thermal import Environment, FailureStep, effective_delay, thermal_step
from .trace import EnvSample, TokenMove, Trace, Violation

ENV, RELEASE, ARRIVAL = 0, 1, 2
FWD, BWD, LOOP = 0, 1, 2
_AT_A, _AT_B, _FLIGHT, _BOTH = 0, 1, 2, 3


class Event(NamedTuple):
    time: int
    seq: int
    kind: str            # "environment" | "release" | "arrival"
    target: str          # link id, GPRM id, or "" for environment
    direction: str = ""  # "a->b", "b->a" or "loop"
    channel: int = -1


class Simulator:
    """Mutable simulation state plus the operations that advance it.

    ``check=True`` turns on the per-transition invariant checks (both-side
    parity, and an operational token tracker compared against the parity
    decoding); it costs roughly a third of the throughput.
    """

    def __init__(self, network: Network, environment: Environment | None = None, *,
                 gprm_overhead: int = 0, check: bool = False, record_tokens: bool = True):
        check_structure(network)
        if gprm_overhead < 0:
            raise ValueError("gprm_overhead must be >= 0")
        self.network = network
        self.environment = environment
        self.overhead = gprm_overhead
        self.check = check
        self.record_tokens = record_tokens
        self.now = 0
        self.events = 0
        self.end = 0
        self._seq = 0
        self._queue: list[tuple] = []
        self._ready: list[int] = []

        links = network.links
        self._link_ids = [l.id for l in links]
        self._link_index = {l.id: i for i, l in enumerate(links)}
        self._gprm_ids = [a.id for a in network.apbs]
        self._gprm_index = {g: i for i, g in enumerate(self._gprm_ids)}
        gi = self._gprm_index
        self._lk_loop = [l.is_loop for l in links]
        self._lk_a = [gi[l.a] for l in links]
        self._lk_b = [gi[l.b] for l in links]
        self._xa = [1 if l.xnor_side == "a" else 0 for l in links]
        self._xb = [0 if l.is_loop else (1 if l.xnor_side == "b" else 0) for l in links]
        nl = len(links)
        self._ffa = [0] * nl
        self._ffb = [0] * nl
        self._wf = [0] * nl      # a-driven wires as seen at b
        self._wb = [0] * nl      # wires seen at a (b-driven, or own loop wires)
        self._inflight = [-1] * nl
        self._loc = [_AT_A if x else _AT_B for x in self._xa]
        self._d_f = [[c.delay for c in l.fwd] for l in links]
        self._d_b = [[c.delay for c in l.bwd] for l in links]
        self._carried = [0] * nl
        self._snapshot = [0] * nl
        self._valid_at = [0] * nl
        self._worst = [0] * nl

        self.model = environment.model if environment is not None else None
        self._pending_failures: list[FailureStep] = (
            list(environment.steps) if environment is not None and not environment.frozen else [])

        self._eps: list[list[tuple]] = []
        self._endpoints: list[tuple[Endpoint, ...]] = []
        self._inputs: list[list[int]] = []
        self._inget: list = []                       # snapshot list -> input tuple
        self._held: list[int] = []
        self._n_ep: list[int] = []
        self._hold: list[bool] = []
        self._fired: list[int] = []
        self._limit: list[int | None] = []
        self._reg: list[int] = []
        self._mask: list[int] = []
        self._logic: list = []
        self._policy: list = []
        self._static: list[list[tuple] | None] = []   # precomputed sends for FixedForward
        self._sink: list[bool] = []
        for a in network.apbs:
            g = network.gprm(a.id)
            eps, inputs, held = [], [], 0
            for ep in g.endpoints:
                l = self._link_index[ep.link]
                side = 1 if ep.role is LinkRole.INPUT else 0
                dirn = {LinkRole.OUTPUT: FWD, LinkRole.INPUT: BWD, LinkRole.LOOP: LOOP}[ep.role]
                eps.append((l, side, dirn, ep.n_channels, ep.link))
                if ep.role is LinkRole.INPUT:
                    inputs.append(l)
                else:
                    self._worst[l] = a.datapath[ep.link]
                held += self._parity(l, side)
            self._eps.append(eps)
            self._endpoints.append(g.endpoints)
            self._inputs.append(inputs)
            self._inget.append(_getter(inputs))
            self._held.append(held)
            self._n_ep.append(len(eps))
            self._hold.append(True)
            self._fired.append(0)
            self._limit.append(a.fire_limit)
            self._mask.append(a.mask)
            self._reg.append(a.init & a.mask)
            self._logic.append(getattr(a.logic, "_fn", a.logic))
            self._policy.append(a.policy)
            self._static.append(self._sends_for(len(self._static), a.policy.plan(g.endpoints))
                                if type(a.policy) is FixedForward else None)
            self._sink.append(bool(getattr(a.logic, "is_sink", False)))
        # A consumer whose side starts with the token already holds the
        # producer's initial register value.
        for i, l in enumerate(links):
            if not l.is_loop:
                self._snapshot[i] = network.apb(l.a).init & network.apb(l.a).mask
        self._rescale()

        ng = len(self._gprm_ids)
        self._edges: list[list[int]] = [[] for _ in range(ng)]
        self._hist: list[list[tuple[int, int]]] = [[] for _ in range(ng)]
        self._deliv: list[list[tuple[int, int]]] = [[] for _ in range(ng)]
        self._tokens: list[tuple] = []
        self._violations: list[Violation] = []
        self._env_log: list[EnvSample] = []
        self._marks: list[tuple[int, int] | None] = [None] * ng

        for g in range(ng):
            self._push(0, RELEASE, g, 0, 0)
        if environment is not None and not environment.frozen:
            self._push(environment.dt, ENV, -1, 0, 0)

    # -- helpers -------------------------------------------------------------

    def _push(self, t, prio, a, b, c):
        self._seq += 1
        heapq.heappush(self._queue, (t, prio, self._seq, a, b, c))

    def _parity(self, l: int, side: int) -> int:
        if side == 0:
            return (self._ffa[l].bit_count() + self._wb[l].bit_count() + self._xa[l]) & 1
        return (self._ffb[l].bit_count() + self._wf[l].bit_count() + self._xb[l]) & 1

    def _rescale(self) -> None:
        m = self.model
        if m is None:
            self._e_f = [list(d) for d in self._d_f]
            self._e_b = [list(d) for d in self._d_b]
            self._eworst = list(self._worst)
            return
        self._e_f = [[effective_delay(d, m) for d in ds] for ds in self._d_f]
        self._e_b = [[effective_delay(d, m) for d in ds] for ds in self._d_b]
        self._eworst = [effective_delay(d, m) if d > 0 else 0 for d in self._worst]

    # -- public inspection ----------------------------------------------------

    @property
    def temperature(self) -> float | None:
        return None if self.model is None else self.model.t_device

    @property
    def quiescent(self) -> bool:
        return not self._queue

    def link_state(self, link_id: str) -> LinkState:
        l = self._link_index[link_id]
        link = self.network.links[l]
        nf, nb = len(link.fwd), len(link.bwd)

        def bits(v, n):
            return tuple((v >> i) & 1 for i in range(n))

        flight = None
        if self._inflight[l] >= 0:
            for t, prio, _, a, b, c in self._queue:
                if prio == ARRIVAL and a == l:
                    flight = InFlight(Direction.B_TO_A if b == BWD else Direction.A_TO_B, c, t)
                    break
        if link.is_loop:
            return LinkState(bits(self._ffa[l], nf), (), bits(self._wb[l], nf), (), flight)
        return LinkState(bits(self._ffa[l], nf), bits(self._ffb[l], nb),
                         bits(self._wb[l], nb), bits(self._wf[l], nf), flight)

    def token_location(self, link_id: str) -> TokenLocation:
        return token_location(self.link_state(link_id), self.network.link(link_id))

    def tracked_location(self, link_id: str) -> TokenLocation:
        """Where the operational tracker (not the parity) says the token is."""
        loc = self._loc[self._link_index[link_id]]
        return (TokenLocation.AT_A, TokenLocation.AT_B, TokenLocation.IN_FLIGHT)[loc]

    def holds_all(self, gprm: str) -> bool:
        g = self._gprm_index[gprm]
        return self._held[g] == self._n_ep[g]

    def reset_hold(self, gprm: str) -> bool:
        return self._hold[self._gprm_index[gprm]]

    def register(self, apb: str) -> int:
        return self._reg[self._gprm_index[apb]]

    def policy(self, apb: str):
        return self._policy[self._gprm_index[apb]]

    def pending(self) -> list[Event]:
        return [self._event(e) for e in sorted(self._queue)]

    def _event(self, e) -> Event:
        t, prio, seq, a, b, c = e
        if prio == ARRIVAL:
            return Event(t, seq, "arrival", self._link_ids[a], ("a->b", "b->a", "loop")[b], c)
        if prio == RELEASE:
            return Event(t, seq, "release", self._gprm_ids[a])
        return Event(t, seq, "environment", "")

    # -- kernel ----------------------------------------------------------------

    def step(self) -> Event | None:
        """Process the next event; None means the queue is empty (quiescent)."""
        if not self._queue:
            return None
        e = self._queue[0]
        self._run(None, 1)
        return self._event(e)

    def run_until(self, until: int | None = None, max_events: int | None = None) -> Trace:
        """Step until simulated time would exceed ``until`` ps, or ``max_events``
        more events were processed, or the queue empties. Re-entrant."""
        self._run(until, max_events)
        if until is not None and self._queue:
            self.end = max(self.end, until)
        else:
            self.end = max(self.end, self.now)
        return self.trace()

    def _run(self, until, max_events) -> None:
        # Hot loop: arrivals are handled inline with the state arrays bound
        # to locals; firing, releases and environment steps are method calls.
        queue = self._queue
        pop = heapq.heappop
        inflight, wf, wb = self._inflight, self._wf, self._wb
        ffa, ffb, xa, xb = self._ffa, self._ffb, self._xa, self._xb
        lk_a, lk_b, lk_loop, loc = self._lk_a, self._lk_b, self._lk_loop, self._loc
        snapshot, carried, valid_at = self._snapshot, self._carried, self._valid_at
        held, n_ep, hold = self._held, self._n_ep, self._hold
        tokens = self._tokens if self.record_tokens else None
        check = self.check
        fire = self._fire
        ready = self._ready
        budget = -1 if max_events is None else max_events
        while queue and budget != 0:
            if until is not None and queue[0][0] > until:
                break
            t, prio, _, l, dirn, ch = pop(queue)
            self.now = t
            self.events += 1
            budget -= 1
            if prio == ARRIVAL:
                bit = 1 << ch
                inflight[l] = -1
                if dirn == FWD:
                    w0 = wf[l]
                    wf[l] = w = (w0 & ~bit) | (ffa[l] & bit)
                    g = lk_b[l]
                    parity = (ffb[l].bit_count() + w.bit_count() + xb[l]) & 1
                    snapshot[l] = carried[l]
                else:
                    w0 = wb[l]
                    wb[l] = w = (w0 & ~bit) | ((ffb if dirn == BWD else ffa)[l] & bit)
                    g = lk_a[l]
                    parity = (ffa[l].bit_count() + w.bit_count() + xa[l]) & 1
                if not parity or (check and w == w0):
                    raise ProtocolViolation(f"t={t}: arrival on link {self._link_ids[l]} "
                                            "did not deliver the token")
                if check:
                    # both-side parity plus the operational tracker
                    side = 1 if dirn == FWD else 0
                    if lk_loop[l]:
                        decoded = _AT_A
                    else:
                        pa = (ffa[l].bit_count() + wb[l].bit_count() + xa[l]) & 1
                        pb = (ffb[l].bit_count() + wf[l].bit_count() + xb[l]) & 1
                        decoded = _BOTH if pa and pb else (_AT_A if pa else
                                                           (_AT_B if pb else _FLIGHT))
                    if decoded != side or loc[l] != _FLIGHT:
                        self._tracker_error(l, side, decoded)
                    loc[l] = side
                if dirn != BWD and t < valid_at[l]:
                    self._violations.append(Violation(t, self._link_ids[l], self._gprm_ids[g],
                                                      t - valid_at[l]))
                if tokens is not None:
                    tokens.append((t, "recv", l, dirn, ch))
                h = held[g] + 1
                held[g] = h
                if h == n_ep[g] and not hold[g]:
                    ready.append(g)
            elif prio == RELEASE:
                hold[l] = self._limit[l] == 0
                if not hold[l] and held[l] == n_ep[l]:
                    ready.append(l)
            else:
                self._environment_step(t)
            if ready and (not queue or queue[0][0] != t):
                if len(ready) > 1:
                    ready.sort()
                batch = ready[:]
                ready.clear()
                for g in batch:
                    fire(g)

    def _tracker_error(self, l, side, decoded) -> None:
        where = f"t={self.now}: link {self._link_ids[l]}"
        if decoded == _BOTH:
            raise ProtocolViolation(f"{where}: token present at both endpoints")
        if self._loc[l] != _FLIGHT:
            raise ProtocolViolation(f"{where}: tracker saw an arrival with no token in flight")
        raise ProtocolViolation(f"{where}: parity says {decoded}, tracker says {side}")

    def fire_gprm(self, gprm: str) -> None:
        """Fire ``gprm`` now. Guarded: raises TokenNotHeld unless it is ready."""
        g = self._gprm_index[gprm]
        if self._hold[g] or self._held[g] != self._n_ep[g]:
            raise TokenNotHeld(f"GPRM {gprm} is not ready to fire at t={self.now}")
        if g in self._ready:
            self._ready.remove(g)
        self._fire(g)

    def _sends_for(self, g: int, plan) -> list[tuple[int, int, int, int]]:
        """(link, side, direction, channel) for every endpoint the plan sends on."""
        sends = []
        for l, side, dirn, nch, lid in self._eps[g]:
            ch = plan.get(lid, -1)
            if ch is None:
                continue
            if not 0 <= ch < nch:
                raise UnknownChannel(f"GPRM {self._gprm_ids[g]}: no channel {ch} on link {lid}")
            sends.append((l, side, dirn, ch))
        return sends

    def _fire(self, g: int) -> None:
        now = self.now
        self._edges[g].append(now)
        inputs = self._inget[g](self._snapshot)
        reg = self._reg[g]
        new = self._logic[g](reg, inputs) & self._mask[g]
        sends = self._static[g]
        if sends is None:
            temp = None if self.model is None else self.model.t_device
            plan, self._policy[g] = self._policy[g].decide(self._endpoints[g], reg, inputs, temp)
            sends = self._sends_for(g, plan)
        if not sends:
            raise StallDecision(f"t={now}: GPRM {self._gprm_ids[g]} kept every token; "
                                "it can never fire again", self._gprm_ids[g], now)
        self._reg[g] = new
        self._hist[g].append((now, new))
        if self._sink[g]:
            self._deliv[g].append((now, inputs[0]))
        depart = now + self.overhead
        inflight = self._inflight
        queue = self._queue
        check = self.check
        record = self.record_tokens
        ffa, ffb, wf, wb, xa, xb, loc = (self._ffa, self._ffb, self._wf, self._wb, self._xa,
                                         self._xb, self._loc)
        for l, side, dirn, ch in sends:
            if inflight[l] >= 0:
                raise TransitionInFlight(f"t={now}: link {self._link_ids[l]} already has a "
                                         "transition in flight")
            if check:
                if side == 0:
                    p = (ffa[l].bit_count() + wb[l].bit_count() + xa[l]) & 1
                else:
                    p = (ffb[l].bit_count() + wf[l].bit_count() + xb[l]) & 1
                if not p or loc[l] != side:
                    self._check_send(l, side)
                loc[l] = _FLIGHT
            if side == 0:
                ffa[l] ^= 1 << ch
                arrival = depart + self._e_f[l][ch]
                self._valid_at[l] = now + self._eworst[l]
                if dirn == FWD:
                    self._carried[l] = new
            else:
                ffb[l] ^= 1 << ch
                arrival = depart + self._e_b[l][ch]
            inflight[l] = arrival
            self._seq += 1
            heapq.heappush(queue, (arrival, ARRIVAL, self._seq, l, dirn, ch))
            if record:
                self._tokens.append((now, "send", l, dirn, ch))
        self._held[g] -= len(sends)
        self._fired[g] += 1
        if self._limit[g] is not None and self._fired[g] >= self._limit[g]:
            self._hold[g] = True

    def _check_send(self, l, side) -> None:
        if side == 0:
            p = (self._ffa[l].bit_count() + self._wb[l].bit_count() + self._xa[l]) & 1
        else:
            p = (self._ffb[l].bit_count() + self._wf[l].bit_count() + self._xb[l]) & 1
        if not p:
            raise TokenNotHeld(f"t={self.now}: link {self._link_ids[l]} side "
                               f"{'ab'[side]} does not hold the token")
        if self._loc[l] != side:
            raise ProtocolViolation(f"t={self.now}: link {self._link_ids[l]}: tracker has the "
                                    "token elsewhere")
        self._loc[l] = _FLIGHT

    def check_bundling(self, arrival: Arrival) -> Violation | None:
        """Would ``arrival`` announce data that is not yet valid? Backward never checked."""
        l = self._link_index[arrival.link]
        if arrival.direction is Direction.B_TO_A and not self._lk_loop[l]:
            return None
        if arrival.time < self._valid_at[l]:
            g = self._lk_b[l]
            return Violation(arrival.time, arrival.link, self._gprm_ids[g],
                             arrival.time - self._valid_at[l])
        return None

    # -- environment ----------------------------------------------------------

    def edge_rate(self) -> float:
        """Period-exact edges/s summed over GPRMs since the previous call."""
        return sum(self.gprm_rates())

    def gprm_rates(self) -> list[float]:
        """Period-exact edges/s per GPRM since the previous call (advances the marks).

        Per GPRM, the rate is (new edges) / (time between the last edge seen
        at the previous call and the newest edge), so a constant period P
        yields exactly 1/P regardless of window phase.
        """
        rates = [0.0] * len(self._edges)
        for g, edges in enumerate(self._edges):
            n = len(edges)
            mark = self._marks[g]
            if n == 0:
                continue
            if mark is None:
                if n >= 2 and edges[-1] > edges[0]:
                    rates[g] = (n - 1) * 1e12 / (edges[-1] - edges[0])
                self._marks[g] = (edges[-1], n)
            elif n > mark[1]:
                rates[g] = (n - mark[1]) * 1e12 / (edges[-1] - mark[0])
                self._marks[g] = (edges[-1], n)
        return rates

    def _environment_step(self, t) -> None:
        env = self.environment
        dt = env.dt * 1e-12
        rates = self.gprm_rates()
        rate = sum(rates)
        self.model = thermal_step(self.model, rate * dt, dt)
        while self._pending_failures and self._pending_failures[0].at <= t:
            f = self._pending_failures.pop(0)
            self.model = replace(self.model, r_th=self.model.r_th * f.r_th_factor)
        self._rescale()
        self._env_log.append(EnvSample(t, self.model.t_device, rate, self.model.r_th, tuple(rates)))
        self._push(t + env.dt, ENV, -1, 0, 0)

    # -- results --------------------------------------------------------------

    def trace(self) -> Trace:
        ids = self._gprm_ids
        lids = self._link_ids
        la, lb = self._lk_a, self._lk_b

        def decode(rec):
            t, kind, l, dirn, ch = rec
            src, dst = (ids[la[l]], ids[lb[l]]) if dirn != BWD else (ids[lb[l]], ids[la[l]])
            return TokenMove(t, kind, lids[l], src, dst, ch)

        return Trace(
            order=tuple(ids),
            edges={g: list(self._edges[i]) for i, g in enumerate(ids)},
            registers={g: list(self._hist[i]) for i, g in enumerate(ids)},
            raw_tokens=list(self._tokens),
            violations=list(self._violations),
            deliveries={g: list(self._deliv[i]) for i, g in enumerate(ids) if self._sink[i]},
            environment=list(self._env_log),
            end=self.end,
            events=self.events,
            token_decoder=decode,
        )


def _getter(idx: list[int]):
    if not idx:
        return lambda snap: ()
    if len(idx) == 1:
        i = idx[0]
        return lambda snap: (snap[i],)
    return operator.itemgetter(*idx)


def reset(network: Network, environment: Environment | None = None, **kwargs) -> Simulator:
    """Fresh state: all flip-flops 0, tokens at XNOR sides, every GPRM held, releases at t=0."""
    return Simulator(network, environment, **kwargs)


def simulate(network: Network, until: int | None = None, max_events: int | None = None,
             environment: Environment | None = None, **kwargs) -> Trace:
    return reset(network, environment, **kwargs).run_until(until, max_events)
