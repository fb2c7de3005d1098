import random
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gals_sim.core import Apb, Direction, Link, Network, TokenLocation
from gals_sim.engine import Simulator, reset, simulate
from gals_sim.errors import ProtocolViolation, StallDecision, TokenNotHeld
from gals_sim.logic import Logic
from gals_sim.policies import Adaptive, Custom, FixedForward
from gals_sim.thermal import Environment, FailureStep, ThermalModel, effective_delay
from gals_sim.topologies import (KINDS, NS, fork_join, oscillator, pipeline, random_network,
                                 ring, sequential_machine)

delays = st.integers(1, 100 * NS)


# -- reference models -------------------------------------------------------------

def fifo_oracle(items):
    """A source pushing 1..items through any chain of queues delivers them in order."""
    q = deque(range(1, items + 1))
    out = []
    while q:
        out.append(q.popleft())
    return out


def burst_oracle(items, period):
    """Accumulator clocked ``period`` times per transfer, as the burst controller does.

    The first pulse after reset consumes item 1 and transfers at once; every
    later transfer happens after ``period`` pulses that each add the item
    currently held on the input link.
    """
    reg, out, pulse, item = 0, [], 0, 1
    while item <= items:
        reg += item
        if pulse % period == 0:
            out.append(reg)
            item += 1
        pulse += 1
    return out


# -- basic schedules ---------------------------------------------------------------

def test_oscillator_hand_traced():
    tr = simulate(oscillator(10_000), until=100_000)
    assert tr.edges["osc"] == list(range(0, 100_001, 10_000))


def test_reset_state():
    net = ring(3, 1)
    sim = reset(net)
    assert all(sim.reset_hold(a.id) for a in net.apbs)
    for link in net.links:
        st_ = sim.link_state(link.id)
        assert set(st_.ff_a) | set(st_.ff_b) | set(st_.received_a) | set(st_.received_b) <= {0}
    assert sim.token_location("l0") is TokenLocation.AT_B
    assert sim.token_location("l1") is TokenLocation.AT_A
    pending = sim.pending()
    assert [e.kind for e in pending] == ["release"] * 3 and {e.time for e in pending} == {0}
    assert [sim.register(a.id) for a in net.apbs] == [0, 1, 2]


def test_step_reports_events_in_order():
    sim = reset(oscillator(1000))
    kinds = [sim.step().kind for _ in range(4)]
    assert kinds == ["release", "arrival", "arrival", "arrival"]
    assert sim.now == 3000


def test_release_does_not_fire_gprm_without_tokens():
    net = pipeline(1)
    sim = reset(net)
    sim.step()  # release src at 0
    with pytest.raises(TokenNotHeld):
        sim.fire_gprm("sink")


def test_run_in_pieces_equals_one_run():
    net = pipeline(3, items=40)
    whole = simulate(net)
    sim = reset(net)
    for t in range(0, 1_000_000, 37_123):
        sim.run_until(t)
    pieces = sim.run_until()
    assert pieces.edges == whole.edges and pieces.deliveries == whole.deliveries
    assert pieces.rows("tokens") == whole.rows("tokens")


def test_finite_source_quiesces():
    sim = reset(pipeline(2, items=5))
    tr = sim.run_until()
    assert sim.quiescent and tr.delivered("sink") == [1, 2, 3, 4, 5]
    assert len(tr.edges["src"]) == 5


def test_zero_item_source_never_fires():
    tr = simulate(pipeline(1, items=0))
    assert tr.edges["src"] == [] and tr.delivered("sink") == []


# -- oracles ----------------------------------------------------------------------

@settings(max_examples=60)
@given(st.integers(1, 6), st.integers(1, 40), st.lists(delays, min_size=21, max_size=21),
       st.integers(0, 3 * NS))
def test_pipeline_matches_fifo_oracle(stages, items, ds, overhead):
    n = stages + 1
    fwd, bwd = ds[:n], ds[7:7 + n]
    worst = [max(0, f - 1 - d % 7) for f, d in zip(fwd, ds[14:14 + n])]
    net = pipeline(stages, items=items, fwd=fwd, bwd=bwd, worst=worst)
    tr = reset(net, check=True, gprm_overhead=overhead).run_until()
    assert tr.delivered("sink") == fifo_oracle(items)
    assert tr.violations == []


def test_fork_join_doubles_every_item():
    tr = reset(fork_join(items=30), check=True).run_until()
    assert tr.delivered("sink") == [2 * i for i in range(1, 31)]


@pytest.mark.parametrize("period", [1, 2, 3, 5])
def test_sequential_machine_matches_burst_oracle(period):
    tr = reset(sequential_machine(period=period, items=8), check=True).run_until()
    assert tr.delivered("sink") == burst_oracle(8, period)
    # one transfer per `period` pulses after the first
    assert len(tr.edges["seq"]) == 1 + 7 * period


def test_burst_oracle_hand_values():
    assert burst_oracle(3, 3) == [1, 7, 16]


@pytest.mark.parametrize("stages, tokens", [(2, 1), (3, 1), (4, 2), (6, 5)])
def test_ring_conserves_values(stages, tokens):
    net = ring(stages, tokens)
    tr = reset(net, check=True).run_until(max_events=5_000)
    seen = {v for hist in tr.registers.values() for _, v in hist}
    assert seen <= set(range(stages))
    assert all(len(e) > 100 for e in tr.edges.values())


@pytest.mark.parametrize("d, overhead", [(1, 0), (10_000, 0), (7_919, 13), (3, 5)])
def test_closed_loop_period_is_exact(d, overhead):
    tr = reset(oscillator(d), gprm_overhead=overhead).run_until(max_events=2_000)
    edges = tr.edges["osc"]
    assert edges == [k * (d + overhead) for k in range(len(edges))]


def test_sequential_gprm_holding_its_comm_tokens_runs_at_loop_period():
    net = sequential_machine(period=10**9, loop_delay=3 * NS, items=1)
    tr = simulate(net, max_events=500)
    seq = tr.edges["seq"]
    assert all(b - a == 3 * NS for a, b in zip(seq[1:], seq[2:]))


# -- protocol properties -------------------------------------------------------------

def link_moves(trace):
    by_link = {}
    for m in trace.tokens:
        by_link.setdefault(m.link, []).append(m)
    return by_link


@settings(max_examples=40)
@given(st.sampled_from(KINDS), st.integers(0, 2**32))
def test_token_alternates_and_is_conserved(kind, seed):
    """Per link: send/recv strictly alternate, and comm tokens alternate direction."""
    _, net = random_network(random.Random(seed), kind)
    tr = reset(net, check=True).run_until(max_events=3_000)
    for link_id, moves in link_moves(tr).items():
        link = net.link(link_id)
        kinds = [m.kind for m in moves]
        assert kinds[::2] == ["send"] * len(kinds[::2])
        assert kinds[1::2] == ["recv"] * len(kinds[1::2])
        if not link.is_loop:
            senders = [m.src for m in moves if m.kind == "send"]
            first = link.a if link.xnor_side == "a" else link.b
            expected = [first if i % 2 == 0 else (link.b if first == link.a else link.a)
                        for i in range(len(senders))]
            assert senders == expected
        in_flight = kinds.count("send") - kinds.count("recv")
        assert in_flight in (0, 1)


@settings(max_examples=40)
@given(st.sampled_from(KINDS), st.integers(0, 2**32))
def test_pulse_waits_for_every_token_it_sent(kind, seed):
    """A link sent on at one pulse must deliver back before the GPRM's next pulse."""
    _, net = random_network(random.Random(seed), kind)
    tr = reset(net).run_until(max_events=2_000)
    events = {}
    for m in tr.tokens:
        who = m.src if m.kind == "send" else m.dst
        events.setdefault((who, m.link), []).append((m.time, m.kind))
    for g in net.gprms():
        edges = tr.edges[g.id]
        for ep in g.endpoints:
            seq = events.get((g.id, ep.link), [])
            for a, b in zip(edges, edges[1:]):
                sent = any(t == a and k == "send" for t, k in seq)
                back = any(a < t <= b and k == "recv" for t, k in seq)
                assert back or not sent, (g.id, ep.link, a, b)


@settings(max_examples=30)
@given(st.sampled_from(KINDS), st.integers(0, 2**32))
def test_determinism(kind, seed):
    _, net = random_network(random.Random(seed), kind)
    a = simulate(net, max_events=2_000)
    b = simulate(net, max_events=2_000)
    for k in ("edges", "registers", "tokens", "violations"):
        assert a.rows(k) == b.rows(k)


@settings(max_examples=40)
@given(st.sampled_from(KINDS), st.integers(0, 2**32))
def test_sound_networks_have_no_violations(kind, seed):
    _, net = random_network(random.Random(seed), kind)
    assert simulate(net, max_events=3_000).violations == []


def test_checker_catches_a_corrupted_flip_flop():
    sim = Simulator(pipeline(2), check=True)
    sim.run_until(20_000)
    sim._ffb[1] ^= 1   # a glitch on the consumer's T-FF: token appears on both sides
    with pytest.raises(ProtocolViolation):
        sim.run_until(200_000)


def test_lost_transition_is_detected():
    sim = Simulator(oscillator(1000), check=True)
    sim.run_until(0)
    sim._ffa[0] ^= 1   # undo the toggle that is in flight
    with pytest.raises(ProtocolViolation, match="did not deliver"):
        sim.run_until(5_000)


# -- flow control --------------------------------------------------------------------

def test_policy_keeping_everything_raises_stall_with_context():
    net = pipeline(1)
    apbs = list(net.apbs)
    apbs[1] = Apb("s1", Logic("passthrough"),
                  Custom(lambda eps, reg, ins, temp, state: ({e.link: None for e in eps}, state)),
                  datapath={"l1": 4000})
    with pytest.raises(StallDecision) as info:
        simulate(Network(apbs, net.links), until=10**6)
    assert info.value.gprm == "s1" and info.value.time == 5000


def test_fcl_sees_pre_firing_register_and_inputs():
    seen = []

    def spy(eps, reg, inputs, temp, state):
        seen.append((reg, inputs))
        return {e.link: 0 for e in eps}, state

    net = pipeline(1, items=3)
    apbs = list(net.apbs)
    apbs[1] = Apb("s1", Logic("passthrough"), Custom(spy), datapath={"l1": 4000})
    simulate(Network(apbs, net.links))
    assert seen == [(0, (1,)), (1, (2,)), (2, (3,))]


def test_multi_channel_choice_sets_arrival_time():
    link = Link.communication("l0", "src", "sink", [3000, 8000], [1000])
    apbs = (Apb("src", Logic("counter-source"), FixedForward({"l0": 1}),
                datapath={"l0": 2000}, fire_limit=2),
            Apb("sink", Logic("recording-sink"), FixedForward()))
    tr = simulate(Network(apbs, (link,)))
    assert tr.edges["sink"] == [8000, 17000]
    recv = [m for m in tr.tokens if m.kind == "recv" and m.dst == "sink"]
    assert [m.channel for m in recv] == [1, 1]


# -- bundling -------------------------------------------------------------------------

def test_violation_slack_and_corrected_network():
    bad = pipeline(1, items=5, fwd=[5000, 3000], worst=[4000, 4500])
    tr = simulate(bad)
    assert tr.violations and {v.slack for v in tr.violations} == {-1500}
    assert {(v.link, v.gprm) for v in tr.violations} == {("l1", "sink")}
    good = pipeline(1, items=5, fwd=[5000, 5000], worst=[4000, 4500])
    assert simulate(good).violations == []


def test_check_bundling_ignores_backward_transitions():
    from gals_sim.core import Arrival
    sim = reset(pipeline(1, fwd=[5000, 3000], worst=[4000, 4000]))
    sim.run_until(5000)   # s1 fired at 5000; data valid at 9000
    assert sim.check_bundling(Arrival(8000, "l1", Direction.A_TO_B, 0)).slack == -1000
    assert sim.check_bundling(Arrival(9000, "l1", Direction.A_TO_B, 0)) is None
    assert sim.check_bundling(Arrival(1, "l1", Direction.B_TO_A, 0)) is None


# -- thermal coupling -------------------------------------------------------------------

def test_frozen_temperature_scales_every_delay():
    env = Environment(ThermalModel(k=0.002, t_ref=25.0)).at_temperature(75.0)
    tr = simulate(oscillator(10_000), max_events=100, environment=env)
    assert set(b - a for a, b in zip(tr.edges["osc"], tr.edges["osc"][1:])) == {11_000}
    assert effective_delay(10_000, env.model) == 11_000


def test_failure_step_applies_at_environment_boundary():
    env = Environment(ThermalModel(), dt=1_000_000, steps=(FailureStep(2_500_000, 3.0),))
    tr = simulate(oscillator(100_000), until=5_000_000, environment=env)
    r = [(s.time, s.r_th) for s in tr.environment]
    assert r == [(1_000_000, 10.0), (2_000_000, 10.0), (3_000_000, 30.0),
                 (4_000_000, 30.0), (5_000_000, 30.0)]


def test_temperature_independent_delays_keep_throughput():
    env = Environment(ThermalModel(k=0.0), dt=20_000_000)
    tr = simulate(oscillator(100_000), until=2_000_000_000, environment=env)
    temps = [s.temperature for s in tr.environment]
    assert temps[-1] > temps[0] + 10
    assert {s.edge_rate for s in tr.environment[1:]} == {1e7}


def test_heating_lowers_edge_rate():
    env = Environment(ThermalModel(), dt=20_000_000)
    tr = simulate(oscillator(100_000), until=3_000_000_000, environment=env)
    rates = [s.edge_rate for s in tr.environment]
    assert rates[-1] < rates[0]
    assert all(b <= a for a, b in zip(rates[1:], rates[2:]))


def test_adaptive_policy_switches_channel_when_hot():
    loop = Link.loop("osc.loop", "osc", [10_000, 20_000])
    pol = Adaptive("osc.loop", ((60.0, 1),))
    net = Network((Apb("osc", Logic("counter-source"), pol, datapath={"osc.loop": 9_000}),),
                  (loop,))
    cool = simulate(net, max_events=50, environment=Environment().at_temperature(30.0))
    hot = simulate(net, max_events=50, environment=Environment().at_temperature(70.0))
    gaps = lambda tr: {b - a for a, b in zip(tr.edges["osc"], tr.edges["osc"][1:])}
    assert gaps(cool) == {effective_delay(10_000, ThermalModel(), 30.0)}
    assert gaps(hot) == {effective_delay(20_000, ThermalModel(), 70.0)}
