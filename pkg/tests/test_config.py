import glob
import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gals_sim.config import derive_seed, dumps, format_time, load, parse, parse_time
from gals_sim.core import validate_topology
from gals_sim.engine import simulate
from gals_sim.errors import ConfigError
from gals_sim.experiments import Experiment, SimSettings, thermal_run
from gals_sim.policies import SpreadSpectrum
from gals_sim.topologies import KINDS, random_network

from conftest import CONFIGS, config_path

ALL_CONFIGS = sorted(os.path.basename(p)[:-5] for p in glob.glob(os.path.join(CONFIGS, "*.toml")))

MINIMAL = """\
[[apb]]
id = "osc"
logic = "passthrough"
datapath = { o = "1ns" }

[[link]]
id = "o"
kind = "loop"
apb = "osc"
channels = ["2ns"]
"""


# -- values -----------------------------------------------------------------------

@pytest.mark.parametrize("text, ps", [
    (0, 0), (5000, 5000), ("250ps", 250), ("5ns", 5000), ("2.5us", 2_500_000),
    ("10ms", 10**10), ("1s", 10**12), ("1e3ps", 1000), ("0.001ns", 1),
])
def test_parse_time(text, ps):
    assert parse_time(text) == (ps, "ps")


@pytest.mark.parametrize("bad", [-1, "5", "5 min", "0.5ps", True, 1.5, "1.5ev", "ns"])
def test_parse_time_rejects(bad):
    with pytest.raises(ValueError):
        parse_time(bad, allow_events=True)


def test_event_counts_only_where_allowed():
    assert parse_time("20000ev", allow_events=True) == (20000, "ev")
    with pytest.raises(ValueError):
        parse_time("20000ev")


@given(st.integers(0, 10**15))
def test_format_time_round_trips(ps):
    assert parse_time(format_time(ps)) == (ps, "ps")


def test_format_time_picks_the_largest_exact_unit():
    assert [format_time(v) for v in (0, 7, 5000, 2_500_000, 10**10, 3 * 10**12)] == \
        ["0ps", "7ps", "5ns", "2500ns", "10ms", "3s"]


@given(st.integers(0, 2**63), st.integers(0, 1000))
def test_derived_seeds_are_valid_lfsr_states(seed, index):
    s = derive_seed(seed, index)
    assert 1 <= s <= 0xFFFF


def test_derived_seeds_differ_between_apbs():
    assert len({derive_seed(7, i) for i in range(100)}) == 100


# -- whole configs ----------------------------------------------------------------

@pytest.mark.parametrize("name", ALL_CONFIGS)
def test_shipped_configs_parse_and_round_trip(name):
    exp = load(config_path(name))
    assert isinstance(exp, Experiment)
    again = parse(dumps(exp), "dumped")
    assert again == exp
    assert dumps(again) == dumps(exp)


def test_shipped_configs_validate_as_intended():
    warned = {n for n in ALL_CONFIGS if validate_topology(load(config_path(n)).network).warnings}
    assert warned == {"underdelayed"}


@settings(max_examples=40)
@given(st.sampled_from(KINDS), st.integers(0, 2**32))
def test_random_networks_round_trip(kind, seed):
    _, net = random_network(random.Random(seed), kind)
    exp = Experiment(net, SimSettings(seed=seed, max_events=500))
    again = parse(dumps(exp))
    assert again.network == net
    assert simulate(again.network, max_events=500).edges == simulate(net, max_events=500).edges


def test_minimal_config_defaults():
    exp = parse(MINIMAL)
    assert exp.sim == SimSettings() and exp.environment is None
    assert simulate(exp.network, until=10_000).edges["osc"] == [0, 2000, 4000, 6000, 8000, 10000]


def test_until_accepts_time_or_events():
    exp = parse("[sim]\nuntil = \"5ns\"\n" + MINIMAL)
    assert (exp.sim.until, exp.sim.max_events) == (5000, None)
    exp = parse("[sim]\nuntil = \"300ev\"\n" + MINIMAL)
    assert (exp.sim.until, exp.sim.max_events) == (None, 300)


def test_seed_override_rederives_lfsr_states():
    base = load(config_path("superpipe"))
    other = load(config_path("superpipe"), seed=99)
    assert other.sim.seed == 99

    def lfsr(exp):
        return [a.policy.lfsr.register for a in exp.network.apbs
                if isinstance(a.policy, SpreadSpectrum)]
    assert lfsr(base) != lfsr(other)
    assert lfsr(load(config_path("superpipe"), seed=99)) == lfsr(other)


def test_explicit_lfsr_seed_is_kept():
    text = MINIMAL.replace('channels = ["2ns"]', 'channels = ["2ns", "3ns"]').replace(
        'datapath = { o = "1ns" }',
        'datapath = { o = "1ns" }\npolicy = { kind = "spread", link = "o", pair = [0, 1], '
        'seed = 4660 }')
    exp = parse(text, seed=5)
    assert exp.network.apbs[0].policy.lfsr.register == 4660


def test_custom_table_logic():
    text = """\
[[apb]]
id = "t"
logic = "custom-table"
width = 2
table = [[0, 2], [2, 1], [1, 0]]
datapath = { o = "1ns" }

[[link]]
id = "o"
kind = "loop"
apb = "t"
channels = ["2ns"]
"""
    tr = simulate(parse(text).network, max_events=8)
    # register history holds the value written at each pulse
    assert [v for _, v in tr.registers["t"]][:6] == [2, 1, 0, 2, 1, 0]


# -- diagnostics ----------------------------------------------------------------------

def error_for(text):
    with pytest.raises(ConfigError) as info:
        parse(text, "x.toml")
    return str(info.value)


@pytest.mark.parametrize("edit, where", [
    (('apb = "osc"', 'apb = "os"'), "x.toml:9: link[0].apb: undefined GPRM 'os'"),
    (('channels = ["2ns"]', 'channels = ["2 parsecs"]'), "x.toml:10: link[0].channels"),
    (('logic = "passthrough"', 'logic = "nand"'), "x.toml:3: apb[0].logic"),
    (('kind = "loop"', 'kind = "ring"'), "x.toml:8: link[0].kind"),
    (('id = "osc"', 'id = "osc"\ncolour = "red"'), "x.toml:3: apb[0].colour"),
    (('datapath = { o = "1ns" }', 'datapath = {}'), "x.toml:1: apb[0]: MalformedNetwork"),
])
def test_diagnostics_name_line_and_path(edit, where):
    msg = error_for(MINIMAL.replace(*edit))
    assert msg.startswith(where), msg


def test_syntax_errors_report_a_line():
    assert error_for("[[apb]\n").startswith("x.toml:1:")


def test_missing_pieces():
    assert "at least one [[apb]]" in error_for("[sim]\nseed = 1\n")
    assert "sim.sink" in error_for('[sim]\nsink = "nobody"\n' + MINIMAL)
    with pytest.raises(ConfigError) as info:
        load("/nonexistent/x.toml")
    assert info.value.code == "ConfigError" and "cannot read config" in str(info.value)


def test_burst_period_must_be_positive():
    text = MINIMAL.replace('datapath = { o = "1ns" }',
                           'datapath = { o = "1ns" }\npolicy = { kind = "burst", period = 0 }')
    assert "period" in error_for(text)


# -- thermal examples ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def hotter():
    return thermal_run(load(config_path("hotter")))


def test_hotter_throughput_never_rises_after_the_failure(hotter):
    post = [s.rates[-1] for s in hotter.post_failure()]
    assert post and all(b <= a for a, b in zip(post, post[1:]))
    assert hotter.final_rate < hotter.pre_rate


def test_hotter_settles_at_the_frozen_rate_fixed_point(hotter):
    assert hotter.residual < 0.1
    assert abs(hotter.final_temperature - hotter.oracle_temperature) < 0.1


def without_failures(text):
    return text[:text.index("failures = [")]


def test_equilibrium_start_stays_put():
    text = without_failures(dumps(load(config_path("hotter"))))
    text = text.replace("t_device = 25.0", 't_device = "equilibrium"')
    exp = parse(text.replace('until = "30ms"', 'until = "2ms"'))
    assert exp.environment.equilibrium_start
    temps = [s.temperature for s in thermal_run(exp, oracle=False).samples]
    assert max(temps) - min(temps) < 0.05


def test_zero_temperature_coefficient_keeps_rates_constant():
    text = dumps(load(config_path("hotter"))).replace("k = 0.002", "k = 0.0")
    res = thermal_run(parse(text.replace('until = "30ms"', 'until = "12ms"')), oracle=False)
    # temperature still jumps at the failure, the delays do not follow it
    assert res.samples[-1].temperature > res.samples[0].temperature + 1
    assert len({s.edge_rate for s in res.samples[1:]}) == 1
