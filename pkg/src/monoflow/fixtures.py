"""Reference networks and scenarios.

The single pipe uses standard benchmark parameters (20 km, D = 0.9144 m, lambda = 0.01,
inlet held at 6.5 MPa). The 5-node network's pipe data and baseline
withdrawals are not public; the values below are stand-ins chosen so that
pressures sit near 5 MPa and a 3 MPa floor is binding only for deep
withdrawal envelopes. Checks built on it are qualitative or self-derived.
"""
from __future__ import annotations

import math

import numpy as np

from .io import GasSpec, Network
from .netgraph import INLET, CompatibilitySchedule, Scenario, build_graph, make_scenario
from .physics import pressure_to_density
from .robust import Envelope
from .timefunc import Constant, Product, Sinusoid, Sum, TanhStep

HOUR = 3600.0
DAY = 24 * HOUR
MPA = 1e6

# ------------------------------------------------------------- single pipe

PIPE_LENGTH = 20_000.0
PIPE_DIAMETER = 0.9144
PIPE_FRICTION = 0.01
INLET_PRESSURE = 6.5 * MPA
PIPE_AMPLITUDES = (120.0, 300.0, 400.0, 600.0)


def single_pipe() -> Network:
    g = build_graph(
        {
            "name": "single-pipe",
            "edges": [
                {"tail": "1", "head": "2", "length": PIPE_LENGTH, "diameter": PIPE_DIAMETER, "friction": PIPE_FRICTION}
            ],
            "slack": ["1"],
        }
    )
    return Network(g, GasSpec())


def slow_withdrawal(amplitude, horizon=DAY, cycles=3):
    """``-A (1 - cos(2 pi cycles t / T)) / 2``: starts at rest, peaks at ``-A``."""
    return Sinusoid(amplitude / 2.0, horizon / cycles, math.pi / 2.0, -amplitude / 2.0)


def single_pipe_scenario(amplitude, horizon=DAY, cycles=3, net=None) -> Scenario:
    net = single_pipe() if net is None else net
    rho_in = pressure_to_density(INLET_PRESSURE, net.gas.c2)
    return make_scenario(net.graph, {"2": slow_withdrawal(amplitude, horizon, cycles)}, {"1": rho_in}, horizon)


def single_pipe_steady(withdrawal, horizon=HOUR, net=None) -> Scenario:
    net = single_pipe() if net is None else net
    rho_in = pressure_to_density(INLET_PRESSURE, net.gas.c2)
    return make_scenario(net.graph, {"2": -float(withdrawal)}, {"1": rho_in}, horizon)


# ------------------------------------------------------------ 5-node network

FIVE_NODE_PIPES = (
    ("1", "2", 50_000.0, 0.8),
    ("2", "3", 40_000.0, 0.6),
    ("2", "4", 60_000.0, 0.6),
    ("3", "4", 30_000.0, 0.5),
    ("4", "5", 40_000.0, 0.5),
)
FIVE_NODE_FRICTION = 0.01
FIVE_NODE_SLACK_PRESSURE = 5.0 * MPA
BASE_WITHDRAWALS = {"2": 20.0, "3": 30.0, "4": 30.0, "5": 40.0}
COMPRESSORS = {"C1": (("1", "2"), 1.2), "C2": (("2", "3"), 1.1), "C3": (("3", "4"), 1.1)}
FIVE_NODE_EPSILON = 10_000.0
P_MIN = 3.0 * MPA
P_MAX = 7.0 * MPA


def five_node() -> Network:
    g = build_graph(
        {
            "name": "five-node",
            "edges": [
                {"tail": a, "head": b, "length": L, "diameter": D, "friction": FIVE_NODE_FRICTION}
                for a, b, L, D in FIVE_NODE_PIPES
            ],
            "slack": ["1"],
        }
    )
    return Network(g, GasSpec())


def compressor3_schedule(c0=COMPRESSORS["C3"][1], period=DAY):
    """``c3(t) = c3(0) (1 + (1 - cos(6 pi t / T0)) / 10)`` with ``T0`` one day."""
    bump = Sinusoid(-0.1, period / 3.0, math.pi / 2.0, 0.1)  # (1 - cos) / 10
    return Product((Constant(c0), Sum((Constant(1.0), bump))))


def five_node_controls(varying=True) -> dict:
    compat = {}
    for name, (key, ratio) in COMPRESSORS.items():
        fn = compressor3_schedule(ratio) if (name == "C3" and varying) else Constant(ratio)
        compat[(key, INLET)] = CompatibilitySchedule("multiplicative", fn, INLET)
    return compat


def five_node_scenario(injections=None, horizon=DAY, varying=True, net=None) -> Scenario:
    net = five_node() if net is None else net
    if injections is None:
        injections = {v: -w for v, w in BASE_WITHDRAWALS.items()}
    rho1 = pressure_to_density(FIVE_NODE_SLACK_PRESSURE, net.gas.c2)
    s = make_scenario(net.graph, injections, {"1": rho1}, horizon)
    return Scenario(s.injections, s.slack_densities, s.horizon, five_node_controls(varying), None)


def scaled_withdrawals(factor) -> dict:
    return {v: -factor * w for v, w in BASE_WITHDRAWALS.items()}


REVERSAL_TIME = 3.8888 * HOUR
REVERSAL_WIDTH = 0.25 * HOUR


def crossing_pair(delta=8.0, t_r=REVERSAL_TIME, tau=REVERSAL_WIDTH, horizon=12 * HOUR, net=None):
    """Two scenarios ordered (q1 >= q2) except at node 5 after ``t_r``.

    Node 5 withdraws ``w5 + delta tanh((t - t_r)/tau)`` in scenario 1 and
    ``w5 - delta tanh(...)`` in scenario 2; all other injections agree.
    """
    w5 = BASE_WITHDRAWALS["5"]
    s = TanhStep(-1.0, 1.0, t_r, tau)
    q1 = {v: -w for v, w in BASE_WITHDRAWALS.items()}
    q2 = dict(q1)
    q1["5"] = -(w5 + delta * s)
    q2["5"] = -(w5 - delta * s)
    return (
        five_node_scenario(q1, horizon, net=net),
        five_node_scenario(q2, horizon, net=net),
    )


def five_node_envelope(lower_factor=1.1, upper_factor=0.9, net=None) -> Envelope:
    net = five_node() if net is None else net
    return Envelope(
        {v: Constant(-upper_factor * w) for v, w in BASE_WITHDRAWALS.items()},
        {v: Constant(-lower_factor * w) for v, w in BASE_WITHDRAWALS.items()},
        pressure_to_density(P_MIN, net.gas.c2),
        pressure_to_density(P_MAX, net.gas.c2),
    )


def deep_envelope(net=None) -> Envelope:
    """Lower bound deep enough to push node 5 under 3 MPa."""
    return five_node_envelope(lower_factor=1.6, net=net)


NMP_HORIZON = 12 * HOUR


def nmp_realized(env: Envelope, second_violation=False, horizon=NMP_HORIZON, fraction=0.9, net=None) -> Scenario:
    """Realized injections: every node at ``q2 + fraction (q1 - q2)``; node 5
    then steps 30 % of its baseline above that, out of the envelope, after 4 h. With
    ``second_violation`` node 3 also dips briefly below ``q2`` (too briefly to
    pull its density across the lower envelope run).
    """
    inj = {v: env.lower[v] + fraction * (env.upper[v] - env.lower[v]) for v in env.upper}
    inj["5"] = inj["5"] + TanhStep(0.0, 0.3 * BASE_WITHDRAWALS["5"], 4 * HOUR, 0.5 * HOUR)
    if second_violation:
        depth = 0.35 * BASE_WITHDRAWALS["3"]
        dip = TanhStep(0.0, -depth, 2 * HOUR, 0.1 * HOUR) + TanhStep(0.0, depth, 2.5 * HOUR, 0.1 * HOUR)
        inj["3"] = inj["3"] + dip
    return five_node_scenario(inj, horizon, net=net)


# -------------------------------------------------------- random order pairs

SUITE_EDGE_LENGTH = 20_000.0


def random_network(rng, max_vertices=6):
    """Tree or single-cycle graph with equal edge lengths and random pipes."""
    n = int(rng.integers(2, max_vertices + 1))
    names = [str(k) for k in range(1, n + 1)]
    pairs = []
    for k in range(1, n):
        p = int(rng.integers(0, k))
        pairs.append((p, k))
    if n >= 3 and rng.random() < 0.5:
        existing = {frozenset(p) for p in pairs}
        options = [(a, b) for a in range(n) for b in range(a + 1, n) if frozenset((a, b)) not in existing]
        if options:
            pairs.append(options[int(rng.integers(len(options)))])
    edges = []
    for a, b in pairs:
        if rng.random() < 0.5:
            a, b = b, a
        edges.append(
            {
                "tail": names[a],
                "head": names[b],
                "length": SUITE_EDGE_LENGTH,
                "diameter": float(rng.uniform(0.4, 0.9)),
                "friction": float(rng.uniform(0.008, 0.015)),
            }
        )
    slack = [names[0]]
    if n >= 3 and rng.random() < 0.25:
        slack.append(names[int(rng.integers(1, n))])
    gas = GasSpec(R=float(rng.uniform(420.0, 520.0)), T=float(rng.uniform(270.0, 310.0)))
    return Network(build_graph({"edges": edges, "slack": slack}), gas)


def _smooth_positive(rng, mean, rel_amp, horizon):
    """``mean (1 + a sin(...))`` with ``|a| <= rel_amp`` (never negative for rel_amp <= 1)."""
    a = float(rng.uniform(-rel_amp, rel_amp))
    period = horizon / float(rng.integers(1, 4))
    return Sinusoid(mean * a, period, float(rng.uniform(0, 2 * math.pi)), mean)


def random_ordered_pair(rng, net: Network, horizon=4 * HOUR):
    """Scenario pair with ``q1 >= q2`` and ``rho1 >= rho2`` at all times."""
    g = net.graph
    q1, q2 = {}, {}
    for v in sorted(g.flow_set):
        w = _smooth_positive(rng, float(rng.uniform(0.0, 8.0)), 0.5, horizon)
        gap = _smooth_positive(rng, float(rng.uniform(0.0, 3.0)), 1.0, horizon) if rng.random() < 0.8 else Constant(0.0)
        q2[v] = -w
        q1[v] = -w + gap
    r1, r2 = {}, {}
    for v in sorted(g.slack_set):
        p = float(rng.uniform(4.0, 6.0)) * MPA
        base = _smooth_positive(rng, pressure_to_density(p, net.gas.c2), 0.03, horizon)
        lift = _smooth_positive(rng, float(rng.uniform(0.0, 0.3)), 1.0, horizon) if rng.random() < 0.5 else Constant(0.0)
        r2[v] = base
        r1[v] = base + lift
    compressors = {}
    for e in g.edges:
        if rng.random() < 0.3:
            ratio = _smooth_positive(rng, float(rng.uniform(1.0, 1.25)), 0.05, horizon)
            compressors[(e.tail, e.head, INLET)] = ratio
    s1 = make_scenario(g, q1, r1, horizon, compressors)
    s2 = make_scenario(g, q2, r2, horizon, compressors)
    return s1, s2


def all_fixture_networks():
    return {"single-pipe": single_pipe(), "five-node": five_node()}


def scenario_density_scale(net: Network, s: Scenario) -> float:
    return float(max(np.max(f(np.linspace(0, s.horizon, 11))) for f in s.slack_densities.values()))


# ------------------------------------------------------------ file export

_STAND_IN_NOTE = (
    "# Stand-in parameters: the original pipe data and withdrawals for this network are not public.\n"
    "# Values were chosen so nodal pressures sit near 5 MPa; checks against them are qualitative.\n"
)
_BENCHMARK_NOTE = "# Benchmark single-pipe parameters (20 km, D = 0.9144 m, lambda = 0.01, inlet 6.5 MPa).\n"


def fixture_documents() -> dict:
    """File name -> (header comment, plain dict) for every built-in fixture."""
    from .io import compressors_to_list, envelope_to_dict, network_to_dict, scenario_to_dict

    pipe, five = single_pipe(), five_node()
    docs = {"single_pipe.yaml": (_BENCHMARK_NOTE, network_to_dict(pipe))}
    for a in PIPE_AMPLITUDES:
        docs[f"single_pipe_A{int(a)}.yaml"] = (_BENCHMARK_NOTE, scenario_to_dict(single_pipe_scenario(a, net=pipe)))
    docs["five_node.yaml"] = (_STAND_IN_NOTE, network_to_dict(five))
    docs["five_node_controls.yaml"] = (_STAND_IN_NOTE, {"compressors": compressors_to_list(five_node_controls())})
    docs["five_node_base.yaml"] = (_STAND_IN_NOTE, scenario_to_dict(five_node_scenario(net=five)))
    s1, s2 = crossing_pair(net=five)
    docs["five_node_reversal_1.yaml"] = (_STAND_IN_NOTE, scenario_to_dict(s1))
    docs["five_node_reversal_2.yaml"] = (_STAND_IN_NOTE, scenario_to_dict(s2))
    env = five_node_envelope(net=five)
    docs["five_node_envelope.yaml"] = (_STAND_IN_NOTE, envelope_to_dict(env))
    docs["five_node_deep_envelope.yaml"] = (_STAND_IN_NOTE, envelope_to_dict(deep_envelope(net=five)))
    docs["five_node_nmp_realized.yaml"] = (_STAND_IN_NOTE, scenario_to_dict(nmp_realized(env, net=five)))
    return docs


def export_fixtures(directory) -> list:
    from pathlib import Path

    from .io import dump_yaml

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (note, doc) in fixture_documents().items():
        path = directory / name
        path.write_text(note + dump_yaml(doc))
        written.append(path)
    return written
