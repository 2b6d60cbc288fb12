import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from monoflow.errors import (
    DisconnectedGraph,
    DuplicateEdge,
    EmptySlackSet,
    NonPositiveEpsilon,
    NonPositiveParameter,
    ScenarioError,
    VertexMismatch,
)
from monoflow.netgraph import (
    INLET,
    OUTLET,
    build_graph,
    segment_bound_holds,
    graph_to_dict,
    lift_scenario,
    make_scenario,
    refine,
    refine_segments,
    restrict_scenario,
)
from monoflow.timefunc import Sinusoid


def pipe_spec(**kw):
    edge = {"tail": "1", "head": "2", "length": 20000.0, "diameter": 0.9144, "friction": 0.01}
    edge.update(kw)
    return {"edges": [edge], "slack": ["1"]}


def test_single_edge_graph_partition():
    g = build_graph(pipe_spec())
    assert g.slack_set == {"1"} and g.flow_set == {"2"}
    assert g.edge(("1", "2")).area == pytest.approx(math.pi * 0.9144**2 / 4)


def test_five_node_topology(five):
    g = five.graph
    assert len(g.vertices) == 5 and len(g.edges) == 5
    assert g.flow_set == {"2", "3", "4", "5"}


@pytest.mark.parametrize(
    "spec, err",
    [
        ({"edges": pipe_spec()["edges"], "slack": []}, EmptySlackSet),
        (pipe_spec(length=-1.0), NonPositiveParameter),
        (pipe_spec(diameter=0.0), NonPositiveParameter),
        (
            {"edges": pipe_spec()["edges"] + [{"tail": "2", "head": "1", "length": 5.0}], "slack": ["1"]},
            DuplicateEdge,
        ),
        (
            {"edges": pipe_spec()["edges"] + [{"tail": "3", "head": "4", "length": 5.0}], "slack": ["1"]},
            DisconnectedGraph,
        ),
        ({"edges": pipe_spec()["edges"], "slack": ["9"]}, VertexMismatch),
    ],
)
def test_invalid_graphs_raise(spec, err):
    with pytest.raises(err):
        build_graph(spec)


def test_graph_dict_round_trip(five):
    g2 = build_graph(graph_to_dict(five.graph))
    assert g2 == five.graph


@pytest.mark.parametrize(
    "eps, n, seg",
    [(5000.0, 4, 5000.0), (30000.0, 1, 20000.0), (5999.0, 4, 5000.0)],
)
def test_refinement_examples(eps, n, seg):
    rg = refine(build_graph(pipe_spec()), eps)
    assert len(rg.segments[("1", "2")]) == n
    assert all(e.length == pytest.approx(seg) for e in rg.graph.edges)
    assert segment_bound_holds(rg)


def test_refine_rejects_bad_epsilon():
    with pytest.raises(NonPositiveEpsilon):
        refine(build_graph(pipe_spec()), 0.0)


@given(st.floats(1.0, 1e5), st.floats(1.0, 1e5))
def test_definition_bound_and_length_partition(L, eps):
    g = build_graph(pipe_spec(length=L))
    rg = refine(g, eps)
    assert segment_bound_holds(rg)
    total = sum(e.length for e in rg.graph.edges)
    assert abs(total - L) <= 1e-12 * L
    # interior coordinates are strictly increasing along the edge
    xs = [rg.coordinate_map[v][2] for v in rg.interior_vertices(("1", "2"))]
    assert xs == sorted(xs) and all(0 < x < L for x in xs)


def test_classification_of_refined_vertices(five):
    rg = refine(five.graph, 10000.0)
    assert rg.classify("5") == ("parent-node", "5")
    assert rg.classify("1-2#1") == ("edge-interior", ("1", "2"))
    assert rg.first_segment(("1", "2")) == ("1", "1-2#1")


def test_refine_segments_exact_count(five):
    rg = refine_segments(five.graph, 3)
    for key, segs in rg.segments.items():
        assert len(segs) == 3
        assert sum(rg.graph.edge(s).length for s in segs) == pytest.approx(five.graph.edge(key).length)


def test_lift_interpolates_and_preserves(pipe):
    g = pipe.graph
    s = make_scenario(g, {"2": 10.0}, {"1": 55.0}, 100.0, initial_state={"1": 55.0, "2": 45.0})
    rg = refine(g, 10000.0)
    lifted = lift_scenario(s, rg)
    assert lifted.initial_state["1-2#1"] == pytest.approx(50.0)
    assert lifted.injections["2"](3.0) == 10.0
    assert lifted.injections["1-2#1"](3.0) == 0.0
    back = restrict_scenario(lifted, rg)
    assert back.injections == s.injections and back.compat == s.compat
    assert back.initial_state == s.initial_state


def test_lift_uniform_state_with_actuator_endpoints(pipe):
    g = pipe.graph
    s = make_scenario(
        g, {"2": 0.0}, {"1": 50.0}, 100.0, compressors={("1", "2", INLET): 1.2}, initial_state={"1": 50.0, "2": 60.0}
    )
    rg = refine(g, 5000.0)
    lifted = lift_scenario(s, rg)
    # endpoints after compression: 60 at the inlet end, 60 at the outlet
    assert all(lifted.initial_state[v] == pytest.approx(60.0) for v in rg.interior_vertices(("1", "2")))
    assert (rg.first_segment(("1", "2")), INLET) in lifted.compat
    back = restrict_scenario(lifted, rg)
    assert back.compat == s.compat


def test_lift_is_idempotent_and_guards_other_refinements(pipe):
    s = make_scenario(pipe.graph, {"2": 0.0}, {"1": 50.0}, 10.0)
    rg = refine(pipe.graph, 5000.0)
    lifted = lift_scenario(s, rg)
    assert lift_scenario(lifted, rg) is lifted
    with pytest.raises(VertexMismatch):
        lift_scenario(lifted, refine(pipe.graph, 2500.0))


@pytest.mark.parametrize(
    "kwargs, err",
    [
        (dict(injections={}, slack={"1": 50.0}), VertexMismatch),
        (dict(injections={"2": 0.0}, slack={"1": -1.0}), ScenarioError),
        (dict(injections={"2": 0.0}, slack={"1": Sinusoid(60.0, 100.0)}), ScenarioError),
        (dict(injections={"2": 0.0}, slack={"1": 50.0}, initial={"1": 40.0, "2": 50.0}), ScenarioError),
        (dict(injections={"2": 0.0}, slack={"1": 50.0}, initial={"1": 50.0}), VertexMismatch),
        (dict(injections={"2": 0.0}, slack={"1": 50.0}, comp={("2", "1", OUTLET): 1.1}), VertexMismatch),
    ],
)
def test_scenario_validation(pipe, kwargs, err):
    with pytest.raises(err):
        make_scenario(
            pipe.graph,
            kwargs["injections"],
            kwargs["slack"],
            100.0,
            compressors=kwargs.get("comp"),
            initial_state=kwargs.get("initial"),
        )


def test_frozen_data_reads_ratios(five):
    from monoflow.fixtures import five_node_scenario

    d = five_node_scenario().frozen(0.0)
    assert d.ratio(("1", "2"), INLET) == pytest.approx(1.2)
    assert d.ratio(("4", "5"), INLET) == 1.0
