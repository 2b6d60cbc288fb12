"""Metric graphs, spatial refinement and scenario bookkeeping.

Sign convention: an injection ``q_j > 0`` adds mass to the network at ``j``.
Withdrawals (offtakes) are negative injections.

Vertex ids are strings. Interior vertices created by refinement are named
``"<tail>-<head>#<k>"`` with ``k = 1 .. n-1`` counted from the tail.
"""
from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import (
    DisconnectedGraph,
    DuplicateEdge,
    EmptySlackSet,
    GraphError,
    NonPositiveEpsilon,
    NonPositiveParameter,
    ScenarioError,
    VertexMismatch,
)
from .timefunc import Constant, TimeFunction, as_time_function, sample_times

INLET = "inlet"
OUTLET = "outlet"


@dataclass(frozen=True)
class Edge:
    tail: str
    head: str
    length: float
    diameter: float
    friction: float
    area: float

    @property
    def key(self) -> tuple:
        return (self.tail, self.head)


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple
    edges: tuple
    slack_set: frozenset
    flow_set: frozenset
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "_by_key", {e.key: e for e in self.edges})
        ins, outs = defaultdict(list), defaultdict(list)
        for e in self.edges:
            outs[e.tail].append(e)
            ins[e.head].append(e)
        object.__setattr__(self, "_in", {v: tuple(ins[v]) for v in self.vertices})
        object.__setattr__(self, "_out", {v: tuple(outs[v]) for v in self.vertices})

    def edge(self, key) -> Edge:
        return self._by_key[tuple(key)]

    def has_edge(self, key) -> bool:
        return tuple(key) in self._by_key

    def in_edges(self, v) -> tuple:
        """Edges (i, v): the incoming neighbourhood of ``v``."""
        return self._in[v]

    def out_edges(self, v) -> tuple:
        return self._out[v]

    def neighbors(self, v) -> list:
        return [e.tail for e in self._in[v]] + [e.head for e in self._out[v]]

    @property
    def edge_keys(self) -> list:
        return [e.key for e in self.edges]


def _pipe_area(diameter):
    return math.pi * diameter * diameter / 4.0


def build_graph(spec: Mapping) -> MetricGraph:
    """Validate a graph description and return a :class:`MetricGraph`.

    ``spec`` has ``edges`` (mappings with tail, head, length, diameter,
    friction and optional area), ``slack`` (vertex ids with prescribed
    density) and optionally ``vertices`` and ``name``. Every vertex not in
    ``slack`` is a flow vertex.
    """
    raw_edges = spec.get("edges") or []
    edges = []
    seen = set()
    for raw in raw_edges:
        try:
            tail, head = str(raw["tail"]), str(raw["head"])
            length = float(raw["length"])
            diameter = float(raw.get("diameter", 1.0))
            friction = float(raw.get("friction", 1.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed edge {raw!r}: {exc}") from exc
        area = float(raw["area"]) if raw.get("area") is not None else _pipe_area(diameter)
        for label, value in (("length", length), ("diameter", diameter), ("friction", friction), ("area", area)):
            if not (value > 0 and math.isfinite(value)):
                raise NonPositiveParameter(f"edge ({tail}, {head}) has {label} = {value}")
        if tail == head:
            raise GraphError(f"self loop at {tail}")
        key = (tail, head)
        if key in seen or (head, tail) in seen:
            raise DuplicateEdge(f"parallel edge between {tail} and {head}")
        seen.add(key)
        edges.append(Edge(tail, head, length, diameter, friction, area))

    vertices = [str(v) for v in spec.get("vertices") or []]
    for e in edges:
        for v in (e.tail, e.head):
            if v not in vertices:
                vertices.append(v)
    if len(set(vertices)) != len(vertices):
        raise GraphError("duplicate vertex ids")

    slack = frozenset(str(v) for v in spec.get("slack") or [])
    if not slack:
        raise EmptySlackSet("at least one slack (density) vertex is required")
    unknown = slack - set(vertices)
    if unknown:
        raise VertexMismatch(f"slack vertices not in graph: {sorted(unknown)}")
    flow = frozenset(vertices) - slack
    if "flow" in spec and spec["flow"] is not None:
        declared = frozenset(str(v) for v in spec["flow"])
        if declared != flow:
            raise GraphError("flow set must be the complement of the slack set")

    # connectivity, ignoring orientation
    adj = defaultdict(set)
    for e in edges:
        adj[e.tail].add(e.head)
        adj[e.head].add(e.tail)
    reached = set(slack)
    queue = deque(slack)
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in reached:
                reached.add(w)
                queue.append(w)
    if reached != set(vertices):
        raise DisconnectedGraph(f"vertices unreachable from any slack vertex: {sorted(set(vertices) - reached)}")

    return MetricGraph(tuple(vertices), tuple(edges), slack, flow, str(spec.get("name", "")))


def graph_to_dict(g: MetricGraph) -> dict:
    return {
        "name": g.name,
        "vertices": list(g.vertices),
        "slack": sorted(g.slack_set),
        "edges": [
            {
                "tail": e.tail,
                "head": e.head,
                "length": e.length,
                "diameter": e.diameter,
                "friction": e.friction,
                "area": e.area,
            }
            for e in g.edges
        ],
    }


# ---------------------------------------------------------------- refinement


@dataclass(frozen=True)
class RefinedGraph:
    graph: MetricGraph
    parent: MetricGraph
    parent_map: dict
    coordinate_map: dict
    segments: dict
    epsilon: float

    def is_parent_vertex(self, v) -> bool:
        return self.coordinate_map[v][0] == "vertex"

    def classify(self, v):
        """``("parent-node", vertex)`` or ``("edge-interior", parent edge key)``."""
        kind = self.coordinate_map[v]
        if kind[0] == "vertex":
            return "parent-node", kind[1]
        return "edge-interior", kind[1]

    def first_segment(self, parent_key):
        return self.segments[tuple(parent_key)][0]

    def last_segment(self, parent_key):
        return self.segments[tuple(parent_key)][-1]

    def interior_vertices(self, parent_key) -> list:
        segs = self.segments[tuple(parent_key)]
        return [k[1] for k in segs[:-1]]


def segment_count(length: float, epsilon: float) -> int:
    ratio = length / epsilon
    # guard against 4.000000000001 turning into 5 segments
    n = math.ceil(ratio - 1e-9 * ratio)
    return max(1, n)


def refine(g: MetricGraph, epsilon: float) -> RefinedGraph:
    """Split every edge of length L into ``ceil(L/epsilon)`` equal segments.

    Segment lengths satisfy ``epsilon*L/(epsilon+L) < L/n <= epsilon``; the
    upper bound is non-strict so that lengths divisible by epsilon are kept
    in exactly ``L/epsilon`` pieces.
    """
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")
    vertices = list(g.vertices)
    edges = []
    parent_map = {}
    coords = {v: ("vertex", v) for v in g.vertices}
    segments = {}
    for e in g.edges:
        n = segment_count(e.length, epsilon)
        seg_len = e.length / n
        chain = [e.tail] + [f"{e.tail}-{e.head}#{k}" for k in range(1, n)] + [e.head]
        for k in range(1, n):
            vertices.append(chain[k])
            coords[chain[k]] = ("edge", e.key, k * seg_len)
        keys = []
        for a, b in zip(chain, chain[1:]):
            edges.append(Edge(a, b, seg_len, e.diameter, e.friction, e.area))
            parent_map[(a, b)] = e.key
            keys.append((a, b))
        segments[e.key] = tuple(keys)
    refined = MetricGraph(
        tuple(vertices),
        tuple(edges),
        g.slack_set,
        frozenset(vertices) - g.slack_set,
        g.name,
    )
    return RefinedGraph(refined, g, parent_map, coords, segments, float(epsilon))


def refine_segments(g: MetricGraph, n: int) -> RefinedGraph:
    """Refinement with exactly ``n`` segments on every edge (epsilon = L/n per edge)."""
    if n < 1:
        raise NonPositiveEpsilon("segment count must be >= 1")
    lengths = {e.length for e in g.edges}
    if len(lengths) == 1:
        return refine(g, lengths.pop() / n)
    # unequal lengths: build with per-edge epsilon by refining a rescaled copy
    rg = refine(_unit_length_copy(g), 1.0 / n)
    return _restore_lengths(rg, g)


def _unit_length_copy(g):
    return replace(g, edges=tuple(replace(e, length=1.0) for e in g.edges))


def _restore_lengths(rg, g):
    edges = []
    coords = dict(rg.coordinate_map)
    for e in rg.graph.edges:
        parent = g.edge(rg.parent_map[e.key])
        n = len(rg.segments[parent.key])
        edges.append(replace(e, length=parent.length / n))
    for v, c in rg.coordinate_map.items():
        if c[0] == "edge":
            coords[v] = ("edge", c[1], c[2] * g.edge(c[1]).length)
    graph = replace(rg.graph, edges=tuple(edges))
    eps = max(e.length for e in edges)
    return RefinedGraph(graph, g, rg.parent_map, coords, rg.segments, eps)


def segment_bound_holds(rg: RefinedGraph) -> bool:
    """Check ``eps*L/(eps+L) < Lhat <= eps`` for every refined edge."""
    eps = rg.epsilon
    for e in rg.graph.edges:
        L = rg.parent.edge(rg.parent_map[e.key]).length
        lower = eps * L / (eps + L)
        if not (lower < e.length <= eps * (1 + 1e-12)):
            return False
    return True


# ----------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class CompatibilitySchedule:
    """Actuator between a vertex and an edge end: ``alpha(t, rho) = c(t) * rho``."""

    kind: str = "identity"
    ratio: TimeFunction = Constant(1.0)
    placement: str = INLET

    def __post_init__(self):
        if self.kind not in ("identity", "multiplicative"):
            raise ScenarioError(f"unknown compatibility kind {self.kind!r}")
        if self.placement not in (INLET, OUTLET):
            raise ScenarioError(f"placement must be {INLET!r} or {OUTLET!r}")
        if self.kind == "identity":
            object.__setattr__(self, "ratio", Constant(1.0))

    def alpha(self, t, rho):
        return self.ratio(t) * rho

    def d_drho(self, t):
        return self.ratio(t)

    def d_dt(self, t, rho):
        return self.ratio.derivative(t) * rho

    def to_dict(self):
        return {"kind": self.kind, "ratio": self.ratio.to_dict(), "placement": self.placement}


IDENTITY = CompatibilitySchedule()


@dataclass(frozen=True)
class Scenario:
    """Boundary data and initial condition for one IBVP.

    ``compat`` maps ``(edge key, "inlet"|"outlet")`` to a schedule; missing
    entries are identity. ``initial_state`` is a vertex -> density mapping,
    or ``None`` to request steady-state initialization.
    """

    injections: dict
    slack_densities: dict
    horizon: float
    compat: dict = field(default_factory=dict)
    initial_state: dict | None = None
    lifted_to: RefinedGraph | None = field(default=None, compare=False)

    def schedule(self, edge_key, placement) -> CompatibilitySchedule:
        return self.compat.get((tuple(edge_key), placement), IDENTITY)

    def with_injections(self, injections: Mapping) -> "Scenario":
        new = dict(self.injections)
        new.update({str(k): as_time_function(v) for k, v in injections.items()})
        return replace(self, injections=new)

    def with_initial(self, initial) -> "Scenario":
        return replace(self, initial_state=None if initial is None else dict(initial))

    def frozen(self, t: float) -> "SteadyData":
        return SteadyData(
            injections={v: float(f(t)) for v, f in self.injections.items()},
            slack_densities={v: float(f(t)) for v, f in self.slack_densities.items()},
            ratios={k: float(s.ratio(t)) for k, s in self.compat.items()},
        )

    def breakpoints(self) -> tuple:
        pts = set()
        for f in list(self.injections.values()) + list(self.slack_densities.values()):
            pts.update(f.breakpoints())
        for s in self.compat.values():
            pts.update(s.ratio.breakpoints())
        return tuple(sorted(p for p in pts if 0.0 < p < self.horizon))


@dataclass(frozen=True)
class SteadyData:
    """Time-frozen boundary data: injections, slack densities and ratios."""

    injections: dict
    slack_densities: dict
    ratios: dict = field(default_factory=dict)

    def ratio(self, edge_key, placement) -> float:
        return self.ratios.get((tuple(edge_key), placement), 1.0)


def make_scenario(
    g: MetricGraph,
    injections: Mapping,
    slack_densities: Mapping,
    horizon: float,
    compressors: Mapping | None = None,
    initial_state: Mapping | None = None,
) -> Scenario:
    """Convenience constructor; numbers become constant time functions.

    ``compressors`` maps ``(tail, head, placement)`` to a ratio (number or
    time function).
    """
    compat = {}
    for (tail, head, placement), ratio in (compressors or {}).items():
        compat[((str(tail), str(head)), placement)] = CompatibilitySchedule(
            "multiplicative", as_time_function(ratio), placement
        )
    s = Scenario(
        injections={str(k): as_time_function(v) for k, v in injections.items()},
        slack_densities={str(k): as_time_function(v) for k, v in slack_densities.items()},
        horizon=float(horizon),
        compat=compat,
        initial_state=None if initial_state is None else {str(k): float(v) for k, v in initial_state.items()},
    )
    validate_scenario(s, g)
    return s


def validate_scenario(s: Scenario, g: MetricGraph, tol: float = 1e-8, n_samples: int = 201) -> None:
    """Reject scenarios that do not match the graph or carry non-physical data."""
    if not s.horizon > 0:
        raise ScenarioError("horizon must be positive")
    if set(s.injections) != set(g.flow_set):
        raise VertexMismatch(
            f"injections must cover exactly the flow set {sorted(g.flow_set)}, got {sorted(s.injections)}"
        )
    if set(s.slack_densities) != set(g.slack_set):
        raise VertexMismatch(
            f"slack densities must cover exactly the slack set {sorted(g.slack_set)}, got {sorted(s.slack_densities)}"
        )
    for (key, placement), sched in s.compat.items():
        if not g.has_edge(key):
            raise VertexMismatch(f"compressor on unknown edge {key}")
    ts = sample_times(s.horizon, n_samples, s.breakpoints())
    for v, f in s.injections.items():
        if not np.all(np.isfinite(f(ts))):
            raise ScenarioError(f"injection at {v} is not finite on [0, T]")
    for v, f in s.slack_densities.items():
        vals = f(ts)
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ScenarioError(f"slack density at {v} must be finite and positive on [0, T]")
    for key, sched in s.compat.items():
        vals = sched.ratio(ts)
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ScenarioError(f"compression ratio on {key} must be positive on [0, T]")
    if s.initial_state is not None:
        missing = set(g.vertices) - set(s.initial_state)
        if missing:
            raise VertexMismatch(f"initial state missing vertices {sorted(missing)}")
        for v, rho in s.initial_state.items():
            if v not in g.vertices:
                raise VertexMismatch(f"initial state has unknown vertex {v}")
            if not (rho > 0 and math.isfinite(rho)):
                raise ScenarioError(f"initial density at {v} must be positive")
        # t = 0 coupling: slack vertices carry their boundary density
        for v in g.slack_set:
            target = float(s.slack_densities[v](0.0))
            if abs(s.initial_state[v] - target) > tol * max(1.0, abs(target)):
                raise ScenarioError(
                    f"initial density at slack vertex {v} ({s.initial_state[v]}) does not match "
                    f"its boundary value {target} at t = 0"
                )


def lift_scenario(s: Scenario, rg: RefinedGraph) -> Scenario:
    """Carry a parent-graph scenario onto the refined graph.

    Interior vertices get zero injection and identity actuators. Explicit
    initial densities at interior vertices are interpolated linearly between
    the actuator-transformed endpoint densities of the parent edge.
    """
    g = rg.parent
    if s.lifted_to is not None:
        if s.lifted_to is rg:
            return s
        raise VertexMismatch("scenario is already lifted to a different refinement")
    unknown = (set(s.injections) | set(s.slack_densities)) - set(g.vertices)
    if unknown:
        raise VertexMismatch(f"scenario references vertices not in the parent graph: {sorted(unknown)}")
    validate_scenario(s, g)

    injections = dict(s.injections)
    for v in rg.graph.vertices:
        if not rg.is_parent_vertex(v):
            injections[v] = Constant(0.0)
    compat = {}
    for (key, placement), sched in s.compat.items():
        seg = rg.first_segment(key) if placement == INLET else rg.last_segment(key)
        compat[(seg, placement)] = sched

    initial = None
    if s.initial_state is not None:
        initial = dict(s.initial_state)
        for e in g.edges:
            a = s.schedule(e.key, INLET).alpha(0.0, s.initial_state[e.tail])
            b = s.schedule(e.key, OUTLET).alpha(0.0, s.initial_state[e.head])
            for v in rg.interior_vertices(e.key):
                x = rg.coordinate_map[v][2]
                initial[v] = float(a + (b - a) * x / e.length)
    return Scenario(injections, dict(s.slack_densities), s.horizon, compat, initial, lifted_to=rg)


def restrict_scenario(s: Scenario, rg: RefinedGraph) -> Scenario:
    """Inverse of :func:`lift_scenario` on the parent vertices."""
    g = rg.parent
    compat = {}
    for (seg, placement), sched in s.compat.items():
        compat[(rg.parent_map[seg], placement)] = sched
    initial = None
    if s.initial_state is not None:
        initial = {v: s.initial_state[v] for v in g.vertices}
    return Scenario(
        {v: f for v, f in s.injections.items() if v in g.flow_set},
        dict(s.slack_densities),
        s.horizon,
        compat,
        initial,
    )
