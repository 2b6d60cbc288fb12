"""Steady states on a metric graph, order checks between two of them, and
the ordered-path construction used as a test oracle.

Unknowns are the densities at flow vertices. Each edge carries a constant
flow determined by its two actuator-transformed endpoint densities: in
closed form for potential closures, by shooting otherwise.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DensityCavitation,
    HypothesisViolated,
    MonoflowError,
    NonConvergence,
    NonPositiveDensity,
    PathNotFound,
    SingularJacobian,
)
from .netgraph import INLET, OUTLET, MetricGraph, Scenario, SteadyData
from .physics import edge_flow, edge_flow_derivatives, gas_models, shoot_edge, steady_edge_profile


@dataclass(frozen=True)
class SteadyOptions:
    tol_balance: float = 1e-8  # relative to max |q| (absolute when all q vanish)
    tol_edge: float = 1e-8
    tol_step: float = 1e-10  # relative to the density scale
    max_iter: int = 50


@dataclass
class SteadyState:
    nodal_densities: dict
    edge_flows: dict
    realized_injections: dict
    balance_residual: float
    edge_residual: float
    iterations: int

    def density_vector(self, order):
        return np.array([self.nodal_densities[v] for v in order])


def _as_data(s) -> SteadyData:
    if isinstance(s, Scenario):
        return s.frozen(0.0)
    return s


def _end_densities(g, data, rho):
    """Actuator-transformed inlet/outlet densities for every edge."""
    out = {}
    for e in g.edges:
        ci = data.ratio(e.key, INLET)
        co = data.ratio(e.key, OUTLET)
        out[e.key] = (ci * rho[e.tail], co * rho[e.head], ci, co)
    return out


def _flows(g, data, models, rho):
    flows = {}
    for e in g.edges:
        ci = data.ratio(e.key, INLET)
        co = data.ratio(e.key, OUTLET)
        flows[e.key] = edge_flow(models[e.key], 0.0, ci * rho[e.tail], co * rho[e.head], e.length)
    return flows


def _balance(g, data, flows, vertices):
    r = np.zeros(len(vertices))
    for n, v in enumerate(vertices):
        total = data.injections.get(v, 0.0)
        total += sum(flows[e.key] for e in g.in_edges(v))
        total -= sum(flows[e.key] for e in g.out_edges(v))
        r[n] = total
    return r


def _jacobian(g, data, models, rho, unknowns):
    index = {v: n for n, v in enumerate(unknowns)}
    J = np.zeros((len(unknowns), len(unknowns)))
    for e in g.edges:
        ci = data.ratio(e.key, INLET)
        co = data.ratio(e.key, OUTLET)
        da, db = edge_flow_derivatives(models[e.key], 0.0, ci * rho[e.tail], co * rho[e.head], e.length)
        dtail, dhead = da * ci, db * co
        # flow enters the head's balance with +, the tail's with -
        for node, sign in ((e.head, 1.0), (e.tail, -1.0)):
            if node not in index:
                continue
            row = index[node]
            if e.tail in index:
                J[row, index[e.tail]] += sign * dtail
            if e.head in index:
                J[row, index[e.head]] += sign * dhead
    return J


def roundoff_floor(J, x, factor=100.0):
    """Smallest balance residual resolvable in floating point near ``x``.

    Fluxes on nearly idle edges come from differences of large potentials;
    that cancellation leaves noise of order ``eps * |J| |x|``.
    """
    if not len(x):
        return 0.0
    return factor * np.finfo(float).eps * float(np.max(np.abs(J) @ np.abs(x)))


def solve_steady(
    g: MetricGraph,
    s,
    models: dict | None = None,
    initial_guess: dict | None = None,
    opts: SteadyOptions = SteadyOptions(),
) -> SteadyState:
    """Newton iteration on the nodal balance at flow vertices.

    ``s`` is a :class:`SteadyData` or a :class:`Scenario` (frozen at t = 0).
    ``models`` defaults to the ideal-gas closure on every edge.
    """
    data = _as_data(s)
    models = gas_models(g) if models is None else models
    try:
        return _solve_nodal(g, data, models, initial_guess, opts)
    except (NonConvergence, SingularJacobian):
        if not all(models[e.key].potential is not None for e in g.edges):
            raise
    # near-idle edges put the nodal equations on the square-root kink of the
    # flow law; the flow/potential form is smooth there
    guess = _solve_mixed(g, data, models, initial_guess, opts)
    return _solve_nodal(g, data, models, guess, opts)


def _solve_mixed(g, data, models, initial_guess, opts):
    """Newton on densities and edge flows jointly; returns a density guess."""
    unknowns = [v for v in g.vertices if v in g.flow_set]
    idx = {v: n for n, v in enumerate(unknowns)}
    nf, m = len(unknowns), len(g.edges)
    slack_vals = [data.slack_densities[v] for v in g.slack_set]
    rho = {v: float(data.slack_densities[v]) for v in g.slack_set}
    mean = float(np.mean(slack_vals))
    for v in unknowns:
        rho[v] = float(initial_guess[v]) if initial_guess and v in initial_guess else mean
    pots = [models[e.key].potential for e in g.edges]
    h_scale = max(abs(float(p.h(max(slack_vals)))) for p in pots)
    q_scale = max([abs(data.injections.get(v, 0.0)) for v in unknowns] + [1.0])
    flows = np.array([0.0] * m)

    def residual(rho, flows):
        fl = {e.key: flows[k] for k, e in enumerate(g.edges)}
        r = np.empty(nf + m)
        r[:nf] = _balance(g, data, fl, unknowns) / q_scale
        for k, e in enumerate(g.edges):
            a = data.ratio(e.key, INLET) * rho[e.tail]
            b = data.ratio(e.key, OUTLET) * rho[e.head]
            r[nf + k] = (float(pots[k].h(a)) - float(pots[k].h(b)) - e.length * float(pots[k].g_inv(flows[k]))) / h_scale
        return r

    r = residual(rho, flows)
    for _ in range(4 * opts.max_iter):
        if np.max(np.abs(r[:nf])) * q_scale <= opts.tol_balance * q_scale and np.max(np.abs(r[nf:])) <= opts.tol_edge:
            return rho
        J = np.zeros((nf + m, nf + m))
        for k, e in enumerate(g.edges):
            if e.head in idx:
                J[idx[e.head], nf + k] += 1.0 / q_scale
            if e.tail in idx:
                J[idx[e.tail], nf + k] -= 1.0 / q_scale
            ci, co = data.ratio(e.key, INLET), data.ratio(e.key, OUTLET)
            p = pots[k]
            if e.tail in idx:
                J[nf + k, idx[e.tail]] += float(p.h_prime(ci * rho[e.tail])) * ci / h_scale
            if e.head in idx:
                J[nf + k, idx[e.head]] -= float(p.h_prime(co * rho[e.head])) * co / h_scale
            J[nf + k, nf + k] = -e.length / float(p.g_prime(p.g_inv(flows[k]))) / h_scale
        try:
            dz = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("flow/potential Jacobian is singular") from exc
        merit = float(np.dot(r, r))
        step = 1.0
        while True:
            trial = dict(rho)
            for v in unknowns:
                trial[v] = rho[v] + step * dz[idx[v]]
            tflows = flows + step * dz[nf:]
            if all(trial[v] > 0 for v in unknowns):
                tr = residual(trial, tflows)
                if float(np.dot(tr, tr)) <= (1 - 1e-4 * step) * merit:
                    break
            step *= 0.5
            if step < 1e-12:
                raise NonConvergence("flow/potential Newton line search failed", residual=float(np.max(np.abs(r))))
        rho, flows, r = trial, tflows, tr
    raise NonConvergence("flow/potential Newton did not converge", residual=float(np.max(np.abs(r))))


def _solve_nodal(g, data, models, initial_guess, opts):
    unknowns = [v for v in g.vertices if v in g.flow_set]
    slack_vals = [data.slack_densities[v] for v in g.slack_set]
    if any(r <= 0 for r in slack_vals):
        raise NonPositiveDensity("slack densities must be positive")
    rho_scale = max(slack_vals)
    q_scale = max([abs(data.injections.get(v, 0.0)) for v in unknowns] + [0.0])
    tol = opts.tol_balance * (q_scale if q_scale > 0 else 1.0)

    rho = {v: float(data.slack_densities[v]) for v in g.slack_set}
    guess = float(np.mean(slack_vals))
    for v in unknowns:
        rho[v] = float(initial_guess[v]) if initial_guess and v in initial_guess else guess

    def evaluate(state):
        flows = _flows(g, data, models, state)
        return flows, _balance(g, data, flows, unknowns)

    flows, r = evaluate(rho)
    norm = np.max(np.abs(r)) if len(r) else 0.0
    it = 0
    while norm > tol:
        if it >= opts.max_iter:
            raise NonConvergence(f"steady Newton did not converge in {opts.max_iter} iterations", residual=norm)
        it += 1
        J = _jacobian(g, data, models, rho, unknowns)
        x = np.array([rho[v] for v in unknowns])
        if norm <= roundoff_floor(J, x):
            break  # residual is already at the level of cancellation noise
        try:
            if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e15:
                raise np.linalg.LinAlgError("ill-conditioned")
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"steady Jacobian is singular at iteration {it}") from exc
        # backtracking: stay positive and decrease the residual
        merit = float(np.dot(r, r))
        step = 1.0
        while True:
            trial = dict(rho)
            ok = True
            for n, v in enumerate(unknowns):
                trial[v] = rho[v] + step * dx[n]
                if trial[v] <= 0:
                    ok = False
            if ok:
                try:
                    tflows, tr = evaluate(trial)
                    tnorm = float(np.max(np.abs(tr)))
                    if float(np.dot(tr, tr)) <= (1 - 1e-4 * step) * merit or tnorm <= tol:
                        break
                except (DensityCavitation, NonPositiveDensity, NonConvergence):
                    pass
            step *= 0.5
            if step < 1e-12:
                raise NonConvergence("steady line search failed", residual=norm)
        rho, flows, r, norm = trial, tflows, tr, tnorm
        if np.max(np.abs(step * dx)) < opts.tol_step * rho_scale and norm > tol:
            if norm <= roundoff_floor(J, x):
                break
            raise NonConvergence("steady Newton stagnated", residual=norm)

    # one extra full step, kept only if it helps; cheap at quadratic convergence
    if it and norm > 0:
        try:
            dx = np.linalg.solve(_jacobian(g, data, models, rho, unknowns), -r)
            trial = {**rho, **{v: rho[v] + dx[n] for n, v in enumerate(unknowns)}}
            if all(trial[v] > 0 for v in unknowns):
                tflows, tr = evaluate(trial)
                if np.max(np.abs(tr)) < norm:
                    rho, flows, r, norm = trial, tflows, tr, float(np.max(np.abs(tr)))
        except (np.linalg.LinAlgError, MonoflowError):
            pass

    realized = {}
    for v in g.slack_set:
        realized[v] = sum(flows[e.key] for e in g.out_edges(v)) - sum(flows[e.key] for e in g.in_edges(v))
    return SteadyState(rho, flows, realized, float(norm), _edge_residual(g, data, models, rho, flows), it)


def _edge_residual(g, data, models, rho, flows):
    worst = 0.0
    for e in g.edges:
        m = models[e.key]
        if m.potential is None:
            continue
        p = m.potential
        a = data.ratio(e.key, INLET) * rho[e.tail]
        b = data.ratio(e.key, OUTLET) * rho[e.head]
        scale = max(abs(float(p.h(a))), abs(float(p.h(b))), 1e-300)
        res = float(p.h(a) - p.h(b) - p.g_inv(flows[e.key]) * e.length)
        worst = max(worst, abs(res) / scale)
    return worst


def edge_profile(g, data, models, state: SteadyState, key, xs):
    """Steady density at arclength positions ``xs`` along edge ``key``."""
    data = _as_data(data)
    e = g.edge(key)
    m = models[key]
    a = data.ratio(key, INLET) * state.nodal_densities[e.tail]
    phi = state.edge_flows[key]
    if m.potential is not None:
        return np.asarray(steady_edge_profile(m, phi, a, e.length)(xs))
    return np.array([a if x == 0 else shoot_edge(m, 0.0, a, phi, x) for x in xs])


# ---------------------------------------------------------- order checks


@dataclass
class OrderVerdict:
    ordered: bool
    worst_margin: float
    worst_location: object
    margins: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ordered


def _check_ordered_inputs(g, d1, d2, tol=0.0):
    for v in g.flow_set:
        if d1.injections[v] < d2.injections[v] - tol:
            raise HypothesisViolated(f"injection at {v} is not ordered")
    for v in g.slack_set:
        if d1.slack_densities[v] < d2.slack_densities[v] - tol:
            raise HypothesisViolated(f"slack density at {v} is not ordered")
    if d1.ratios != d2.ratios:
        raise HypothesisViolated("both scenarios must share the compression ratios")


def verify_theorem1(g, s1, s2, tol=None, models=None, n_interior=8, opts=SteadyOptions()) -> OrderVerdict:
    """Solve both steady problems and check ``rho1 >= rho2 - tol`` at vertices and along edges."""
    d1, d2 = _as_data(s1), _as_data(s2)
    _check_ordered_inputs(g, d1, d2)
    models = gas_models(g) if models is None else models
    st1 = solve_steady(g, d1, models, opts=opts)
    st2 = solve_steady(g, d2, models, opts=opts)
    scale = max(max(st1.nodal_densities.values()), max(st2.nodal_densities.values()))
    tol = 1e-9 * scale if tol is None else tol
    margins = {}
    for v in g.vertices:
        margins[v] = st1.nodal_densities[v] - st2.nodal_densities[v]
    xs_rel = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    for e in g.edges:
        xs = xs_rel * e.length
        p1 = edge_profile(g, d1, models, st1, e.key, xs)
        p2 = edge_profile(g, d2, models, st2, e.key, xs)
        for x, a, b in zip(xs, p1, p2):
            margins[(e.key, float(x))] = float(a - b)
    loc = min(margins, key=margins.get)
    worst = margins[loc]
    return OrderVerdict(worst >= -tol, worst, loc, margins)


@dataclass
class UniquenessVerdict:
    ok: bool
    max_deviation: float  # relative to the density scale
    n_converged: int
    failures: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def uniqueness_probe(g, s, n_starts=5, models=None, seed=0, spread=0.3, opts=SteadyOptions()) -> UniquenessVerdict:
    """Solve from ``n_starts`` random initial guesses and compare the results."""
    if n_starts < 2:
        raise ValueError("n_starts must be at least 2")
    data = _as_data(s)
    rng = np.random.default_rng(seed)
    base = float(np.mean([data.slack_densities[v] for v in g.slack_set]))
    order = list(g.vertices)
    states, failures = [], []
    for k in range(n_starts):
        guess = {v: base * (1.0 + spread * rng.uniform(-1, 1)) for v in g.flow_set}
        try:
            st = solve_steady(g, data, models, initial_guess=guess, opts=opts)
            states.append(st.density_vector(order))
        except MonoflowError as exc:
            failures.append((k, exc.category, str(exc)))
    if not states:
        return UniquenessVerdict(False, float("inf"), 0, failures)
    scale = max(float(np.max(x)) for x in states)
    dev = 0.0
    for a, b in itertools.combinations(states, 2):
        dev = max(dev, float(np.max(np.abs(a - b))) / scale)
    ok = not failures and dev <= 10 * max(opts.tol_balance, opts.tol_step)
    return UniquenessVerdict(ok, dev, len(states), failures)


# -------------------------------------------------------- ordered paths


def _skew(flows, g, v, j):
    """Flow from ``v`` to ``j`` with ``phi_jv = -phi_vj``."""
    if g.has_edge((v, j)):
        return flows[(v, j)]
    return -flows[(j, v)]


def aquarius_path(g: MetricGraph, flows1: dict, flows2: dict, s_set, i, tol: float = 0.0) -> list:
    """Path ``[i_1, ..., i_n]`` from a vertex outside ``s_set`` to ``i`` with
    ``phi1 <= phi2 (+ tol)`` on every step.

    Breadth-first growth from ``i``: a neighbour ``v`` of the current set
    joins when ``phi1(v -> j) <= phi2(v -> j)``. If the injections in
    ``s_set`` are ordered and both flow fields are balanced, growth must reach
    a vertex outside ``s_set`` before it stalls.
    """
    s_set = set(s_set)
    if i not in s_set:
        raise PathNotFound(f"target {i} must belong to the injection set")
    parent = {i: None}
    queue = deque([i])
    while queue:
        j = queue.popleft()
        for v in g.neighbors(j):
            if v in parent:
                continue
            if _skew(flows1, g, v, j) <= _skew(flows2, g, v, j) + tol:
                parent[v] = j
                if v not in s_set:
                    path = [v]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    return path
                queue.append(v)
    raise PathNotFound("no ordered path reaches a density vertex; flows unbalanced or inputs not ordered")


def path_is_ordered(g, flows1, flows2, path, tol=0.0) -> bool:
    if len(set(path)) != len(path):
        return False
    return all(_skew(flows1, g, a, b) <= _skew(flows2, g, a, b) + tol for a, b in zip(path, path[1:]))
