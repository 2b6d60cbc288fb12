"""Order checks between paired trajectories, first-crossing detection, and
numerical checks of the cooperative (Metzler) structure of the nodal ODE.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, HypothesisViolated, NoCrossing
from .netgraph import Scenario, lift_scenario, refine
from .timefunc import sample_times
from .transient import IntegratorOptions, OdeSystem, assemble, integrate, steady_init

PERSISTENCE_SAMPLES = 3
BISECTION_STEPS = 60


@dataclass(frozen=True)
class Crossing:
    time: float
    vertex: str
    kind: str  # "parent-node" or "edge-interior"
    parent: object  # parent vertex id or parent edge key
    margin_after: float


@dataclass
class OrderReport:
    ordered: bool
    worst_margin: float
    worst_time: float
    worst_vertex: str
    tol: float
    times: np.ndarray
    vertices: list
    margins: np.ndarray  # (n_t, n_vertices): rho1 - rho2
    first_crossing: Crossing | None = None
    crossing_times: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ordered

    def margin(self, v):
        return self.margins[:, self.vertices.index(v)]

    def summary(self) -> dict:
        out = {
            "ordered": self.ordered,
            "worst_margin": self.worst_margin,
            "worst_time": self.worst_time,
            "worst_vertex": self.worst_vertex,
            "tol_order": self.tol,
        }
        if self.first_crossing is not None:
            c = self.first_crossing
            out["first_crossing"] = {
                "time": c.time,
                "vertex": c.vertex,
                "classification": c.kind,
                "parent": list(c.parent) if isinstance(c.parent, tuple) else c.parent,
            }
        return out


def _first_below(f, lo, hi, level):
    """Earliest-ish ``t`` in ``[lo, hi]`` with ``f(t) < level`` given ``f(lo) >= level > f(hi)``."""
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if f(mid) < level:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-9 * max(1.0, abs(hi)):
            break
    return hi


def _persistent(f, t, t_next, level):
    """Margin stays below ``level`` on a short window after ``t`` (sampled)."""
    width = t_next - t
    if width <= 0:
        return f(t) < level
    return all(f(t + width * k / PERSISTENCE_SAMPLES) < level for k in range(1, PERSISTENCE_SAMPLES + 1))


def check_order(traj1, traj2, tol_order=None) -> OrderReport:
    """Compare ``traj1 >= traj2`` pointwise and locate the first crossing."""
    if list(traj1.vertices) != list(traj2.vertices):
        raise GridMismatch("trajectories live on different refined graphs")
    if traj1.times.shape != traj2.times.shape or not np.allclose(traj1.times, traj2.times, rtol=0, atol=1e-9):
        raise GridMismatch("trajectories have different output times")
    if tol_order is None:
        tol_order = 10.0 * max(traj1.stats.get("atol", 1e-9), traj2.stats.get("atol", 1e-9))
    times = traj1.times
    vertices = list(traj1.vertices)
    M = traj1.densities - traj2.densities
    k, j = np.unravel_index(int(np.argmin(M)), M.shape)
    worst = float(M[k, j])
    report = OrderReport(worst >= -tol_order, worst, float(times[k]), vertices[j], tol_order, times, vertices, M)
    if report.ordered:
        return report

    level = -tol_order

    def dense_margin(t):
        return traj1.state_at(t) - traj2.state_at(t)

    # per-vertex first crossings
    for n, v in enumerate(vertices):
        below = np.nonzero(M[:, n] < level)[0]
        if not len(below):
            report.crossing_times[v] = None
            continue
        i = int(below[0])
        if i == 0:
            report.crossing_times[v] = float(times[0])
            continue
        f = lambda t, n=n: float(dense_margin(t)[n])  # noqa: E731
        report.crossing_times[v] = _first_below(f, float(times[i - 1]), float(times[i]), level)

    # network first crossing: earliest persistent one
    overall = lambda t: float(np.min(dense_margin(t)))  # noqa: E731
    bad = np.nonzero(M.min(axis=1) < level)[0]
    for i in bad:
        i = int(i)
        if i == 0:
            tc = float(times[0])
        else:
            tc = _first_below(overall, float(times[i - 1]), float(times[i]), level)
        t_next = float(times[min(i + 1, len(times) - 1)]) if tc >= times[i] else float(times[i])
        if not _persistent(overall, tc, t_next, level):
            continue
        after = dense_margin(tc)
        n = int(np.argmin(after))
        v = vertices[n]
        kind, parent = traj1.rg.classify(v)
        report.first_crossing = Crossing(tc, v, kind, parent, float(after[n]))
        break
    return report


def _validate_ordered_inputs(g, s1: Scenario, s2: Scenario, n_samples=401, tol=0.0):
    if s1.horizon != s2.horizon:
        raise HypothesisViolated("scenarios must share the horizon")
    if s1.compat != s2.compat:
        raise HypothesisViolated("scenarios must share the compatibility schedules")
    ts = sample_times(s1.horizon, n_samples, tuple(s1.breakpoints()) + tuple(s2.breakpoints()))
    for v in g.flow_set:
        gap = np.asarray(s1.injections[v](ts)) - np.asarray(s2.injections[v](ts))
        if np.min(gap) < -tol:
            raise HypothesisViolated(f"injection at {v} is not ordered (q1 - q2 = {np.min(gap):.3g})")
    for v in g.slack_set:
        gap = np.asarray(s1.slack_densities[v](ts)) - np.asarray(s2.slack_densities[v](ts))
        if np.min(gap) < -tol:
            raise HypothesisViolated(f"slack density at {v} is not ordered")


def verify_theorem3(
    g,
    epsilon,
    s1: Scenario,
    s2: Scenario,
    tol=None,
    models=None,
    scheme=None,
    opts: IntegratorOptions = IntegratorOptions(),
    eps_pert=(0.0, 0.0),
) -> OrderReport:
    """Run both scenarios on the same refinement and check ``rho1 >= rho2``."""
    _validate_ordered_inputs(g, s1, s2)
    rg = refine(g, epsilon)
    trajs = []
    inits = []
    for s, ep in zip((s1, s2), eps_pert):
        lifted = lift_scenario(s, rg)
        sys = assemble(rg, lifted, models, scheme, ep)
        x0 = lifted.initial_state if lifted.initial_state is not None else steady_init(sys)
        inits.append((sys, x0))
    x1 = np.array([inits[0][1][v] for v in inits[0][0].vertices])
    x2 = np.array([inits[1][1][v] for v in inits[1][0].vertices])
    scale = float(max(x1.max(), x2.max()))
    tol = 1e-9 * scale if tol is None else tol
    if np.min(x1 - x2) < -tol:
        raise HypothesisViolated("initial states are not ordered")
    for sys, x0 in inits:
        trajs.append(integrate(sys, x0, opts=opts))
    return check_order(trajs[0], trajs[1], tol)


def localize_first_crossing(report: OrderReport, rg=None, reversed_nodes=None) -> dict:
    """Classify the first crossing. With ``reversed_nodes`` (parent vertices whose
    injection ordering is violated) also report whether the crossing sits on one
    of them, which is what the theory predicts."""
    c = report.first_crossing
    if c is None:
        raise NoCrossing("the trajectories stay ordered; there is no crossing to localize")
    kind, parent = (c.kind, c.parent) if rg is None else rg.classify(c.vertex)
    out = {"time": c.time, "vertex": c.vertex, "classification": kind, "parent": parent}
    if reversed_nodes is not None:
        out["at_reversed_node"] = kind == "parent-node" and parent in set(reversed_nodes)
    return out


# ------------------------------------------------------------ Jacobian checks


@dataclass
class JacobianReport:
    metzler_violations: list = field(default_factory=list)
    input_violations: list = field(default_factory=list)
    n_samples: int = 0
    max_analytic_mismatch: float = 0.0

    @property
    def ok(self):
        return not self.metzler_violations and not self.input_violations

    def __bool__(self):
        return self.ok


def finite_difference_jacobians(sys: OdeSystem, t, y, rel_step=1e-6):
    """Central differences of the rhs with respect to free densities and injections."""
    y = np.asarray(y, dtype=float)
    nf = len(y)
    Jr = np.empty((nf, nf))
    for k in range(nf):
        h = rel_step * max(abs(y[k]), 1.0)
        yp, ym = y.copy(), y.copy()
        yp[k] += h
        ym[k] -= h
        Jr[:, k] = (sys._rhs(t, yp) - sys._rhs(t, ym)) / (2 * h)
    q0 = sys.injections(t)
    qscale = max(float(np.max(np.abs(q0))), 1.0)
    Jq = np.empty((nf, nf))
    for k, idx in enumerate(sys.free_idx):
        h = rel_step * qscale
        qp, qm = q0.copy(), q0.copy()
        qp[idx] += h
        qm[idx] -= h
        Jq[:, k] = (sys._rhs(t, y, qp) - sys._rhs(t, y, qm)) / (2 * h)
    return Jr, Jq


def jacobian_check(sys: OdeSystem, states, times, tol_rel=1e-8) -> JacobianReport:
    """Off-diagonal state partials must be >= -tol; input partials diagonal positive."""
    report = JacobianReport()
    for t, y in zip(times, states):
        y = np.asarray(y, dtype=float)
        if y.shape != (len(sys.free),):
            y = np.asarray(y)[sys.free_idx]
        Jr, Jq = finite_difference_jacobians(sys, t, y)
        report.n_samples += 1
        scale = max(float(np.max(np.abs(Jr))), 1e-300)
        tol = tol_rel * scale
        off = ~np.eye(len(y), dtype=bool)
        for i, j in zip(*np.nonzero(off & (Jr < -tol))):
            report.metzler_violations.append(
                {"t": float(t), "row": sys.free[i], "col": sys.free[j], "value": float(Jr[i, j])}
            )
        qscale = max(float(np.max(np.abs(Jq))), 1e-300)
        qtol = tol_rel * qscale
        for i in range(len(y)):
            if not Jq[i, i] > 0:
                report.input_violations.append({"t": float(t), "row": sys.free[i], "col": sys.free[i], "value": float(Jq[i, i])})
        for i, j in zip(*np.nonzero(off & (np.abs(Jq) > qtol))):
            report.input_violations.append({"t": float(t), "row": sys.free[i], "col": sys.free[j], "value": float(Jq[i, j])})
        Ja = sys.jacobian(t, y)
        report.max_analytic_mismatch = max(
            report.max_analytic_mismatch, float(np.max(np.abs(Ja - Jr))) / scale
        )
    return report


def random_states(sys: OdeSystem, n, seed=0, spread=0.2, base=None):
    """Positive free-vertex states scattered around ``base`` (default: a steady state)."""
    rng = np.random.default_rng(seed)
    if base is None:
        x0 = steady_init(sys)
        base = np.array([x0[v] for v in sys.free])
    base = np.asarray(base, dtype=float)
    times = rng.uniform(0.0, sys.scenario.horizon, n)
    states = [base * (1.0 + spread * rng.uniform(-1, 1, len(base))) for _ in range(n)]
    return states, times
