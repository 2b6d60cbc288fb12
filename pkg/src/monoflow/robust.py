"""Interval-uncertainty feasibility and the nodal monitoring policy.

An envelope bounds each flow-vertex injection between ``lower(t)`` and
``upper(t)``. Because the nodal dynamics preserve order, the two extreme
scenarios bracket every admissible one, so checking density bounds on those
two runs certifies the whole envelope.

The monitoring policy watches nodes whose realized injection leaves the
envelope. When such a node's density crosses the matching extreme
trajectory, its injection is pinned to the envelope bound for the rest of
the run.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DensityCavitation, EnvelopeInverted, HypothesisViolated, SandwichViolated, ScenarioError
from .netgraph import Scenario, lift_scenario, refine
from .timefunc import Switch, TimeFunction, sample_times
from .transient import IntegratorOptions, assemble, concat_trajectories, integrate, steady_init

PIN_UPPER = "pin-to-upper"
PIN_LOWER = "pin-to-lower"


@dataclass(frozen=True)
class Envelope:
    upper: dict  # vertex -> TimeFunction, q^(1)
    lower: dict  # vertex -> TimeFunction, q^(2)
    rho_min: float
    rho_max: float

    def validate(self, g, horizon, n_samples=401):
        if set(self.upper) != set(g.flow_set) or set(self.lower) != set(g.flow_set):
            raise ScenarioError("envelope must bound every flow vertex")
        if not (0 < self.rho_min < self.rho_max):
            raise ScenarioError("density bounds need 0 < rho_min < rho_max")
        ts = sample_times(horizon, n_samples, self._breakpoints())
        for v in g.flow_set:
            gap = np.asarray(self.upper[v](ts)) - np.asarray(self.lower[v](ts))
            if np.min(gap) < 0:
                k = int(np.argmin(gap))
                raise EnvelopeInverted(f"upper bound below lower bound at vertex {v}, t = {ts[k]:.6g} s")

    def _breakpoints(self):
        pts = set()
        for f in list(self.upper.values()) + list(self.lower.values()):
            pts.update(f.breakpoints())
        return tuple(sorted(pts))

    def contains(self, injections, horizon, tol=0.0, n_samples=401) -> bool:
        ts = sample_times(horizon, n_samples, self._breakpoints())
        for v, f in injections.items():
            q = np.asarray(f(ts))
            if np.any(q > self.upper[v](ts) + tol) or np.any(q < self.lower[v](ts) - tol):
                return False
        return True

    def interior_profile(self, rng, horizon) -> dict:
        """Random smooth injections ``lower + theta(t) (upper - lower)`` with ``theta`` in [0, 1]."""
        from .timefunc import Sinusoid

        out = {}
        for v in sorted(self.upper):
            mid = rng.uniform(0.15, 0.85)
            amp = rng.uniform(0.0, min(mid, 1.0 - mid))
            theta = Sinusoid(amp, horizon / rng.integers(1, 4), rng.uniform(0, 2 * np.pi), mid)
            out[v] = self.lower[v] + theta * (self.upper[v] - self.lower[v])
        return out


def _with_injections(base: Scenario, injections, compat=None) -> Scenario:
    s = replace(base, injections=dict(injections), lifted_to=None)
    if compat is not None:
        s = replace(s, compat=dict(compat))
    return s


@dataclass
class Certificate:
    feasible: bool
    violations: list
    min_density: float  # over the lower-envelope run
    max_density: float  # over the upper-envelope run
    trajectories: dict = field(default_factory=dict, repr=False)
    initial_state: dict = field(default_factory=dict, repr=False)

    def __bool__(self):
        return self.feasible

    def summary(self):
        return {
            "feasible": self.feasible,
            "min_density": self.min_density,
            "max_density": self.max_density,
            "violations": self.violations[:20],
            "n_violations": len(self.violations),
        }


def _bound_violations(traj, bound, kind):
    if kind == "min":
        bad = np.argwhere(traj.densities < bound)
    else:
        bad = np.argwhere(traj.densities > bound)
    out = []
    for k, j in bad:
        out.append(
            {
                "time": float(traj.times[k]),
                "vertex": traj.vertices[j],
                "bound": kind,
                "density": float(traj.densities[k, j]),
            }
        )
    return out


def certify_envelope(
    g,
    epsilon,
    controls,
    env: Envelope,
    base: Scenario,
    models=None,
    scheme=None,
    opts: IntegratorOptions = IntegratorOptions(),
    initial=None,
) -> Certificate:
    """Nominal, upper and lower runs sharing controls and initial state.

    Feasible iff the lower run stays above ``rho_min`` and the upper run below
    ``rho_max`` everywhere on the refined graph. A lower run that cavitates is
    reported as infeasible at the cavitation time.
    """
    env.validate(g, base.horizon)
    if not env.contains(base.injections, base.horizon, tol=1e-12):
        raise HypothesisViolated("base injections leave the envelope")
    rg = refine(g, epsilon)
    nominal = _with_injections(base, base.injections, controls)
    scenarios = {
        "nominal": nominal,
        "upper": _with_injections(nominal, env.upper),
        "lower": _with_injections(nominal, env.lower),
    }
    if initial is None:
        lifted = lift_scenario(nominal, rg)
        sys0 = assemble(rg, lifted, models, scheme)
        initial = lifted.initial_state if lifted.initial_state is not None else steady_init(sys0)
    trajs = {}
    violations = []
    for name, s in scenarios.items():
        sys = assemble(rg, lift_scenario(replace(s, initial_state=None), rg), models, scheme)
        try:
            trajs[name] = integrate(sys, initial, opts=opts)
        except DensityCavitation as exc:
            if name != "lower":
                raise
            violations.append({"time": exc.time, "vertex": None, "bound": "min", "density": 0.0})
    if "lower" in trajs:
        violations += _bound_violations(trajs["lower"], env.rho_min, "min")
    violations += _bound_violations(trajs["upper"], env.rho_max, "max")
    violations.sort(key=lambda d: d["time"])
    lo = float(trajs["lower"].densities.min()) if "lower" in trajs else 0.0
    hi = float(trajs["upper"].densities.max())
    return Certificate(not violations, violations, lo, hi, trajs, initial)


@dataclass
class SandwichReport:
    ok: bool
    worst_margin: float
    worst_time: float
    worst_vertex: str
    side: str

    def __bool__(self):
        return self.ok


def sandwich_margin(traj, upper_traj, lower_traj, tol=0.0) -> SandwichReport:
    """``min(upper - traj, traj - lower)`` over the samples of ``traj`` (dense envelope lookup)."""
    worst, where = np.inf, (0.0, None, "")
    for k, t in enumerate(traj.times):
        x = traj.densities[k]
        up = upper_traj.state_at(t) - x
        lo = x - lower_traj.state_at(t)
        for arr, side in ((up, "upper"), (lo, "lower")):
            j = int(np.argmin(arr))
            if arr[j] < worst:
                worst, where = float(arr[j]), (float(t), traj.vertices[j], side)
    return SandwichReport(worst >= -tol, worst, *where)


# --------------------------------------------------------- monitoring policy


@dataclass
class PolicyTrace:
    actions: list  # dicts: time, node, action, margin
    scenario: Scenario  # effective injections after overrides
    trajectory: object
    upper: object  # envelope trajectories used by the monitor
    lower: object
    monitored_upper: list = field(default_factory=list)
    monitored_lower: list = field(default_factory=list)
    tol: float = 0.0


def _violating_sets(env, realized, horizon, n_samples=401):
    ts = sample_times(horizon, n_samples, env._breakpoints() + tuple(realized.breakpoints()))
    above, below = [], []
    for v in sorted(env.upper):
        q = np.asarray(realized.injections[v](ts))
        if np.any(q > np.asarray(env.upper[v](ts))):
            above.append(v)
        if np.any(q < np.asarray(env.lower[v](ts))):
            below.append(v)
    return above, below


def envelope_trajectories(g, epsilon, env, realized, models=None, scheme=None, opts=IntegratorOptions(), initial=None):
    rg = refine(g, epsilon)
    if initial is None:
        lifted = lift_scenario(realized, rg)
        initial = lifted.initial_state if lifted.initial_state is not None else steady_init(assemble(rg, lifted, models, scheme))
    out = []
    for bound in (env.upper, env.lower):
        s = _with_injections(replace(realized, initial_state=None), bound)
        out.append(integrate(assemble(rg, lift_scenario(s, rg), models, scheme), initial, opts=opts))
    return rg, initial, out[0], out[1]


def run_nmp(
    g,
    epsilon,
    env: Envelope,
    realized: Scenario,
    models=None,
    scheme=None,
    opts: IntegratorOptions = IntegratorOptions(),
    tol_order=None,
    envelope=None,
    initial=None,
    enabled=True,
) -> PolicyTrace:
    """Closed-loop run of ``realized`` under the monitoring policy.

    ``envelope`` may pass precomputed ``(upper_traj, lower_traj)``; they must
    start from the same initial state as the realized run. With
    ``enabled=False`` the monitor only watches (ablation).
    """
    env.validate(g, realized.horizon)
    if envelope is None:
        rg, initial, up, lo = envelope_trajectories(g, epsilon, env, realized, models, scheme, opts, initial)
    else:
        up, lo = envelope
        rg = up.rg
        if initial is None:
            initial = {v: float(x) for v, x in zip(up.vertices, up.densities[0])}
    if tol_order is None:
        # two independent integrations agree to about rtol * density, not atol
        tol_order = 1e-8 * float(np.max(up.densities))
    trigger = 0.5 * tol_order
    above, below = _violating_sets(env, realized, realized.horizon)
    grid = opts.output_grid(realized.horizon)

    scenario = replace(realized, initial_state=None, lifted_to=None)
    pinned = set()
    actions = []
    parts = []
    t0 = 0.0
    x0 = initial
    supplied = 0.0
    while True:
        sys = assemble(rg, lift_scenario(scenario, rg), models, scheme)
        watch = []
        if enabled:
            for v in above:
                if v not in pinned:
                    watch.append((v, PIN_UPPER))
            for v in below:
                if v not in pinned:
                    watch.append((v, PIN_LOWER))
        events = []
        for v, action in watch:
            j = sys.index[v]
            if action == PIN_UPPER:
                events.append(lambda t, x, j=j: float(up.state_at(t)[j] - x[j]) + trigger)
            else:
                events.append(lambda t, x, j=j: float(x[j] - lo.state_at(t)[j]) + trigger)
        part = integrate(sys, x0, (t0, realized.horizon), opts, t_eval=grid, stop_events=events, supplied0=supplied)
        parts.append(part)
        stop = part.stats.get("stop")
        if stop is None:
            break
        tc = stop["time"]
        v, action = watch[stop["event"]]
        bound = env.upper[v] if action == PIN_UPPER else env.lower[v]
        j = sys.index[v]
        xc = part.densities[-1]
        margin = float(up.state_at(tc)[j] - xc[j]) if action == PIN_UPPER else float(xc[j] - lo.state_at(tc)[j])
        actions.append({"time": tc, "node": v, "action": action, "margin": margin})
        pinned.add(v)
        injections = dict(scenario.injections)
        injections[v] = Switch(injections[v], bound, tc)
        scenario = replace(scenario, injections=injections)
        t0, x0, supplied = tc, xc, float(part.supplied[-1])
    final_sys = assemble(rg, lift_scenario(scenario, rg), models, scheme)
    traj = concat_trajectories(parts, final_sys)
    return PolicyTrace(actions, scenario, traj, up, lo, above, below, tol_order)


def verify_corollary1(trace: PolicyTrace, envelope=None, tol=None) -> SandwichReport:
    """Check that the closed-loop densities stay between the envelope runs."""
    up, lo = (trace.upper, trace.lower) if envelope is None else envelope
    tol = trace.tol if tol is None else tol
    rep = sandwich_margin(trace.trajectory, up, lo, tol)
    if not rep.ok:
        raise SandwichViolated(
            f"density leaves the envelope at vertex {rep.worst_vertex} (t = {rep.worst_time:.6g} s, "
            f"{rep.side} margin {rep.worst_margin:.3g})",
            time=rep.worst_time,
            vertex=rep.worst_vertex,
            margin=rep.worst_margin,
        )
    return rep
