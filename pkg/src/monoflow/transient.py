"""Lumped nodal dynamics on a refined graph and their time integration.

Each vertex ``j`` owns half of every adjacent segment. With
``w_e = S_e * Lhat_e / 2`` and actuator ratios ``c`` on the edge ends, the
stored mass at ``j`` is ``m_j = rho_j * sum_e w_e c_e(t)`` and

    dm_j/dt = (inflow at j) - (outflow at j) + q_j + eps_pert * sum_e w_e

so ``rho_j' = [net_j + eps_pert W_j - rho_j sum_e w_e c_e'] / sum_e w_e c_e``.

Two edge flux schemes are available:

``potential``
    one flux per segment, ``phi = -g((h(b) - h(a)) / Lhat)`` where ``a`` and
    ``b`` are the actuator-transformed end densities. Mass conservative and
    consistent; needs a potential-form closure.
``nodal``
    each end evaluates ``f`` at its own density:
    ``f(a, (b - a)/Lhat)`` at the tail, ``f(b, (b - a)/Lhat)`` at the head.
    Works for any closure but the two ends disagree, so the scheme neither
    conserves mass nor converges to the continuum steady state.

Both produce a Metzler state Jacobian whenever ``f`` increases in ``v``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    DensityCavitation,
    MissingModel,
    MonoflowError,
    NonConvergence,
    NonPositiveDensity,
    SingularJacobian,
    StepFailure,
    UnliftedScenario,
)
from .netgraph import INLET, OUTLET, RefinedGraph, Scenario, lift_scenario, refine
from .physics import GasPotential, density_to_pressure, gas_models
from .steady import SteadyOptions, roundoff_floor, solve_steady
from .timefunc import Constant, sample_times

SCHEMES = ("potential", "nodal")


@dataclass(frozen=True)
class IntegratorOptions:
    rtol: float = 1e-7
    atol: float = 1e-9
    method: str = "Radau"
    n_out: int = 241
    dt_out: float | None = None
    max_step: float = math.inf

    def output_grid(self, horizon, extra=()):
        if self.dt_out:
            n = int(round(horizon / self.dt_out)) + 1
            return sample_times(horizon, max(n, 2), extra)
        return sample_times(horizon, self.n_out, extra)


def _reg(y, delta):
    return y * (y * y + delta * delta) ** -0.25


def _reg_prime(y, delta):
    y2 = y * y
    d2 = delta * delta
    return (0.5 * y2 + d2) * (y2 + d2) ** -1.25


class OdeSystem:
    """Right-hand side, analytic Jacobian and bookkeeping for one lifted scenario."""

    def __init__(self, rg: RefinedGraph, scenario: Scenario, models: dict | None = None, scheme=None, eps_pert=0.0):
        if scenario.lifted_to is not rg:
            raise UnliftedScenario("scenario must be lifted to this refinement first (lift_scenario)")
        if eps_pert < 0:
            raise ValueError("eps_pert must be non-negative")
        self.rg = rg
        self.scenario = scenario
        self.eps_pert = float(eps_pert)
        G = rg.graph
        models = gas_models(rg.parent) if models is None else models
        self.vertices = list(G.vertices)
        self.index = {v: n for n, v in enumerate(self.vertices)}
        self.n = len(self.vertices)
        self.free = [v for v in self.vertices if v in G.flow_set]
        self.slack = [v for v in self.vertices if v in G.slack_set]
        self.free_idx = np.array([self.index[v] for v in self.free], dtype=int)
        self.slack_idx = np.array([self.index[v] for v in self.slack], dtype=int)
        self.edges = list(G.edges)
        self.edge_keys = [e.key for e in self.edges]
        self.tail = np.array([self.index[e.tail] for e in self.edges], dtype=int)
        self.head = np.array([self.index[e.head] for e in self.edges], dtype=int)
        self.length = np.array([e.length for e in self.edges])
        self.weight = np.array([e.area * e.length / 2.0 for e in self.edges])
        self.W = np.bincount(self.tail, self.weight, self.n) + np.bincount(self.head, self.weight, self.n)

        self.models = []
        for e in self.edges:
            parent = rg.parent_map[e.key]
            m = models.get(parent, models.get(e.key))
            if m is None:
                raise MissingModel(f"no dissipation model for edge {parent}")
            self.models.append(m)
        has_potential = all(m.potential is not None for m in self.models)
        if scheme is None:
            scheme = "potential" if has_potential else "nodal"
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if scheme == "potential" and not has_potential:
            raise MissingModel("the potential scheme needs a potential-form closure on every edge")
        self.scheme = scheme

        gas = [isinstance(m.potential, GasPotential) and m.potential.delta > 0 for m in self.models]
        self.gas = np.array(gas, dtype=bool)
        self.other = [k for k, flag in enumerate(gas) if not flag]
        self.coef = np.array([m.potential.coefficient if f else 0.0 for m, f in zip(self.models, gas)])
        self.c2 = np.array([m.potential.c2 if f else 1.0 for m, f in zip(self.models, gas)])
        self.delta = np.array([m.potential.delta if f else 1.0 for m, f in zip(self.models, gas)])
        self.gas_c2 = float(self.c2[self.gas][0]) if self.gas.any() else None
        # basic slicing (a view) when every edge is a gas pipe, else a mask
        self._gas_sel = slice(None) if self.gas.all() else (self.gas if self.gas.any() else None)
        sel = self._gas_sel if self._gas_sel is not None else self.gas
        self._gas_params = (self.coef[sel], self.c2[sel], self.delta[sel])

        self.inlet_ratio = []
        self.outlet_ratio = []
        for k, e in enumerate(self.edges):
            for placement, bucket in ((INLET, self.inlet_ratio), (OUTLET, self.outlet_ratio)):
                sched = scenario.compat.get((e.key, placement))
                if sched is not None and sched.kind != "identity":
                    bucket.append((k, sched.ratio))

        self.injection_funcs = [
            (self.index[v], f)
            for v, f in scenario.injections.items()
            if not (isinstance(f, Constant) and f.value == 0.0)
        ]
        self.slack_funcs = [(self.index[v], scenario.slack_densities[v]) for v in self.slack]
        self._cache = {}

    # ---------------------------------------------------------------- inputs

    def _inputs(self, t):
        """Ratios, their rates, injections and slack densities at ``t`` (cached;
        the implicit solver revisits the same stage times many times)."""
        t = float(t)
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        m = len(self.edges)
        cin, cout = np.ones(m), np.ones(m)
        dcin, dcout = np.zeros(m), np.zeros(m)
        for k, f in self.inlet_ratio:
            cin[k] = f(t)
            dcin[k] = f.derivative(t)
        for k, f in self.outlet_ratio:
            cout[k] = f(t)
            dcout[k] = f.derivative(t)
        q = np.zeros(self.n)
        for i, f in self.injection_funcs:
            q[i] = f(t)
        slack = np.array([f(t) for _, f in self.slack_funcs])
        D, Dt = self._denominators(cin, cout, dcin, dcout)
        out = (cin, cout, dcin, dcout, q, slack, D, Dt)
        for arr in out:
            arr.flags.writeable = False
        if len(self._cache) >= 16:
            self._cache.pop(next(iter(self._cache)))
        self._cache[t] = out
        return out

    def ratios(self, t):
        return self._inputs(t)[:4]

    def injections(self, t):
        return self._inputs(t)[4].copy()

    def slack_values(self, t):
        return self._inputs(t)[5]

    def full_state(self, t, y_free):
        x = np.empty(self.n)
        x[self.free_idx] = y_free[: len(self.free)]
        x[self.slack_idx] = self.slack_values(t)
        return x

    # ---------------------------------------------------------------- fluxes

    def edge_fluxes(self, t, x, cin, cout, jac=False):
        """Outflow at each tail ``O`` and inflow at each head ``I`` (kg/s).

        With ``jac`` also returns the partials of O and I with respect to the
        tail and head vertex densities.
        """
        a = cin * x[self.tail]
        b = cout * x[self.head]
        L = self.length
        m = len(self.edges)
        O = np.empty(m)
        I = np.empty(m)
        dO_t, dO_h, dI_t, dI_h = (np.empty(m) for _ in range(4))
        gm = self._gas_sel
        if gm is not None:
            G, c2, d = self._gas_params
            ag, bg, Lg = a[gm], b[gm], L[gm]
            ci, co = cin[gm], cout[gm]
            if self.scheme == "potential":
                y = c2 * (bg * bg - ag * ag) / (2.0 * Lg)
                phi = -G * _reg(y, d)
                O[gm] = phi
                I[gm] = phi
                if jac:
                    rp = G * _reg_prime(y, d) * c2 / Lg
                    dO_t[gm] = rp * ag * ci
                    dO_h[gm] = -rp * bg * co
                    dI_t[gm] = dO_t[gm]
                    dI_h[gm] = dO_h[gm]
            else:
                v = (bg - ag) / Lg
                ya, yb = c2 * ag * v, c2 * bg * v
                O[gm] = -G * _reg(ya, d)
                I[gm] = -G * _reg(yb, d)
                if jac:
                    rpa = G * _reg_prime(ya, d) * c2
                    rpb = G * _reg_prime(yb, d) * c2
                    fu_a, fv_a = rpa * v, rpa * ag
                    fu_b, fv_b = rpb * v, rpb * bg
                    dO_t[gm] = -(fu_a - fv_a / Lg) * ci
                    dO_h[gm] = -(fv_a / Lg) * co
                    dI_t[gm] = (fv_b / Lg) * ci
                    dI_h[gm] = -(fu_b + fv_b / Lg) * co
        for k in self.other:
            md = self.models[k]
            ak, bk, Lk = a[k], b[k], L[k]
            if self.scheme == "potential":
                p = md.potential
                y = (float(p.h(bk)) - float(p.h(ak))) / Lk
                phi = -float(p.g(y))
                O[k] = I[k] = phi
                if jac:
                    gp = float(p.g_prime(y))
                    dO_t[k] = dI_t[k] = gp * float(p.h_prime(ak)) / Lk * cin[k]
                    dO_h[k] = dI_h[k] = -gp * float(p.h_prime(bk)) / Lk * cout[k]
            else:
                v = (bk - ak) / Lk
                O[k] = -float(md.eval(t, ak, v))
                I[k] = -float(md.eval(t, bk, v))
                if jac:
                    fu_a, fv_a = float(md.d_du(t, ak, v)), float(md.d_dv(t, ak, v))
                    fu_b, fv_b = float(md.d_du(t, bk, v)), float(md.d_dv(t, bk, v))
                    dO_t[k] = -(fu_a - fv_a / Lk) * cin[k]
                    dO_h[k] = -(fv_a / Lk) * cout[k]
                    dI_t[k] = (fv_b / Lk) * cin[k]
                    dI_h[k] = -(fu_b + fv_b / Lk) * cout[k]
        if jac:
            return O, I, (dO_t, dO_h, dI_t, dI_h)
        return O, I

    def midpoint_flows(self, t, x):
        cin, cout, _, _ = self.ratios(t)
        O, I = self.edge_fluxes(t, x, cin, cout)
        return 0.5 * (O + I)

    def _net_edges(self, O, I):
        return np.bincount(self.head, I, self.n) - np.bincount(self.tail, O, self.n)

    def _denominators(self, cin, cout, dcin, dcout):
        D = np.bincount(self.tail, self.weight * cin, self.n) + np.bincount(self.head, self.weight * cout, self.n)
        Dt = np.bincount(self.tail, self.weight * dcin, self.n) + np.bincount(self.head, self.weight * dcout, self.n)
        return D, Dt

    # ------------------------------------------------------------ public rhs

    def rhs(self, t, y_free, q=None):
        """``d rho / dt`` at the free vertices. ``q`` overrides the injections
        (a length-``n`` vector over all refined vertices)."""
        y_free = np.asarray(y_free, dtype=float)
        if np.any(y_free <= 0):
            raise NonPositiveDensity("rhs is defined for strictly positive states only")
        return self._rhs(t, y_free, q)

    def _rhs(self, t, y_free, q=None):
        x = self.full_state(t, y_free)
        cin, cout, _, _, q0, _, D, Dt = self._inputs(t)
        O, I = self.edge_fluxes(t, x, cin, cout)
        q = q0 if q is None else q
        num = self._net_edges(O, I) + q + self.eps_pert * self.W - Dt * x
        f = self.free_idx
        return num[f] / D[f]

    def jacobian(self, t, y_free):
        """Analytic ``d rhs / d rho_free``."""
        x = self.full_state(t, y_free)
        cin, cout, dcin, dcout = self.ratios(t)
        _, _, (dO_t, dO_h, dI_t, dI_h) = self.edge_fluxes(t, x, cin, cout, jac=True)
        D, Dt = self._denominators(cin, cout, dcin, dcout)
        dnet = self._dnet(dO_t, dO_h, dI_t, dI_h)
        dnet[np.diag_indices(self.n)] -= Dt
        f = self.free_idx
        return dnet[np.ix_(f, f)] / D[f][:, None]

    def _dnet(self, dO_t, dO_h, dI_t, dI_h):
        n = self.n
        rows = np.concatenate([self.head, self.head, self.tail, self.tail])
        cols = np.concatenate([self.tail, self.head, self.tail, self.head])
        vals = np.concatenate([dI_t, dI_h, -dO_t, -dO_h])
        return np.bincount(rows * n + cols, vals, n * n).reshape(n, n)

    def mass(self, t, y_free):
        """Lumped stored mass over the free vertices (kg)."""
        cin, cout, dcin, dcout = self.ratios(t)
        D, _ = self._denominators(cin, cout, dcin, dcout)
        return float(np.dot(D[self.free_idx], y_free[: len(self.free)]))

    def slack_injections(self, t, x):
        """Mass leaving each slack vertex into the network (kg/s)."""
        cin, cout, _, _ = self.ratios(t)
        O, I = self.edge_fluxes(t, x, cin, cout)
        return -self._net_edges(O, I)[self.slack_idx]

    # ----------------------------------------------- augmented system (audit)

    def _aug_rhs(self, t, y):
        nf = len(self.free)
        x = self.full_state(t, y[:nf])
        cin, cout, _, _, q, _, D, Dt = self._inputs(t)
        O, I = self.edge_fluxes(t, x, cin, cout)
        net_e = self._net_edges(O, I)
        num = net_e + q + self.eps_pert * self.W - Dt * x
        f = self.free_idx
        out = np.empty(nf + 1)
        out[:nf] = num[f] / D[f]
        # cumulative external supply: flow-vertex injections, slack outflow, perturbation source
        out[nf] = q[f].sum() - net_e[self.slack_idx].sum() + self.eps_pert * self.W[f].sum()
        return out

    def _aug_jac(self, t, y):
        nf = len(self.free)
        x = self.full_state(t, y[:nf])
        cin, cout, dcin, dcout = self.ratios(t)
        _, _, parts = self.edge_fluxes(t, x, cin, cout, jac=True)
        D, Dt = self._denominators(cin, cout, dcin, dcout)
        dnet = self._dnet(*parts)
        f = self.free_idx
        J = np.zeros((nf + 1, nf + 1))
        J[nf, :nf] = -dnet[np.ix_(self.slack_idx, f)].sum(axis=0)
        dnet[np.diag_indices(self.n)] -= Dt
        J[:nf, :nf] = dnet[np.ix_(f, f)] / D[f][:, None]
        return J

    # ------------------------------------------------------------ equilibrium

    def equilibrium_residual(self, t, y_free):
        """Net mass balance (kg/s) at the free vertices with time derivatives of the ratios dropped."""
        x = self.full_state(t, y_free)
        cin, cout, _, _ = self.ratios(t)
        O, I = self.edge_fluxes(t, x, cin, cout)
        num = self._net_edges(O, I) + self.injections(t) + self.eps_pert * self.W
        return num[self.free_idx]

    def equilibrium_jacobian(self, t, y_free):
        x = self.full_state(t, y_free)
        cin, cout, _, _ = self.ratios(t)
        _, _, parts = self.edge_fluxes(t, x, cin, cout, jac=True)
        f = self.free_idx
        return self._dnet(*parts)[np.ix_(f, f)]


def assemble(rg: RefinedGraph, s: Scenario, models=None, scheme=None, eps_pert=0.0) -> OdeSystem:
    return OdeSystem(rg, s, models, scheme, eps_pert)


# -------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    system: OdeSystem
    times: np.ndarray
    densities: np.ndarray  # (n_t, n_vertices), all refined vertices
    flows: np.ndarray  # (n_t, n_edges), segment flows
    slack_injections: np.ndarray  # (n_t, n_slack)
    supplied: np.ndarray  # cumulative external mass supply since t0 (kg)
    mass: np.ndarray  # lumped free-vertex mass (kg)
    stats: dict = field(default_factory=dict)
    segments: list = field(default_factory=list, repr=False)

    @property
    def rg(self):
        return self.system.rg

    @property
    def vertices(self):
        return self.system.vertices

    @property
    def edge_keys(self):
        return self.system.edge_keys

    @property
    def epsilon(self):
        return self.system.rg.epsilon

    def density(self, v):
        return self.densities[:, self.system.index[v]]

    def flow(self, key):
        return self.flows[:, self.system.edge_keys.index(tuple(key))]

    def state_at(self, t):
        """Dense-output densities at all refined vertices."""
        for t0, t1, sol in self.segments:
            if t0 - 1e-12 <= t <= t1 + 1e-12:
                return self.system.full_state(t, sol(t))
        raise ValueError(f"t = {t} outside the integrated interval")

    def injections(self):
        """Injection time series at every refined vertex (realized at slack vertices)."""
        q = np.array([self.system.injections(t) for t in self.times])
        q[:, self.system.slack_idx] = self.slack_injections
        return q

    def mass_audit(self) -> dict:
        """Stored-mass change versus cumulative supply, relative to total throughput."""
        drift = (self.mass - self.mass[0]) - (self.supplied - self.supplied[0])
        q = np.abs(self.injections())
        throughput = float(np.trapezoid(q.sum(axis=1), self.times)) if len(self.times) > 1 else 0.0
        throughput = max(throughput, 1e-300)
        return {
            "max_abs_drift_kg": float(np.max(np.abs(drift))),
            "throughput_kg": throughput,
            "relative_drift": float(np.max(np.abs(drift)) / throughput),
        }

    def pressures(self):
        c2 = self.system.gas_c2
        return None if c2 is None else density_to_pressure(self.densities, c2)


def integrate(
    sys: OdeSystem,
    rho0,
    t_span=None,
    opts: IntegratorOptions = IntegratorOptions(),
    t_eval=None,
    stop_events=(),
    supplied0=0.0,
) -> Trajectory:
    """Integrate from ``rho0`` (full refined state, dict or vector) over ``t_span``.

    The horizon is split at input breakpoints. A state that reaches zero
    density stops the run with :class:`DensityCavitation`.

    ``stop_events`` are callables ``e(t, x)`` of the full refined state; the
    run ends early when one of them falls through zero. The stopping time and
    event index land in ``stats["stop"]`` and the stopping state is appended
    as the last output sample.
    """
    t0, t1 = (0.0, sys.scenario.horizon) if t_span is None else map(float, t_span)
    if isinstance(rho0, dict):
        x0 = np.array([rho0[v] for v in sys.vertices], dtype=float)
    else:
        x0 = np.asarray(rho0, dtype=float)
        if x0.shape == (len(sys.free),):
            x0 = sys.full_state(t0, x0)
    if np.any(x0 <= 0) or not np.all(np.isfinite(x0)):
        raise NonPositiveDensity("initial densities must be positive and finite")
    nf = len(sys.free)
    y = np.empty(nf + 1)
    y[:nf] = x0[sys.free_idx]
    y[nf] = supplied0
    rho_scale = float(np.max(x0))
    atol = np.full(nf + 1, opts.atol)
    atol[nf] = opts.atol * max(float(sys.W[sys.free_idx].sum()), 1.0)

    breaks = [b for b in sys.scenario.breakpoints() if t0 < b < t1]
    edges = [t0, *breaks, t1]
    if t_eval is None:
        grid = opts.output_grid(t1 - t0, [b - t0 for b in breaks]) + t0
    else:
        grid = np.union1d(np.asarray(t_eval, dtype=float), [t0, t1])
    grid = grid[(grid >= t0) & (grid <= t1)]

    def cavitation(t, yy):
        return float(np.min(yy[:nf])) - 1e-12 * rho_scale

    cavitation.terminal = True
    cavitation.direction = -1
    events = [cavitation]
    for ev in stop_events:
        def wrapped(t, yy, ev=ev):
            return float(ev(t, sys.full_state(t, yy[:nf])))

        wrapped.terminal = True
        wrapped.direction = -1
        events.append(wrapped)

    ts, ys, segments = [], [], []
    stats = {"nfev": 0, "njev": 0, "nlu": 0, "segments": 0, "stop": None}
    for a, b in zip(edges, edges[1:]):
        mask = (grid >= a) & (grid <= b)
        if ts:
            mask &= grid > ts[-1]
        sol = solve_ivp(
            sys._aug_rhs,
            (a, b),
            y,
            method=opts.method,
            jac=sys._aug_jac,
            rtol=opts.rtol,
            atol=atol,
            dense_output=True,
            events=events,
            t_eval=grid[mask],
            max_step=opts.max_step,
        )
        stats["nfev"] += sol.nfev
        stats["njev"] += sol.njev
        stats["nlu"] += sol.nlu
        stats["segments"] += 1
        if sol.status == 1 and len(sol.t_events[0]):
            tc = float(sol.t_events[0][0])
            raise DensityCavitation(f"density reached zero at t = {tc:.6g} s", time=tc, state=sol.y_events[0][0][:nf])
        if sol.status == 1:
            k = next(i for i in range(1, len(events)) if len(sol.t_events[i]))
            te = float(sol.t_events[k][0])
            segments.append((a, te, _FreeView(sol.sol, nf)))
            keep = sol.t < te
            ts.extend(sol.t[keep].tolist())
            ys.extend(sol.y.T[keep].tolist())
            ts.append(te)
            ys.append(sol.y_events[k][0].tolist())
            stats["stop"] = {"event": k - 1, "time": te}
            break
        if sol.status != 0:
            tf = float(sol.t[-1]) if len(sol.t) else a
            raise StepFailure(f"integration failed at t = {tf:.6g} s: {sol.message}", time=tf, state=None)
        segments.append((a, b, _FreeView(sol.sol, nf)))
        ts.extend(sol.t.tolist())
        ys.extend(sol.y.T.tolist())
        y = sol.sol(b)

    times = np.array(ts)
    Y = np.array(ys)
    dens = np.array([sys.full_state(t, yy[:nf]) for t, yy in zip(times, Y)])
    if np.any(dens <= 0):
        raise DensityCavitation("non-positive density at an output time")
    flows = np.array([sys.midpoint_flows(t, x) for t, x in zip(times, dens)])
    slack_q = np.array([sys.slack_injections(t, x) for t, x in zip(times, dens)])
    mass = np.array([sys.mass(t, yy[:nf]) for t, yy in zip(times, Y)])
    stats.update({"rtol": opts.rtol, "atol": opts.atol, "method": opts.method, "scheme": sys.scheme})
    return Trajectory(sys, times, dens, flows, slack_q, Y[:, nf], mass, stats, segments)


def concat_trajectories(parts, system=None) -> Trajectory:
    """Join consecutive runs; a repeated joint time keeps the later sample."""
    system = parts[-1].system if system is None else system
    fields = ["times", "densities", "flows", "slack_injections", "supplied", "mass"]
    out = {f: [] for f in fields}
    segments = []
    stats = {"nfev": 0, "njev": 0, "nlu": 0, "segments": 0}
    for n, tr in enumerate(parts):
        keep = np.ones(len(tr.times), dtype=bool)
        if n + 1 < len(parts):
            keep &= tr.times < parts[n + 1].times[0]
        for f in fields:
            out[f].append(getattr(tr, f)[keep])
        segments.extend(tr.segments)
        for k in ("nfev", "njev", "nlu", "segments"):
            stats[k] += tr.stats.get(k, 0)
    for k in ("rtol", "atol", "method", "scheme"):
        stats[k] = parts[-1].stats.get(k)
    arrays = {f: np.concatenate(v) for f, v in out.items()}
    return Trajectory(system, stats=stats, segments=segments, **arrays)


class _FreeView:
    """Dense output restricted to the density components."""

    def __init__(self, sol, nf):
        self.sol = sol
        self.nf = nf

    def __call__(self, t):
        return self.sol(t)[: self.nf]


# ---------------------------------------------------------------- steady init


def steady_init(sys: OdeSystem, s: Scenario | None = None, t=0.0, tol=1e-11, max_iter=60) -> dict:
    """Discrete equilibrium of ``sys`` at time ``t`` (ratios frozen).

    A continuum steady state on the refined graph seeds a Newton iteration on
    the lumped balance itself, so the result is an exact fixed point of the
    integrated system (for the potential scheme the two coincide).
    """
    s = sys.scenario if s is None else s
    rg = sys.rg
    frozen = s.frozen(t)
    seed_models = {e.key: sys.models[k] for k, e in enumerate(sys.edges)}
    try:
        st = solve_steady(rg.graph, frozen, seed_models)
        y = np.array([st.nodal_densities[v] for v in sys.free])
    except MonoflowError:
        st = solve_steady(rg.parent, _restrict_frozen(frozen, rg), {k: m for k, m in _parent_models(sys).items()})
        y = np.array([_interp_parent(rg, st.nodal_densities, frozen, v) for v in sys.free])
    y = _newton_equilibrium(sys, t, y, tol, max_iter)
    x = sys.full_state(t, y)
    return {v: float(x[n]) for n, v in enumerate(sys.vertices)}


def _parent_models(sys):
    out = {}
    for k, e in enumerate(sys.edges):
        out[sys.rg.parent_map[e.key]] = sys.models[k]
    return out


def _restrict_frozen(frozen, rg):
    from .netgraph import SteadyData

    ratios = {(rg.parent_map[key], placement): c for (key, placement), c in frozen.ratios.items()}
    inj = {v: q for v, q in frozen.injections.items() if v in rg.parent.flow_set}
    return SteadyData(inj, dict(frozen.slack_densities), ratios)


def _interp_parent(rg, rho, frozen, v):
    kind, ref = rg.classify(v)
    if kind == "parent-node":
        return rho[ref]
    e = rg.parent.edge(ref)
    a = rho[e.tail] * frozen.ratios.get(((rg.first_segment(ref)), INLET), 1.0)
    b = rho[e.head] * frozen.ratios.get(((rg.last_segment(ref)), OUTLET), 1.0)
    x = rg.coordinate_map[v][2]
    return a + (b - a) * x / e.length


def _newton_equilibrium(sys, t, y, tol, max_iter):
    r = sys.equilibrium_residual(t, y)
    q = sys.injections(t)
    scale = max(float(np.max(np.abs(q))), float(np.max(np.abs(sys.midpoint_flows(t, sys.full_state(t, y))))), 1.0)
    it = 0
    while len(r) and np.max(np.abs(r)) > tol * scale:
        if it >= max_iter:
            raise NonConvergence("discrete equilibrium Newton did not converge", residual=float(np.max(np.abs(r))))
        it += 1
        J = sys.equilibrium_jacobian(t, y)
        if np.max(np.abs(r)) <= roundoff_floor(J, y):
            break
        try:
            dy = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("equilibrium Jacobian is singular") from exc
        merit = float(np.dot(r, r))
        step = 1.0
        while True:
            trial = y + step * dy
            if np.all(trial > 0):
                tr = sys.equilibrium_residual(t, trial)
                if float(np.dot(tr, tr)) <= (1 - 1e-4 * step) * merit:
                    break
            step *= 0.5
            if step < 1e-12:
                raise NonConvergence(
                    "no discrete equilibrium found (line search failed)", residual=float(np.max(np.abs(r)))
                )
        y, r = trial, tr
    return y


# ------------------------------------------------------------------ driver


def simulate(
    g,
    scenario: Scenario,
    epsilon: float,
    models=None,
    scheme=None,
    eps_pert=0.0,
    opts: IntegratorOptions = IntegratorOptions(),
    initial=None,
    rg: RefinedGraph | None = None,
) -> Trajectory:
    """Refine, lift, assemble, initialize and integrate in one call.

    ``initial`` overrides the initial state with a full refined-state dict.
    Without it the scenario's own initial state is used, or a steady state at
    t = 0 when the scenario requests one.
    """
    rg = refine(g, epsilon) if rg is None else rg
    lifted = lift_scenario(scenario, rg)
    sys = assemble(rg, lifted, models, scheme, eps_pert)
    if initial is None:
        initial = lifted.initial_state if lifted.initial_state is not None else steady_init(sys)
    return integrate(sys, initial, opts=opts)
