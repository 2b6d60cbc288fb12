import math

import numpy as np
import pytest

from conftest import C2, weymouth_outlet
from monoflow import fixtures
from monoflow.errors import DensityCavitation, MissingModel, NonPositiveDensity, UnliftedScenario
from monoflow.monotone import finite_difference_jacobians
from monoflow.netgraph import OUTLET, lift_scenario, make_scenario, refine
from monoflow.physics import CustomDissipation, gas_models, pressure_to_density
from monoflow.timefunc import Constant, PiecewiseLinear, Sinusoid
from monoflow.transient import IntegratorOptions, assemble, integrate, simulate, steady_init

RHO_IN = pressure_to_density(6.5e6)
D, LAM = 0.9144, 0.01
S = math.pi * D**2 / 4
G = S * math.sqrt(2 * D / LAM)


def pipe_system(pipe, scenario, eps=10000.0, scheme=None, models=None, eps_pert=0.0):
    rg = refine(pipe.graph, eps)
    return assemble(rg, lift_scenario(scenario, rg), models, scheme, eps_pert)


def test_uniform_state_is_equilibrium(pipe):
    for scheme in ("potential", "nodal"):
        sys_ = pipe_system(pipe, make_scenario(pipe.graph, {"2": 0.0}, {"1": 50.0}, 100.0), scheme=scheme)
        assert np.all(sys_.rhs(3.0, np.full(len(sys_.free), 50.0)) == 0.0)


def test_linear_profile_matches_hand_evaluation(pipe):
    sys_ = pipe_system(pipe, make_scenario(pipe.graph, {"2": 0.0}, {"1": 50.0}, 100.0))
    assert sys_.free == ["2", "1-2#1"]
    rho = {"1": 50.0, "1-2#1": 48.0, "2": 46.0}
    Lh = 10000.0

    def phi(a, b):  # Weymouth with p = c^2 rho, positive from a to b
        return G * math.sqrt(C2 * (a * a - b * b) / (2 * Lh))

    in_, out = phi(rho["1"], rho["1-2#1"]), phi(rho["1-2#1"], rho["2"])
    expected_mid = (in_ - out) / (S * Lh)
    expected_end = out / (S * Lh / 2)
    f = sys_.rhs(0.0, np.array([rho["2"], rho["1-2#1"]]))
    assert f[1] == pytest.approx(expected_mid, rel=1e-9)
    assert f[1] > 0  # density squared is convex, so the upstream segment carries more
    assert f[0] == pytest.approx(expected_end, rel=1e-9)


def test_ratio_rate_term(pipe):
    ratio = Sinusoid(0.1, 3600.0, 0.3, 1.2)
    t0 = 500.0
    key = ("1", "2", OUTLET)
    moving = make_scenario(pipe.graph, {"2": -10.0}, {"1": 40.0}, 3600.0, compressors={key: ratio})
    frozen = make_scenario(pipe.graph, {"2": -10.0}, {"1": 40.0}, 3600.0, compressors={key: ratio(t0)})
    a, b = pipe_system(pipe, moving), pipe_system(pipe, frozen)
    y = np.array([44.0, 46.0])
    diff = a.rhs(t0, y) - b.rhs(t0, y)
    # the outlet ratio sits on the last segment, at the free end vertex "2" only
    j = a.free.index("2")
    h = 1e-3
    cdot_fd = (ratio(t0 + h) - ratio(t0 - h)) / (2 * h)
    assert diff[j] == pytest.approx(-y[j] * cdot_fd / ratio(t0), rel=1e-6)
    assert diff[1 - j] == 0.0


def test_rhs_rejects_non_positive_state(pipe):
    sys_ = pipe_system(pipe, make_scenario(pipe.graph, {"2": 0.0}, {"1": 50.0}, 100.0))
    with pytest.raises(NonPositiveDensity):
        sys_.rhs(0.0, np.array([50.0, -1.0]))


def test_assembly_preconditions(pipe):
    s = make_scenario(pipe.graph, {"2": 0.0}, {"1": 50.0}, 100.0)
    rg = refine(pipe.graph, 5000.0)
    with pytest.raises(UnliftedScenario):
        assemble(rg, s)
    custom = {k: CustomDissipation(m.eval, m.d_du, m.d_dv) for k, m in gas_models(pipe.graph).items()}
    with pytest.raises(MissingModel):
        assemble(rg, lift_scenario(s, rg), custom, "potential")
    assert assemble(rg, lift_scenario(s, rg), custom).scheme == "nodal"
    with pytest.raises(MissingModel):
        assemble(rg, lift_scenario(s, rg), {})


@pytest.mark.parametrize("scheme", ["potential", "nodal"])
def test_analytic_jacobian_matches_finite_differences(five, scheme):
    s = fixtures.five_node_scenario()
    rg = refine(five.graph, 10000.0)
    sys_ = assemble(rg, lift_scenario(s, rg), None, scheme)
    rng = np.random.default_rng(3)
    x0 = steady_init(sys_)
    base = np.array([x0[v] for v in sys_.free])
    for t in (0.0, 20000.0, 50000.0):
        y = base * (1 + 0.1 * rng.uniform(-1, 1, len(base)))
        Jr, _ = finite_difference_jacobians(sys_, t, y)
        Ja = sys_.jacobian(t, y)
        assert np.max(np.abs(Ja - Jr)) <= 1e-5 * np.max(np.abs(Jr))


def test_steady_init_matches_closed_form(pipe):
    sys_ = pipe_system(pipe, fixtures.single_pipe_steady(120), eps=5000.0)
    x = steady_init(sys_)
    for v in sys_.vertices:
        pos = sys_.rg.coordinate_map[v]
        xpos = {"1": 0.0, "2": 20000.0}[v] if pos[0] == "vertex" else pos[2]
        oracle = weymouth_outlet(RHO_IN, 120.0, xpos, D, LAM) if xpos > 0 else RHO_IN
        assert x[v] == pytest.approx(oracle, rel=1e-6)


def test_steady_init_is_discrete_equilibrium(five):
    s = fixtures.five_node_scenario()
    rg = refine(five.graph, 10000.0)
    for scheme in ("potential", "nodal"):
        sys_ = assemble(rg, lift_scenario(s, rg), None, scheme)
        x = steady_init(sys_)
        y = np.array([x[v] for v in sys_.free])
        r = sys_.equilibrium_residual(0.0, y)
        assert np.max(np.abs(r)) <= 1e-6 * 120.0
        # what remains of the rhs is the actuator-rate term alone
        _, _, _, _, _, _, Dn, Dt = sys_._inputs(0.0)
        f = sys_.free_idx
        assert np.allclose(sys_.rhs(0.0, y) * Dn[f], -Dt[f] * y, rtol=0, atol=1e-6 * 120.0)


def test_equilibrium_stays_constant(pipe):
    s = fixtures.single_pipe_steady(300, horizon=7200.0)
    traj = simulate(pipe.graph, s, 5000.0)
    drift = np.max(np.abs(traj.densities - traj.densities[0]))
    assert drift <= 10 * traj.stats["atol"]


@pytest.mark.parametrize("name", ["pipe", "five"])
def test_mass_audit_on_fixtures(name, pipe, five):
    if name == "pipe":
        net, s, eps = pipe, fixtures.single_pipe_scenario(300), 5000.0
        s = make_scenario(net.graph, s.injections, s.slack_densities, s.horizon)
    else:
        net, eps = five, 10000.0
        s = fixtures.five_node_scenario(varying=False)
        s = make_scenario(net.graph, {v: Sinusoid(10.0, 21600.0, 0.0, f(0.0)) for v, f in s.injections.items()},
                          s.slack_densities, 43200.0)
        s = type(s)(s.injections, s.slack_densities, s.horizon, fixtures.five_node_controls(False), None)
    traj = simulate(net.graph, s, eps, net.models(), "potential")
    audit = traj.mass_audit()
    assert audit["relative_drift"] <= 1e-6


def test_inlet_flow_mean_tracks_withdrawal(pipe):
    s = fixtures.single_pipe_scenario(120)
    traj = simulate(pipe.graph, s, 5000.0, opts=IntegratorOptions(n_out=1441))
    inflow = traj.slack_injections[:, 0]
    T = s.horizon
    mean_in = np.trapezoid(inflow, traj.times) / T
    stored = (traj.mass[-1] - traj.mass[0]) / T
    assert mean_in == pytest.approx(60.0 + stored, rel=1e-6)
    assert mean_in == pytest.approx(60.0, rel=2e-2)


def test_cavitation_is_reported(pipe):
    s = make_scenario(pipe.graph, {"2": PiecewiseLinear((0.0, 600.0), (0.0, -3000.0))}, {"1": RHO_IN}, 3600.0)
    with pytest.raises(DensityCavitation) as info:
        simulate(pipe.graph, s, 5000.0)
    assert 0 < info.value.time < 3600.0


def test_breakpoints_split_the_integration(pipe):
    s = make_scenario(pipe.graph, {"2": PiecewiseLinear((0.0, 600.0, 1200.0), (0.0, -50.0, -50.0))}, {"1": RHO_IN}, 1800.0)
    traj = simulate(pipe.graph, s, 5000.0, opts=IntegratorOptions(dt_out=300.0))
    assert traj.stats["segments"] == 3
    assert traj.times.tolist() == [0.0, 300.0, 600.0, 900.0, 1200.0, 1500.0, 1800.0]
    # dense output agrees with the sampled states
    assert np.allclose(traj.state_at(900.0), traj.densities[3], rtol=1e-12)


def test_perturbed_run_starts_from_shifted_state(pipe):
    s = fixtures.single_pipe_scenario(300, horizon=6 * 3600.0)
    rg = refine(pipe.graph, 5000.0)
    base = simulate(pipe.graph, s, 5000.0, rg=rg)
    x0 = {v: float(base.densities[0, k]) + (1e-3 if v in rg.graph.flow_set else 0.0) for k, v in enumerate(base.vertices)}
    pert = simulate(pipe.graph, s, 5000.0, eps_pert=1e-3, initial=x0, rg=rg)
    assert np.min(pert.densities - base.densities) >= -1e-9 * RHO_IN
