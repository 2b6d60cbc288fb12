import numpy as np
import pytest

from monoflow import fixtures
from monoflow.errors import EnvelopeInverted, HypothesisViolated, SandwichViolated, ScenarioError
from monoflow.netgraph import make_scenario
from monoflow.robust import (
    PIN_UPPER,
    Envelope,
    certify_envelope,
    envelope_trajectories,
    run_nmp,
    sandwich_margin,
    verify_corollary1,
)
from monoflow.timefunc import Constant
from monoflow.transient import simulate

EPS = fixtures.FIVE_NODE_EPSILON
HOURS6 = 6 * 3600.0


@pytest.fixture(scope="module")
def env():
    return fixtures.five_node_envelope()


@pytest.fixture(scope="module")
def nmp_trace(five, env):
    return run_nmp(five.graph, EPS, env, fixtures.nmp_realized(env))


def test_inverted_envelope(five, env):
    bad = Envelope(env.lower, env.upper, env.rho_min, env.rho_max)
    with pytest.raises(EnvelopeInverted):
        bad.validate(five.graph, 3600.0)
    with pytest.raises(ScenarioError):
        Envelope({"2": Constant(0.0)}, {"2": Constant(0.0)}, 1.0, 2.0).validate(five.graph, 3600.0)
    with pytest.raises(ScenarioError):
        Envelope(env.upper, env.lower, env.rho_max, env.rho_min).validate(five.graph, 3600.0)


def test_base_must_lie_in_envelope(five, env):
    base = fixtures.five_node_scenario(fixtures.scaled_withdrawals(1.5), horizon=3600.0)
    with pytest.raises(HypothesisViolated):
        certify_envelope(five.graph, EPS, fixtures.five_node_controls(), env, base)


def test_zero_width_envelope_is_feasible(five):
    base = fixtures.five_node_scenario(horizon=HOURS6)
    ref = fixtures.five_node_envelope()
    flat = Envelope(dict(base.injections), dict(base.injections), ref.rho_min, ref.rho_max)
    cert = certify_envelope(five.graph, EPS, fixtures.five_node_controls(), flat, base)
    assert cert.feasible
    up, lo = cert.trajectories["upper"], cert.trajectories["lower"]
    assert np.array_equal(up.densities, lo.densities)


def test_deep_envelope_is_infeasible(five):
    base = fixtures.five_node_scenario(horizon=fixtures.DAY)
    cert = certify_envelope(five.graph, EPS, fixtures.five_node_controls(), fixtures.deep_envelope(), base)
    assert not cert
    first = cert.violations[0]
    assert first["bound"] == "min"
    assert cert.min_density < fixtures.deep_envelope().rho_min
    assert cert.summary()["n_violations"] == len(cert.violations)


def test_interior_profile_is_sandwiched(pipe):
    s120 = fixtures.single_pipe_scenario(120, horizon=HOURS6)
    s300 = fixtures.single_pipe_scenario(300, horizon=HOURS6)
    rho = s120.slack_densities["1"](0.0)
    env = Envelope(dict(s120.injections), dict(s300.injections), 0.5 * rho, 1.1 * rho)
    base = fixtures.single_pipe_scenario(200, horizon=HOURS6)
    cert = certify_envelope(pipe.graph, 5000.0, {}, env, base)
    assert cert.feasible
    inner = simulate(pipe.graph, base, 5000.0, initial=cert.initial_state)
    rep = sandwich_margin(inner, cert.trajectories["upper"], cert.trajectories["lower"], 1e-8 * rho)
    assert rep.ok
    # the nominal run certified alongside is the same as a direct simulation
    assert np.allclose(inner.densities, cert.trajectories["nominal"].densities, rtol=1e-12)


def test_random_interior_profiles(five, env, rng):
    base = fixtures.five_node_scenario(horizon=HOURS6)
    rg, x0, up, lo = envelope_trajectories(five.graph, EPS, env, base)
    scale = float(up.densities.max())
    for _ in range(2):
        inj = env.interior_profile(rng, HOURS6)
        assert env.contains(inj, HOURS6, tol=1e-12)
        s = fixtures.five_node_scenario(inj, HOURS6)
        traj = simulate(five.graph, s, EPS, initial=x0, rg=rg)
        assert sandwich_margin(traj, up, lo, 1e-8 * scale).ok


def test_policy_idle_inside_envelope(five, env):
    realized = fixtures.five_node_scenario(
        {v: env.lower[v] + 0.5 * (env.upper[v] - env.lower[v]) for v in env.upper}, fixtures.NMP_HORIZON
    )
    trace = run_nmp(five.graph, EPS, env, realized)
    assert trace.actions == []
    assert trace.monitored_upper == [] and trace.monitored_lower == []
    verify_corollary1(trace)


def test_single_violation_single_action(nmp_trace):
    assert len(nmp_trace.actions) == 1
    act = nmp_trace.actions[0]
    assert act["node"] == "5" and act["action"] == PIN_UPPER
    assert act["time"] > 3 * 3600.0  # the step is centred at 4 h with a half-hour width
    assert nmp_trace.monitored_upper == ["5"]
    rep = verify_corollary1(nmp_trace)
    assert rep.worst_margin >= -nmp_trace.tol
    # after the pin the node follows the envelope bound exactly
    q5 = nmp_trace.scenario.injections["5"]
    t_late = np.linspace(act["time"] + 1.0, fixtures.NMP_HORIZON, 5)
    assert np.allclose(q5(t_late), fixtures.five_node_envelope().upper["5"](t_late))


def test_brief_second_violation_needs_no_action(five, env):
    trace = run_nmp(five.graph, EPS, env, fixtures.nmp_realized(env, second_violation=True))
    assert [a["node"] for a in trace.actions] == ["5"]
    assert trace.monitored_lower == ["3"]
    verify_corollary1(trace)


def test_ablation_leaves_the_envelope(five, env, nmp_trace):
    off = run_nmp(five.graph, EPS, env, fixtures.nmp_realized(env), envelope=(nmp_trace.upper, nmp_trace.lower),
                  enabled=False)
    assert off.actions == []
    with pytest.raises(SandwichViolated) as info:
        verify_corollary1(off)
    assert info.value.vertex is not None and info.value.margin < 0


def test_pin_to_upper_never_raises_density(five, env, nmp_trace):
    """Pinning an over-injecting node down to its upper bound can only lower densities."""
    off = run_nmp(five.graph, EPS, env, fixtures.nmp_realized(env), envelope=(nmp_trace.upper, nmp_trace.lower),
                  enabled=False)
    pinned = np.array([nmp_trace.trajectory.state_at(t) for t in off.trajectory.times])
    diff = pinned - off.trajectory.densities
    assert diff.max() <= nmp_trace.tol
    assert diff.min() < -nmp_trace.tol


def test_run_nmp_shares_envelope_runs(five, env, nmp_trace):
    again = run_nmp(five.graph, EPS, env, fixtures.nmp_realized(env), envelope=(nmp_trace.upper, nmp_trace.lower))
    assert len(again.actions) == 1
    assert again.actions[0]["time"] == pytest.approx(nmp_trace.actions[0]["time"], rel=1e-9)
    assert again.trajectory.vertices == nmp_trace.trajectory.vertices


def test_single_pipe_envelope_in_order(pipe):
    s120 = fixtures.single_pipe_scenario(120, horizon=HOURS6)
    s300 = fixtures.single_pipe_scenario(300, horizon=HOURS6)
    env = Envelope(dict(s120.injections), dict(s300.injections), 1.0, 1e3)
    realized = make_scenario(pipe.graph, {"2": s120.injections["2"] * 0.5 + s300.injections["2"] * 0.5},
                             s120.slack_densities, HOURS6)
    trace = run_nmp(pipe.graph, 5000.0, env, realized)
    assert trace.actions == []
    assert verify_corollary1(trace).ok
