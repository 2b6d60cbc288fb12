"""Command-line entry point.

Every subcommand prints a YAML report on stdout. With ``--out DIR`` the report
and any tables are also written there. Exit status: 0 pass or feasible,
2 order violation or infeasible, 1 error (category on stderr).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path


from . import fixtures, io
from .errors import MonoflowError, ParseError
from .monotone import check_order, jacobian_check, random_states
from .netgraph import lift_scenario, refine
from .robust import certify_envelope, run_nmp, sandwich_margin
from .steady import SteadyOptions, solve_steady, uniqueness_probe
from .transient import IntegratorOptions, assemble, integrate, steady_init

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2
DEFAULT_SEED = 20240101


@dataclass
class RunConfig:
    subcommand: str
    network: Path | None = None
    scenarios: list = field(default_factory=list)
    epsilon: float | None = None
    rtol: float = 1e-7
    atol: float = 1e-9
    out: Path | None = None
    seed: int = DEFAULT_SEED
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("rtol", "atol"):
            if not getattr(self, name) > 0:
                raise ParseError(f"--{name} must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ParseError("--epsilon must be positive")

    def integrator(self) -> IntegratorOptions:
        dt = self.extra.get("dt_out")
        return IntegratorOptions(rtol=self.rtol, atol=self.atol, dt_out=dt, method=self.extra.get("method") or "Radau")


# ------------------------------------------------------------------ helpers


def _need(value, flag):
    if value is None:
        raise ParseError(f"{flag} is required")
    return value


def _load(cfg: RunConfig):
    net = io.load_network(_need(cfg.network, "--network"))
    controls = None
    if cfg.extra.get("controls"):
        controls = io.load_controls(cfg.extra["controls"])
    scenarios = [io.load_scenario(p, net, controls) for p in cfg.scenarios]
    return net, scenarios


def _epsilon(cfg, net):
    if cfg.epsilon is not None:
        return cfg.epsilon
    return min(e.length for e in net.graph.edges) / 4.0


def _emit(cfg: RunConfig, name, report, tables=()):
    text = io.dump_yaml(report)
    sys.stdout.write(text)
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / name).write_text(text)
        for fname, writer in tables:
            writer(cfg.out / fname)


def _edge_label(key):
    return f"{key[0]}->{key[1]}"


# ----------------------------------------------------------------- commands


def cmd_steady(cfg: RunConfig) -> int:
    net, scenarios = _load(cfg)
    s = _need(scenarios[0] if scenarios else None, "--scenario")
    data = s.frozen(float(cfg.extra.get("time") or 0.0))
    st = solve_steady(net.graph, data, net.models(), opts=SteadyOptions(tol_balance=cfg.extra.get("tol") or 1e-8))
    report = {
        "densities": dict(st.nodal_densities),
        "pressures": {v: r * net.gas.c2 for v, r in st.nodal_densities.items()},
        "flows": {_edge_label(k): f for k, f in st.edge_flows.items()},
        "slack_injections": dict(st.realized_injections),
        "balance_residual": st.balance_residual,
        "edge_residual": st.edge_residual,
        "iterations": st.iterations,
    }
    if cfg.extra.get("starts"):
        u = uniqueness_probe(net.graph, data, int(cfg.extra["starts"]), net.models(), seed=cfg.seed)
        report["uniqueness"] = {"unique": u.ok, "max_deviation": u.max_deviation, "n_converged": u.n_converged}
    _emit(cfg, "steady.yaml", report)
    return EXIT_OK


def _simulate_one(cfg, net, s, eps_pert=0.0):
    rg = refine(net.graph, _epsilon(cfg, net))
    lifted = lift_scenario(s, rg)
    sys_ = assemble(rg, lifted, net.models(), cfg.extra.get("scheme"), eps_pert)
    x0 = lifted.initial_state if lifted.initial_state is not None else steady_init(sys_)
    return integrate(sys_, x0, opts=cfg.integrator())


def cmd_simulate(cfg: RunConfig) -> int:
    net, scenarios = _load(cfg)
    s = _need(scenarios[0] if scenarios else None, "--scenario")
    traj = _simulate_one(cfg, net, s, float(cfg.extra.get("eps_pert") or 0.0))
    report = {
        "epsilon": traj.epsilon,
        "vertices": len(traj.vertices),
        "scheme": traj.system.scheme,
        "mass_audit": traj.mass_audit(),
        "integrator": {k: traj.stats[k] for k in ("method", "rtol", "atol", "nfev", "njev", "nlu", "segments")},
        "min_density": float(traj.densities.min()),
        "max_density": float(traj.densities.max()),
    }
    _emit(cfg, "summary.yaml", report, [("trajectory.csv", lambda p: io.write_trajectory_csv(traj, p))])
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    net, scenarios = _load(cfg)
    if len(scenarios) != 2:
        raise ParseError("verify-monotone needs exactly two --scenarios (larger injections first)")
    t1, t2 = (_simulate_one(cfg, net, s) for s in scenarios)
    rep = check_order(t1, t2, cfg.extra.get("tol"))
    summary = rep.summary()
    summary["crossing_times"] = {v: t for v, t in rep.crossing_times.items() if t is not None}

    def margins(path):
        io.write_table_csv(path, ["time[s]"] + [f"margin:{v}[kg/m3]" for v in rep.vertices],
                           [[t, *row] for t, row in zip(rep.times, rep.margins)])

    _emit(cfg, "order.yaml", summary, [("margins.csv", margins)])
    return EXIT_OK if rep.ordered else EXIT_VIOLATION


def cmd_jacobian(cfg: RunConfig) -> int:
    net, scenarios = _load(cfg)
    s = _need(scenarios[0] if scenarios else None, "--scenario")
    rg = refine(net.graph, _epsilon(cfg, net))
    sys_ = assemble(rg, lift_scenario(s, rg), net.models(), cfg.extra.get("scheme"))
    states, times = random_states(sys_, int(cfg.extra.get("samples") or 20), seed=cfg.seed,
                                  spread=float(cfg.extra.get("spread") or 0.2))
    rep = jacobian_check(sys_, states, times, float(cfg.extra.get("tol") or 1e-8))
    report = {
        "ok": rep.ok,
        "samples": rep.n_samples,
        "metzler_violations": rep.metzler_violations[:20],
        "input_violations": rep.input_violations[:20],
        "max_analytic_mismatch": rep.max_analytic_mismatch,
    }
    _emit(cfg, "jacobian.yaml", report)
    return EXIT_OK if rep.ok else EXIT_VIOLATION


def cmd_robust(cfg: RunConfig) -> int:
    net, scenarios = _load(cfg)
    base = _need(scenarios[0] if scenarios else None, "--scenario")
    env = io.load_envelope(_need(cfg.extra.get("envelope"), "--envelope"), net)
    cert = certify_envelope(net.graph, _epsilon(cfg, net), base.compat, env, base, net.models(),
                            cfg.extra.get("scheme"), cfg.integrator())
    _emit(cfg, "certificate.yaml", cert.summary())
    return EXIT_OK if cert.feasible else EXIT_VIOLATION


def cmd_nmp(cfg: RunConfig) -> int:
    net, scenarios = _load(cfg)
    realized = _need(scenarios[0] if scenarios else None, "--scenario")
    env = io.load_envelope(_need(cfg.extra.get("envelope"), "--envelope"), net)
    trace = run_nmp(net.graph, _epsilon(cfg, net), env, realized, net.models(), cfg.extra.get("scheme"),
                    cfg.integrator(), enabled=not cfg.extra.get("no_policy"))
    rep = sandwich_margin(trace.trajectory, trace.upper, trace.lower, trace.tol)
    report = {
        "sandwiched": rep.ok,
        "worst_margin": rep.worst_margin,
        "worst_time": rep.worst_time,
        "worst_vertex": rep.worst_vertex,
        "worst_side": rep.side,
        "tol_order": trace.tol,
        "monitored_upper": trace.monitored_upper,
        "monitored_lower": trace.monitored_lower,
        "actions": trace.actions,
    }
    _emit(cfg, "policy.yaml", report, [("trace.csv", lambda p: io.write_trajectory_csv(trace.trajectory, p))])
    return EXIT_OK if rep.ok else EXIT_VIOLATION


def cmd_fixtures(cfg: RunConfig) -> int:
    """Write the built-in fixture networks and scenarios as YAML files."""
    out = _need(cfg.out, "--out")
    written = fixtures.export_fixtures(out)
    sys.stdout.write(io.dump_yaml({"written": [str(p) for p in written]}))
    return EXIT_OK


COMMANDS = {
    "steady": cmd_steady,
    "simulate": cmd_simulate,
    "verify-monotone": cmd_verify,
    "jacobian-check": cmd_jacobian,
    "robust-check": cmd_robust,
    "nmp": cmd_nmp,
    "fixtures": cmd_fixtures,
}


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", type=Path, help="network YAML file")
    common.add_argument("--scenario", "--scenarios", dest="scenarios", type=Path, nargs="+", default=[],
                        help="scenario YAML file(s)")
    common.add_argument("--epsilon", type=float, help="refinement length in metres (default: shortest edge / 4)")
    common.add_argument("--rtol", type=float, default=1e-7)
    common.add_argument("--atol", type=float, default=1e-9)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--scheme", choices=["potential", "nodal"])
    common.add_argument("--method", choices=["Radau", "BDF", "LSODA"])
    common.add_argument("--controls", type=Path, help="compressor schedule YAML overriding the scenario's")

    p = argparse.ArgumentParser(prog="monoflow", description="Monotone gas network flow toolkit")
    sub = p.add_subparsers(dest="subcommand", required=True)

    s = sub.add_parser("steady", parents=[common], help="steady state of a network")
    s.add_argument("--time", type=float, default=0.0, help="freeze time-varying inputs at this time")
    s.add_argument("--tol", type=float)
    s.add_argument("--starts", type=int, help="also run a multi-start uniqueness probe")

    s = sub.add_parser("simulate", parents=[common], help="transient run, CSV trajectory")
    s.add_argument("--dt-out", type=float, help="output spacing in seconds")
    s.add_argument("--eps-pert", type=float, default=0.0)

    s = sub.add_parser("verify-monotone", parents=[common], help="order check of two scenarios")
    s.add_argument("--dt-out", type=float)
    s.add_argument("--tol", type=float, help="order tolerance in kg/m3 (default 10 atol)")

    s = sub.add_parser("jacobian-check", parents=[common], help="Metzler and input-sign check")
    s.add_argument("--samples", type=int, default=20)
    s.add_argument("--spread", type=float, default=0.2)
    s.add_argument("--tol", type=float, default=1e-8)

    s = sub.add_parser("robust-check", parents=[common], help="certify an injection envelope")
    s.add_argument("--envelope", type=Path)
    s.add_argument("--dt-out", type=float)

    s = sub.add_parser("nmp", parents=[common], help="closed-loop run under the monitoring policy")
    s.add_argument("--envelope", type=Path)
    s.add_argument("--dt-out", type=float)
    s.add_argument("--no-policy", action="store_true", help="monitor only (ablation)")

    sub.add_parser("fixtures", parents=[common], help="write the built-in fixture files")
    return p


_GLOBAL = {"subcommand", "network", "scenarios", "epsilon", "rtol", "atol", "out", "seed"}


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    d = vars(ns)
    return RunConfig(
        ns.subcommand, ns.network, list(ns.scenarios), ns.epsilon, ns.rtol, ns.atol, ns.out, ns.seed,
        {k: v for k, v in d.items() if k not in _GLOBAL},
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; 2 is reserved for property violations here
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        cfg = config_from_args(ns)
        return COMMANDS[cfg.subcommand](cfg)
    except MonoflowError as exc:
        sys.stderr.write(f"error [{exc.category}]: {exc}\n")
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"error [io]: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
