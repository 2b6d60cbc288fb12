"""YAML input files and CSV trajectory output.

Network file::

    name: single-pipe
    gas: {R: 473.92, T: 288.706, Z: 1.0, delta: 1.0e-4}
    slack: ["1"]
    edges:
      - {tail: "1", head: "2", length: 20000, diameter: 0.9144, friction: 0.01}

Scenario file::

    horizon: 86400
    injections: {"2": {kind: sinusoid, amplitude: -60, period: 28800, ...}}
    slack_densities: {"1": 47.5}       # or slack_pressures in Pa
    compressors:
      - {tail: "1", head: "2", placement: inlet, ratio: 1.2}
    initial_state: steady               # or {vertex: density}

Time functions are numbers (constants) or mappings with a ``kind`` key;
see :mod:`monoflow.timefunc`.
"""
from __future__ import annotations

import csv
import io as _io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ParseError
from .netgraph import CompatibilitySchedule, MetricGraph, Scenario, build_graph, graph_to_dict, validate_scenario
from .physics import DEFAULT_DELTA, GAS_CONSTANT, TEMPERATURE, gas_models, wave_speed_squared
from .timefunc import as_time_function


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``6.5e6`` (no dot, unsigned exponent) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _load_yaml(path):
    try:
        with open(path) as fh:
            data = yaml.load(fh, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: invalid YAML: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected a mapping at top level")
    return data


def _dump_yaml(obj, path):
    text = yaml.safe_dump(obj, sort_keys=False, default_flow_style=None)
    Path(path).write_text(text)


def _strkeys(d):
    return {str(k): v for k, v in (d or {}).items()}


# ------------------------------------------------------------------ network


@dataclass(frozen=True)
class GasSpec:
    R: float = GAS_CONSTANT
    T: float = TEMPERATURE
    Z: float = 1.0
    delta: float = DEFAULT_DELTA

    @property
    def c2(self):
        return wave_speed_squared(self.R, self.T, self.Z)


@dataclass(frozen=True)
class Network:
    graph: MetricGraph
    gas: GasSpec

    def models(self):
        return gas_models(self.graph, self.gas.c2, self.gas.delta)


def network_from_dict(d) -> Network:
    gas = GasSpec(**{k: float(v) for k, v in (d.get("gas") or {}).items()})
    for e in d.get("edges") or []:
        closure = e.get("closure", "ideal_gas")
        if closure != "ideal_gas":
            raise ParseError(f"unsupported closure {closure!r} in a network file; register custom closures in code")
    return Network(build_graph(d), gas)


def network_to_dict(net: Network) -> dict:
    d = graph_to_dict(net.graph)
    d["gas"] = {"R": net.gas.R, "T": net.gas.T, "Z": net.gas.Z, "delta": net.gas.delta}
    return d


def load_network(path) -> Network:
    return network_from_dict(_load_yaml(path))


def save_network(net: Network, path):
    _dump_yaml(network_to_dict(net), path)


# ----------------------------------------------------------------- scenario


def compressors_from_list(items) -> dict:
    compat = {}
    for c in items or []:
        try:
            key = (str(c["tail"]), str(c["head"]))
            placement = c.get("placement", "inlet")
            ratio = as_time_function(c["ratio"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed compressor entry {c!r}") from exc
        compat[(key, placement)] = CompatibilitySchedule("multiplicative", ratio, placement)
    return compat


def compressors_to_list(compat) -> list:
    return [
        {"tail": key[0], "head": key[1], "placement": placement, "ratio": s.ratio.to_dict()}
        for (key, placement), s in compat.items()
    ]


def scenario_from_dict(d, net: Network, compat=None) -> Scenario:
    if "horizon" not in d:
        raise ParseError("scenario needs a horizon (seconds)")
    try:
        injections = {k: as_time_function(v) for k, v in _strkeys(d.get("injections")).items()}
        if "slack_pressures" in d:
            slack = {k: as_time_function(v) * (1.0 / net.gas.c2) for k, v in _strkeys(d["slack_pressures"]).items()}
        else:
            slack = {k: as_time_function(v) for k, v in _strkeys(d.get("slack_densities")).items()}
        horizon = float(d["horizon"])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed scenario: {exc}") from exc
    for v in net.graph.flow_set:
        injections.setdefault(v, as_time_function(0.0))
    if compat is None:
        compat = compressors_from_list(d.get("compressors"))
    init = d.get("initial_state", "steady")
    if init in (None, "steady"):
        initial = None
    elif isinstance(init, dict):
        initial = {k: float(v) for k, v in _strkeys(init).items()}
    else:
        raise ParseError("initial_state must be 'steady' or a vertex -> density mapping")
    s = Scenario(injections, slack, horizon, compat, initial)
    validate_scenario(s, net.graph)
    return s


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "horizon": s.horizon,
        "injections": {v: f.to_dict() for v, f in s.injections.items()},
        "slack_densities": {v: f.to_dict() for v, f in s.slack_densities.items()},
        "compressors": compressors_to_list(s.compat),
        "initial_state": "steady" if s.initial_state is None else dict(s.initial_state),
    }


def load_scenario(path, net: Network, compat=None) -> Scenario:
    return scenario_from_dict(_load_yaml(path), net, compat)


def save_scenario(s: Scenario, path):
    _dump_yaml(scenario_to_dict(s), path)


def load_controls(path) -> dict:
    return compressors_from_list(_load_yaml(path).get("compressors"))


def save_controls(compat, path):
    _dump_yaml({"compressors": compressors_to_list(compat)}, path)


# ---------------------------------------------------------------- envelope


def envelope_from_dict(d, net: Network):
    from .robust import Envelope

    def bound(key_rho, key_p):
        if key_rho in d:
            return float(d[key_rho])
        if key_p in d:
            return float(d[key_p]) / net.gas.c2
        raise ParseError(f"envelope needs {key_rho} or {key_p}")

    return Envelope(
        {k: as_time_function(v) for k, v in _strkeys(d.get("upper")).items()},
        {k: as_time_function(v) for k, v in _strkeys(d.get("lower")).items()},
        bound("rho_min", "p_min"),
        bound("rho_max", "p_max"),
    )


def envelope_to_dict(env) -> dict:
    return {
        "upper": {v: f.to_dict() for v, f in env.upper.items()},
        "lower": {v: f.to_dict() for v, f in env.lower.items()},
        "rho_min": env.rho_min,
        "rho_max": env.rho_max,
    }


def load_envelope(path, net: Network):
    return envelope_from_dict(_load_yaml(path), net)


def save_envelope(env, path):
    _dump_yaml(envelope_to_dict(env), path)


# ---------------------------------------------------------------- outputs


def trajectory_header(traj, with_pressure=True) -> list:
    cols = ["time[s]"]
    cols += [f"rho:{v}[kg/m3]" for v in traj.vertices]
    cols += [f"phi:{a}->{b}[kg/s]" for a, b in traj.edge_keys]
    if with_pressure and traj.system.gas_c2 is not None:
        cols += [f"p:{v}[Pa]" for v in traj.vertices]
    return cols


def trajectory_rows(traj, with_pressure=True):
    P = traj.pressures() if with_pressure else None
    for k, t in enumerate(traj.times):
        row = [t, *traj.densities[k], *traj.flows[k]]
        if P is not None:
            row += list(P[k])
        yield row


def write_trajectory_csv(traj, path, with_pressure=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(traj, with_pressure))
        for row in trajectory_rows(traj, with_pressure):
            w.writerow([repr(float(x) + 0.0) for x in row])


def read_csv_table(path):
    """``(header, array)`` from a CSV written by this module."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty CSV")
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def write_table_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating, int)) else x for x in r])


def write_yaml(obj, path):
    _dump_yaml(_plain(obj), path)


def dump_yaml(obj) -> str:
    return yaml.safe_dump(_plain(obj), sort_keys=False)


def _plain(obj):
    """Numpy scalars and tuples to plain YAML-safe types."""
    if isinstance(obj, dict):
        return {(k if isinstance(k, str) else str(k)): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def csv_text(traj) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_header(traj))
    for row in trajectory_rows(traj):
        w.writerow([repr(float(x) + 0.0) for x in row])
    return buf.getvalue()
