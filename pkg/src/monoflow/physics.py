"""Edge dissipation laws.

A dissipation model is the map ``f(t, u, v)`` with ``phi = -f(t, rho, d rho/dx)``.
Every model must be strictly increasing in ``v``.

The gas instance factors as ``f(u, v) = g(h'(u) * v)`` with
``h(rho) = c^2 rho^2 / 2`` and ``g(y) = S * sqrt(2 D / lambda) * sqrt|y| * sign(y)``
(Weymouth's law with ``p = c^2 rho``). ``sqrt`` has an infinite slope at
zero, which the implicit integrator and Newton solver cannot live with, so
the shipped closure uses ``y * (y^2 + delta^2)^(-1/4)``. It is odd, strictly
increasing, has an exact inverse, and differs from the square root by a
relative ``delta^2 / (4 y^2)`` once ``|y| >> delta``. ``delta = 0`` gives the
unregularized law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import DensityCavitation, NonConvergence, NonPositiveDensity, NonPositiveParameter

GAS_CONSTANT = 473.92  # J/(kg K), natural gas
TEMPERATURE = 288.706  # K
COMPRESSIBILITY = 1.0
PSI = 6894.76  # Pa
DEFAULT_DELTA = 1e-4


def wave_speed_squared(R=GAS_CONSTANT, T=TEMPERATURE, Z=COMPRESSIBILITY) -> float:
    return Z * R * T


def pressure_to_density(p, c2=None):
    c2 = wave_speed_squared() if c2 is None else c2
    return p / c2


def density_to_pressure(rho, c2=None):
    c2 = wave_speed_squared() if c2 is None else c2
    return c2 * np.asarray(rho)


# ------------------------------------------------------- regularized sqrt


def reg_sqrt(y, delta):
    y = np.asarray(y, dtype=float)
    if delta == 0.0:
        return np.sign(y) * np.sqrt(np.abs(y))
    return y * (y * y + delta * delta) ** -0.25


def reg_sqrt_prime(y, delta):
    y = np.asarray(y, dtype=float)
    y2 = y * y
    if delta == 0.0:
        with np.errstate(divide="ignore"):
            return 0.5 / np.sqrt(np.abs(y))
    d2 = delta * delta
    return (0.5 * y2 + d2) * (y2 + d2) ** -1.25


def reg_sqrt_inverse(s, delta):
    s = np.asarray(s, dtype=float)
    s2 = s * s
    if delta == 0.0:
        return np.sign(s) * s2
    y2 = 0.5 * (s2 * s2 + s2 * np.sqrt(s2 * s2 + 4.0 * delta * delta))
    return np.sign(s) * np.sqrt(y2)


# ------------------------------------------------------------ potentials


class PotentialForm:
    """``f(u, v) = g(h'(u) v)`` with increasing ``h`` and ``g``."""

    def h(self, rho):
        raise NotImplementedError

    def h_prime(self, rho):
        raise NotImplementedError

    def h_inv(self, psi):
        raise NotImplementedError

    def g(self, y):
        raise NotImplementedError

    def g_prime(self, y):
        raise NotImplementedError

    def g_inv(self, phi):
        raise NotImplementedError


@dataclass(frozen=True)
class GasPotential(PotentialForm):
    c2: float
    coefficient: float  # S * sqrt(2 D / lambda)
    delta: float = DEFAULT_DELTA

    def h(self, rho):
        return 0.5 * self.c2 * np.asarray(rho, dtype=float) ** 2

    def h_prime(self, rho):
        return self.c2 * np.asarray(rho, dtype=float)

    def h_inv(self, psi):
        psi = np.asarray(psi, dtype=float)
        if np.any(psi <= 0):
            raise DensityCavitation("potential is non-positive; density would vanish")
        return np.sqrt(2.0 * psi / self.c2)

    def g(self, y):
        return self.coefficient * reg_sqrt(y, self.delta)

    def g_prime(self, y):
        return self.coefficient * reg_sqrt_prime(y, self.delta)

    def g_inv(self, phi):
        return reg_sqrt_inverse(np.asarray(phi, dtype=float) / self.coefficient, self.delta)


@dataclass(frozen=True)
class GenericPotential(PotentialForm):
    """Potential form built from user callables (derivatives and inverses required)."""

    h_fn: Callable
    h_prime_fn: Callable
    h_inv_fn: Callable
    g_fn: Callable
    g_prime_fn: Callable
    g_inv_fn: Callable

    def h(self, rho):
        return self.h_fn(rho)

    def h_prime(self, rho):
        return self.h_prime_fn(rho)

    def h_inv(self, psi):
        return self.h_inv_fn(psi)

    def g(self, y):
        return self.g_fn(y)

    def g_prime(self, y):
        return self.g_prime_fn(y)

    def g_inv(self, phi):
        return self.g_inv_fn(phi)


# ------------------------------------------------------ dissipation models


class DissipationModel:
    form_tag = "custom"
    potential: PotentialForm | None = None

    def eval(self, t, u, v):
        raise NotImplementedError

    def d_du(self, t, u, v):
        raise NotImplementedError

    def d_dv(self, t, u, v):
        raise NotImplementedError


@dataclass(frozen=True)
class PotentialDissipation(DissipationModel):
    potential: PotentialForm
    form_tag: str = "potential_form"

    def eval(self, t, u, v):
        return self.potential.g(self.potential.h_prime(u) * v)

    def d_du(self, t, u, v):
        # h'' = d/du h'(u); exact for the gas potential, central difference otherwise
        p = self.potential
        y = p.h_prime(u) * v
        if isinstance(p, GasPotential):
            hpp = p.c2
        else:
            step = 1e-6 * np.maximum(np.abs(u), 1.0)
            hpp = (p.h_prime(u + step) - p.h_prime(u - step)) / (2 * step)
        return p.g_prime(y) * hpp * v

    def d_dv(self, t, u, v):
        p = self.potential
        return p.g_prime(p.h_prime(u) * v) * p.h_prime(u)


def ideal_gas(diameter, friction, area=None, c2=None, delta=DEFAULT_DELTA) -> PotentialDissipation:
    """Weymouth closure for one pipe with ``p = c^2 rho``."""
    if not (diameter > 0 and friction > 0):
        raise NonPositiveParameter("diameter and friction must be positive")
    area = math.pi * diameter**2 / 4.0 if area is None else area
    c2 = wave_speed_squared() if c2 is None else c2
    if not (area > 0 and c2 > 0 and delta >= 0):
        raise NonPositiveParameter("area and wave speed must be positive, delta non-negative")
    coef = area * math.sqrt(2.0 * diameter / friction)
    return PotentialDissipation(GasPotential(c2, coef, delta), form_tag="ideal_gas")


@dataclass(frozen=True)
class CustomDissipation(DissipationModel):
    """User closure. Missing partial derivatives fall back to central differences."""

    fn: Callable
    du_fn: Callable | None = None
    dv_fn: Callable | None = None
    form_tag: str = "custom"

    def eval(self, t, u, v):
        return self.fn(t, u, v)

    def d_du(self, t, u, v):
        if self.du_fn is not None:
            return self.du_fn(t, u, v)
        h = 1e-6 * np.maximum(np.abs(u), 1e-3)
        return (self.fn(t, u + h, v) - self.fn(t, u - h, v)) / (2 * h)

    def d_dv(self, t, u, v):
        if self.dv_fn is not None:
            return self.dv_fn(t, u, v)
        h = 1e-6 * np.maximum(np.abs(v), 1e-8)
        return (self.fn(t, u, v + h) - self.fn(t, u, v - h)) / (2 * h)


def gas_models(g, c2=None, delta=DEFAULT_DELTA) -> dict:
    """Ideal-gas closure for every edge of a graph, keyed by edge key."""
    return {e.key: ideal_gas(e.diameter, e.friction, e.area, c2, delta) for e in g.edges}


def flow_from_gradient(m: DissipationModel, t, u, v):
    if np.any(np.asarray(u) <= 0):
        raise NonPositiveDensity("density must be positive")
    return -m.eval(t, u, v)


# ----------------------------------------------------------- steady edges


def steady_edge_profile(m, phi, rho_in, length):
    """Density along a steady edge carrying ``phi`` from inlet density ``rho_in``.

    ``m`` is a :class:`PotentialForm` or a model carrying one. Returns a
    vectorized ``x -> rho(x)`` on ``[0, length]``.
    """
    p = m if isinstance(m, PotentialForm) else m.potential
    if p is None:
        raise TypeError("steady_edge_profile needs a potential form; use shoot_edge for custom closures")
    if rho_in <= 0:
        raise NonPositiveDensity("inlet density must be positive")
    psi0 = float(p.h(rho_in))
    drop = float(p.g_inv(phi))
    end = psi0 - drop * length
    # h is only invertible on positive potentials (h(0) = 0 for gas)
    floor = float(p.h(0.0)) if isinstance(p, GasPotential) else -math.inf
    if end <= floor or psi0 <= floor:
        raise DensityCavitation(
            f"flow {phi} kg/s over {length} m exhausts the inlet potential", time=None, state=None
        )

    def profile(x):
        return p.h_inv(psi0 - drop * np.asarray(x, dtype=float))

    return profile


def edge_flow(m: DissipationModel, t, rho_a, rho_b, length):
    """Steady flow on an edge with endpoint densities ``rho_a`` (x=0) and ``rho_b`` (x=L)."""
    if rho_a <= 0 or rho_b <= 0:
        raise NonPositiveDensity("endpoint densities must be positive")
    if m.potential is not None:
        p = m.potential
        return float(-p.g((p.h(rho_b) - p.h(rho_a)) / length))
    return shoot_edge_flow(m, t, rho_a, rho_b, length)


def edge_flow_derivatives(m, t, rho_a, rho_b, length):
    """``(d phi / d rho_a, d phi / d rho_b)`` of :func:`edge_flow`."""
    if m.potential is not None:
        p = m.potential
        gp = float(p.g_prime((p.h(rho_b) - p.h(rho_a)) / length))
        return gp * float(p.h_prime(rho_a)) / length, -gp * float(p.h_prime(rho_b)) / length
    ha = 1e-6 * rho_a
    hb = 1e-6 * rho_b
    da = (shoot_edge_flow(m, t, rho_a + ha, rho_b, length) - shoot_edge_flow(m, t, rho_a - ha, rho_b, length)) / (2 * ha)
    db = (shoot_edge_flow(m, t, rho_a, rho_b + hb, length) - shoot_edge_flow(m, t, rho_a, rho_b - hb, length)) / (2 * hb)
    return da, db


def gradient_for_flow(m, t, u, phi, v0=None):
    """Solve ``f(t, u, v) = -phi`` for ``v`` (``f`` increasing in ``v``).

    With a seed ``v0`` a few Newton steps are tried first.
    """
    target = -phi

    def resid(v):
        return float(m.eval(t, u, v)) - target

    if v0 is not None and v0 != 0.0:
        v = float(v0)
        for _ in range(8):
            r = resid(v)
            slope = float(m.d_dv(t, u, v))
            if not slope > 0:
                break
            dv = r / slope
            v -= dv
            if abs(dv) <= 1e-14 * abs(v):
                return v

    lo, hi = -1.0, 1.0
    for _ in range(200):
        if resid(lo) <= 0 <= resid(hi):
            break
        lo *= 2.0
        hi *= 2.0
    else:
        raise NonConvergence(f"cannot bracket gradient for flow {phi}")
    if resid(lo) == 0:
        return lo
    if resid(hi) == 0:
        return hi
    return brentq(resid, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def shoot_edge(m, t, rho_in, phi, length):
    """Integrate ``f(rho, rho') + phi = 0`` from the inlet; returns ``rho(length)``."""

    seed = [None]

    def rhs(x, y):
        if y[0] <= 0:
            return [0.0]
        seed[0] = gradient_for_flow(m, t, y[0], phi, seed[0])
        return [seed[0]]

    def gone(x, y):
        return y[0] - 1e-6 * rho_in

    gone.terminal = True
    sol = solve_ivp(rhs, (0.0, length), [rho_in], method="RK45", rtol=1e-11, atol=1e-12 * rho_in, events=gone)
    if sol.status == 1 or sol.y[0, -1] <= 0:
        raise DensityCavitation(f"density vanishes along the edge for flow {phi}")
    if not sol.success:
        # a stalled step means the gradient blew up, i.e. the density is collapsing
        raise DensityCavitation(f"edge shooting stalled for flow {phi}: {sol.message}")
    return float(sol.y[0, -1])


def shoot_edge_flow(m, t, rho_a, rho_b, length):
    """Flow consistent with endpoint densities, by shooting and bracketing on ``phi``."""
    if rho_a == rho_b:
        return 0.0

    def resid(phi):
        try:
            return shoot_edge(m, t, rho_a, phi, length) - rho_b
        except DensityCavitation:
            return -rho_b

    sign = 1.0 if rho_a > rho_b else -1.0
    lo, hi = 0.0, sign
    for _ in range(200):
        if np.sign(resid(hi)) != np.sign(resid(lo)):
            break
        lo, hi = hi, 2 * hi
    else:
        raise NonConvergence("cannot bracket edge flow")
    a, b = sorted((lo, hi))
    return brentq(resid, a, b, xtol=1e-12 * max(abs(a), abs(b), 1.0), rtol=1e-13)


# ------------------------------------------------------------ monotonicity


@dataclass
class MonotoneVerdict:
    ok: bool
    failures: list = field(default_factory=list)
    max_derivative_mismatch: float = 0.0

    def __bool__(self):
        return self.ok


def check_monotone_v(m: DissipationModel, samples, rel_tol=1e-6) -> MonotoneVerdict:
    """Check ``d_dv > 0`` and compare it with a central difference of ``eval``.

    Each sample is ``(t, u, v)``. A failure records the sample, the analytic
    derivative and the finite-difference estimate.
    """
    failures = []
    worst = 0.0
    for t, u, v in samples:
        if u <= 0:
            raise NonPositiveDensity(f"sample density {u} must be positive")
        dv = float(m.d_dv(t, u, v))
        # step relative to |v|; at v = 0 a tiny absolute step and a looser check
        h = 1e-6 * abs(v) if v != 0 else 1e-14
        fd = (float(m.eval(t, u, v + h)) - float(m.eval(t, u, v - h))) / (2 * h)
        mismatch = abs(dv - fd) / max(abs(dv), abs(fd), 1e-300)
        worst = max(worst, mismatch)
        if not (dv > 0 and fd > 0) or mismatch > (rel_tol if v != 0 else 1e-3):
            failures.append({"t": t, "u": u, "v": v, "d_dv": dv, "finite_difference": fd})
    return MonotoneVerdict(not failures, failures, worst)
