"""Neural field flow on the ring and phase reductions onto the bump manifold.

Because the kernel is cos(x - y), the solution started from rho is always

    u_t(x) = e^{-t} rho(x) + a(t) cos x + b(t) sin x,

with a' = -a + int cos(y) f(u_t(y)) dy and b' = -b + int sin(y) f(u_t(y)) dy.
Only (a, b) are integrated (classical RK4); the decaying part is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np
from scipy.optimize import brentq

from .errors import NumericalBlowup, OutsideBasin, TooFarFromManifold, UnsupportedDerivative
from .field_ops import (
    PhaseFrame,
    alpha_circ,
    alpha_gamma,
    eigen_split,
    weighted_inner,
)
from .model import TWO_PI, Field, FieldLike, FiringFunction, nodes, values_of
from .stationary import BumpSolution

DEFAULT_DT = 1e-3
ISOCHRON_DT = 1e-2
ISOCHRON_TOL = 1e-8
ISOCHRON_HORIZON = 200.0
STALL_CHECKS = 5
PHASE_TOL = 1e-10


def wrap_phase(phi: float) -> float:
    """Map an angle to (-pi, pi]."""
    out = math.remainder(phi, TWO_PI)
    return math.pi if out == -math.pi else out


# --- L2 geometry of the manifold -------------------------------------------------

def l2_stats(u) -> tuple[float, float, float]:
    """(||u||_2^2, c, s) with c = int u cos / pi and s = int u sin / pi.

    Objects exposing ``l2_stats()`` (piecewise-constant voltage profiles) supply
    exact values; arrays are treated as quadrature samples.
    """
    if hasattr(u, "l2_stats"):
        return u.l2_stats()
    vals = values_of(u)
    y = nodes(vals.size)
    h = TWO_PI / vals.size
    return (h * float(vals @ vals), h * float(vals @ np.cos(y)) / math.pi,
            h * float(vals @ np.sin(y)) / math.pi)


def manifold_distance(u, bump: BumpSolution) -> float:
    """min_phi ||u - A cos(. + phi)||_2, from the first Fourier mode of u.

    For sampled fields the off-mode energy is summed from the residual; the
    shortcut ||u||^2 - pi r^2 loses everything below ~sqrt(eps) ||u||.
    """
    norm2, c, s = l2_stats(u)
    r = math.hypot(c, s)
    if hasattr(u, "l2_stats"):
        off_mode = max(norm2 - math.pi * r * r, 0.0)
    else:
        vals = values_of(u)
        y = nodes(vals.size)
        resid = vals - c * np.cos(y) - s * np.sin(y)
        off_mode = TWO_PI / vals.size * float(resid @ resid)
    return math.sqrt(off_mode + math.pi * (r - bump.amplitude) ** 2)


def fourier_angle(u) -> float:
    """Phase phi of the best-fitting A cos(. + phi)."""
    _, c, s = l2_stats(u)
    return math.atan2(-s, c)


# --- flow ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    rho0: np.ndarray
    a: float
    b: float
    f: FiringFunction

    @property
    def m(self) -> int:
        return self.rho0.size

    @property
    def current(self) -> Field:
        y = nodes(self.m)
        return Field(math.exp(-self.t) * self.rho0 + self.a * np.cos(y) + self.b * np.sin(y))

    def advance(self, t_end: float, dt: float = DEFAULT_DT) -> "FlowState":
        if t_end <= self.t:
            return self
        steps = max(1, math.ceil((t_end - self.t) / dt - 1e-9))
        h_step = (t_end - self.t) / steps
        a, b = _rk4(self.f, self.rho0, self.t, self.a, self.b, h_step, steps)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise NumericalBlowup(f"flow produced non-finite coefficients at t={t_end}")
        return replace(self, t=t_end, a=a, b=b)


def _rk4(f: FiringFunction, rho: np.ndarray, t0: float, a: float, b: float,
         h_step: float, steps: int) -> tuple[float, float]:
    m = rho.size
    y = nodes(m)
    cy, sy = np.cos(y), np.sin(y)
    w = TWO_PI / m
    cw, sw = w * cy, w * sy

    def rhs(t, a_, b_):
        fu = f(math.exp(-t) * rho + a_ * cy + b_ * sy)
        return -a_ + float(cw @ fu), -b_ + float(sw @ fu)

    t = t0
    half = 0.5 * h_step
    for k in range(steps):
        t = t0 + k * h_step
        ka1, kb1 = rhs(t, a, b)
        ka2, kb2 = rhs(t + half, a + half * ka1, b + half * kb1)
        ka3, kb3 = rhs(t + half, a + half * ka2, b + half * kb2)
        ka4, kb4 = rhs(t + h_step, a + h_step * ka3, b + h_step * kb3)
        a += h_step / 6.0 * (ka1 + 2 * ka2 + 2 * ka3 + ka4)
        b += h_step / 6.0 * (kb1 + 2 * kb2 + 2 * kb3 + kb4)
    return a, b


def start_flow(g: FieldLike, f: FiringFunction) -> FlowState:
    rho = np.array(values_of(g), dtype=float)
    if not np.all(np.isfinite(rho)):
        raise NumericalBlowup("initial field has non-finite values")
    rho.setflags(write=False)
    return FlowState(0.0, rho, 0.0, 0.0, f)


def flow(g: FieldLike, f: FiringFunction, t_end: float, dt: float = DEFAULT_DT) -> FlowState:
    """psi_{t_end}(g) in reduced (a, b) form."""
    return start_flow(g, f).advance(t_end, dt)


def flow_checkpoints(g: FieldLike, f: FiringFunction, times, dt: float = DEFAULT_DT
                     ) -> Iterator[FlowState]:
    state = start_flow(g, f)
    for t in times:
        state = state.advance(float(t), dt)
        yield state


# --- phases ----------------------------------------------------------------------

def _phase_residual(vals: np.ndarray, bump: BumpSolution, phi: float) -> float:
    """F(g, phi) = <g - u_phi, v_phi>_phi."""
    y = nodes(vals.size)
    a = bump.amplitude
    u = a * np.cos(y + phi)
    v = -a * np.sin(y + phi)
    return TWO_PI / vals.size * float(np.sum((vals - u) * v * bump.f.deriv(u)))


def _sampled(g, m: int) -> np.ndarray:
    if hasattr(g, "sample"):
        return g.sample(m)
    return values_of(g)


def projection_radius(bump: BumpSolution) -> float:
    """Default acceptance radius for the variational phase: half of A sqrt(pi)."""
    return 0.5 * bump.amplitude * math.sqrt(math.pi)


def variational_phase(g, bump: BumpSolution, radius: float | None = None,
                      max_newton: int = 60) -> float:
    """Phase phi with <g - u_phi, v_phi>_phi = 0 closest to the Fourier angle of g."""
    if not bump.f.smooth:
        raise UnsupportedDerivative("the variational phase needs f'")
    radius = projection_radius(bump) if radius is None else radius
    dist = manifold_distance(g, bump)
    if dist > radius:
        raise TooFarFromManifold(f"distance {dist:.4g} exceeds projection radius {radius:.4g}")
    vals = _sampled(g, bump.m)
    a2 = bump.amplitude ** 2
    phi = fourier_angle(g)
    for _ in range(max_newton):
        res = _phase_residual(vals, bump, phi)
        step = res / a2
        phi += step
        if abs(step) < 1e-15 or abs(res) < 1e-14 * a2:
            break
    phi = wrap_phase(phi)
    if abs(_phase_residual(vals, bump, phi)) < PHASE_TOL:
        return phi
    return _scan_phase(vals, bump, fourier_angle(g))


def _scan_phase(vals: np.ndarray, bump: BumpSolution, seed: float, points: int = 720) -> float:
    grid = seed + np.linspace(-math.pi, math.pi, points + 1)
    res = np.array([_phase_residual(vals, bump, p) for p in grid])
    best = None
    for k in range(points):
        # stable roots: F decreases through zero (dF/dphi ~ -A^2 on the manifold)
        if res[k] >= 0 > res[k + 1]:
            root = brentq(lambda p: _phase_residual(vals, bump, p), grid[k], grid[k + 1],
                          xtol=1e-15)
            if best is None or abs(root - seed) < abs(best - seed):
                best = root
    if best is None or abs(_phase_residual(vals, bump, best)) >= PHASE_TOL:
        raise TooFarFromManifold("no phase satisfies the projection condition")
    return wrap_phase(best)


@dataclass(frozen=True)
class IsochronResult:
    theta: float
    converged: bool
    iterations: int
    final_dist: float


def isochronal_phase(g, bump: BumpSolution, tol: float = ISOCHRON_TOL,
                     horizon: float = ISOCHRON_HORIZON, dt: float = ISOCHRON_DT,
                     check_every: float = 1.0) -> IsochronResult:
    """Flow g until it is within ``tol`` of the manifold, then project.

    Raises OutsideBasin when the distance fails to decrease over five
    consecutive checkpoints.
    """
    state = start_flow(_sampled(g, bump.m), bump.f)
    dist = manifold_distance(state.current, bump)
    checks = stalls = 0
    while dist >= tol and state.t < horizon:
        state = state.advance(min(state.t + check_every, horizon), dt)
        checks += 1
        new = manifold_distance(state.current, bump)
        stalls = stalls + 1 if new >= dist else 0
        dist = new
        if stalls >= STALL_CHECKS:
            raise OutsideBasin(f"distance to the manifold stopped decreasing at t={state.t:g}")
    theta = variational_phase(state.current, bump)
    return IsochronResult(theta, dist < tol, checks, dist)


# --- isochron derivatives at a manifold point -------------------------------------

def dtheta(frame: PhaseFrame, h: FieldLike) -> float:
    """D theta(u_phi)[h] = <v_phi, h>_phi / ||v_phi||_phi^2."""
    return alpha_circ(frame, h)


def beta(frame: PhaseFrame, h: FieldLike, l: FieldLike) -> float:
    """int f''(u_phi) v_phi h l."""
    if not frame.bump.f.smooth:
        raise UnsupportedDerivative("beta needs f''")
    prod = frame.curvature * frame.v_phi.values * (values_of(h) * values_of(l))
    return TWO_PI / frame.m * float(np.sum(prod))


def d2theta(frame: PhaseFrame, h: FieldLike, l: FieldLike) -> float:
    """D^2 theta(u_phi)[h, l].

    With w_s = e^{sL} h, the v-coordinate of the second variation of the flow grows
    at rate beta(w_s^h, w_s^l), so D^2 theta = ||v||^-2 int_0^inf beta(w_s^h, w_s^l) ds.
    Splitting h = c0 v + cg u + r on the eigenspaces (0, gamma, -1) makes every
    time integral elementary. The v-v pairing would carry a divergent time
    integral but beta(v, v) = int f''(u) v^3 vanishes by parity.
    """
    if not frame.bump.f.smooth:
        raise UnsupportedDerivative("D^2 theta needs f''")
    g = frame.gamma
    v, u = frame.v_phi, frame.u_phi
    c0h, cgh, rh = eigen_split(frame, h)
    c0l, cgl, rl = eigen_split(frame, l)
    total = ((c0h * cgl + c0l * cgh) * beta(frame, v, u) / -g
             + c0h * beta(frame, v, rl) + c0l * beta(frame, v, rh)
             + cgh * cgl * beta(frame, u, u) / (-2.0 * g)
             + (cgh * beta(frame, u, rl) + cgl * beta(frame, u, rh)) / (1.0 - g)
             + 0.5 * beta(frame, rh, rl))
    return total / frame.v_norm2


def d2theta_literal(frame: PhaseFrame, h: FieldLike, l: FieldLike) -> float:
    """The closed-form second-derivative expression with the normalisations
    alpha_circ = <g, v>/||v|| and alpha_gamma = <g, u>/||u|| taken literally.

    Kept for comparison only; it does not match finite differences of the
    isochron map (see :func:`d2theta`).
    """
    a2 = frame.amplitude ** 2
    g = frame.gamma
    vn = math.sqrt(frame.v_norm2)
    ach = weighted_inner(frame, h, frame.v_phi) / vn
    acl = weighted_inner(frame, l, frame.v_phi) / vn
    agh, agl = alpha_gamma(frame, h), alpha_gamma(frame, l)
    v, u = frame.v_phi, frame.u_phi
    first = (ach * beta(frame, v, l) + acl * beta(frame, v, h) + beta(frame, h, l)) / (2 * a2)
    second = (1 + g) / (2 * a2 * (1 - g)) * (agh * beta(frame, u, l) + agl * beta(frame, u, h))
    third = (2 - g) * (1 + g) / (2 * (1 - g)) * (ach * acl + agh * agl)
    return first + second - third
