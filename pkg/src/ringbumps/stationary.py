"""Stationary bump amplitudes and the constants derived from them.

A stationary bump is u = A cos(. + phi) with A solving the self-consistency
G(A) = A, where G(A) = int_S cos(y) f(A cos y) dy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, NoFixedPoint, NoNonzeroSolution, UnstableBranch
from .model import (
    HEAVISIDE,
    SIGMOID,
    TWO_PI,
    FiringFunction,
    default_resolution,
    nodes,
    quad_integrate,
)

SCAN_INTERVALS = 400
SCAN_TOP = 4.0
RESIDUAL_TOL = 1e-10

LARGEST = "largest"
SMALLEST = "smallest"


@dataclass(frozen=True)
class BumpSolution:
    amplitude: float
    f: FiringFunction
    residual: float
    i1: float
    gamma: float
    sigma: float
    m: int

    @property
    def phase_sigma(self) -> float:
        """Diffusion coefficient of the isochronal phase, sigma / ||v||_phi.

        Projecting a spike kick (2 pi / N) cos(. - x_j) on the tangent direction
        with the isochron derivative <v, h>_phi / ||v||_phi^2 carries a 1/A that
        ``sigma`` does not include.
        """
        return self.sigma / self.amplitude


def heaviside_fixed_points(rho_threshold: float) -> tuple[float, float, float]:
    """Return (0, A_-, A_+) for the Heaviside firing function."""
    r = rho_threshold
    if abs(r) > 1:
        raise NoNonzeroSolution(f"|rho| = {abs(r)} > 1: only A = 0 solves the fixed point")
    sp, sm = math.sqrt(1 + r), math.sqrt(1 - r)
    # rationalised lower root: sp - sm cancels for small |r|
    return 0.0, 2 * r / (sp + sm), sp + sm


def heaviside_G(amplitude, rho_threshold: float):
    """Closed-form G(A) for f = H_rho: 2 sin(x_c) with x_c = arccos(rho / A)."""
    a = np.atleast_1d(np.asarray(amplitude, dtype=float))
    out = np.zeros_like(a)
    pos = a > 0
    ratio = np.full_like(a, np.inf)
    ratio[pos] = rho_threshold / a[pos]
    inside = pos & (np.abs(ratio) <= 1)
    out[inside] = 2.0 * np.sin(np.arccos(ratio[inside]))
    return out if np.ndim(amplitude) else float(out[0])


def fixed_point_map(f: FiringFunction, amplitude, m: int | None = None):
    """G(A) = int_S cos(y) f(A cos y) dy, vectorised over A."""
    if f.kind == HEAVISIDE:
        return heaviside_G(amplitude, f.rho_threshold)
    m = m or default_resolution(f)
    y = nodes(m)
    c = np.cos(y)
    a = np.atleast_1d(np.asarray(amplitude, dtype=float))
    vals = TWO_PI / m * (f(np.outer(a, c)) * c).sum(axis=1)
    return vals if np.ndim(amplitude) else float(vals[0])


def sign_changes(f: FiringFunction, m: int, lo: float, hi: float = SCAN_TOP,
                 intervals: int = SCAN_INTERVALS) -> list[tuple[float, float]]:
    """Subintervals of [lo, hi] on which G(A) - A changes sign."""
    grid = np.linspace(lo, hi, intervals + 1)
    h = fixed_point_map(f, grid, m) - grid
    out = []
    for k in range(intervals):
        if h[k] == 0.0 or h[k] * h[k + 1] < 0:
            out.append((float(grid[k]), float(grid[k + 1])))
    return out


def _heaviside_solution(f: FiringFunction, branch: str) -> BumpSolution:
    _, a_minus, a_plus = heaviside_fixed_points(f.rho_threshold)
    amp = a_plus if branch == LARGEST else a_minus
    if amp <= 0:
        raise NoFixedPoint("no positive Heaviside root on this branch")
    r = f.rho_threshold
    xc = math.acos(r / amp)
    i1 = 2.0 / (amp * math.sqrt(1.0 - (r / amp) ** 2))
    sigma = math.sqrt(TWO_PI * (xc - 0.5 * math.sin(2 * xc)))
    resid = abs(2.0 * math.sin(xc) - amp)
    return BumpSolution(amp, f, resid, i1, i1 - 2.0, sigma, 0)


def solve_amplitude(f: FiringFunction, branch: str = LARGEST,
                    m: int | None = None) -> BumpSolution:
    """Positive root of G(A) = A on the requested branch.

    The interval (|rho| + 1e-6, 4] (``largest``) or (1e-6, 4] (``smallest``) is
    scanned on 400 equal pieces and the right-most or left-most sign change is
    refined by Brent's method. Heaviside firing is handled in closed form.
    """
    if branch not in (LARGEST, SMALLEST):
        raise ConfigError(f"unknown branch {branch!r}")
    if f.kind == HEAVISIDE:
        return _heaviside_solution(f, branch)
    if f.kind != SIGMOID:
        raise ConfigError("solve_amplitude needs a sigmoid or Heaviside firing function")
    if not -1 < f.rho_threshold < 1:
        raise ConfigError("threshold must lie in (-1, 1)")
    m = m or default_resolution(f)
    # the lower branch can sit below |rho| once the sigmoid is smooth enough
    lo_scan = abs(f.rho_threshold) + 1e-6 if branch == LARGEST else 1e-6
    brackets = sign_changes(f, m, lo_scan)
    if not brackets:
        raise NoFixedPoint(f"G(A) = A has no root in (|rho|, 4] for {f}")
    lo, hi = brackets[-1] if branch == LARGEST else brackets[0]

    def h(a):
        return fixed_point_map(f, a, m) - a

    if h(lo) == 0.0:
        amp = lo
    else:
        amp = brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    resid = abs(h(amp))
    if resid >= RESIDUAL_TOL:
        raise NoFixedPoint(f"root refinement stalled at residual {resid:.3e}")
    y = nodes(m)
    fu = f(amp * np.cos(y))
    i1 = quad_integrate(f.deriv(amp * np.cos(y)))
    sigma = math.sqrt(max(TWO_PI * quad_integrate(np.sin(y) ** 2 * fu), 0.0))
    return BumpSolution(amp, f, resid, i1, i1 - 2.0, sigma, m)


def spectral_gap(sol: BumpSolution) -> float:
    """gamma = I(1) - 2; raises UnstableBranch outside (-1, 0)."""
    if not -1.0 < sol.gamma < 0.0:
        raise UnstableBranch(f"gamma = {sol.gamma:.6g} is outside (-1, 0)")
    return sol.gamma


def diffusion_sigma(sol: BumpSolution) -> float:
    return sol.sigma


def sigma_for(f: FiringFunction, amplitude: float, m: int | None = None) -> float:
    """(2 pi int_S sin^2(x) f(A cos x) dx)^(1/2) for an arbitrary amplitude."""
    m = m or default_resolution(f)
    y = nodes(m)
    return math.sqrt(max(TWO_PI * quad_integrate(np.sin(y) ** 2 * f(amplitude * np.cos(y))), 0.0))


def weight_integral(sol: BumpSolution, r) -> float:
    """I(r) = int_S r(y) f'(A cos y) dy with r a callable of the node array."""
    y = nodes(sol.m)
    return quad_integrate(r(y) * sol.f.deriv(sol.amplitude * np.cos(y)))
