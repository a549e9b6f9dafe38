"""Weighted geometry and linearised dynamics around a stationary bump u_phi.

At phase phi the linearised operator is L psi = -psi + T psi with
T psi(x) = int cos(x - y) f'(u_phi(y)) psi(y) dy. Because the kernel is a single
cosine mode, T has rank two and L has exactly three eigenvalues: 0 on span(v_phi),
gamma on span(u_phi) and -1 on their weighted orthogonal complement.

Projection coefficients here are the coordinates along v_phi and u_phi, i.e.
<g, v>_phi / ||v||_phi^2, so that projecting v_phi returns v_phi itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidTime, UnsupportedDerivative
from .model import TWO_PI, Field, FieldLike, nodes, values_of
from .stationary import BumpSolution

CIRC = "circ"
PERP = "perp"
GAMMA = "gamma"


@dataclass(frozen=True, eq=False)
class PhaseFrame:
    phi: float
    bump: BumpSolution
    y: np.ndarray = field(repr=False)
    u_phi: Field = field(repr=False)
    v_phi: Field = field(repr=False)
    weight: np.ndarray = field(repr=False)
    curvature: np.ndarray = field(repr=False)
    v_norm2: float = 0.0
    u_norm2: float = 0.0
    gamma: float = 0.0

    @property
    def amplitude(self) -> float:
        return self.bump.amplitude

    @property
    def m(self) -> int:
        return self.y.size


def make_frame(bump: BumpSolution, phi: float = 0.0, m: int | None = None) -> PhaseFrame:
    f = bump.f
    if not f.smooth:
        raise UnsupportedDerivative("phase frames need a differentiable firing function")
    m = m or bump.m
    y = nodes(m)
    a = bump.amplitude
    u = Field(a * np.cos(y + phi), cosine=(a, phi))
    v = Field(-a * np.sin(y + phi))
    w = f.deriv(u.values)
    w.setflags(write=False)
    curv = f.deriv(u.values, 2)
    curv.setflags(write=False)
    h = TWO_PI / m
    v2 = h * float(np.sum(v.values ** 2 * w))
    u2 = h * float(np.sum(u.values ** 2 * w))
    gamma = h * float(np.sum(w)) - 2.0
    return PhaseFrame(phi, bump, y, u, v, w, curv, v2, u2, gamma)


def weighted_inner(frame: PhaseFrame, g1: FieldLike, g2: FieldLike) -> float:
    """<g1, g2>_phi = int g1 g2 f'(u_phi)."""
    return TWO_PI / frame.m * float(np.sum(values_of(g1) * values_of(g2) * frame.weight))


def weighted_norm(frame: PhaseFrame, g: FieldLike) -> float:
    return math.sqrt(max(weighted_inner(frame, g, g), 0.0))


def kernel_coefficients(frame: PhaseFrame, psi: FieldLike) -> tuple[float, float]:
    """(A_phi(psi), B_phi(psi)) = int (cos y, sin y) f'(u_phi(y)) psi(y) dy."""
    wp = values_of(psi) * frame.weight
    h = TWO_PI / frame.m
    return h * float(np.dot(np.cos(frame.y), wp)), h * float(np.dot(np.sin(frame.y), wp))


def apply_T(frame: PhaseFrame, psi: FieldLike) -> Field:
    a, b = kernel_coefficients(frame, psi)
    return Field(a * np.cos(frame.y) + b * np.sin(frame.y))


def apply_L(frame: PhaseFrame, psi: FieldLike) -> Field:
    return Field(apply_T(frame, psi).values - values_of(psi))


def alpha_circ(frame: PhaseFrame, g: FieldLike) -> float:
    """Coordinate of g along v_phi: <g, v>_phi / ||v||_phi^2."""
    return weighted_inner(frame, g, frame.v_phi) / frame.v_norm2


def alpha_gamma(frame: PhaseFrame, g: FieldLike) -> float:
    """<g, u>_phi / ||u||_phi, the weighted component of g along u_phi / ||u_phi||."""
    return weighted_inner(frame, g, frame.u_phi) / math.sqrt(frame.u_norm2)


def gamma_coordinate(frame: PhaseFrame, g: FieldLike) -> float:
    """Coordinate of g along u_phi: <g, u>_phi / ||u||_phi^2."""
    return weighted_inner(frame, g, frame.u_phi) / frame.u_norm2


def project(frame: PhaseFrame, g: FieldLike, which: str = CIRC):
    """Circ: projection onto span(v_phi); Perp: its complement; Gamma: scalar alpha^gamma."""
    if which == CIRC:
        return Field(alpha_circ(frame, g) * frame.v_phi.values)
    if which == PERP:
        vals = values_of(g)
        return Field(vals - alpha_circ(frame, g) * frame.v_phi.values)
    if which == GAMMA:
        return alpha_gamma(frame, g)
    raise ValueError(f"unknown projection {which!r}")


def eigen_split(frame: PhaseFrame, g: FieldLike) -> tuple[float, float, np.ndarray]:
    """g = c0 v_phi + cg u_phi + r with r in the -1 eigenspace."""
    vals = values_of(g)
    c0 = alpha_circ(frame, vals)
    cg = gamma_coordinate(frame, vals)
    r = vals - c0 * frame.v_phi.values - cg * frame.u_phi.values
    return c0, cg, r


def semigroup_apply(frame: PhaseFrame, t: float, g: FieldLike) -> Field:
    """e^{tL} g evaluated on the three eigenspaces; no time stepping."""
    if t < 0:
        raise InvalidTime(f"semigroup time must be >= 0, got {t}")
    if t == 0:
        return Field(values_of(g))
    c0, cg, r = eigen_split(frame, g)
    out = c0 * frame.v_phi.values + math.exp(frame.gamma * t) * cg * frame.u_phi.values
    return Field(out + math.exp(-t) * r)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    expected: np.ndarray
    kernel_similarity: np.ndarray
    gamma: float


def discrete_spectrum(frame: PhaseFrame) -> Spectrum:
    """Eigenvalues of the discretised L_phi in the weighted space.

    W^(1/2) L W^(-1/2) = -I + h D K D with D = diag(sqrt(f'(u_phi))) is symmetric and
    similar to the weighted generalised problem, without inverting the (nearly
    singular) weight. ``kernel_similarity`` is the weighted cosine similarity of each
    eigenvector with v_phi.
    """
    m = frame.m
    h = TWO_PI / m
    d = np.sqrt(frame.weight)
    kern = np.cos(frame.y[:, None] - frame.y[None, :])
    sym = h * (d[:, None] * kern * d[None, :])
    sym[np.diag_indices(m)] -= 1.0
    vals, vecs = np.linalg.eigh(sym)
    target = d * frame.v_phi.values
    target /= np.linalg.norm(target)
    sim = np.abs(vecs.T @ target)
    clusters = np.array([-1.0, frame.gamma, 0.0])
    expected = clusters[np.argmin(np.abs(vals[:, None] - clusters[None, :]), axis=1)]
    return Spectrum(vals, expected, sim, frame.gamma)
