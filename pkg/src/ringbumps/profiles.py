"""Initial voltage profiles rho used by the simulator and the CLI."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

BUMP = "bump"
BUMP_PLUS_MODE2 = "bump-plus-mode2"
QUARTER_BUMP = "quarter-bump"
ZERO = "zero"
FILE = "file"
KINDS = (BUMP, BUMP_PLUS_MODE2, QUARTER_BUMP, ZERO, FILE)


@dataclass(frozen=True)
class TrigProfile:
    """x -> c1 cos x + c2 cos 2x."""

    c1: float
    c2: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.c1 * np.cos(x) + self.c2 * np.cos(2 * x)


@dataclass(frozen=True, eq=False)
class TabulatedProfile:
    """Periodic linear interpolation of sampled (x, value) pairs."""

    xs: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.xs, self.values, period=2 * math.pi)


def load_profile_csv(path) -> TabulatedProfile:
    """Read a CSV with columns ``x,value`` and interpolate it periodically on S."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"profile file {path} does not exist")
    xs, vals = [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "value"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: expected a header with columns x,value")
        for row in reader:
            try:
                xs.append(float(row["x"]))
                vals.append(float(row["value"]))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: bad row {row}") from exc
    if not xs:
        raise ConfigError(f"{path}: no data rows")
    xs = np.asarray(xs)
    vals = np.asarray(vals)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(vals))):
        raise ConfigError(f"{path}: non-finite entries")
    xs = np.mod(xs + math.pi, 2 * math.pi) - math.pi
    order = np.argsort(xs)
    return TabulatedProfile(xs[order], vals[order])


def make_profile(kind: str, amplitude: float, path=None):
    """rho as a picklable callable of positions.

    bump: A cos x; bump-plus-mode2: A cos x + cos 2x; quarter-bump: (A/4) cos x;
    zero: 0; file: periodic interpolation of a CSV profile.
    """
    if kind == BUMP:
        return TrigProfile(amplitude)
    if kind == BUMP_PLUS_MODE2:
        return TrigProfile(amplitude, 1.0)
    if kind == QUARTER_BUMP:
        return TrigProfile(0.25 * amplitude)
    if kind == ZERO:
        return TrigProfile(0.0)
    if kind == FILE:
        if path is None:
            raise ConfigError("init kind 'file' needs a path")
        return load_profile_csv(path)
    raise ConfigError(f"unknown init kind {kind!r}; choose from {', '.join(KINDS)}")
