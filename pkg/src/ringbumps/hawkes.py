"""Exact simulation of the N-neuron ring Hawkes system by Poisson thinning.

The voltage of neuron i is

    U_i(t) = rho(x_i) e^{-t} + cos(x_i) p(t) + sin(x_i) q(t),

where p, q decay at rate 1 and jump by (2 pi / N)(cos x_j, sin x_j) when neuron j
spikes. Since f <= 1, proposals come from a rate-N Poisson clock, the candidate
neuron is uniform and is accepted with probability f(U_i(t-)). Each proposal
costs O(1); compensator tracking adds O(N) per proposal and can be disabled.

Neuron indices are 0-based in this API; CSV files written by the CLI use 1..N.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numba
import numpy as np

from .errors import ConfigError, InvalidTime, NumericalBlowup
from .model import TWO_PI, FiringFunction, RingGrid, nodes

RANDOM_CHUNK = 1 << 15
EVENT_CHUNK = 1 << 15

_DONE, _NEED_RANDOMS, _BUFFER_FULL = 0, 1, 2


@numba.njit(cache=True, nogil=True)
def _rate(u, kind, kappa, thr, level):
    if kind == 0:
        z = (u - thr) / kappa
        if z < -700.0:
            z = -700.0
        elif z > 700.0:
            z = 700.0
        return 1.0 / (1.0 + math.exp(-z))
    if kind == 1:
        return 1.0 if u >= thr else 0.0
    return level


@numba.njit(cache=True, nogil=True)
def _close_compensators(s, t_last, decay_rho, decay_pq, p_ref, q_ref, rho_vals, cosx, sinx,
                        lam_last, comp, kind, kappa, thr, level):
    half = 0.5 * (s - t_last)
    for j in range(rho_vals.size):
        u = rho_vals[j] * decay_rho + decay_pq * (cosx[j] * p_ref + sinx[j] * q_ref)
        lam = _rate(u, kind, kappa, thr, level)
        comp[j] += half * (lam_last[j] + lam)
        lam_last[j] = lam


@numba.njit(cache=True, nogil=True)
def _thin(sc, ic, t_end, gaps, picks, coins, rho_vals, cosx, sinx, kind, kappa, thr, level,
          ev_t, ev_i, counts, comp, lam_last, track):
    """Advance the thinning loop in place.

    sc = [t, t_ref, p_ref, q_ref, next_prop, t_last]; ic = [pos, have_prop, n_ev].
    Returns _DONE when t_end is reached, _NEED_RANDOMS when the random chunk is
    exhausted and _BUFFER_FULL when the event buffer must be flushed.
    """
    n = rho_vals.size
    kick = 2.0 * math.pi / n
    t_ref, p_ref, q_ref = sc[1], sc[2], sc[3]
    status = _DONE
    while True:
        if ic[1] == 0:
            if ic[0] >= gaps.size:
                status = _NEED_RANDOMS
                break
            sc[4] = sc[4] + gaps[ic[0]] / n
            ic[1] = 1
        s = sc[4]
        if s > t_end:
            sc[0] = t_end
            if track:
                _close_compensators(t_end, sc[5], math.exp(-t_end), math.exp(-(t_end - t_ref)),
                                    p_ref, q_ref, rho_vals, cosx, sinx, lam_last, comp,
                                    kind, kappa, thr, level)
                sc[5] = t_end
            break
        if ic[2] >= ev_t.size:
            status = _BUFFER_FULL
            break
        k = ic[0]
        i = picks[k]
        dec = math.exp(-(s - t_ref))
        if track:
            _close_compensators(s, sc[5], math.exp(-s), dec, p_ref, q_ref, rho_vals, cosx, sinx,
                                lam_last, comp, kind, kappa, thr, level)
            sc[5] = s
        u = rho_vals[i] * math.exp(-s) + dec * (cosx[i] * p_ref + sinx[i] * q_ref)
        if coins[k] < _rate(u, kind, kappa, thr, level):
            p_ref = p_ref * dec + kick * cosx[i]
            q_ref = q_ref * dec + kick * sinx[i]
            t_ref = s
            ev_t[ic[2]] = s
            ev_i[ic[2]] = i
            ic[2] += 1
            counts[i] += 1
            if track:
                # restart the trapezoid from the post-jump intensities
                _close_compensators(s, s, math.exp(-s), 1.0, p_ref, q_ref, rho_vals, cosx, sinx,
                                    lam_last, comp, kind, kappa, thr, level)
        sc[0] = s
        ic[0] += 1
        ic[1] = 0
    sc[1], sc[2], sc[3] = t_ref, p_ref, q_ref
    return status


Profile = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class HawkesParams:
    grid: RingGrid
    f: FiringFunction
    rho: Profile
    seed: int = 0
    track_compensators: bool = True
    event_cap: Optional[int] = None
    spill_path: Optional[Path] = None

    def __post_init__(self):
        if self.grid.n < 1:
            raise ConfigError("need at least one neuron")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def rho_values(self) -> np.ndarray:
        if callable(self.rho):
            vals = np.asarray(self.rho(np.asarray(self.grid.positions)), dtype=float)
        else:
            vals = np.asarray(self.rho, dtype=float)
        vals = np.broadcast_to(vals, (self.grid.n,)).astype(float)
        if not np.all(np.isfinite(vals)):
            raise NumericalBlowup("initial profile has non-finite values")
        return vals


@dataclass(frozen=True)
class SpikeEvent:
    time: float
    neuron: int


@dataclass(eq=False)
class HawkesState:
    """Mutable simulator state; owned by a single caller while simulating."""

    params: HawkesParams
    rho_vals: np.ndarray
    counts: np.ndarray
    compensators: np.ndarray
    _sc: np.ndarray = field(repr=False)
    _ic: np.ndarray = field(repr=False)
    _lam_last: np.ndarray = field(repr=False)
    _rng: np.random.Generator = field(repr=False)
    _gaps: np.ndarray = field(repr=False)
    _picks: np.ndarray = field(repr=False)
    _coins: np.ndarray = field(repr=False)
    _ev_t: np.ndarray = field(repr=False)
    _ev_i: np.ndarray = field(repr=False)
    _chunks_t: list = field(default_factory=list, repr=False)
    _chunks_i: list = field(default_factory=list, repr=False)
    spilled: int = 0

    @property
    def t(self) -> float:
        return float(self._sc[0])

    @property
    def n(self) -> int:
        return self.params.grid.n

    @property
    def p(self) -> float:
        return float(self._sc[2] * math.exp(-(self._sc[0] - self._sc[1])))

    @property
    def q(self) -> float:
        return float(self._sc[3] * math.exp(-(self._sc[0] - self._sc[1])))

    @property
    def n_events(self) -> int:
        return int(self.counts.sum())

    def voltages(self) -> np.ndarray:
        """U_{N,i}(t) for all neurons."""
        pos = self.params.grid.positions
        return self.rho_vals * math.exp(-self.t) + np.cos(pos) * self.p + np.sin(pos) * self.q

    def event_times(self) -> np.ndarray:
        return np.concatenate(self._chunks_t + [self._ev_t[: self._ic[2]]])

    def event_neurons(self) -> np.ndarray:
        return np.concatenate(self._chunks_i + [self._ev_i[: self._ic[2]]])

    def events(self) -> list[SpikeEvent]:
        return [SpikeEvent(float(t), int(i)) for t, i in zip(self.event_times(), self.event_neurons())]

    def _refill(self):
        k = RANDOM_CHUNK
        self._gaps = self._rng.standard_exponential(k)
        self._picks = self._rng.integers(0, self.n, k)
        self._coins = self._rng.random(k)
        self._ic[0] = 0

    def _flush(self):
        n_ev = int(self._ic[2])
        self._chunks_t.append(self._ev_t[:n_ev].copy())
        self._chunks_i.append(self._ev_i[:n_ev].copy())
        self._ic[2] = 0
        cap = self.params.event_cap
        if cap is not None and self.params.spill_path is not None:
            held = sum(c.size for c in self._chunks_t)
            if held > cap:
                self._spill()

    def _spill(self):
        path = Path(self.params.spill_path)
        new = not path.exists() or self.spilled == 0
        with path.open("w" if new else "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["time", "neuron"])
            for ts, ids in zip(self._chunks_t, self._chunks_i):
                for t, i in zip(ts, ids):
                    w.writerow([repr(float(t)), int(i) + 1])
                self.spilled += ts.size
        self._chunks_t.clear()
        self._chunks_i.clear()


def init_state(params: HawkesParams) -> HawkesState:
    n = params.grid.n
    rho_vals = params.rho_values()
    rho_vals.setflags(write=False)
    f = params.f
    lam0 = np.asarray(f(rho_vals), dtype=float).reshape(n).copy()
    state = HawkesState(
        params=params,
        rho_vals=rho_vals,
        counts=np.zeros(n, dtype=np.int64),
        compensators=np.zeros(n),
        _sc=np.zeros(6),
        _ic=np.zeros(3, dtype=np.int64),
        _lam_last=lam0,
        _rng=np.random.Generator(np.random.PCG64(int(params.seed))),
        _gaps=np.empty(0),
        _picks=np.empty(0, dtype=np.int64),
        _coins=np.empty(0),
        _ev_t=np.empty(EVENT_CHUNK),
        _ev_i=np.empty(EVENT_CHUNK, dtype=np.int64),
    )
    state._refill()
    return state


def jump_increment(grid: RingGrid, i: int, j: int) -> float:
    """Voltage kick (2 pi / N) cos(x_i - x_j) received by neuron i when j spikes."""
    x = grid.positions
    return TWO_PI / grid.n * math.cos(x[i] - x[j])


def simulate_until(state: HawkesState, t_end: float) -> HawkesState:
    if t_end < state.t:
        raise InvalidTime(f"cannot simulate backwards from {state.t} to {t_end}")
    if t_end == state.t:
        return state
    f = state.params.f
    pos = state.params.grid.positions
    cosx, sinx = np.cos(pos), np.sin(pos)
    while True:
        status = _thin(state._sc, state._ic, float(t_end), state._gaps, state._picks, state._coins,
                       state.rho_vals, cosx, sinx, f.code, float(f.kappa or 1.0),
                       float(f.rho_threshold), float(f.level), state._ev_t, state._ev_i,
                       state.counts, state.compensators, state._lam_last,
                       state.params.track_compensators)
        if status == _DONE:
            cap = state.params.event_cap
            if cap is not None and state.params.spill_path is not None and state._ic[2] > 0:
                state._flush()
            break
        if status == _NEED_RANDOMS:
            state._refill()
        else:
            state._flush()
    if not (math.isfinite(state._sc[2]) and math.isfinite(state._sc[3])):
        raise NumericalBlowup("simulator state became non-finite")
    return state


@dataclass(frozen=True, eq=False)
class StepProfile:
    """Piecewise-constant profile sum_i U_i 1_{B_i} on the ring."""

    grid: RingGrid
    values: np.ndarray

    def l2_stats(self) -> tuple[float, float, float]:
        x = self.grid.positions
        xl = self.grid.left_edges
        u = self.values
        norm2 = self.grid.spacing * float(u @ u)
        c = float(u @ (np.sin(x) - np.sin(xl))) / math.pi
        s = float(u @ (np.cos(xl) - np.cos(x))) / math.pi
        return norm2, c, s

    def l2_norm(self) -> float:
        return math.sqrt(self.l2_stats()[0])

    def sample(self, m: int) -> np.ndarray:
        idx = np.searchsorted(self.grid.positions, nodes(m), side="left")
        return self.values[np.clip(idx, 0, self.grid.n - 1)]

    def at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.grid.positions, x, side="left")
        return self.values[np.clip(idx, 0, self.grid.n - 1)]


def voltage_profile(state: HawkesState) -> StepProfile:
    return StepProfile(state.params.grid, state.voltages())


def martingale_residual(state: HawkesState) -> np.ndarray:
    """Z_{N,j}(t) - int_0^t lambda_{N,j}(s) ds for every neuron."""
    if not state.params.track_compensators:
        raise ConfigError("compensators were not tracked for this run")
    return state.counts - state.compensators


def replay_voltages(params: HawkesParams, times: np.ndarray, neurons: np.ndarray,
                    t: float) -> np.ndarray:
    """Brute-force U_{N,i}(t) by summing every logged kick; O(N * events)."""
    x = params.grid.positions
    n = params.grid.n
    out = params.rho_values() * math.exp(-t)
    for s, j in zip(times, neurons):
        if s <= t:
            out = out + TWO_PI / n * np.cos(x - x[j]) * math.exp(-(t - s))
    return out


@dataclass
class SimulationRun:
    """A completed simulation with voltage snapshots every ``snapshot_dt``."""

    params: HawkesParams
    times: np.ndarray
    snapshots: np.ndarray
    state: HawkesState

    @property
    def n(self) -> int:
        return self.params.grid.n

    def profile(self, k: int) -> StepProfile:
        return StepProfile(self.params.grid, self.snapshots[k])


def run_simulation(params: HawkesParams, t_end: float, snapshot_dt: float = 1.0) -> SimulationRun:
    if t_end <= 0 or snapshot_dt <= 0:
        raise InvalidTime("t_end and snapshot_dt must be positive")
    count = int(math.floor(t_end / snapshot_dt + 1e-9))
    times = snapshot_dt * np.arange(count + 1)
    if times[-1] < t_end - 1e-12:
        times = np.append(times, t_end)
    state = init_state(params)
    snaps = np.empty((times.size, params.grid.n))
    for k, t in enumerate(times):
        simulate_until(state, float(t))
        snaps[k] = state.voltages()
    return SimulationRun(params, times, snaps, state)
