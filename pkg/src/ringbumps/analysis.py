"""Long-time statistics of simulated runs.

Phase traces live on the macroscopic clock tau = t / N. Diffusion is estimated
from increments over disjoint windows pooled across replicas; the slope of the
increment variance against the window width is sigma_hat^2.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    InsufficientData,
    NumericalFailure,
    RingBumpsError,
    SweepDegraded,
    TraceUnreliable,
)
from .hawkes import HawkesParams, SimulationRun, run_simulation
from .model import TWO_PI, Field, FiringFunction, default_resolution, grid_positions
from .nfe import isochronal_phase, manifold_distance, start_flow, variational_phase
from .profiles import make_profile
from .stationary import BumpSolution, solve_amplitude

__all__ = [
    "manifold_distance", "PhaseTrace", "FieldSeries", "phase_trace", "burn_in_time",
    "DiffusionEstimate", "estimate_sigma", "quadratic_variation_rate", "ProximityReport",
    "proximity_report", "chaos_error", "ChaosScaling", "loglog_slope", "SweepResult",
    "replica_sweep", "effective_parallelism", "DiffusionTask", "ReplicaOutcome",
    "PhaseDiffusionReport", "phase_diffusion", "ChaosTask", "chaos_scaling",
]

VARIATIONAL = "variational"
ISOCHRONAL = "isochronal"
BURN_IN_C = 5.0
MAX_INVALID = 0.10
WIDTH_FRACTIONS = (1 / 32, 1 / 16, 1 / 8, 1 / 4)
N_BOOT = 200
MAX_FAILED = 0.20
DRIFT_Z = 3.0
THREADS_ENV = "RINGBUMPS_THREADS"


# --- phase traces ------------------------------------------------------------------

def burn_in_time(n: int, c: float = BURN_IN_C) -> float:
    """T0 = C log N."""
    return c * math.log(n)


@dataclass(frozen=True, eq=False)
class FieldSeries:
    """Snapshots given directly as fields; stands in for a simulation run."""

    times: np.ndarray
    fields: Sequence[Any]
    n: int

    def profile(self, k: int):
        return self.fields[k]


@dataclass(frozen=True, eq=False)
class PhaseTrace:
    """Phases after burn-in; invalid samples hold NaN."""

    times: np.ndarray
    phases_unwrapped: np.ndarray
    valid: np.ndarray
    raw: np.ndarray
    n: int = 0

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean()) if self.valid.size else 0.0

    def rewrapped(self) -> np.ndarray:
        out = np.full(self.raw.shape, np.nan)
        ok = self.valid
        out[ok] = [math.remainder(p, TWO_PI) for p in self.phases_unwrapped[ok]]
        return out

    def scaled(self, c: float) -> "PhaseTrace":
        """Trace with every phase multiplied by c (used for consistency checks)."""
        return PhaseTrace(self.times, c * self.phases_unwrapped, self.valid, c * self.raw, self.n)


def unwrap_phases(raw: np.ndarray) -> np.ndarray:
    """Lift wrapped phases to the line, taking every step in (-pi, pi]."""
    return np.unwrap(np.asarray(raw, dtype=float))


def phase_trace(run, bump: BumpSolution, mode: str = VARIATIONAL,
                burn_in_c: float = BURN_IN_C) -> PhaseTrace:
    """Project every post-burn-in snapshot of ``run`` onto the manifold.

    ``run`` is a :class:`SimulationRun` or anything with ``times`` (microscopic),
    ``n`` and ``profile(k)``.
    """
    if mode not in (VARIATIONAL, ISOCHRONAL):
        raise ConfigError(f"unknown phase mode {mode!r}")
    times = np.asarray(run.times, dtype=float)
    if times.size > 1 and np.max(np.diff(times)) > 1.0 + 1e-12:
        raise ConfigError("snapshots must be at most one time unit apart")
    t0 = burn_in_time(run.n, burn_in_c)
    keep = np.nonzero(times >= t0 - 1e-12)[0]
    if keep.size == 0:
        raise TraceUnreliable(f"no snapshots after the burn-in time {t0:g}")
    raw = np.full(keep.size, np.nan)
    for j, k in enumerate(keep):
        prof = run.profile(int(k))
        try:
            if mode == VARIATIONAL:
                raw[j] = variational_phase(prof, bump)
            else:
                raw[j] = isochronal_phase(prof, bump).theta
        except NumericalFailure:
            pass
    valid = np.isfinite(raw)
    if 1.0 - valid.mean() > MAX_INVALID:
        raise TraceUnreliable(f"{(~valid).sum()} of {valid.size} projections failed")
    lifted = np.full(keep.size, np.nan)
    lifted[valid] = unwrap_phases(raw[valid])
    return PhaseTrace(times[keep] / run.n, lifted, valid, raw, run.n)


# --- diffusion estimate --------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionEstimate:
    sigma_hat: float
    stderr: float
    n_replicas: int
    r2_linearity: float
    drift_z: float
    drift_ok: bool
    widths: tuple = ()
    variances: tuple = ()
    intercept: float = 0.0


def _common_window(traces: Sequence[PhaseTrace]) -> tuple[float, float]:
    starts, ends = [], []
    for tr in traces:
        t = tr.times[tr.valid]
        if t.size < 2:
            raise InsufficientData("a trace has fewer than two valid samples")
        starts.append(t[0])
        ends.append(t[-1])
    lo, hi = max(starts), min(ends)
    if not hi > lo:
        raise InsufficientData("traces do not share a common time window")
    return lo, hi


def _increments(traces, lo: float, width: float) -> np.ndarray:
    """(replicas, windows) array of phase increments over [lo + k w, lo + (k+1) w]."""
    count = len(traces)
    span_end = min(tr.times[tr.valid][-1] for tr in traces)
    k = int(math.floor((span_end - lo) / width + 1e-9))
    grid = lo + width * np.arange(k + 1)
    out = np.empty((count, k))
    for r, tr in enumerate(traces):
        ok = tr.valid
        vals = np.interp(grid, tr.times[ok], tr.phases_unwrapped[ok])
        out[r] = np.diff(vals)
    return out


def _slope_fit(widths: np.ndarray, variances: np.ndarray) -> tuple[float, float, float]:
    """OLS of variance on width with intercept; returns (slope, intercept, r2)."""
    wm, vm = widths.mean(), variances.mean()
    sxx = float(np.sum((widths - wm) ** 2))
    slope = float(np.sum((widths - wm) * (variances - vm))) / sxx
    intercept = vm - slope * wm
    ss_tot = float(np.sum((variances - vm) ** 2))
    ss_res = float(np.sum((variances - intercept - slope * widths) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)
    return slope, intercept, r2


def _sigma_from(incs: list[np.ndarray], widths: np.ndarray):
    variances = np.array([np.var(x, ddof=1) if x.size > 1 else 0.0 for x in incs])
    slope, intercept, r2 = _slope_fit(widths, variances)
    return math.sqrt(max(slope, 0.0)), variances, intercept, r2


def estimate_sigma(traces: Sequence[PhaseTrace], widths: Optional[Sequence[float]] = None,
                   n_boot: int = N_BOOT, seed: int = 0) -> DiffusionEstimate:
    """Diffusion coefficient from increment variance against window width.

    Default widths are 1/32, 1/16, 1/8 and 1/4 of the common window. The drift
    check is a z-test on the per-replica displacement over the common window.
    """
    traces = list(traces)
    if len(traces) < 2:
        raise InsufficientData("estimate_sigma needs at least two traces")
    lo, hi = _common_window(traces)
    span = hi - lo
    widths = np.asarray(widths if widths is not None else [span * c for c in WIDTH_FRACTIONS],
                        dtype=float)
    if widths.size < 2 or np.any(widths <= 0) or np.any(widths > span + 1e-12):
        raise ConfigError("need at least two positive widths within the common window")
    per_width = [_increments(traces, lo, w) for w in widths]
    sigma_hat, variances, intercept, r2 = _sigma_from([x.ravel() for x in per_width], widths)

    rng = np.random.default_rng(seed)
    reps = len(traces)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, reps, reps)
        boot[b] = _sigma_from([x[idx].ravel() for x in per_width], widths)[0]
    stderr = float(np.std(boot, ddof=1)) if n_boot > 1 else 0.0

    disp = np.array([np.interp(hi, tr.times[tr.valid], tr.phases_unwrapped[tr.valid])
                     - np.interp(lo, tr.times[tr.valid], tr.phases_unwrapped[tr.valid])
                     for tr in traces])
    mean, sd = float(disp.mean()), float(disp.std(ddof=1))
    scale = max(abs(mean), float(np.max(np.abs(disp))), 1.0)
    if sd <= 1e-12 * scale:
        z = 0.0 if abs(mean) <= 1e-12 * scale else math.copysign(math.inf, mean)
    else:
        z = mean / (sd / math.sqrt(reps))
    return DiffusionEstimate(sigma_hat, stderr, reps, r2, z, abs(z) <= DRIFT_Z,
                             tuple(widths.tolist()), tuple(variances.tolist()), intercept)


def quadratic_variation_rate(run: SimulationRun, trace: PhaseTrace) -> float:
    """Event-sum estimate of d[Theta]/dtau with Phi(x, theta) = 4 pi^2 sin^2(x + theta).

    Each spike of neuron j after burn-in contributes Phi(x_j, theta) / N^2, where
    theta is the most recent valid snapshot phase before the spike.
    """
    n = run.n
    ev_t = run.state.event_times()
    ev_i = run.state.event_neurons()
    ok = trace.valid
    t_snap = trace.times[ok] * n
    th = trace.raw[ok]
    if t_snap.size < 2:
        raise InsufficientData("trace has fewer than two valid samples")
    sel = (ev_t > t_snap[0]) & (ev_t <= t_snap[-1])
    idx = np.searchsorted(t_snap, ev_t[sel], side="left") - 1
    x = run.params.grid.positions[ev_i[sel]]
    phi = 4 * math.pi ** 2 * np.sin(x + th[idx]) ** 2
    return float(phi.sum()) / n ** 2 / (trace.times[ok][-1] - trace.times[ok][0])


# --- proximity ---------------------------------------------------------------------

@dataclass(frozen=True)
class ProximityReport:
    sup_dist: float
    window: tuple[float, float]


def proximity_report(run, bump: BumpSolution, burn_in_c: float = BURN_IN_C) -> ProximityReport:
    """sup of the manifold distance over snapshots at or after T0 = C log N.

    An empty window (run shorter than T0) gives NaN.
    """
    times = np.asarray(run.times, dtype=float)
    t0 = burn_in_time(run.n, burn_in_c)
    keep = np.nonzero(times >= t0 - 1e-12)[0]
    if keep.size == 0:
        return ProximityReport(math.nan, (t0, t0))
    sup = max(manifold_distance(run.profile(int(k)), bump) for k in keep)
    return ProximityReport(float(sup), (t0, float(times[keep[-1]])))


# --- propagation of chaos -------------------------------------------------------------

GAUSS_POINTS = 6


def chaos_error(n: int, f: FiringFunction, rho: Callable, seed: int, t_end: float = 10.0,
                check_dt: float = 0.1, flow_dt: float = 1e-3, m: Optional[int] = None) -> float:
    """sup over check times of ||U_N(t) - u_t||_2 (exact per-bin Gauss quadrature)."""
    grid = grid_positions(n)
    params = HawkesParams(grid, f, rho, seed=seed, track_compensators=False)
    run = run_simulation(params, t_end, check_dt)
    m = m or default_resolution(f)
    state = start_flow(Field.from_function(rho, m), f)
    gx, gw = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    half = 0.5 * grid.spacing
    mid = grid.positions - half
    xq = mid[:, None] + half * gx[None, :]
    wq = half * gw
    rho_q = np.asarray(rho(xq), dtype=float)
    cq, sq = np.cos(xq), np.sin(xq)
    worst = 0.0
    for k, t in enumerate(run.times):
        state = state.advance(float(t), flow_dt)
        u = math.exp(-t) * rho_q + state.a * cq + state.b * sq
        diff = run.snapshots[k][:, None] - u
        err = math.sqrt(float(np.sum((diff ** 2) @ wq)))
        worst = max(worst, err)
    return worst


def loglog_slope(xs, ys) -> float:
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


# --- replica orchestration ------------------------------------------------------------

def effective_parallelism(requested: int) -> int:
    p = max(1, int(requested))
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            p = min(p, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from exc
    return p


def _guarded(job):
    task, seed = job
    try:
        return True, task(seed)
    except RingBumpsError as exc:
        return False, f"{type(exc).__name__}: {exc}"


@dataclass
class SweepResult:
    seeds: list
    values: list
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> list:
        return [v for v in self.values if v is not None]

    @property
    def failure_fraction(self) -> float:
        return len(self.failures) / max(len(self.seeds), 1)


def replica_sweep(task: Callable[[int], Any], n_replicas: int, base_seed: int = 0,
                  parallelism: int = 1) -> SweepResult:
    """Run ``task(base_seed + r)`` for r < n_replicas; results keep replica order.

    Library errors inside a replica are recorded, not raised; more than 20%
    failures raises SweepDegraded with the partial result attached.
    """
    if n_replicas < 1:
        raise ConfigError("n_replicas must be >= 1")
    seeds = [base_seed + r for r in range(n_replicas)]
    jobs = [(task, s) for s in seeds]
    workers = min(effective_parallelism(parallelism), n_replicas)
    if workers == 1:
        outcomes = [_guarded(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_guarded, jobs, chunksize=1))
    values, failures = [], {}
    for r, (ok, val) in enumerate(outcomes):
        values.append(val if ok else None)
        if not ok:
            failures[r] = val
    result = SweepResult(seeds, values, failures)
    if result.failure_fraction > MAX_FAILED:
        exc = SweepDegraded(f"{len(failures)} of {n_replicas} replicas failed")
        exc.result = result
        raise exc
    return result


@dataclass(frozen=True)
class ReplicaOutcome:
    seed: int
    trace: PhaseTrace
    sup_dist: float
    window: tuple
    qv_rate: float
    n_events: int


@dataclass(frozen=True)
class DiffusionTask:
    """One phase-diffusion replica: simulate, project, summarise."""

    n: int = 500
    kappa: float = 0.05
    rho_threshold: float = 0.5
    firing_kind: str = "sigmoid"
    init_kind: str = "bump"
    init_path: Optional[str] = None
    t_end: float = 500.0
    snapshot_dt: float = 1.0
    burn_in_c: float = BURN_IN_C
    mode: str = VARIATIONAL

    def bump(self) -> BumpSolution:
        return solve_amplitude(FiringFunction(self.firing_kind, kappa=self.kappa,
                                              rho_threshold=self.rho_threshold))

    def simulate(self, seed: int, bump: Optional[BumpSolution] = None) -> SimulationRun:
        bump = bump or self.bump()
        rho = make_profile(self.init_kind, bump.amplitude, self.init_path)
        params = HawkesParams(grid_positions(self.n), bump.f, rho, seed=seed,
                              track_compensators=False)
        return run_simulation(params, self.t_end, self.snapshot_dt)

    def __call__(self, seed: int) -> ReplicaOutcome:
        bump = self.bump()
        run = self.simulate(seed, bump)
        trace = phase_trace(run, bump, self.mode, self.burn_in_c)
        prox = proximity_report(run, bump, self.burn_in_c)
        qv = quadratic_variation_rate(run, trace)
        return ReplicaOutcome(seed, trace, prox.sup_dist, prox.window, qv, run.state.n_events)


@dataclass(frozen=True)
class PhaseDiffusionReport:
    sweep: SweepResult
    estimate: DiffusionEstimate
    sigma_theory: float
    phase_sigma: float
    qv_mean: float
    qv_stderr: float

    @property
    def outcomes(self) -> list:
        return self.sweep.ok


def phase_diffusion(task: DiffusionTask, n_replicas: int, base_seed: int = 0,
                    parallelism: int = 1, n_boot: int = N_BOOT) -> PhaseDiffusionReport:
    sweep = replica_sweep(task, n_replicas, base_seed, parallelism)
    outs = sweep.ok
    est = estimate_sigma([o.trace for o in outs], n_boot=n_boot, seed=base_seed)
    qv = np.array([o.qv_rate for o in outs])
    qv_se = float(qv.std(ddof=1) / math.sqrt(qv.size)) if qv.size > 1 else math.nan
    bump = task.bump()
    return PhaseDiffusionReport(sweep, est, bump.sigma, bump.phase_sigma, float(qv.mean()), qv_se)


@dataclass(frozen=True)
class ChaosTask:
    n: int
    kappa: float = 0.05
    rho_threshold: float = 0.5
    firing_kind: str = "sigmoid"
    init_kind: str = "bump"
    init_path: Optional[str] = None
    t_end: float = 10.0
    check_dt: float = 0.1

    def __call__(self, seed: int) -> float:
        f = FiringFunction(self.firing_kind, kappa=self.kappa, rho_threshold=self.rho_threshold)
        amp = solve_amplitude(f).amplitude
        rho = make_profile(self.init_kind, amp, self.init_path)
        return chaos_error(self.n, f, rho, seed, self.t_end, self.check_dt)


@dataclass(frozen=True)
class ChaosScaling:
    ns: tuple
    medians: tuple
    slope: float
    errors: tuple


def chaos_scaling(ns: Sequence[int] = (125, 250, 500, 1000), n_seeds: int = 20,
                  base_seed: int = 0, parallelism: int = 1, **task_kw) -> ChaosScaling:
    medians, errors = [], []
    for n in ns:
        sweep = replica_sweep(ChaosTask(int(n), **task_kw), n_seeds, base_seed, parallelism)
        errs = np.array(sweep.ok)
        errors.append(tuple(errs.tolist()))
        medians.append(float(np.median(errs)))
    return ChaosScaling(tuple(int(n) for n in ns), tuple(medians), loglog_slope(ns, medians),
                        tuple(errors))
