"""Acceptance suite: one PASS/FAIL line per criterion in the terminal summary."""
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, smooth_field
from ringbumps.analysis import (
    ChaosTask,
    DiffusionTask,
    chaos_scaling,
    estimate_sigma,
    phase_diffusion,
    replica_sweep,
)
from ringbumps.cli import main
from ringbumps.field_ops import discrete_spectrum, make_frame
from ringbumps.hawkes import (
    HawkesParams,
    init_state,
    martingale_residual,
    replay_voltages,
    simulate_until,
)
from ringbumps.model import Field, grid_positions, heaviside, nodes, sigmoid
from ringbumps.nfe import (
    beta,
    d2theta,
    dtheta,
    flow,
    flow_checkpoints,
    isochronal_phase,
    manifold_distance,
    wrap_phase,
)
from ringbumps.stationary import heaviside_fixed_points, solve_amplitude, weight_integral

PARALLELISM = int(os.environ.get("RINGBUMPS_THREADS", os.cpu_count() or 1))


def record(num, name, passed, detail, info=()):
    lines = [f"[{'PASS' if passed else 'FAIL'}] {num:>2}. {name}: {detail}"]
    lines += [f"        info: {text}" for text in info]
    ACCEPTANCE_LINES[num] = lines
    print("\n".join(lines))
    return passed


def l2(vals):
    vals = np.asarray(vals)
    return math.sqrt(2 * math.pi / vals.size * float(vals @ vals))


@pytest.fixture(scope="module")
def sweep500():
    """100 replicas at N=500, T=500; seeds 0-19 also serve the proximity criterion."""
    start = time.perf_counter()
    report = phase_diffusion(DiffusionTask(n=500), 100, base_seed=0, parallelism=PARALLELISM)
    return report, time.perf_counter() - start


def test_criterion_01_stationary_amplitudes():
    start = time.perf_counter()
    _, am, ap = heaviside_fixed_points(0.5)
    sol = solve_amplitude(sigmoid(0.1, 0.5))
    kappas = [0.1, 0.05, 0.02, 0.01]
    amps = [solve_amplitude(sigmoid(k, 0.5)).amplitude for k in kappas]
    gaps = [abs(a - ap) for a in amps]
    elapsed = time.perf_counter() - start
    ok = (abs(ap - 1.9318516) < 1e-6 and abs(am - 0.5176381) < 1e-6 and sol.residual < 1e-10
          and all(b < a for a, b in zip(gaps, gaps[1:])) and elapsed < 1.0)
    record(1, "stationary amplitudes", ok,
           f"A+={ap:.7f} A-={am:.7f} residual(k=0.1)={sol.residual:.1e} "
           f"sweep |A-A+|={[f'{g:.2e}' for g in gaps]} runtime={elapsed:.2f}s (<1s)")
    assert ok


def test_criterion_02_weight_identities(bump):
    start = time.perf_counter()
    s2 = weight_integral(bump, lambda y: np.sin(y) ** 2)
    sc = weight_integral(bump, lambda y: np.sin(y) * np.cos(y))
    c2 = weight_integral(bump, lambda y: np.cos(y) ** 2)
    i1 = weight_integral(bump, lambda y: np.ones_like(y))
    elapsed = time.perf_counter() - start
    e = (abs(s2 - 1), abs(sc), abs(c2 - (i1 - 1)))
    ok = e[0] < 1e-8 and e[1] < 1e-12 and e[2] < 1e-8 and elapsed < 1.0
    record(2, "weighted integral identities", ok,
           f"|I(sin2)-1|={e[0]:.1e} |I(sin cos)|={e[1]:.1e} |I(cos2)-(I(1)-1)|={e[2]:.1e} "
           f"runtime={elapsed:.2f}s (<1s)")
    assert ok


def test_criterion_03_spectrum(bump):
    start = time.perf_counter()
    spec = discrete_spectrum(make_frame(bump, 0.0, m=512))
    cluster_err = float(np.max(np.abs(spec.eigenvalues - spec.expected)))
    kernel = int(np.argmin(np.abs(spec.eigenvalues)))
    sim = float(spec.kernel_similarity[kernel])
    g01 = solve_amplitude(sigmoid(0.01, 0.5)).gamma
    elapsed = time.perf_counter() - start
    ok = (cluster_err < 1e-6 and -1 < spec.gamma < 0 and sim > 0.999
          and abs(g01 + 0.9282032) < 0.02 and elapsed < 10)
    record(3, "spectral structure", ok,
           f"max cluster error={cluster_err:.1e} gamma={spec.gamma:.6f} kernel similarity={sim:.6f} "
           f"gamma(k=0.01)={g01:.6f} vs -0.9282032 runtime={elapsed:.1f}s (<10s)")
    assert ok


def test_criterion_04_flow_stability(bump):
    start = time.perf_counter()
    a = bump.amplitude
    g = Field(1.05 * a * np.cos(nodes(bump.m)))
    times = np.arange(2.0, 16.01, 1.0)
    dev = [abs(math.exp(-st.t) * 1.05 * a + st.a - a) for st in flow_checkpoints(g, bump.f, times)]
    rate = float(np.polyfit(times, np.log(dev), 1)[0])
    rng = np.random.default_rng(2024)
    finals = []
    for _ in range(20):
        pert = smooth_field(rng, bump.m, modes=5)
        pert *= 0.05 / l2(pert)
        g = a * np.cos(nodes(bump.m) + rng.uniform(-3, 3)) + pert
        finals.append(manifold_distance(flow(g, bump.f, 100.0, dt=1e-2).current, bump))
    elapsed = time.perf_counter() - start
    rel = abs(rate - bump.gamma) / abs(bump.gamma)
    ok = rel < 0.02 and max(finals) < 1e-6 and elapsed < 30
    record(4, "flow stability", ok,
           f"fitted rate={rate:.5f} gamma={bump.gamma:.5f} (rel {rel:.1e}) "
           f"max dist(t=100)={max(finals):.1e} over 20 perturbations runtime={elapsed:.1f}s (<30s)")
    assert ok


def test_criterion_05_isochron(bump, frame):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    g = bump.amplitude * np.cos(nodes(bump.m) + 0.3) + smooth_field(rng, bump.m, scale=0.3)
    th = isochronal_phase(g, bump).theta
    drift = max(abs(wrap_phase(isochronal_phase(flow(g, bump.f, t).current, bump).theta - th))
                for t in (1.0, 5.0, 10.0))
    u0 = frame.u_phi.values
    rng = np.random.default_rng(42)
    rel1, rel2 = [], []
    t0 = isochronal_phase(u0, bump).theta
    for _ in range(3):
        h = smooth_field(rng, bump.m, modes=5, scale=1.0)
        d = 1e-4
        fd1 = wrap_phase(isochronal_phase(u0 + d * h, bump).theta
                         - isochronal_phase(u0 - d * h, bump).theta) / (2 * d)
        rel1.append(abs(dtheta(frame, h) / fd1 - 1))
        d = 1e-3
        fd2 = (wrap_phase(isochronal_phase(u0 + d * h, bump).theta - t0)
               + wrap_phase(isochronal_phase(u0 - d * h, bump).theta - t0)) / d ** 2
        rel2.append(abs(d2theta(frame, h, h) / fd2 - 1))
    berr = abs(beta(frame, frame.u_phi, frame.v_phi) - bump.amplitude ** 2 * bump.gamma)
    elapsed = time.perf_counter() - start
    ok = drift < 1e-6 and max(rel1) < 1e-4 and max(rel2) < 1e-2 and berr < 1e-8 and elapsed < 60
    record(5, "isochron correctness", ok,
           f"phase drift along flow={drift:.1e} Dtheta rel={max(rel1):.1e} D2theta rel={max(rel2):.1e} "
           f"|beta(u,v)-A^2 gamma|={berr:.1e} runtime={elapsed:.1f}s (<60s)")
    assert ok


def test_criterion_06_simulator_exactness(bump, tmp_path):
    start = time.perf_counter()
    p = HawkesParams(grid_positions(8), bump.f, lambda x: bump.amplitude * np.cos(x), seed=3)
    s = init_state(p)
    t = 0.0
    while s.n_events < 100:
        t += 0.5
        simulate_until(s, t)
    replay_err = float(np.max(np.abs(s.voltages()
                                     - replay_voltages(p, s.event_times(), s.event_neurons(), s.t))))
    zero = simulate_until(init_state(HawkesParams(grid_positions(40), heaviside(0.5), np.zeros(40))),
                          100.0).n_events
    argv = ["simulate", "--n", "60", "--t-end", "20", "--seed", "5", "--no-svg"]
    outs = []
    for k in range(2):
        main(argv + ["--out", str(tmp_path / f"r{k}")])
        outs.append((tmp_path / f"r{k}" / "events.csv").read_bytes()
                    + (tmp_path / f"r{k}" / "snapshots.csv").read_bytes())
    task = DiffusionTask(n=50, t_end=60.0)
    serial = replica_sweep(task, 3, base_seed=1, parallelism=1).values
    parallel = replica_sweep(task, 3, base_seed=1, parallelism=2).values
    same_par = all(np.array_equal(x.trace.raw, y.trace.raw, equal_nan=True) and x.n_events == y.n_events
                   for x, y in zip(serial, parallel))
    elapsed = time.perf_counter() - start
    ok = replay_err < 1e-12 and zero == 0 and outs[0] == outs[1] and same_par and elapsed < 10
    record(6, "simulator exactness", ok,
           f"replay error={replay_err:.1e} ({s.n_events} events) heaviside zero-profile events={zero} "
           f"rerun identical={outs[0] == outs[1]} parallel identical={same_par} runtime={elapsed:.1f}s (<10s)")
    assert ok


@pytest.mark.slow
def test_criterion_07_propagation_of_chaos():
    start = time.perf_counter()
    res = chaos_scaling((125, 250, 500, 1000), n_seeds=20, base_seed=0, parallelism=PARALLELISM)
    elapsed = time.perf_counter() - start
    ok = -0.65 <= res.slope <= -0.35
    meds = " ".join(f"N={n}:{m:.3f}" for n, m in zip(res.ns, res.medians))
    record(7, "propagation of chaos", ok,
           f"median sup errors {meds} log-log slope={res.slope:.3f} in [-0.65,-0.35] runtime={elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_08_manifold_proximity(sweep500):
    report, _ = sweep500
    start = time.perf_counter()
    first20 = [o for o in report.outcomes if o.seed < 20]
    sups = np.array([o.sup_dist for o in first20])
    small = replica_sweep(DiffusionTask(n=125), 20, base_seed=0, parallelism=PARALLELISM)
    sups125 = np.array([o.sup_dist for o in small.ok])
    elapsed = time.perf_counter() - start
    n_close = int(np.sum(sups < 0.5))
    ok = len(first20) == 20 and n_close >= 18 and np.median(sups) < np.median(sups125)
    record(8, "manifold proximity", ok,
           f"N=500 seeds with sup dist<0.5: {n_close}/20 (need >=18); median sup N=500={np.median(sups):.3f} "
           f"vs N=125={np.median(sups125):.3f} runtime={elapsed:.0f}s plus shared sweep",
           info=[f"N=500 sup distances: min {sups.min():.3f} max {sups.max():.3f}; "
                 f"manifold radius A sqrt(pi)={report.phase_sigma and report.sigma_theory / report.phase_sigma * math.sqrt(math.pi):.3f}"])
    assert ok


@pytest.mark.slow
def test_criterion_09_phase_diffusion(sweep500):
    report, elapsed = sweep500
    est = report.estimate
    sig = report.sigma_theory
    rel = abs(est.sigma_hat - sig) / sig
    # QV cross-check: sigma_hat^2 against the event-sum quadratic variation rate
    var_hat = est.sigma_hat ** 2
    var_se = 2 * est.sigma_hat * est.stderr
    comb = math.hypot(var_se, report.qv_stderr)
    qv_gap = abs(var_hat - report.qv_mean) / comb
    ok = rel < 0.2 and est.drift_ok and est.r2_linearity > 0.9 and qv_gap < 2 and \
        est.n_replicas == 100
    amp = solve_amplitude(sigmoid(0.05, 0.5)).amplitude
    record(9, "phase diffusion", ok,
           f"sigma_hat={est.sigma_hat:.4f}+-{est.stderr:.4f} vs sigma={sig:.4f} (rel {rel:.2f}, need <0.20); "
           f"drift z={est.drift_z:.2f} (|z|<=3); r2={est.r2_linearity:.4f} (>0.9); "
           f"QV rate={report.qv_mean:.3f}+-{report.qv_stderr:.3f} vs sigma_hat^2={var_hat:.3f} "
           f"({qv_gap:.1f} combined SE, need <2); replicas={est.n_replicas} runtime={elapsed:.0f}s",
           info=[f"sigma/A={report.phase_sigma:.4f} (rel to sigma_hat "
                 f"{abs(est.sigma_hat - report.phase_sigma) / report.phase_sigma:.3f}); "
                 f"QV rate/A^2={report.qv_mean / amp ** 2:.3f} vs sigma_hat^2={var_hat:.3f} "
                 f"({abs(report.qv_mean / amp ** 2 - var_hat) / math.hypot(var_se, report.qv_stderr / amp ** 2):.1f} combined SE)"])
    assert ok


def _summary(path):
    import csv
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: float(v) for k, v in rows[0].items()}


@pytest.mark.slow
def test_criterion_10_figures(tmp_path):
    import csv
    start = time.perf_counter()
    codes = [main(["figure", name, "--out", str(tmp_path / name)])
             for name in ("fixed", "wandering1", "wandering3")]
    with open(tmp_path / "fixed" / "crossings.csv", newline="") as fh:
        marks = {(r["firing"], round(float(r["A"]), 4)) for r in csv.DictReader(fh)}
    _, am, ap = heaviside_fixed_points(0.5)
    sol = solve_amplitude(sigmoid(0.1, 0.5))
    crossings_ok = (("heaviside", round(ap, 4)) in marks and ("heaviside", round(am, 4)) in marks
                    and ("sigmoid", round(sol.amplitude, 4)) in marks)
    w1 = _summary(tmp_path / "wandering1" / "summary.csv")
    w3 = _summary(tmp_path / "wandering3" / "summary.csv")
    elapsed = time.perf_counter() - start
    svgs = all((tmp_path / n / f).exists() for n, f in
               (("fixed", "fixed.svg"), ("wandering1", "heatmap.svg"), ("wandering3", "heatmap.svg")))
    ok = (codes == [0, 0, 0] and crossings_ok and w1["sup_dist"] < 0.5
          and w3["final_l2_norm"] < 0.2 * w3["manifold_radius"] and svgs)
    record(10, "figure reproduction", ok,
           f"exit codes={codes} crossings match criterion 1={crossings_ok} "
           f"wandering1 sup dist={w1['sup_dist']:.3f} (<0.5) "
           f"wandering3 |U(5)|={w3['final_l2_norm']:.4f} (<{0.2 * w3['manifold_radius']:.4f}) "
           f"svg written={svgs} runtime={elapsed:.0f}s")
    assert ok


def test_criterion_11_martingale():
    start = time.perf_counter()
    f = sigmoid(0.05, 0.5)
    amp = solve_amplitude(f).amplitude
    res = np.empty((200, 50))
    for seed in range(200):
        p = HawkesParams(grid_positions(50), f, lambda x: amp * np.cos(x), seed=seed)
        res[seed] = martingale_residual(simulate_until(init_state(p), 20.0))
    z = res.mean(axis=0) / (res.std(axis=0, ddof=1) / math.sqrt(200))
    elapsed = time.perf_counter() - start
    within = int(np.sum(np.abs(z) < 3))
    ok = within == 50
    record(11, "martingale diagnostic", ok,
           f"neurons with |mean residual| < 3 SE: {within}/50, max |z|={np.max(np.abs(z)):.2f} "
           f"runtime={elapsed:.1f}s")
    assert ok
