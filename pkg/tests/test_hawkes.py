import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ringbumps.analysis import ChaosTask
from ringbumps.errors import ConfigError, InvalidTime, NumericalBlowup
from ringbumps.hawkes import (
    HawkesParams,
    _rate,
    init_state,
    jump_increment,
    martingale_residual,
    replay_voltages,
    run_simulation,
    simulate_until,
    voltage_profile,
)
from ringbumps.model import constant_rate, grid_positions, heaviside, sigmoid


def params(n=50, f=None, rho=None, seed=0, **kw):
    f = f or sigmoid(0.05, 0.5)
    rho = rho if rho is not None else (lambda x: 1.93 * np.cos(x))
    return HawkesParams(grid_positions(n), f, rho, seed=seed, **kw)


def exact_l2_error(grid, values, fn, points=8):
    gx, gw = np.polynomial.legendre.leggauss(points)
    half = grid.spacing / 2
    xq = (grid.positions - half)[:, None] + half * gx[None, :]
    return math.sqrt(float(np.sum(((values[:, None] - fn(xq)) ** 2) @ (half * gw))))


def test_init_state_examples():
    p = params(n=16)
    s = init_state(p)
    assert s.t == 0 and s.p == 0 and s.q == 0 and s.n_events == 0
    assert np.array_equal(s.voltages(), 1.93 * np.cos(p.grid.positions))
    assert np.all(s.counts == 0)
    z = init_state(params(n=16, rho=np.zeros(16)))
    assert np.all(z.voltages() == 0)


def test_jump_increment_examples():
    g = grid_positions(4)
    assert jump_increment(g, 1, 1) == 2 * math.pi / 4
    assert jump_increment(g, 0, 2) == pytest.approx(-2 * math.pi / 4, abs=1e-15)
    assert abs(jump_increment(g, 0, 1)) < 1e-15


def test_heaviside_zero_profile_never_fires():
    p = params(n=40, f=heaviside(0.5), rho=np.zeros(40))
    s = simulate_until(init_state(p), 100.0)
    assert s.n_events == 0
    assert np.all(martingale_residual(s) == 0.0)


def test_poisson_superposition():
    n, c, t = 10, 0.3, 100.0
    totals = np.array([simulate_until(init_state(params(n, constant_rate(c), seed=s)), t).n_events
                       for s in range(50)])
    mean = n * c * t
    assert abs(totals.mean() - mean) <= 3 * math.sqrt(mean / 50)
    assert abs(totals.var(ddof=1) / mean - 1) < 0.4


def test_rank2_matches_replay():
    p = params(n=8, seed=3)
    s = init_state(p)
    t = 0.0
    while s.n_events < 100:
        t += 0.5
        simulate_until(s, t)
    times, neurons = s.event_times(), s.event_neurons()
    assert times.size >= 100
    assert np.max(np.abs(s.voltages() - replay_voltages(p, times, neurons, s.t))) < 1e-12


def test_single_spike_formula():
    p = params(n=6, f=constant_rate(0.02), seed=11)
    s = init_state(p)
    t = 0.0
    while s.n_events == 0:
        t += 0.05
        simulate_until(s, t)
    assert s.n_events == 1
    (t_s,), (j,) = s.event_times(), s.event_neurons()
    x = p.grid.positions
    expect = p.rho_values() * math.exp(-s.t) + 2 * math.pi / 6 * np.cos(x - x[j]) * math.exp(-(s.t - t_s))
    assert np.max(np.abs(s.voltages() - expect)) < 1e-14


@pytest.mark.parametrize("n", [50, 100, 200, 400])
def test_sampling_error_is_first_order(n):
    p = params(n)
    prof = voltage_profile(init_state(p))
    err = exact_l2_error(p.grid, prof.values, lambda x: 1.93 * np.cos(x))
    # right-endpoint sampling of a Lipschitz function: error <= Lip * h * sqrt(2 pi)
    assert err <= 1.93 * (2 * math.pi / n) * math.sqrt(2 * math.pi)
    # leading term: A h sqrt(pi / 3)
    assert err * n == pytest.approx(1.93 * 2 * math.pi * math.sqrt(math.pi / 3), rel=0.02)


def test_profile_l2_stats_exact():
    p = params(n=37, seed=2)
    s = simulate_until(init_state(p), 3.0)
    prof = voltage_profile(s)
    norm2, c, sn = prof.l2_stats()
    fine = np.linspace(-math.pi, math.pi, 37 * 4000, endpoint=False) + math.pi / (37 * 4000)
    vals = prof.at(fine)
    h = 2 * math.pi / fine.size
    assert norm2 == pytest.approx(h * np.sum(vals ** 2), rel=1e-12)
    assert c == pytest.approx(h * np.sum(vals * np.cos(fine)) / math.pi, rel=1e-6, abs=1e-9)
    assert sn == pytest.approx(h * np.sum(vals * np.sin(fine)) / math.pi, rel=1e-6, abs=1e-9)


def test_determinism_and_staging():
    p = params(n=30, seed=99)
    a = simulate_until(init_state(p), 40.0)
    b = init_state(p)
    for t in np.linspace(0.7, 40.0, 23):
        simulate_until(b, float(t))
    assert np.array_equal(a.event_times(), b.event_times())
    assert np.array_equal(a.event_neurons(), b.event_neurons())
    assert np.array_equal(a.voltages(), b.voltages())
    c = simulate_until(init_state(params(n=30, seed=99, track_compensators=False)), 40.0)
    assert np.array_equal(a.event_times(), c.event_times())
    d = simulate_until(init_state(params(n=30, seed=100)), 40.0)
    assert not np.array_equal(a.event_times()[:10], d.event_times()[:10])


def test_log_consistency():
    s = simulate_until(init_state(params(n=25, seed=4)), 50.0)
    times, neurons = s.event_times(), s.event_neurons()
    assert np.all(np.diff(times) > 0)
    assert np.array_equal(np.bincount(neurons, minlength=25), s.counts)
    assert [e.neuron for e in s.events()[:5]] == neurons[:5].tolist()


def test_large_run_buffers():
    s = simulate_until(init_state(params(n=500, seed=1, track_compensators=False)), 200.0)
    assert s.n_events > 32768
    assert np.all(np.diff(s.event_times()) > 0)
    assert s.event_times().size == s.n_events


def test_spill_to_disk(tmp_path):
    path = tmp_path / "events.csv"
    p = params(n=500, seed=1, track_compensators=False, event_cap=10, spill_path=path)
    s = simulate_until(init_state(p), 100.0)
    ref = simulate_until(init_state(params(n=500, seed=1, track_compensators=False)), 100.0)
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time", "neuron"]
    spilled = np.array([[float(t), int(i)] for t, i in rows[1:]])
    assert s.spilled == len(rows) - 1 > 0
    assert np.array_equal(spilled[:, 0], ref.event_times()[: s.spilled])
    assert np.array_equal(spilled[:, 1].astype(int) - 1, ref.event_neurons()[: s.spilled])
    assert s.n_events == ref.n_events


def test_errors():
    s = simulate_until(init_state(params(n=5)), 2.0)
    with pytest.raises(InvalidTime):
        simulate_until(s, 1.0)
    with pytest.raises(NumericalBlowup):
        init_state(params(n=5, rho=np.array([0, 1, np.inf, 0, 0])))
    with pytest.raises(ConfigError):
        martingale_residual(simulate_until(init_state(params(n=5, track_compensators=False)), 1.0))
    with pytest.raises(ConfigError):
        params(n=5, seed=-1)


@given(st.floats(-1e6, 1e6), st.sampled_from([0, 1, 2]))
def test_acceptance_probability_in_unit_interval(u, kind):
    val = _rate(u, kind, 0.05, 0.5, 0.7)
    assert 0.0 <= val <= 1.0


def test_martingale_mean_and_variance():
    n, t, seeds = 50, 20.0, 200
    res = np.empty((seeds, n))
    comp = np.empty((seeds, n))
    for s in range(seeds):
        st_ = simulate_until(init_state(params(n, seed=s)), t)
        res[s] = martingale_residual(st_)
        comp[s] = st_.compensators
    se = res.std(axis=0, ddof=1) / math.sqrt(seeds)
    z = res.mean(axis=0) / se
    assert np.mean(np.abs(z) < 3) >= 0.97
    # pooled over neurons: Var(M_j) = E int lambda_j
    ratio = res.var(axis=0, ddof=1).mean() / comp.mean()
    assert abs(ratio - 1) < 0.2


def test_snapshot_runs():
    p = params(n=40, seed=5)
    run = run_simulation(p, 10.0, 0.5)
    assert run.times[0] == 0 and run.times[-1] == 10.0 and run.snapshots.shape == (21, 40)
    assert np.array_equal(run.snapshots[-1], run.state.voltages())
    run2 = run_simulation(p, 10.3, 1.0)
    assert run2.times[-1] == 10.3
    with pytest.raises(InvalidTime):
        run_simulation(p, -1.0)


@pytest.mark.slow
def test_mean_field_proximity_n500():
    """sup_{t<=10} ||U_N(t) - u_t||_2 < 0.5 at N=500 (median over 20 seeds)."""
    errs = [ChaosTask(500)(seed) for seed in range(20)]
    print("N=500 sup errors:", np.round(sorted(errs), 3))
    assert np.median(errs) < 0.5
