"""Command-line entry point: ``ringbumps <subcommand> [--config FILE] [overrides]``.

Every subcommand writes CSV files (and SVG figures unless ``--no-svg``) plus a
``manifest.yaml`` into the output directory. Exit codes: 0 success, 2 bad
configuration or usage, 3 numerical or I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from scipy.optimize import brentq

from . import analysis, profiles
from .errors import ConfigError, NumericalFailure, RingBumpsError
from .field_ops import discrete_spectrum, make_frame
from .hawkes import HawkesParams, run_simulation
from .model import Field, FiringFunction, default_resolution, grid_positions, heaviside, sigmoid
from .nfe import flow_checkpoints, manifold_distance, variational_phase
from .stationary import (
    fixed_point_map,
    heaviside_fixed_points,
    sign_changes,
    solve_amplitude,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
FIRING_KINDS = ("sigmoid", "heaviside")
FIGURES = ("fixed", "wandering1", "wandering3")


def _artifact_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


# --- configuration -----------------------------------------------------------------

@dataclass
class ModelConfig:
    n: int = 500
    kappa: float = 0.05
    rho_threshold: float = 0.5
    firing_kind: str = "sigmoid"


@dataclass
class InitConfig:
    kind: str = "bump"
    path: Optional[str] = None


@dataclass
class SimConfig:
    t_end: float = 500.0
    snapshot_dt: float = 1.0
    seed: int = 0


@dataclass
class SweepConfig:
    n_replicas: int = 100
    parallelism: int = 1


@dataclass
class OutputConfig:
    directory: str = "out"
    emit_svg: bool = True


_SECTIONS = {"model": ModelConfig, "init": InitConfig, "sim": SimConfig,
             "sweep": SweepConfig, "output": OutputConfig}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    init: InitConfig = field(default_factory=InitConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[dict], base: Optional["RunConfig"] = None) -> "RunConfig":
        cfg = base or cls()
        if not data:
            return cfg
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping of sections")
        for name, values in data.items():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown config section {name!r}")
            if values is None:
                continue
            if not isinstance(values, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            section = getattr(cfg, name)
            known = {f.name: f for f in fields(section)}
            updates = {}
            for key, val in values.items():
                if key not in known:
                    raise ConfigError(f"unknown key {name}.{key}")
                updates[key] = _coerce(f"{name}.{key}", val, type(getattr(_SECTIONS[name](), key)))
            cfg = replace(cfg, **{name: replace(section, **updates)})
        return cfg

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from exc
        return cls.from_dict(data)

    def digest(self) -> str:
        """Hash of the sections that determine results (output settings excluded)."""
        body = {k: v for k, v in self.to_dict().items() if k != "output"}
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def validate(self) -> "RunConfig":
        m, s, w = self.model, self.sim, self.sweep
        if m.n < 1:
            raise ConfigError("model.n must be >= 1")
        if m.firing_kind not in FIRING_KINDS:
            raise ConfigError(f"model.firing_kind must be one of {FIRING_KINDS}")
        if m.firing_kind == "sigmoid" and not m.kappa > 0:
            raise ConfigError("model.kappa must be positive")
        if not math.isfinite(m.rho_threshold):
            raise ConfigError("model.rho_threshold must be finite")
        if self.init.kind not in profiles.KINDS:
            raise ConfigError(f"init.kind must be one of {profiles.KINDS}")
        if self.init.kind == profiles.FILE:
            if not self.init.path or not Path(self.init.path).is_file():
                raise ConfigError("init.kind=file needs an existing init.path")
        if not s.t_end > 0 or not s.snapshot_dt > 0:
            raise ConfigError("sim.t_end and sim.snapshot_dt must be positive")
        if not 0 <= s.seed < 2 ** 64:
            raise ConfigError("sim.seed must be a non-negative 64-bit integer")
        if w.n_replicas < 1 or w.parallelism < 1:
            raise ConfigError("sweep.n_replicas and sweep.parallelism must be >= 1")
        return self

    def firing(self) -> FiringFunction:
        if self.model.firing_kind == "heaviside":
            return heaviside(self.model.rho_threshold)
        return sigmoid(self.model.kappa, self.model.rho_threshold)


def _coerce(key: str, val, kind):
    if kind is bool:
        if isinstance(val, bool):
            return val
        raise ConfigError(f"{key} must be true or false")
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, (int, float)) or val != int(val):
            raise ConfigError(f"{key} must be an integer")
        return int(val)
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(val)
    if val is None:
        return None
    return str(val)


# --- output helpers ----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return "" if x is None else str(x)


def write_csv(path: Path, header, rows) -> Path:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row width {len(row)} does not match header {header}")
            w.writerow([_fmt(v) for v in row])
    return Path(path)


class Outputs:
    """Tracks written files and the manifest for one invocation."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg.output.directory)
        self.files: list[str] = []
        self.extra: dict = {}
        self.started = time.perf_counter()
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.dir}: {exc}") from exc

    def csv(self, name: str, header, rows) -> Path:
        path = write_csv(self.dir / name, header, rows)
        self.files.append(name)
        return path

    def svg(self, name: str, draw) -> Optional[Path]:
        if not self.cfg.output.emit_svg:
            return None
        path = draw(self.dir / name)
        self.files.append(name)
        return path

    def manifest(self) -> Path:
        doc = {
            "artifact_version": _artifact_version(),
            "command": self.command,
            "config_hash": self.cfg.digest(),
            "seed": self.cfg.sim.seed,
            "wall_time_s": round(time.perf_counter() - self.started, 3),
            "files": sorted(self.files),
            "config": self.cfg.to_dict(),
        }
        doc.update(self.extra)
        path = self.dir / "manifest.yaml"
        path.write_text(yaml.safe_dump(doc, sort_keys=True))
        return path


def _plotting():
    from . import plotting
    return plotting


# --- subcommands -------------------------------------------------------------------

def cmd_stationary(cfg: RunConfig, out: Outputs, args) -> None:
    sol = solve_amplitude(cfg.firing(), branch=args.branch)
    out.csv("stationary.csv", ["kappa", "rho", "A", "residual", "I1", "gamma", "sigma"],
            [[cfg.model.kappa if cfg.model.firing_kind == "sigmoid" else 0.0,
              cfg.model.rho_threshold, sol.amplitude, sol.residual, sol.i1, sol.gamma,
              sol.sigma]])


def cmd_spectrum(cfg: RunConfig, out: Outputs, args) -> None:
    sol = solve_amplitude(cfg.firing())
    spec = discrete_spectrum(make_frame(sol, 0.0, args.m))
    order = np.argsort(spec.eigenvalues)[::-1]
    rows = [[k, spec.eigenvalues[j], spec.expected[j], spec.kernel_similarity[j]]
            for k, j in enumerate(order)]
    out.csv("spectrum.csv", ["index", "value", "expected", "kernel_similarity"], rows)
    out.svg("spectrum.svg", lambda p: _plotting().line_plot(
        np.arange(len(rows)), {"eigenvalue": spec.eigenvalues[order]}, p,
        xlabel="index", ylabel="eigenvalue"))


def cmd_nfe(cfg: RunConfig, out: Outputs, args) -> None:
    f = cfg.firing()
    sol = solve_amplitude(f)
    rho = profiles.make_profile(cfg.init.kind, sol.amplitude, cfg.init.path)
    g = Field.from_function(rho, sol.m or 512)
    times = np.arange(0.0, cfg.sim.t_end + 1e-9, cfg.sim.snapshot_dt)
    rows = []
    for st in flow_checkpoints(g, f, times, args.dt):
        cur = st.current
        dist = manifold_distance(cur, sol)
        try:
            phase = variational_phase(cur, sol) if f.smooth else None
        except NumericalFailure:
            phase = None
        rows.append([st.t, st.a, st.b, dist, phase])
    out.csv("nfe.csv", ["t", "a", "b", "dist_to_manifold", "variational_phase"], rows)
    out.svg("nfe.svg", lambda p: _plotting().line_plot(
        times, {"dist": np.array([r[3] for r in rows])}, p, xlabel="t",
        ylabel="distance to manifold", logy=True))


def _simulate(cfg: RunConfig, amplitude: float):
    rho = profiles.make_profile(cfg.init.kind, amplitude, cfg.init.path)
    params = HawkesParams(grid_positions(cfg.model.n), cfg.firing(), rho, seed=cfg.sim.seed,
                          track_compensators=False)
    return run_simulation(params, cfg.sim.t_end, cfg.sim.snapshot_dt)


def _amplitude(cfg: RunConfig) -> float:
    return solve_amplitude(cfg.firing()).amplitude


def _write_run(out: Outputs, run, prefix: str, title: str) -> None:
    out.csv(f"{prefix}events.csv", ["time", "neuron"],
            zip(run.state.event_times().tolist(), (run.state.event_neurons() + 1).tolist()))
    n = run.n
    idx = np.arange(1, n + 1)
    rows = ([t, i, u] for k, t in enumerate(run.times.tolist())
            for i, u in zip(idx.tolist(), run.snapshots[k].tolist()))
    out.csv(f"{prefix}snapshots.csv", ["t", "i", "U"], rows)
    out.svg(f"{prefix}heatmap.svg", lambda p: _plotting().heatmap(
        run.times, run.params.grid.positions, run.snapshots, p, title=title))
    out.extra["event_count"] = run.state.n_events


def cmd_simulate(cfg: RunConfig, out: Outputs, args) -> None:
    run = _simulate(cfg, _amplitude(cfg))
    _write_run(out, run, "", f"N={cfg.model.n}, init={cfg.init.kind}")


def cmd_phase_diffusion(cfg: RunConfig, out: Outputs, args) -> None:
    task = analysis.DiffusionTask(
        n=cfg.model.n, kappa=cfg.model.kappa, rho_threshold=cfg.model.rho_threshold,
        firing_kind=cfg.model.firing_kind, init_kind=cfg.init.kind, init_path=cfg.init.path,
        t_end=cfg.sim.t_end, snapshot_dt=cfg.sim.snapshot_dt, mode=args.mode)
    rep = analysis.phase_diffusion(task, cfg.sweep.n_replicas, cfg.sim.seed,
                                   cfg.sweep.parallelism)
    rows = []
    for r, o in enumerate(rep.sweep.values):
        if o is None:
            continue
        tr = o.trace
        for t, th, ok in zip(tr.times.tolist(), tr.phases_unwrapped.tolist(), tr.valid.tolist()):
            rows.append([r, t, th if ok else None, ok])
    out.csv("traces.csv", ["replica", "tau", "theta_unwrapped", "valid"], rows)
    est = rep.estimate
    out.csv("estimate.csv", ["sigma_hat", "stderr", "r2", "sigma_theory", "n_replicas"],
            [[est.sigma_hat, est.stderr, est.r2_linearity, rep.sigma_theory, est.n_replicas]])
    out.csv("diagnostics.csv",
            ["drift_z", "drift_ok", "qv_rate_mean", "qv_rate_stderr", "phase_sigma",
             "median_sup_dist", "failed_replicas"],
            [[est.drift_z, est.drift_ok, rep.qv_mean, rep.qv_stderr, rep.phase_sigma,
              float(np.median([o.sup_dist for o in rep.outcomes])), len(rep.sweep.failures)]])
    out.csv("replicas.csv", ["replica", "seed", "status", "sup_dist", "qv_rate", "events"],
            [[r, s, "ok" if v is not None else rep.sweep.failures[r],
              v.sup_dist if v else None, v.qv_rate if v else None, v.n_events if v else None]
             for r, (s, v) in enumerate(zip(rep.sweep.seeds, rep.sweep.values))])
    out.extra["event_count"] = int(sum(o.n_events for o in rep.outcomes))

    def draw(p):
        series = {}
        for r, o in enumerate(rep.outcomes[:20]):
            series[f"r{r}"] = o.trace.phases_unwrapped - o.trace.phases_unwrapped[o.trace.valid][0]
        x = rep.outcomes[0].trace.times
        return _plotting().line_plot(x, series, p, xlabel="tau", ylabel="theta - theta0")

    out.svg("traces.svg", draw)


def cmd_chaos(cfg: RunConfig, out: Outputs, args) -> None:
    sc = analysis.chaos_scaling(
        args.ns, cfg.sweep.n_replicas, cfg.sim.seed, cfg.sweep.parallelism,
        kappa=cfg.model.kappa, rho_threshold=cfg.model.rho_threshold,
        firing_kind=cfg.model.firing_kind, init_kind=cfg.init.kind, init_path=cfg.init.path,
        t_end=args.horizon)
    out.csv("scaling.csv", ["N", "median_sup_dist", "slope"],
            [[n, m, sc.slope] for n, m in zip(sc.ns, sc.medians)])
    out.csv("chaos_errors.csv", ["N", "replica", "sup_dist"],
            [[n, r, e] for n, errs in zip(sc.ns, sc.errors) for r, e in enumerate(errs)])
    out.svg("scaling.svg", lambda p: _plotting().line_plot(
        np.array(sc.ns, float), {"median sup error": np.array(sc.medians)}, p, xlabel="N",
        ylabel="sup ||U_N - u||", logx=True, logy=True))


def fixed_point_crossings(f: FiringFunction, hi: float = 2.5) -> list[float]:
    """All A in [0, hi] with G(A) = A (A = 0 always qualifies)."""
    if f.kind == "heaviside":
        try:
            _, lo_root, hi_root = heaviside_fixed_points(f.rho_threshold)
        except NumericalFailure:
            return [0.0]
        return [0.0] + [a for a in (lo_root, hi_root) if 0 < a <= hi]
    m = default_resolution(f)
    roots = [0.0]
    for a, b in sign_changes(f, m, 1e-6, hi):
        roots.append(brentq(lambda x: fixed_point_map(f, x, m) - x, a, b, xtol=1e-14))
    return roots


def cmd_figure(cfg: RunConfig, out: Outputs, args) -> None:
    if args.name == "fixed":
        rho = cfg.model.rho_threshold
        fs = sigmoid(cfg.model.kappa, rho)
        fh = heaviside(rho)
        grid = np.linspace(0.0, 2.5, 501)
        gs = fixed_point_map(fs, grid)
        gh = fixed_point_map(fh, grid)
        out.csv("fixed.csv", ["A", "G_sigmoid", "G_heaviside"], zip(grid, gs, gh))
        marks = [("sigmoid", a) for a in fixed_point_crossings(fs)]
        marks += [("heaviside", a) for a in fixed_point_crossings(fh)]
        out.csv("crossings.csv", ["firing", "A"], marks)
        out.svg("fixed.svg", lambda p: _plotting().line_plot(
            grid, {"G sigmoid": gs, "G heaviside": gh, "identity": grid}, p, xlabel="A",
            ylabel="G(A)", markers=[(a, a) for _, a in marks]))
        return
    sol = solve_amplitude(cfg.firing())
    run = _simulate(cfg, sol.amplitude)
    _write_run(out, run, "", f"{args.name}: N={cfg.model.n}, init={cfg.init.kind}")
    prox = analysis.proximity_report(run, sol)
    final_norm = run.profile(len(run.times) - 1).l2_norm()
    out.csv("summary.csv", ["sup_dist", "window_start", "window_end", "final_l2_norm",
                            "manifold_radius"],
            [[prox.sup_dist, prox.window[0], prox.window[1], final_norm,
              sol.amplitude * math.sqrt(math.pi)]])


FIGURE_PRESETS = {
    "fixed": {"model": {"kappa": 0.1, "rho_threshold": 0.5}},
    "wandering1": {"model": {"n": 500, "kappa": 0.05, "rho_threshold": 0.5},
                   "init": {"kind": "bump-plus-mode2"}, "sim": {"t_end": 500.0}},
    "wandering3": {"model": {"n": 500, "kappa": 0.05, "rho_threshold": 0.5},
                   "init": {"kind": "quarter-bump"}, "sim": {"t_end": 5.0, "snapshot_dt": 0.05}},
}

COMMANDS = {
    "stationary": cmd_stationary,
    "spectrum": cmd_spectrum,
    "nfe": cmd_nfe,
    "simulate": cmd_simulate,
    "phase-diffusion": cmd_phase_diffusion,
    "chaos": cmd_chaos,
    "figure": cmd_figure,
}


# --- argument parsing --------------------------------------------------------------

_OVERRIDES = [
    # flag, section, key, type
    ("--n", "model", "n", int),
    ("--kappa", "model", "kappa", float),
    ("--rho-threshold", "model", "rho_threshold", float),
    ("--firing-kind", "model", "firing_kind", str),
    ("--init", "init", "kind", str),
    ("--init-path", "init", "path", str),
    ("--t-end", "sim", "t_end", float),
    ("--snapshot-dt", "sim", "snapshot_dt", float),
    ("--seed", "sim", "seed", int),
    ("--n-replicas", "sweep", "n_replicas", int),
    ("--parallelism", "sweep", "parallelism", int),
    ("--out", "output", "directory", str),
]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    for flag, section, key, typ in _OVERRIDES:
        kw = {"choices": profiles.KINDS} if flag == "--init" else {}
        if flag == "--firing-kind":
            kw = {"choices": FIRING_KINDS}
        p.add_argument(flag, dest=f"{section}__{key}", type=typ, default=None, **kw)
    p.add_argument("--svg", dest="output__emit_svg", action="store_true", default=None)
    p.add_argument("--no-svg", dest="output__emit_svg", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ringbumps",
                                 description="Wandering bumps in a ring of Hawkes neurons.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("stationary", help="solve G(A) = A")
    p.add_argument("--branch", choices=("largest", "smallest"), default="largest")
    _common(p)
    p = sub.add_parser("spectrum", help="discrete spectrum of the linearised flow")
    p.add_argument("--m", type=int, default=512)
    _common(p)
    p = sub.add_parser("nfe", help="integrate the neural field from the initial profile")
    p.add_argument("--dt", type=float, default=1e-3)
    _common(p)
    p = sub.add_parser("simulate", help="simulate the N-neuron Hawkes system")
    _common(p)
    p = sub.add_parser("phase-diffusion", help="replica sweep and diffusion estimate")
    p.add_argument("--mode", choices=("variational", "isochronal"), default="variational")
    _common(p)
    p = sub.add_parser("chaos", help="finite-N error against the neural field")
    p.add_argument("--ns", type=int, nargs="+", default=[125, 250, 500, 1000])
    p.add_argument("--horizon", type=float, default=10.0)
    _common(p)
    p = sub.add_parser("figure", help="reproduce a figure")
    p.add_argument("name", choices=FIGURES)
    _common(p)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.command == "figure":
        cfg = RunConfig.from_dict(FIGURE_PRESETS[args.name], cfg)
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from exc
        cfg = RunConfig.from_dict(data, cfg)
    overrides: dict = {}
    for name, val in vars(args).items():
        if "__" in name and val is not None:
            section, key = name.split("__", 1)
            overrides.setdefault(section, {})[key] = val
    return RunConfig.from_dict(overrides, cfg).validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve_config(args)
        out = Outputs(cfg, args.command if args.command != "figure" else f"figure {args.name}")
        COMMANDS[args.command](cfg, out, args)
        out.manifest()
    except ConfigError as exc:
        print(f"ringbumps: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RingBumpsError, OSError) as exc:
        print(f"ringbumps: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
