"""Benchmark scenarios, run orchestration and output files."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .constitutive import MaterialParams, scaled_lame
from .mesh import FlustrukGeometry, GeometryError, build_flustruk_mesh, channel_mesh, write_vtk
from .timestepper import (FixedPointOptions, Forcing, StepFailure, advance_with_retry,
                          energy_audit, energy_of, initial_state, min_solid_area_ratio,
                          tip_tracker, wall_gap)

log = logging.getLogger(__name__)

CSV_FIELDS = ("t", "tip_x", "tip_y", "E_kinetic", "E_elastic", "E_dissip_cum", "E_total",
              "fp_iterations", "min_solid_area_ratio")
SCENARIOS = ("fsi2star", "fsi3", "rest", "poiseuille", "bent")


class ConfigError(ValueError):
    pass


class InsufficientOscillationError(ValueError):
    pass


class ContactError(RuntimeError):
    """The flag came closer to a channel wall than half its thickness."""


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run.

    ``mu_s`` is the shear modulus in Pa as quoted for the benchmarks; the
    solver works with density-scaled Lame coefficients derived from it with
    Poisson ratio ``sigma``. ``lambda_override`` / ``mu_override`` replace the
    derived (scaled) values when set.
    """

    scenario: str
    geometry: FlustrukGeometry = field(default_factory=FlustrukGeometry)
    mu_s: float = 2.0e6
    sigma: float = 0.4
    rho_s: float = 1.0e3
    rho_f: float = 1.0e3
    nu_f: float = 1.0e-3
    lambda_override: float | None = None
    mu_override: float | None = None
    gravity: tuple = (0.0, 0.0)
    epsilon0: float = 1.0e-2
    ubar: float = 0.0
    ramp_time: float = 0.0
    dt: float = 0.005
    t_end: float = 1.0
    out_dir: str = "out"
    snapshot_stride: int = 20
    fp_tol: float = 1.0e-6
    fp_max_iter: int = 30
    energy_stable: bool = True
    seed: int = 0
    tip_deflection: float = 0.0
    max_halvings: int = 3

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.t_end >= self.dt:
            raise ConfigError("t_end must be at least dt")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")
        if self.fp_max_iter < 1 or not self.fp_tol > 0:
            raise ConfigError("fixed-point tolerance and max_iter must be positive")
        if self.ramp_time < 0:
            raise ConfigError("ramp_time must be non-negative")
        for name in ("mu_s", "rho_s", "rho_f", "nu_f", "epsilon0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.sigma < 0.5:
            raise ConfigError("sigma must lie in (0, 0.5)")
        try:
            self.geometry.validate()
        except GeometryError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @property
    def n_steps(self):
        return max(1, int(round(self.t_end / self.dt)))

    def lame(self):
        lam, mu = scaled_lame(self.mu_s, self.sigma, self.rho_s)
        if self.lambda_override is not None:
            lam = self.lambda_override
        if self.mu_override is not None:
            mu = self.mu_override
        return lam, mu

    def material(self, mesh):
        lam, mu = self.lame()
        mu_f = self.rho_f * self.nu_f
        eps = fem.stabilization_epsilon(mesh, mu_f, self.epsilon0)
        return MaterialParams(lam, mu, self.rho_s, mu_f, self.rho_f, eps, tuple(self.gravity))

    def inflow_scale(self, t):
        if self.ramp_time <= 0:
            return 1.0
        return float(min(1.0, t / self.ramp_time))


# -- scenarios -------------------------------------------------------------

def scenario_fsi2star(**overrides):
    """Flag falling under its own weight in still fluid."""
    cfg = RunConfig(scenario="fsi2star", mu_s=0.135e6, rho_s=2.0e4, rho_f=1.0e3, nu_f=1.0e-3,
                    gravity=(0.0, -9.81), ubar=0.0, dt=0.005, t_end=1.0)
    return dataclasses.replace(cfg, **overrides).validate()


def scenario_fsi3(**overrides):
    """Flutter behind the cylinder at mean inflow 2 m/s, ramped over 0.5 s."""
    cfg = RunConfig(scenario="fsi3", mu_s=2.0e6, rho_s=1.0e3, rho_f=1.0e3, nu_f=1.0e-3,
                    ubar=2.0, ramp_time=0.5, dt=0.005, t_end=5.0)
    return dataclasses.replace(cfg, **overrides).validate()


def scenario_rest(**overrides):
    """FSI-3 setup with no inflow: nothing should move."""
    cfg = dataclasses.replace(scenario_fsi3(), scenario="rest", ubar=0.0, ramp_time=0.0,
                              t_end=0.1)
    return dataclasses.replace(cfg, **overrides).validate()


def scenario_bent(**overrides):
    """Free decay of an initially bent flag, no inflow, no gravity."""
    cfg = dataclasses.replace(scenario_fsi3(), scenario="bent", ubar=0.0, ramp_time=0.0,
                              t_end=0.5, tip_deflection=0.05,
                              geometry=FlustrukGeometry(target_vertex_count=600))
    return dataclasses.replace(cfg, **overrides).validate()


def scenario_poiseuille(**overrides):
    """Fluid-only channel with a steady parabolic inflow (one long step)."""
    cfg = RunConfig(scenario="poiseuille", geometry=FlustrukGeometry(target_vertex_count=2000),
                    ubar=1.0, dt=1.0e6, t_end=1.0e6, snapshot_stride=1)
    return dataclasses.replace(cfg, **overrides).validate()


SCENARIO_FACTORIES = {"fsi2star": scenario_fsi2star, "fsi3": scenario_fsi3,
                      "rest": scenario_rest, "poiseuille": scenario_poiseuille,
                      "bent": scenario_bent}


def bent_flag_displacement(geom, deflection, n_grid=2001):
    """Pure-bending displacement of the flag, as a function of reference points.

    The centre line keeps its length and bends with curvature decreasing
    linearly from the cylinder to the tip (the static cantilever shape);
    cross sections stay normal to it. The curvature scale is chosen so the
    centre line's tip moves by ``deflection`` vertically.
    """
    from scipy.integrate import cumulative_trapezoid
    from scipy.optimize import brentq

    x0 = geom.c + geom.r
    s = np.linspace(0.0, 1.0, n_grid)

    def centreline(A):
        theta = A * (s - 0.5 * s * s)
        px = geom.l * cumulative_trapezoid(np.cos(theta), s, initial=0.0)
        py = geom.l * cumulative_trapezoid(np.sin(theta), s, initial=0.0)
        return theta, px, py

    if deflection == 0:
        A = 0.0
    else:
        if abs(deflection) >= 0.9 * geom.l:
            raise ValueError("deflection too large for a bent flag")
        A = brentq(lambda a: centreline(a)[2][-1] - deflection, -3.0, 3.0, xtol=1e-14)
    theta, px, py = centreline(A)

    def d0(X):
        xi = np.clip((X[:, 0] - x0) / geom.l, 0.0, 1.0)
        eta = X[:, 1] - geom.c
        th = np.interp(xi, s, theta)
        cx = x0 + np.interp(xi, s, px)
        cy = geom.c + np.interp(xi, s, py)
        new = np.column_stack([cx - eta * np.sin(th), cy + eta * np.cos(th)])
        out = new - X
        out[X[:, 0] <= x0] = 0.0
        return out

    return d0


# -- config file -----------------------------------------------------------

_GEOM_KEYS = ("L", "H", "l", "h", "c", "r", "target_vertex_count")


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(float(x)) for x in v)
    return str(v)


def config_to_text(cfg):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["geometry"] = {k: _fmt(getattr(cfg.geometry, k)) for k in _GEOM_KEYS}
    cp["run"] = {f.name: _fmt(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)
                 if f.name != "geometry"}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _parse(kind, text, name):
    text = text.strip()
    try:
        if text.lower() == "none":
            return None
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is tuple:
            return tuple(float(x) for x in text.split(","))
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


_RUN_TYPES = {"scenario": str, "mu_s": float, "sigma": float, "rho_s": float, "rho_f": float,
              "nu_f": float, "lambda_override": float, "mu_override": float, "gravity": tuple,
              "epsilon0": float, "ubar": float, "ramp_time": float, "dt": float, "t_end": float,
              "out_dir": str, "snapshot_stride": int, "fp_tol": float, "fp_max_iter": int,
              "energy_stable": bool, "seed": int, "tip_deflection": float, "max_halvings": int}


def config_from_text(text, base=None):
    """Parse a config document; keys not present keep the values of ``base``
    (or of the named scenario's defaults)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    run = dict(cp["run"]) if cp.has_section("run") else {}
    unknown = set(run) - set(_RUN_TYPES)
    if unknown:
        raise ConfigError(f"unknown keys in [run]: {sorted(unknown)}")
    if base is None:
        name = run.get("scenario", "").strip()
        if name not in SCENARIO_FACTORIES:
            raise ConfigError(f"config must name a scenario, one of {SCENARIOS}")
        base = SCENARIO_FACTORIES[name]()
    values = {k: _parse(_RUN_TYPES[k], v, k) for k, v in run.items()}
    geom = base.geometry
    if cp.has_section("geometry"):
        g = dict(cp["geometry"])
        unknown = set(g) - set(_GEOM_KEYS)
        if unknown:
            raise ConfigError(f"unknown keys in [geometry]: {sorted(unknown)}")
        gv = {k: _parse(int if k == "target_vertex_count" else float, v, k) for k, v in g.items()}
        geom = dataclasses.replace(geom, **gv)
    return dataclasses.replace(base, geometry=geom, **values).validate()


def load_config(path, base=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_text(text, base)


def content_hash(data):
    """Git blob hash of ``data`` (str or bytes)."""
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# -- frequency estimate ----------------------------------------------------

def estimate_frequency_amplitude(series, dt, discard=0.4):
    """Frequency (Hz) and amplitude of an oscillating signal sampled every ``dt``.

    The first ``discard`` fraction of the samples is dropped as transient.
    The frequency comes from the mean spacing of local maxima, the
    amplitude is half the peak-to-peak range of the retained window.
    """
    from scipy.signal import find_peaks

    y = np.asarray(series, dtype=float)
    y = y[int(np.floor(discard * len(y))):]
    if y.size < 3:
        raise InsufficientOscillationError("series too short")
    span = float(np.max(y) - np.min(y))
    if not span > 0:
        raise InsufficientOscillationError("series is constant")
    peaks, _ = find_peaks(y, prominence=0.25 * span)
    if len(peaks) < 3:
        raise InsufficientOscillationError(f"found {len(peaks)} peaks, need at least 3")
    period = float(np.mean(np.diff(peaks))) * dt
    return 1.0 / period, 0.5 * span


# -- run -------------------------------------------------------------------

@dataclass
class RunResult:
    status: int
    message: str
    out_dir: str
    rows: list
    verdicts: list


def build_mesh(cfg):
    g = cfg.geometry
    if cfg.scenario == "poiseuille":
        h = 1.4 * np.sqrt(g.L * g.H / g.target_vertex_count)
        return channel_mesh(g.L, g.H, h)
    return build_flustruk_mesh(g)


def _row(state, cfg, tip_id, energy, fp_iter):
    if tip_id is None:
        tip = (float("nan"), float("nan"))
    else:
        tip = tip_tracker(state, tip_id)
    return {"t": state.time, "tip_x": tip[0], "tip_y": tip[1], "E_kinetic": energy.kinetic,
            "E_elastic": energy.elastic, "E_dissip_cum": energy.dissipation_cumulative,
            "E_total": energy.total, "fp_iterations": fp_iter,
            "min_solid_area_ratio": min_solid_area_ratio(state)}


def _write_row(writer, row):
    writer.writerow([row[k] if k == "fp_iterations" else repr(float(row[k])) for k in CSV_FIELDS])


def write_snapshot(path, state):
    mesh = state.mesh
    region = np.zeros(mesh.n_vertices)
    region[mesh.solid_vertices] = 1.0
    write_vtk(path, mesh, point_data={"velocity": state.u, "pressure": state.p,
                                      "displacement": state.d, "region": region},
              cell_data={"density": state.rho})


def forcing_at(cfg, t):
    inflow = fem.InflowProfile(cfg.ubar, cfg.geometry.H, scale=cfg.inflow_scale(t))
    g = tuple(cfg.gravity)
    return Forcing(inflow=inflow, gravity=g if any(g) else None)


def run(cfg, progress=None, on_step=None):
    """Run ``cfg`` and write its artifacts into ``cfg.out_dir``.

    ``progress(n, row)`` is called after each step with the CSV row,
    ``on_step(n, state, audit)`` with the new state and its energy report
    (``n = 0`` for the initial state, with ``audit=None``).

    Returns a ``RunResult``; ``status`` is 0 on success and 3 when a step
    failed after all time-step halvings or the flag hit a wall. Output
    errors raise ``OSError``.
    """
    cfg.validate()
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    cfg_text = config_to_text(cfg)
    _write_manifest(out, cfg_text, "running")
    mesh = build_mesh(cfg)
    mat = cfg.material(mesh)
    d0 = None
    if cfg.tip_deflection and cfg.scenario != "poiseuille":
        d0 = bent_flag_displacement(cfg.geometry, cfg.tip_deflection)
    state = initial_state(mesh, mat, d0=d0)
    tip_id = mesh.meta.get("tip_id")
    fp = FixedPointOptions(tolerance=cfg.fp_tol, max_iter=cfg.fp_max_iter)
    rows, verdicts = [], []
    status, message = 0, "completed"
    csv_path = os.path.join(out, "timeseries.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        row = _row(state, cfg, tip_id, energy_of(state, mat), 0)
        rows.append(row)
        _write_row(writer, row)
        write_snapshot(os.path.join(out, "snap_000000.vtk"), state)
        if on_step is not None:
            on_step(0, state, None)
        for n in range(1, cfg.n_steps + 1):
            t_next = n * cfg.dt
            forcing = forcing_at(cfg, t_next)
            try:
                new, reports = advance_with_retry(state, mat, cfg.dt, cfg.max_halvings, fp=fp,
                                                  energy_stable=cfg.energy_stable,
                                                  forcing=forcing)
            except StepFailure as exc:
                status, message = 3, f"step {n} (t={t_next:.6g}) failed: {exc}"
                log.error(message)
                break
            new = dataclasses.replace(new, time=t_next, step_index=n)
            audit = energy_audit(state, new, mat, cfg.dt, forcing)
            verdicts.append(audit.verdict)
            state = new
            row = _row(state, cfg, tip_id, audit, sum(r.iterations for r in reports))
            rows.append(row)
            _write_row(writer, row)
            fh.flush()
            if n % cfg.snapshot_stride == 0 or n == cfg.n_steps:
                write_snapshot(os.path.join(out, f"snap_{n:06d}.vtk"), state)
            if progress is not None:
                progress(n, row)
            if on_step is not None:
                on_step(n, state, audit)
            if mesh.solid_mask.any() and wall_gap(state.mesh) < 0.5 * cfg.geometry.h:
                status, message = 3, f"flag within h/2 of a wall at t={t_next:.6g}; contact is not modelled"
                log.error(message)
                break
    plot_timeseries(csv_path, out)
    failures = sum(v == "FAIL" for v in verdicts)
    _write_manifest(out, cfg_text, message, extra={"steps": len(rows) - 1,
                                                   "energy_failures": failures})
    return RunResult(status, message, out, rows, verdicts)


def _write_manifest(out, cfg_text, message, extra=None):
    from . import __version__

    lines = [f"eulerfsi {__version__}", f"config_sha1 {content_hash(cfg_text)}",
             f"status {message}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k} {v}")
    lines += ["", cfg_text]
    with open(os.path.join(out, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines))


# -- plots -----------------------------------------------------------------

def read_timeseries(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_FIELDS:
            raise ValueError(f"unexpected header in {path}: {header}")
        data = np.array([[float(x) for x in r] for r in reader]).reshape(-1, len(CSV_FIELDS))
    return {k: data[:, i] for i, k in enumerate(CSV_FIELDS)}


def plot_timeseries(csv_path, out_dir):
    """Write ``tip_x.svg``, ``tip_y.svg`` and ``energy.svg`` from a time-series CSV."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed element ids so identical data gives identical files
    matplotlib.rcParams["svg.hashsalt"] = "eulerfsi"
    ts = read_timeseries(csv_path)
    t = ts["t"]
    paths = []
    for key in ("tip_x", "tip_y"):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(t, ts[key], lw=1.2)
        ax.set_xlabel("t [s]")
        ax.set_ylabel(f"{key} [m]")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        p = os.path.join(out_dir, f"{key}.svg")
        fig.savefig(p, metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key, lab in (("E_kinetic", "kinetic"), ("E_elastic", "elastic"),
                     ("E_dissip_cum", "dissipated"), ("E_total", "total")):
        ax.plot(t, ts[key], lw=1.2, label=lab)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("energy [J/m]")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = os.path.join(out_dir, "energy.svg")
    fig.savefig(p, metadata={"Date": None})
    plt.close(fig)
    paths.append(p)
    return paths
