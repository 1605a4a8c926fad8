"""Experiment configuration, orchestration and result files.

A run directory holds ``manifest.json`` (config echo, versions, seeds,
runtimes, timestamps), ``results.csv`` (one row per scheme, sweep value and
seed), ``summary.csv`` (mean and standard deviation per sweep point),
``traces/*.csv``, ``trajectories/*.csv`` and ``gains/*.csv``. Everything
except the manifest is a pure function of the config and seeds.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from . import geometry as geo
from .errors import ConfigError, InfeasibleError, SolverError
from .feasible import AntennaLimits
from .ma_solver import MAParams, MAProblemSpec, MASolution, solve_p1
from .sca import UAVParams, UAVProblemSpec, UAVSolution, solve_p2

log = logging.getLogger(__name__)

SCHEMES = ("ma", "uav")
AXES = ("none", "antennas", "power", "noise", "altitude")

# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ScenarioConfig:
    bob: tuple[float, float, float] = (0.0, 0.0, 0.0)
    eve: tuple[float, float, float] = (400.0, 0.0, 0.0)
    altitude: float = 50.0
    wavelength: float = geo.DEFAULT_WAVELENGTH
    beta0: float | None = None  # (wavelength / 4 pi)^2 when unset
    noise_dbm: float = geo.DEFAULT_NOISE_DBM
    noise_eve_dbm: float | None = None  # same as Bob when unset
    eavesdropper: bool = True
    p_max: float = 1.0
    M: int = 4
    N: int = 40
    dt: float = 1.0
    hover: tuple[float, float] = (200.0, 200.0)
    start: tuple[float, float] = (200.0, 200.0)
    end: tuple[float, float] = (200.0, -200.0)
    v_max: float = 15.0
    a_max: float = 3.0
    d_min: float | None = None  # half a wavelength when unset
    span_wavelengths: float = 4.0
    max_step: float = 0.01  # antenna movement per slot (m)
    fpa_spacing: float | None = None  # half a wavelength when unset


@dataclass(frozen=True)
class MASolverConfig:
    outer_iterations: int = 200
    position_iterations: int = 20
    beam_iterations: int = 30
    mc_samples: int = 1
    beam_rate: float = 0.8
    position_rate: float = 5e-4
    perturbation: float = 0.25


@dataclass(frozen=True)
class UAVSolverConfig:
    sca_iterations: int = 40
    beam_iterations: int = 100
    mc_samples: int = 1
    beam_rate: float = 0.8
    tol: float = 1e-6


@dataclass(frozen=True)
class AnnealConfig:
    temperature0: float = 1.0
    cooling: float = 0.8


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "none"
    values: tuple[float, ...] = ()


@dataclass(frozen=True)
class CalibrationConfig:
    """Scale the noise power so the base MA run hits ``target_asr``."""

    target_asr: float | None = None
    M: int = 4
    p_max: float = 1.0
    altitude: float = 50.0
    seed: int = 0
    rounds: int = 8
    tolerance: float = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    scheme: str = "ma"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    ma: MASolverConfig = field(default_factory=MASolverConfig)
    uav: UAVSolverConfig = field(default_factory=UAVSolverConfig)
    annealing: AnnealConfig = field(default_factory=AnnealConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    gain_slots: tuple[int, ...] = (0,)
    gain_points: int = 721
    out: str = "results"
    jobs: int = 1

    @property
    def schemes(self) -> tuple[str, ...]:
        return SCHEMES if self.scheme == "both" else (self.scheme,)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        d.pop("jobs")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


_SECTIONS = {
    "scenario": ScenarioConfig,
    "ma": MASolverConfig,
    "uav": UAVSolverConfig,
    "annealing": AnnealConfig,
    "sweep": SweepConfig,
    "calibration": CalibrationConfig,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(name: str, value, annotation: str, errors: list[str]):
    """Convert a YAML value to the field's type; append to ``errors`` on mismatch."""
    optional = "None" in annotation
    if value is None:
        if optional:
            return None
        errors.append(f"{name}: must not be null")
        return None
    base = annotation.replace(" | None", "")
    try:
        if base.startswith("tuple"):
            if not isinstance(value, (list, tuple)):
                raise TypeError("expected a list")
            item = int if "int" in base else float
            out = tuple(_scalar(v, item) for v in value)
            if "..." not in base and len(out) != base.count(",") + 1:
                raise TypeError(f"expected {base.count(',') + 1} entries")
            return out
        if base == "int":
            return _scalar(value, int)
        if base == "float":
            return _scalar(value, float)
        if base == "bool":
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if base == "str":
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
    except (TypeError, ValueError) as exc:
        errors.append(f"{name}: {exc} (got {value!r})")
        return None
    raise AssertionError(f"unhandled annotation {annotation}")


def _scalar(v, kind):
    if isinstance(v, bool):
        raise TypeError(f"expected {kind.__name__}")
    if kind is int:
        if isinstance(v, float) and v.is_integer():
            return int(v)
        if not isinstance(v, int):
            raise TypeError("expected an integer")
        return v
    if not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _build(cls, data, prefix: str, errors: list[str]):
    if not isinstance(data, dict):
        errors.append(f"{prefix or 'config'}: expected a mapping")
        return cls()
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            errors.append(f"{prefix}{key}: unknown key")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        if prefix == "" and name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], data[name], f"{name}.", errors)
            continue
        v = _coerce(prefix + name, data[name], str(f.type), errors)
        if v is not None or "None" in str(f.type):
            kwargs[name] = v
    return cls(**kwargs)


def config_errors(cfg: ExperimentConfig) -> list[str]:
    """Every range or consistency problem in ``cfg``."""
    e: list[str] = []
    s = cfg.scenario

    def need(ok, msg):
        if not ok:
            e.append(msg)

    need(cfg.scheme in SCHEMES + ("both",), f"scheme: must be ma, uav or both (got {cfg.scheme!r})")
    need(len(cfg.seeds) > 0, "seeds: must be non-empty")
    need(all(sd >= 0 for sd in cfg.seeds), "seeds: must be >= 0")
    need(len(set(cfg.seeds)) == len(cfg.seeds), "seeds: duplicates")
    need(1 <= s.M <= 16, f"scenario.M: must lie in [1, 16] (got {s.M})")
    need(1 <= s.N <= 200, f"scenario.N: must lie in [1, 200] (got {s.N})")
    need(0 < s.p_max <= 100, f"scenario.p_max: must lie in (0, 100] W (got {s.p_max})")
    need(0 < s.altitude <= 1000, f"scenario.altitude: must lie in (0, 1000] m (got {s.altitude})")
    need(s.wavelength > 0, "scenario.wavelength: must be > 0")
    need(s.beta0 is None or s.beta0 > 0, "scenario.beta0: must be > 0")
    need(-200 <= s.noise_dbm <= 30, f"scenario.noise_dbm: must lie in [-200, 30] (got {s.noise_dbm})")
    need(s.noise_eve_dbm is None or -200 <= s.noise_eve_dbm <= 30, "scenario.noise_eve_dbm: must lie in [-200, 30]")
    need(s.dt > 0, "scenario.dt: must be > 0")
    need(s.v_max > 0, "scenario.v_max: must be > 0")
    need(s.a_max >= 0, "scenario.a_max: must be >= 0")
    need(s.d_min is None or s.d_min >= 0, "scenario.d_min: must be >= 0")
    need(s.span_wavelengths > 0, "scenario.span_wavelengths: must be > 0")
    need(s.max_step > 0, "scenario.max_step: must be > 0")
    need(s.fpa_spacing is None or s.fpa_spacing > 0, "scenario.fpa_spacing: must be > 0")
    for sec, obj in (("ma", cfg.ma), ("uav", cfg.uav)):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if f.name == "perturbation":
                need(v >= 0, f"{sec}.{f.name}: must be >= 0")
            else:
                need(v > 0, f"{sec}.{f.name}: must be > 0")
    need(cfg.annealing.temperature0 > 0, "annealing.temperature0: must be > 0")
    need(0 < cfg.annealing.cooling < 1, f"annealing.cooling: must lie in (0, 1) (got {cfg.annealing.cooling})")
    sw = cfg.sweep
    need(sw.axis in AXES, f"sweep.axis: must be one of {', '.join(AXES)} (got {sw.axis!r})")
    if sw.axis != "none":
        need(len(sw.values) > 0, "sweep.values: must be non-empty for a sweep axis")
        need(len(set(sw.values)) == len(sw.values), "sweep.values: duplicates")
    if sw.axis == "antennas":
        need(all(float(v).is_integer() and 1 <= v <= 16 for v in sw.values), "sweep.values: antenna counts must be integers in [1, 16]")
    if sw.axis == "power":
        need(all(0 < v <= 100 for v in sw.values), "sweep.values: powers must lie in (0, 100] W")
    if sw.axis == "noise":
        need(all(-200 <= v <= 30 for v in sw.values), "sweep.values: noise levels must lie in [-200, 30] dBm")
    if sw.axis == "altitude":
        need(all(0 < v <= 1000 for v in sw.values), "sweep.values: altitudes must lie in (0, 1000] m")
    c = cfg.calibration
    need(c.target_asr is None or c.target_asr > 0, "calibration.target_asr: must be > 0")
    need(c.rounds >= 1 and c.tolerance > 0, "calibration.rounds and tolerance: must be positive")
    need(1 <= c.M <= 16 and c.p_max > 0 and c.altitude > 0, "calibration: M, p_max and altitude out of range")
    need(all(sl >= 0 for sl in cfg.gain_slots), "gain_slots: must be >= 0")
    need(cfg.gain_points >= 3, "gain_points: must be >= 3")
    need(cfg.jobs >= 1, "jobs: must be >= 1")
    if e:
        return e
    # cross-field checks on every scenario the run will build
    for value in (sw.values if sw.axis != "none" else (None,)):
        sc = scenario_at(cfg, sw.axis, value)
        lo, hi = 0.0, sc.span_wavelengths * sc.wavelength
        d_min = sc.wavelength / 2 if sc.d_min is None else sc.d_min
        need((sc.M - 1) * d_min <= hi - lo + 1e-15,
             f"scenario: {sc.M} antennas at spacing {d_min:.4g} m do not fit in {hi:.4g} m")
        if "uav" in cfg.schemes:
            speed = math.dist(sc.start, sc.end) / (sc.N * sc.dt)
            need(speed <= sc.v_max * (1 + 1e-12),
                 f"scenario: straight flight needs {speed:.4g} m/s > v_max = {sc.v_max} m/s (N={sc.N}, dt={sc.dt})")
    return sorted(set(e), key=e.index)


def parse_config(data: dict | None) -> ExperimentConfig:
    """Build and validate a config; raises ConfigError listing every problem."""
    errors: list[str] = []
    cfg = _build(ExperimentConfig, data or {}, "", errors)
    # fields that failed to parse keep their defaults, so range checks still apply to the rest
    problems = errors + [p for p in config_errors(cfg) if p not in errors]
    if problems:
        raise ConfigError(problems)
    return cfg


def loads_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return parse_config(data)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads_config(text)


# ---------------------------------------------------------------------------
# Building problems


def scenario_at(cfg: ExperimentConfig, axis: str, value) -> ScenarioConfig:
    s = cfg.scenario
    if axis == "antennas":
        return replace(s, M=int(value))
    if axis == "power":
        return replace(s, p_max=float(value))
    if axis == "noise":
        return replace(s, noise_dbm=float(value), noise_eve_dbm=None if s.noise_eve_dbm is None else float(value))
    if axis == "altitude":
        return replace(s, altitude=float(value))
    return s


def build_geometry(s: ScenarioConfig, noise_scale: float = 1.0) -> geo.ScenarioGeometry:
    nb = geo.dbm_to_watts(s.noise_dbm) * noise_scale
    if not s.eavesdropper:
        ne = math.inf
    elif s.noise_eve_dbm is None:
        ne = nb
    else:
        ne = geo.dbm_to_watts(s.noise_eve_dbm) * noise_scale
    return geo.ScenarioGeometry(
        bob=geo.Position3D(*s.bob),
        eve=geo.Position3D(*s.eve),
        altitude_H=s.altitude,
        wavelength=s.wavelength,
        beta0=geo.free_space_beta0(s.wavelength) if s.beta0 is None else s.beta0,
        noise_bob=nb,
        noise_eve=ne,
        p_max=s.p_max,
    )


def ma_spec(cfg: ExperimentConfig, s: ScenarioConfig, seed: int, noise_scale: float = 1.0) -> MAProblemSpec:
    m = cfg.ma
    d_min = s.wavelength / 2 if s.d_min is None else s.d_min
    limits = AntennaLimits(0.0, s.span_wavelengths * s.wavelength, d_min, s.max_step)
    params = MAParams(
        outer_iterations=m.outer_iterations, position_iterations=m.position_iterations,
        beam_iterations=m.beam_iterations, mc_samples=m.mc_samples, beam_rate=m.beam_rate,
        position_rate=m.position_rate, temperature0=cfg.annealing.temperature0,
        cooling=cfg.annealing.cooling, perturbation=m.perturbation,
    )
    return MAProblemSpec(build_geometry(s, noise_scale), s.N, s.M, limits, tuple(s.hover), params, seed)


def uav_spec(cfg: ExperimentConfig, s: ScenarioConfig, seed: int, noise_scale: float = 1.0) -> UAVProblemSpec:
    u = cfg.uav
    params = UAVParams(
        sca_iterations=u.sca_iterations, beam_iterations=u.beam_iterations, mc_samples=u.mc_samples,
        beam_rate=u.beam_rate, temperature0=cfg.annealing.temperature0, cooling=cfg.annealing.cooling, tol=u.tol,
    )
    return UAVProblemSpec(build_geometry(s, noise_scale), s.N, s.M, s.dt, tuple(s.start), tuple(s.end),
                          s.v_max, s.a_max, s.fpa_spacing, params, seed)


def solve(cfg: ExperimentConfig, scheme: str, s: ScenarioConfig, seed: int, noise_scale: float = 1.0):
    if scheme == "ma":
        return solve_p1(ma_spec(cfg, s, seed, noise_scale))
    if scheme == "uav":
        return solve_p2(uav_spec(cfg, s, seed, noise_scale))
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Calibration


@dataclass(frozen=True)
class Calibration:
    noise_scale: float  # multiplies both noise powers
    target_asr: float
    achieved_asr: float
    rounds: int


def calibrate_noise(cfg: ExperimentConfig) -> Calibration:
    """Fixed-point search for a common noise scale matching the target MA rate.

    Each round sets scale <- scale * (2^asr - 1) / (2^target - 1), which is
    exact when the rate behaves like log2(1 + c / noise).
    """
    c = cfg.calibration
    if c.target_asr is None:
        return Calibration(1.0, math.nan, math.nan, 0)
    s = replace(cfg.scenario, M=c.M, p_max=c.p_max, altitude=c.altitude)
    scale = 1.0
    asr = solve(cfg, "ma", s, c.seed, scale).asr
    rounds = 0
    while rounds < c.rounds and abs(asr - c.target_asr) > c.tolerance:
        if asr <= 0:
            raise SolverError("calibration run produced zero secrecy rate")
        scale *= (2.0**asr - 1.0) / (2.0**c.target_asr - 1.0)
        asr = solve(cfg, "ma", s, c.seed, scale).asr
        rounds += 1
        log.info("calibration round %d: noise scale %.6g -> ASR %.4f", rounds, scale, asr)
    return Calibration(scale, c.target_asr, asr, rounds)


# ---------------------------------------------------------------------------
# Records and CSV output


def compute_gap(asr_ma: float, asr_uav: float) -> float:
    if not (math.isfinite(asr_ma) and math.isfinite(asr_uav)):
        raise ValueError("gap needs finite rates")
    return asr_ma - asr_uav


@dataclass
class ResultRecord:
    config_hash: str
    scheme: str
    axis: str
    value: float | None
    seed: int
    asr: float | None
    gap: float | None = None
    runtime: float = 0.0  # seconds; written to the manifest only
    trace_file: str = ""
    status: str = "ok"


RESULT_COLUMNS = ["config_hash", "scheme", "axis", "value", "seed", "asr", "gap", "trace_file", "status"]
SUMMARY_COLUMNS = ["scheme", "axis", "value", "n", "asr_mean", "asr_std", "gap_mean", "gap_std"]
MA_TRACE_COLUMNS = ["iteration", "candidate", "objective", "best", "temperature", "accepted"]
UAV_TRACE_COLUMNS = ["iteration", "surrogate_before", "surrogate_after", "candidate", "objective", "best",
                     "temperature", "accepted"]
TRAJECTORY_COLUMNS = ["slot", "x", "y", "speed", "acceleration"]
GAIN_COLUMNS = ["cos_alpha", "gain_db"]
MARKER_COLUMNS = ["user", "cos_alpha", "gain_db"]
GAIN2D_COLUMNS = ["theta_deg", "phi_deg", "cos_alpha", "gain_db"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        if len(r) != len(columns):
            raise ValueError(f"row has {len(r)} fields, expected {len(columns)}")
        w.writerow([_fmt(v) for v in r])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _tag(scheme: str, axis: str, value, seed: int) -> str:
    v = "base" if value is None else _fmt(float(value)).replace("-", "m").replace(".", "p")
    return f"{scheme}_{axis}_{v}_seed{seed}"


def trace_rows(solution) -> tuple[list[str], list[list]]:
    if isinstance(solution, MASolution):
        return MA_TRACE_COLUMNS, [[r.iteration, r.candidate, r.objective, r.best, r.temperature, r.accepted]
                                  for r in solution.trace]
    return UAV_TRACE_COLUMNS, [[r.iteration, r.surrogate_before, r.surrogate_after, r.candidate, r.objective,
                                r.best, r.temperature, r.accepted] for r in solution.trace]


def trajectory_rows(traj) -> list[list]:
    """Waypoint table: speed over the segment ending at the waypoint, acceleration centred on it."""
    q = traj.waypoints
    v = np.linalg.norm(np.diff(q, axis=0), axis=1) / traj.dt
    a = np.linalg.norm(np.diff(q, 2, axis=0), axis=1) / traj.dt**2
    rows = []
    for n in range(q.shape[0]):
        rows.append([n, q[n, 0], q[n, 1], v[n - 1] if n > 0 else None,
                     a[n - 1] if 0 < n < q.shape[0] - 1 else None])
    return rows


@dataclass
class PointResult:
    record: ResultRecord
    solution: Any = None


def _run_point(args) -> PointResult:
    cfg, scheme, axis, value, seed, scale, out = args
    rec = ResultRecord(cfg.hash(), scheme, axis, value, seed, None)
    s = scenario_at(cfg, axis, value)
    t0 = time.perf_counter()
    try:
        sol = solve(cfg, scheme, s, seed, scale)
    except (SolverError, InfeasibleError, ValueError, FloatingPointError) as exc:
        rec.runtime = time.perf_counter() - t0
        rec.status = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
        log.error("%s %s=%s seed %d failed: %s", scheme, axis, value, seed, exc)
        return PointResult(rec)
    rec.runtime = time.perf_counter() - t0
    rec.asr = sol.asr
    tag = _tag(scheme, axis, value, seed)
    if out is not None:
        cols, rows = trace_rows(sol)
        rec.trace_file = f"traces/{tag}.csv"
        write_csv(Path(out) / rec.trace_file, cols, rows)
        if isinstance(sol, UAVSolution):
            write_csv(Path(out) / "trajectories" / f"{tag}.csv", TRAJECTORY_COLUMNS, trajectory_rows(sol.trajectory))
    log.info("%s %s=%s seed %d: ASR %.4f (%.1fs)", scheme, axis, value, seed, sol.asr, rec.runtime)
    return PointResult(rec, sol)


def _execute(cfg: ExperimentConfig, tasks: list, jobs: int) -> list[PointResult]:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_point, tasks))
    return [_run_point(t) for t in tasks]


def attach_gaps(records: list[ResultRecord]) -> None:
    by_key = {(r.scheme, r.value, r.seed): r for r in records}
    for r in records:
        other = by_key.get(("uav" if r.scheme == "ma" else "ma", r.value, r.seed))
        if other is None or r.asr is None or other.asr is None:
            continue
        ma, uav = (r, other) if r.scheme == "ma" else (other, r)
        r.gap = compute_gap(ma.asr, uav.asr)


def summarize(records: list[ResultRecord]) -> list[list]:
    rows = []
    keys = sorted({(r.scheme, r.axis, r.value) for r in records},
                  key=lambda k: (SCHEMES.index(k[0]), -math.inf if k[2] is None else k[2]))
    for scheme, axis, value in keys:
        group = [r for r in records if (r.scheme, r.axis, r.value) == (scheme, axis, value) and r.asr is not None]
        asr = np.array([r.asr for r in group])
        gaps = np.array([r.gap for r in group if r.gap is not None])
        rows.append([
            scheme, axis, value, len(group),
            float(asr.mean()) if asr.size else None, float(asr.std()) if asr.size else None,
            float(gaps.mean()) if gaps.size else None, float(gaps.std()) if gaps.size else None,
        ])
    return rows


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, records: list[ResultRecord],
                   calibration: Calibration, started: datetime, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seeds": list(cfg.seeds),
        "versions": {
            "micromacro": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "yaml": yaml.__version__,
        },
        "rng": "numpy PCG64 seeded with the run seed",
        "calibration": dataclasses.asdict(calibration) | {
            "noise_bob_watts": geo.dbm_to_watts(cfg.scenario.noise_dbm) * calibration.noise_scale,
        },
        "runtimes": [
            {"scheme": r.scheme, "axis": r.axis, "value": r.value, "seed": r.seed,
             "seconds": round(r.runtime, 3), "status": r.status}
            for r in records
        ],
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _records_sorted(records):
    return sorted(records, key=lambda r: (-math.inf if r.value is None else r.value, SCHEMES.index(r.scheme), r.seed))


def _write_results(out: Path, records: list[ResultRecord]) -> None:
    write_csv(out / "results.csv", RESULT_COLUMNS,
              [[r.config_hash, r.scheme, r.axis, r.value, r.seed, r.asr, r.gap, r.trace_file, r.status]
               for r in _records_sorted(records)])
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summarize(records))


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class RunOutput:
    records: list[ResultRecord]
    solutions: dict  # (scheme, value, seed) -> solution
    calibration: Calibration
    out: Path | None

    @property
    def failed(self) -> bool:
        return any(r.status != "ok" for r in self.records)


def _run(cfg: ExperimentConfig, axis: str, values, out, command: str, calibration: Calibration | None = None) -> RunOutput:
    started = datetime.now(timezone.utc)
    out = None if out is None else Path(out)
    calibration = calibration or calibrate_noise(cfg)
    tasks = [(cfg, scheme, axis, v, seed, calibration.noise_scale, out)
             for v in values for scheme in cfg.schemes for seed in cfg.seeds]
    results = _execute(cfg, tasks, cfg.jobs)
    records = [p.record for p in results]
    attach_gaps(records)
    solutions = {(p.record.scheme, p.record.value, p.record.seed): p.solution for p in results}
    if out is not None:
        _write_results(out, records)
        write_manifest(out, cfg, command, records, calibration, started)
    return RunOutput(_records_sorted(records), solutions, calibration, out)


@dataclass(frozen=True)
class ConvergenceSummary:
    scheme: str
    seed: int
    final: float
    first_within_1pct: int  # first iteration whose best-so-far is within 1% of the final value


def convergence_summary(scheme: str, seed: int, solution) -> ConvergenceSummary:
    best = [r.best for r in solution.trace]
    final = best[-1] if best else solution.asr
    k = next((r.iteration for r in solution.trace if abs(r.best - final) <= 0.01 * abs(final)), 0)
    return ConvergenceSummary(scheme, seed, final, k)


def run_convergence(cfg: ExperimentConfig, out=None, calibration: Calibration | None = None):
    """Solve the base scenario for every scheme and seed and keep the traces."""
    res = _run(cfg, "none", [None], out, "converge", calibration)
    summaries = [convergence_summary(s, seed, sol) for (s, _, seed), sol in sorted(
        res.solutions.items(), key=lambda kv: (SCHEMES.index(kv[0][0]), kv[0][2])) if sol is not None]
    if res.out is not None:
        write_csv(res.out / "convergence.csv", ["scheme", "seed", "final", "first_within_1pct"],
                  [[c.scheme, c.seed, c.final, c.first_within_1pct] for c in summaries])
    return res, summaries


def run_sweep(cfg: ExperimentConfig, out=None, calibration: Calibration | None = None) -> RunOutput:
    sw = cfg.sweep
    values = [None] if sw.axis == "none" else sorted(float(v) for v in sw.values)
    return _run(cfg, sw.axis, values, out, "sweep", calibration)


def run_gap(cfg: ExperimentConfig, out=None, calibration: Calibration | None = None) -> RunOutput:
    return run_sweep(replace(cfg, scheme="both"), out, calibration)


# ---------------------------------------------------------------------------
# Gain patterns


def gain_pattern(w, antenna_x, wavelength: float, cos_b: float, cos_e: float, points: int = 721,
                 floor_db: float = geo.GAIN_FLOOR_DB):
    """1-D gain over cos(alpha) in [-1, 1], the two user markers and a 2-D (theta, phi) grid."""
    grid = np.linspace(-1.0, 1.0, points)
    gain = geo.beam_gain_grid(w, antenna_x, wavelength, grid, floor_db)
    markers = geo.beam_gain_grid(w, antenna_x, wavelength, [cos_b, cos_e], floor_db)
    theta = np.linspace(0.0, 90.0, 91)
    phi = np.linspace(-180.0, 180.0, 73)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    cos2d = np.sin(np.radians(T)) * np.cos(np.radians(P))
    g2d = geo.beam_gain_grid(w, antenna_x, wavelength, cos2d.ravel(), floor_db).reshape(cos2d.shape)
    return {
        "grid": grid, "gain_db": gain,
        "markers": {geo.BOB: (cos_b, float(markers[0])), geo.EVE: (cos_e, float(markers[1]))},
        "theta_deg": T, "phi_deg": P, "cos2d": cos2d, "gain2d_db": g2d,
    }


def solution_slot(cfg: ExperimentConfig, scheme: str, s: ScenarioConfig, solution, n: int):
    """Antenna positions, beam and user direction cosines for slot ``n``."""
    g = build_geometry(s)
    if scheme == "ma":
        X = solution.antenna_schedule.positions[n]
        uav = g.uav_at(*s.hover)
        cb, ce = geo.direction_cosine(uav, g.bob), geo.direction_cosine(uav, g.eve)
    else:
        spec = uav_spec(cfg, s, 0)
        X = spec.antenna_x
        xy = solution.trajectory.slot_xy[n]
        uav = g.uav_at(*xy)
        cb, ce = geo.direction_cosine(uav, g.bob), geo.direction_cosine(uav, g.eve)
    return X, solution.beam_schedule.beams[n], cb, ce


def run_gain_pattern(cfg: ExperimentConfig, solution=None, scheme: str | None = None, seed: int | None = None,
                     out=None, calibration: Calibration | None = None) -> dict:
    """Gain grids for the requested slots of one solution (solved inline when not given)."""
    scheme = scheme or cfg.schemes[0]
    seed = cfg.seeds[0] if seed is None else seed
    s = cfg.scenario
    if solution is None:
        calibration = calibration or calibrate_noise(cfg)
        solution = solve(cfg, scheme, s, seed, calibration.noise_scale)
    patterns = {}
    N = solution.beam_schedule.beams.shape[0]
    for n in cfg.gain_slots:
        if n >= N:
            raise ValueError(f"gain slot {n} out of range for {N} slots")
        X, w, cb, ce = solution_slot(cfg, scheme, s, solution, n)
        pat = gain_pattern(w, X, s.wavelength, cb, ce, cfg.gain_points)
        patterns[n] = pat
        if out is not None:
            base = Path(out) / "gains" / f"{scheme}_seed{seed}_slot{n}"
            write_csv(base.with_name(base.name + ".csv"), GAIN_COLUMNS, zip(pat["grid"], pat["gain_db"]))
            write_csv(base.with_name(base.name + "_markers.csv"), MARKER_COLUMNS,
                      [[u, c, gdb] for u, (c, gdb) in pat["markers"].items()])
            write_csv(base.with_name(base.name + "_2d.csv"), GAIN2D_COLUMNS,
                      zip(pat["theta_deg"].ravel(), pat["phi_deg"].ravel(), pat["cos2d"].ravel(), pat["gain2d_db"].ravel()))
    return {"solution": solution, "patterns": patterns}
