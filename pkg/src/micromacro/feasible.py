"""Constraint sets of the two problems and the projections used by the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InfeasibleError


class Violation(NamedTuple):
    slot: int
    quantity: str
    value: float
    bound: float


# ---------------------------------------------------------------------------
# Beam power


def beam_power(w) -> np.ndarray | float:
    p = np.sum(np.abs(np.asarray(w)) ** 2, axis=-1)
    return float(p) if np.ndim(p) == 0 else p


def project_power(w, p_max: float) -> np.ndarray:
    """Scale each beam (last axis) back onto the power ball if it is outside.

    Beams already inside, including the zero beam, are returned unchanged.
    """
    if not p_max > 0:
        raise ValueError("p_max must be > 0")
    w = np.asarray(w, dtype=complex)
    q = np.sum(w.real**2 + w.imag**2, axis=-1, keepdims=True)
    over = q > p_max
    scale = np.where(over, np.sqrt(p_max / np.where(over, q, 1.0)), 1.0)
    return w * scale


# ---------------------------------------------------------------------------
# Antenna positions


def project_antenna_step(candidate: float, previous: float, max_step: float) -> float:
    if not max_step > 0:
        raise ValueError("max_step must be > 0")
    delta = candidate - previous
    if abs(delta) <= max_step:
        return candidate
    return previous + math.copysign(max_step, delta)


def clamp_bounds(x, lo: float, hi: float):
    if lo > hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    out = np.minimum(np.maximum(x, lo), hi)
    return float(out) if np.ndim(out) == 0 else out


def _sweep(x: list[float], lower: list[float], upper: list[float], gap: float) -> list[float]:
    # Forward push to respect lower bounds and spacing, backward pull to
    # respect upper bounds. Exact whenever some ordered feasible point exists.
    M = len(x)
    out = list(x)
    for m in range(M):
        v = max(out[m], lower[m])
        if m > 0:
            v = max(v, out[m - 1] + gap)
        out[m] = v
    for m in range(M - 1, -1, -1):
        v = min(out[m], upper[m])
        if m < M - 1:
            v = min(v, out[m + 1] - gap)
        out[m] = v
    return out


def _spacing_ok(x, lower, upper, gap, tol=1e-12) -> bool:
    x = np.asarray(x)
    if np.any(x < np.asarray(lower) - tol) or np.any(x > np.asarray(upper) + tol):
        return False
    return bool(np.all(np.diff(x) >= gap - tol))


def enforce_min_spacing(slot_positions, min_spacing: float, bounds: tuple[float, float]) -> np.ndarray:
    """Repair one slot so neighbours are ``min_spacing`` apart inside ``bounds``.

    Element order (by position, ties by index) is preserved. Feasible input
    is returned unchanged.
    """
    lo, hi = bounds
    x = np.asarray(slot_positions, dtype=float)
    M = x.size
    if (M - 1) * min_spacing > hi - lo + 1e-15:
        raise InfeasibleError(
            f"{M} antennas need {(M - 1) * min_spacing:.6g} m but bounds span {hi - lo:.6g} m"
        )
    order = np.argsort(x, kind="stable")
    xs = x[order]
    if _spacing_ok(xs, [lo] * M, [hi] * M, min_spacing):
        return x.copy()
    repaired = _sweep(xs.tolist(), [lo] * M, [hi] * M, min_spacing)
    out = np.empty(M)
    out[order] = repaired
    return out


@dataclass(frozen=True)
class AntennaLimits:
    """Per-element box, minimum spacing and per-slot movement limit (meters)."""

    lo: float
    hi: float
    min_spacing: float
    max_step: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("antenna bounds are empty")
        if not self.max_step > 0:
            raise ValueError("max_step must be > 0")
        if self.min_spacing < 0:
            raise ValueError("min_spacing must be >= 0")

    def check_capacity(self, M: int):
        if (M - 1) * self.min_spacing > self.hi - self.lo + 1e-15:
            raise InfeasibleError(
                f"{M} antennas at spacing {self.min_spacing:.6g} m do not fit in [{self.lo}, {self.hi}]"
            )


def project_slot(candidate, previous, limits: AntennaLimits) -> np.ndarray:
    """Project one slot onto step-limit ∩ bounds ∩ spacing, relative to ``previous``.

    The step clamp and the bounds are intersected into a per-element box and
    a single forward/backward sweep enforces spacing inside it. Elements stay
    in index order; ``previous`` must itself be feasible and ordered.
    """
    prev = np.asarray(previous, dtype=float)
    lower = np.maximum(limits.lo, prev - limits.max_step)
    upper = np.minimum(limits.hi, prev + limits.max_step)
    return np.asarray(_sweep(list(np.asarray(candidate, dtype=float)), lower.tolist(), upper.tolist(), limits.min_spacing))


def project_layout(candidate: np.ndarray, initial: np.ndarray, limits: AntennaLimits) -> np.ndarray:
    """Project an N x M schedule in time order; slot n is projected relative to slot n-1.

    Slots that already satisfy their constraints are left untouched, so the
    sequential fallback only runs from the first violating slot onwards.
    """
    X = np.array(candidate, dtype=float)
    N, M = X.shape
    tol = 1e-13
    n = 0
    while n < N:
        prev = np.vstack([initial[None, :], X[:-1]])[n:]
        cur = X[n:]
        ok = (
            np.all(cur >= limits.lo - tol, axis=1)
            & np.all(cur <= limits.hi + tol, axis=1)
            & np.all(np.abs(cur - prev) <= limits.max_step + tol, axis=1)
        )
        if M > 1:
            ok &= np.all(np.diff(cur, axis=1) >= limits.min_spacing - tol, axis=1)
        bad = np.flatnonzero(~ok)
        if bad.size == 0:
            break
        n += int(bad[0])
        p = initial if n == 0 else X[n - 1]
        X[n] = project_slot(X[n], p, limits)
        n += 1
    return X


def antenna_violations(X: np.ndarray, initial: np.ndarray, limits: AntennaLimits, tol: float = 1e-8) -> list[Violation]:
    X = np.asarray(X, dtype=float)
    out: list[Violation] = []
    prev = np.vstack([np.asarray(initial, dtype=float)[None, :], X[:-1]])
    for n in range(X.shape[0]):
        for m in range(X.shape[1]):
            x = X[n, m]
            if x < limits.lo - tol:
                out.append(Violation(n, f"x[{m}] lower bound", x, limits.lo))
            if x > limits.hi + tol:
                out.append(Violation(n, f"x[{m}] upper bound", x, limits.hi))
            step = abs(x - prev[n, m])
            if step > limits.max_step + tol:
                out.append(Violation(n, f"x[{m}] step", step, limits.max_step))
        gaps = np.diff(np.sort(X[n]))
        for m, g in enumerate(gaps):
            if g < limits.min_spacing - tol:
                out.append(Violation(n, f"spacing[{m}]", float(g), limits.min_spacing))
    return out


def power_violations(W: np.ndarray, p_max: float, rtol: float = 1e-9) -> list[Violation]:
    p = np.atleast_1d(beam_power(W))
    return [Violation(n, "power", float(v), p_max) for n, v in enumerate(p) if v > p_max * (1 + rtol)]


@dataclass(frozen=True)
class AntennaSchedule:
    positions: np.ndarray  # N x M
    initial: np.ndarray  # layout before slot 1
    limits: AntennaLimits

    def violations(self, tol: float = 1e-8) -> list[Violation]:
        return antenna_violations(self.positions, self.initial, self.limits, tol)


@dataclass(frozen=True)
class BeamSchedule:
    beams: np.ndarray  # N x M complex
    p_max: float

    def violations(self, rtol: float = 1e-9) -> list[Violation]:
        return power_violations(self.beams, self.p_max, rtol)


# ---------------------------------------------------------------------------
# UAV kinematics


@dataclass(frozen=True)
class Trajectory:
    """N+1 horizontal waypoints at altitude H; slot n uses waypoint n (n = 1..N)."""

    waypoints: np.ndarray  # (N+1) x 2
    altitude: float
    start: np.ndarray
    end: np.ndarray
    dt: float
    v_max: float
    a_max: float

    @property
    def N(self) -> int:
        return self.waypoints.shape[0] - 1

    @property
    def slot_xy(self) -> np.ndarray:
        return self.waypoints[1:]

    def velocities(self) -> np.ndarray:
        return np.diff(self.waypoints, axis=0) / self.dt

    def accelerations(self) -> np.ndarray:
        return np.diff(self.velocities(), axis=0) / self.dt

    def with_waypoints(self, waypoints: np.ndarray) -> "Trajectory":
        return Trajectory(np.asarray(waypoints, dtype=float), self.altitude, self.start, self.end, self.dt, self.v_max, self.a_max)


def straight_line(start, end, N: int, altitude: float, dt: float, v_max: float, a_max: float) -> Trajectory:
    start = np.asarray(start, dtype=float)[:2]
    end = np.asarray(end, dtype=float)[:2]
    t = np.linspace(0.0, 1.0, N + 1)[:, None]
    return Trajectory(start + t * (end - start), altitude, start, end, dt, v_max, a_max)


def check_kinematics(traj: Trajectory, tol: float = 1e-8) -> list[Violation]:
    if traj.N < 1 or not traj.dt > 0:
        raise ValueError("trajectory needs N >= 1 and dt > 0")
    out: list[Violation] = []
    if np.linalg.norm(traj.waypoints[0] - traj.start) > tol:
        out.append(Violation(0, "start pin", float(np.linalg.norm(traj.waypoints[0] - traj.start)), 0.0))
    if np.linalg.norm(traj.waypoints[-1] - traj.end) > tol:
        out.append(Violation(traj.N, "end pin", float(np.linalg.norm(traj.waypoints[-1] - traj.end)), 0.0))
    for n, s in enumerate(np.linalg.norm(traj.velocities(), axis=1), start=1):
        if s > traj.v_max + tol:
            out.append(Violation(n, "speed", float(s), traj.v_max))
    for n, a in enumerate(np.linalg.norm(traj.accelerations(), axis=1), start=1):
        if a > traj.a_max + tol:
            out.append(Violation(n, "acceleration", float(a), traj.a_max))
    return out
