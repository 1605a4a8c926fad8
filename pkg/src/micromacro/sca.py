"""Trajectory and beamforming design for a UAV with a fixed antenna array.

The UAV flies from a start to an end point in ``N`` slots. Squared distances
to Bob and Eve are relaxed into slack variables ``u >= d_b^2`` and
``w_slack <= d_e^2``; the latter is convexified by the tangent plane of
``d_e^2`` at the current trajectory, and ``log2(1 + s1/u)`` by its tangent in
``u``. Each round solves the resulting convex program with the barrier solver,
then refits the beams on the new path. Since the surrogate touches the true
objective at the expansion point and lies below it elsewhere, every round
can only raise the frozen-beam objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import geometry as geo
from .annealing import AnnealSchedule, accept, acceptance_probability, cool, make_rng
from .barrier import QuadraticConstraints, maximize_barrier
from .errors import InfeasibleError, SolverError
from .feasible import BeamSchedule, Trajectory, check_kinematics, straight_line
from .pga import LN2, PGAParams, pga_beamforming


@dataclass(frozen=True)
class SlackState:
    u: np.ndarray  # upper bounds on d_b^2 per slot (m^2)
    w_slack: np.ndarray  # lower bounds on d_e^2 per slot (m^2)


def init_slacks(trajectory: Trajectory, geometry: geo.ScenarioGeometry) -> SlackState:
    xy = trajectory.slot_xy
    return SlackState(
        geo.horizontal_distances_sq(xy, geometry.bob, trajectory.altitude),
        geo.horizontal_distances_sq(xy, geometry.eve, trajectory.altitude),
    )


def link_coefficients(geometry: geo.ScenarioGeometry, beams, antenna_x, xy, altitude: float):
    """s1, s2 = beta0 |a^H w|^2 / sigma^2 with steering vectors taken at ``xy``."""
    xy = np.asarray(xy, dtype=float)
    out = []
    for uid in (geo.BOB, geo.EVE):
        user = geometry.user(uid)
        cos = geo.direction_cosines(xy, user, altitude)
        a = geo.steering_vector(np.asarray(antenna_x)[None, :], cos[:, None], geometry.wavelength)
        gain = np.abs(np.sum(np.conj(a) * beams, axis=-1)) ** 2
        out.append(geometry.beta0 * gain / geometry.noise(uid))
    return out[0], out[1]


@dataclass(frozen=True)
class ConvexSubproblem:
    """Convexified trajectory problem around the waypoints ``q0``."""

    q0: np.ndarray  # (N+1) x 2 waypoints; row 0 and row N are pinned
    u0: np.ndarray
    w0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    bob_xy: np.ndarray
    eve_xy: np.ndarray
    altitude: float
    dt: float
    v_max: float
    a_max: float

    @property
    def N(self) -> int:
        return self.q0.shape[0] - 1

    def d_bob_sq(self, q):
        return np.sum((np.asarray(q)[..., 1:, :] - self.bob_xy) ** 2, axis=-1) + self.altitude**2

    def d_eve_sq(self, q):
        return np.sum((np.asarray(q)[..., 1:, :] - self.eve_xy) ** 2, axis=-1) + self.altitude**2

    def eve_tangent(self, q):
        """Affine under-estimator of d_e^2 per slot, exact at ``q0``."""
        p0 = self.q0[1:] - self.eve_xy
        d0 = np.sum(p0**2, axis=-1) + self.altitude**2
        return d0 + 2.0 * np.sum(p0 * (np.asarray(q)[..., 1:, :] - self.q0[1:]), axis=-1)

    def bob_term(self, u):
        """Tangent of log2(1 + s1/u) at u0; a global lower bound since it is convex in u."""
        u0, s1 = self.u0, self.s1
        return np.log2(1.0 + s1 / u0) - s1 * (u - u0) / (LN2 * u0 * (u0 + s1))

    def eve_term(self, w):
        with np.errstate(divide="ignore", invalid="ignore"):
            return -np.log2(1.0 + self.s2 / w)

    def objective(self, u, w) -> float:
        return float(np.mean(self.bob_term(u) + self.eve_term(w)))

    def surrogate(self, q) -> float:
        """Convexified objective with the slacks at their best values for ``q``."""
        w = self.eve_tangent(q)
        if np.any(w <= 0):
            return -math.inf
        return self.objective(self.d_bob_sq(q), w)

    def true_objective(self, q) -> float:
        """Unclipped mean secrecy rate at waypoints ``q`` with s1, s2 frozen."""
        return float(np.mean(np.log2(1.0 + self.s1 / self.d_bob_sq(q)) - np.log2(1.0 + self.s2 / self.d_eve_sq(q))))


def linearize_subproblem(q0: Trajectory, slacks0: SlackState, beams, geometry: geo.ScenarioGeometry,
                         antenna_x) -> ConvexSubproblem:
    """Freeze steering vectors and beams at ``q0`` and build the convex surrogate."""
    if geometry.alpha != 2.0:
        raise ValueError("the slack relaxation assumes a path-loss exponent of 2")
    u0 = np.asarray(slacks0.u, dtype=float)
    w0 = np.asarray(slacks0.w_slack, dtype=float)
    if np.any(u0 <= 0) or np.any(w0 <= 0):
        raise ValueError("slack expansion point must be positive")
    s1, s2 = link_coefficients(geometry, np.asarray(beams, dtype=complex), antenna_x, q0.slot_xy, q0.altitude)
    return ConvexSubproblem(
        np.asarray(q0.waypoints, dtype=float), u0, w0, s1, s2,
        np.asarray(geometry.bob.xy, dtype=float), np.asarray(geometry.eve.xy, dtype=float),
        q0.altitude, q0.dt, q0.v_max, q0.a_max,
    )


class SubproblemSolution(NamedTuple):
    q: np.ndarray  # (N+1) x 2 waypoints
    u: np.ndarray
    w_slack: np.ndarray
    objective: float
    gap: float  # duality-gap bound from the barrier solver (0 when nothing was free)


def _kinematics_strict(line: np.ndarray, dt, v_max, a_max) -> bool:
    speed = np.linalg.norm(np.diff(line, axis=0), axis=1)
    # a straight line has zero acceleration, so any a_max > 0 leaves room
    return bool(np.all(speed < v_max * dt * (1 - 1e-9)) and (line.shape[0] < 3 or a_max > 0))


def _polish(sub: ConvexSubproblem, q) -> SubproblemSolution:
    u = sub.d_bob_sq(q)
    w = sub.eve_tangent(q)
    return SubproblemSolution(q, u, w, sub.objective(u, w), 0.0)


def solve_convex_subproblem(sub: ConvexSubproblem, tol: float = 1e-9) -> SubproblemSolution:
    """Maximize the convexified objective over trajectories and slacks.

    The slacks are polished afterwards to ``u = d_b^2`` and ``w = tangent``,
    which can only raise the objective. The expansion point is returned if
    the solver does not beat it.
    """
    N = sub.N
    q0 = sub.q0
    at_start = _polish(sub, q0)
    line = np.linspace(q0[0], q0[-1], N + 1)
    if N < 2 or not _kinematics_strict(line, sub.dt, sub.v_max, sub.a_max):
        # no interior: the pinned straight line is the only admissible path
        return at_start

    L = max(float(np.max(np.abs(q0))), sub.altitude, 1.0)
    F = N - 1  # free waypoints
    nq = 2 * F
    n = nq + 2 * N
    H2 = (sub.altitude / L) ** 2
    fixed = q0 / L
    bob, eve = sub.bob_xy / L, sub.eve_xy / L

    def sel(j):
        # (2, n) map from z to waypoint j, plus the constant part
        D = np.zeros((2, n))
        c = np.zeros(2)
        if j == 0 or j == N:
            c[:] = fixed[j]
        else:
            D[0, 2 * (j - 1)] = 1.0
            D[1, 2 * (j - 1) + 1] = 1.0
        return D, c

    S = [sel(j) for j in range(N + 1)]
    blocks = []

    # speed: ||q[j] - q[j-1]||^2 <= (v dt)^2
    vb = (sub.v_max * sub.dt / L) ** 2
    D = np.stack([S[j][0] - S[j - 1][0] for j in range(1, N + 1)])
    e = np.stack([S[j][1] - S[j - 1][1] for j in range(1, N + 1)])
    blocks.append(QuadraticConstraints(D, e, np.zeros((N, n)), np.full(N, -vb)))

    # acceleration: ||q[j+1] - 2 q[j] + q[j-1]||^2 <= (a dt^2)^2
    ab = (sub.a_max * sub.dt**2 / L) ** 2
    D = np.stack([S[j + 1][0] - 2 * S[j][0] + S[j - 1][0] for j in range(1, N)])
    e = np.stack([S[j + 1][1] - 2 * S[j][1] + S[j - 1][1] for j in range(1, N)])
    blocks.append(QuadraticConstraints(D, e, np.zeros((N - 1, n)), np.full(N - 1, -ab)))

    # Bob: ||q[j] - b||^2 + H^2 - u[j] <= 0
    D = np.stack([S[j][0] for j in range(1, N + 1)])
    e = np.stack([S[j][1] - bob for j in range(1, N + 1)])
    g = np.zeros((N, n))
    g[np.arange(N), nq + np.arange(N)] = -1.0
    blocks.append(QuadraticConstraints(D, e, g, np.full(N, H2)))

    # Eve: w[j] - tangent_j(q[j]) <= 0, affine
    p0 = fixed[1:] - eve
    d0 = np.sum(p0**2, axis=1) + H2
    g = np.zeros((N, n))
    h = np.empty(N)
    for j in range(1, N + 1):
        i = j - 1
        D_j, c_j = S[j]
        # tangent = d0 + 2 p0 . (D_j z + c_j - fixed[j])
        g[i] = -2.0 * p0[i] @ D_j
        g[i, nq + N + i] += 1.0
        h[i] = -(d0[i] + 2.0 * p0[i] @ (c_j - fixed[j]))
    blocks.append(QuadraticConstraints(np.zeros((N, 1, n)), np.zeros((N, 1)), g, h))
    eve_rows = (g, h)

    # strictly feasible start: nudge q0 toward the straight line
    theta = 1e-3
    qs = (1 - theta) * fixed + theta * (line / L)
    z = np.zeros(n)
    z[:nq] = qs[1:N].ravel()
    db = np.sum((qs[1:] - bob) ** 2, axis=1) + H2
    tan = d0 + 2.0 * np.sum(p0 * (qs[1:] - fixed[1:]), axis=1)
    if np.any(tan <= 0):
        raise SolverError("Eve tangent plane is not positive near the expansion point")
    floor = tan > H2 * (1 + 1e-7)
    z[nq:nq + N] = db * (1 + 1e-3) + 1e-6
    z[nq + N:] = np.where(floor, 0.5 * (tan + H2), 0.5 * tan)
    if np.any(floor):
        idx = np.flatnonzero(floor)
        gf = np.zeros((idx.size, n))
        gf[np.arange(idx.size), nq + N + idx] = -1.0
        blocks.append(QuadraticConstraints(np.zeros((idx.size, 1, n)), np.zeros((idx.size, 1)), gf, np.full(idx.size, H2)))
    cons = QuadraticConstraints.stack(*blocks)

    s1 = sub.s1 / L**2
    s2 = sub.s2 / L**2
    U0 = sub.u0 / L**2
    slope = -s1 / (LN2 * U0 * (U0 + s1))

    def objective(zz):
        U = zz[nq:nq + N]
        W = zz[nq + N:]
        grad = np.zeros(n)
        hess = np.zeros((n, n))
        if np.any(W <= 0):
            return -math.inf, grad, hess
        val = np.sum(np.log2(1.0 + s1 / U0) + slope * (U - U0) - np.log2(1.0 + s2 / W)) / N
        grad[nq:nq + N] = slope / N
        # d/dW of -log2(1 + s2/W) = s2 / (ln2 W (W + s2))
        grad[nq + N:] = s2 / (LN2 * W * (W + s2)) / N
        d2 = (1.0 / (W + s2) ** 2 - 1.0 / W**2) / LN2 / N
        hess[nq + N + np.arange(N), nq + N + np.arange(N)] = d2
        return float(val), grad, hess

    res = maximize_barrier(objective, cons, z, gap_tol=tol, newton_tol=tol)
    q = q0.copy()
    q[1:N] = res.z[:nq].reshape(F, 2) * L
    out = _polish(sub, q)
    if not out.objective >= at_start.objective:
        return at_start
    return out._replace(gap=res.gap)


# ---------------------------------------------------------------------------
# Alternating driver


@dataclass(frozen=True)
class UAVParams:
    sca_iterations: int = 40
    beam_iterations: int = 100
    mc_samples: int = 1
    beam_rate: float = 0.8  # AdaGrad base rate per sqrt(P_max / M)
    epsilon: float = 1e-8
    temperature0: float = 1.0
    cooling: float = 0.8
    tol: float = 1e-6  # stop once a round gains less than this (bits/s/Hz)
    subproblem_tol: float = 1e-9


@dataclass(frozen=True)
class UAVProblemSpec:
    geometry: geo.ScenarioGeometry
    N: int
    M: int
    dt: float = 1.0
    start: tuple[float, float] = (200.0, 200.0)
    end: tuple[float, float] = (200.0, -200.0)
    v_max: float = 15.0
    a_max: float = 3.0
    spacing: float | None = None  # fixed array spacing; half a wavelength when None
    params: UAVParams = field(default_factory=UAVParams)
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValueError("need N >= 1 and M >= 1")
        if not (self.dt > 0 and self.v_max > 0 and self.a_max >= 0):
            raise ValueError("dt and v_max must be > 0, a_max >= 0")
        if self.geometry.alpha != 2.0:
            raise ValueError("trajectory design assumes a path-loss exponent of 2")
        need = math.dist(self.start, self.end) / (self.N * self.dt)
        if need > self.v_max * (1 + 1e-12):
            raise InfeasibleError(
                f"reaching the end point in {self.N} slots needs {need:.6g} m/s > v_max = {self.v_max:.6g} m/s"
            )

    @property
    def antenna_x(self) -> np.ndarray:
        d = self.geometry.wavelength / 2.0 if self.spacing is None else self.spacing
        return geo.ula_positions(self.M, d)

    def initial_trajectory(self) -> Trajectory:
        return straight_line(self.start, self.end, self.N, self.geometry.altitude_H, self.dt, self.v_max, self.a_max)


@dataclass(frozen=True)
class UAVTraceRecord:
    iteration: int
    surrogate_before: float  # frozen-beam objective at the expansion point
    surrogate_after: float  # frozen-beam objective at the new waypoints
    candidate: float
    objective: float
    best: float
    temperature: float
    accepted: bool


@dataclass
class UAVSolution:
    trajectory: Trajectory
    beam_schedule: BeamSchedule
    asr: float
    per_slot_rates: np.ndarray
    trace: list[UAVTraceRecord]
    suspended: np.ndarray

    def violations(self):
        return check_kinematics(self.trajectory) + self.beam_schedule.violations()


def slot_rates(spec: UAVProblemSpec, traj: Trajectory, W) -> np.ndarray:
    """Unclipped per-slot R_b - R_e along ``traj``."""
    s1, s2 = link_coefficients(spec.geometry, W, spec.antenna_x, traj.slot_xy, traj.altitude)
    g = spec.geometry
    d_b = geo.horizontal_distances_sq(traj.slot_xy, g.bob, traj.altitude)
    d_e = geo.horizontal_distances_sq(traj.slot_xy, g.eve, traj.altitude)
    return np.log2(1.0 + s1 / d_b) - np.log2(1.0 + s2 / d_e)


def optimize_beams_along(spec: UAVProblemSpec, traj: Trajectory, W0=None) -> np.ndarray:
    g = spec.geometry
    p = spec.params
    xy = traj.slot_xy
    ab, ae = (
        geo.steering_vector(spec.antenna_x[None, :], geo.direction_cosines(xy, g.user(u), traj.altitude)[:, None], g.wavelength)
        for u in (geo.BOB, geo.EVE)
    )
    eps1 = geo.snr_coefficient(g, geo.horizontal_distances_sq(xy, g.bob, traj.altitude), geo.BOB)
    eps2 = geo.snr_coefficient(g, geo.horizontal_distances_sq(xy, g.eve, traj.altitude), geo.EVE)
    if W0 is None:
        W0 = geo.mrt_beam(ab, g.p_max)
    params = PGAParams(iterations=p.beam_iterations, mc_samples=p.mc_samples, beam_rate=p.beam_rate, epsilon=p.epsilon)
    W, _ = pga_beamforming(W0, ab, ae, eps1, eps2, g.p_max, params)
    return W


def solve_p2(spec: UAVProblemSpec, progress=None) -> UAVSolution:
    p = spec.params
    g = spec.geometry
    rng = make_rng(spec.seed)
    traj = spec.initial_trajectory()
    W = optimize_beams_along(spec, traj)
    tau = float(np.mean(np.maximum(slot_rates(spec, traj, W), 0.0)))
    best = (tau, traj, W)
    schedule = AnnealSchedule(p.temperature0, p.cooling, spec.seed)
    trace: list[UAVTraceRecord] = []

    for k in range(1, p.sca_iterations + 1):
        sub = linearize_subproblem(traj, init_slacks(traj, g), W, g, spec.antenna_x)
        before = sub.true_objective(traj.waypoints)
        sol = solve_convex_subproblem(sub, p.subproblem_tol)
        after = sub.true_objective(sol.q)
        traj_c = traj.with_waypoints(sol.q)
        W_c = optimize_beams_along(spec, traj_c, W)
        tau_c = float(np.mean(np.maximum(slot_rates(spec, traj_c, W_c), 0.0)))
        if not math.isfinite(tau_c):
            raise SolverError(f"non-finite secrecy rate at SCA round {k}")
        schedule = cool(schedule)
        accepted = accept(acceptance_probability(tau_c, tau, schedule.temperature), rng)
        gain = tau_c - tau
        if accepted:
            traj, W, tau = traj_c, W_c, tau_c
        if tau > best[0]:
            best = (tau, traj, W)
        trace.append(UAVTraceRecord(k, before, after, tau_c, tau, best[0], schedule.temperature, accepted))
        if progress is not None:
            progress(trace[-1])
        # a rejected round would be proposed again unchanged
        if not accepted or (abs(gain) < p.tol and after - before < p.tol):
            break

    _, traj, W = best
    pre = slot_rates(spec, traj, W)
    mask = pre < 0
    W = np.array(W, dtype=complex)
    W[mask] = 0.0
    rates = np.where(mask, 0.0, pre)
    return UAVSolution(traj, BeamSchedule(W, g.p_max), float(np.mean(rates)), rates, trace, mask)
