"""Joint antenna positioning and beamforming for a hovering UAV with movable antennas.

Alternating optimization: each outer iteration jitters the current layout,
refits the beams on it, runs projected AdaGrad ascent on the positions,
refits the beams again, and keeps the pair according to the Metropolis
rule. The best pair ever seen is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .annealing import AnnealSchedule, accept, acceptance_probability, cool, make_rng
from .errors import SolverError
from .feasible import (
    AntennaLimits,
    AntennaSchedule,
    BeamSchedule,
    project_layout,
)
from .pga import AdaGradState, PGAParams, adagrad_step, grad_positions, mc_average_gradient, pga_beamforming


@dataclass(frozen=True)
class MAParams:
    outer_iterations: int = 200
    position_iterations: int = 20
    beam_iterations: int = 30
    mc_samples: int = 1
    beam_rate: float = 0.8  # AdaGrad base rate per sqrt(P_max / M)
    position_rate: float = 5e-4  # meters
    epsilon: float = 1e-8
    temperature0: float = 1.0
    cooling: float = 0.8
    perturbation: float = 0.25  # std of layout jitter, in wavelengths


@dataclass(frozen=True)
class MAProblemSpec:
    geometry: geo.ScenarioGeometry
    N: int
    M: int
    limits: AntennaLimits
    hover_xy: tuple[float, float] = (200.0, 200.0)
    params: MAParams = field(default_factory=MAParams)
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValueError("need N >= 1 and M >= 1")
        self.limits.check_capacity(self.M)

    @property
    def initial_layout(self) -> np.ndarray:
        return geo.ula_positions(self.M, self.limits.min_spacing, self.limits.lo)

    def link(self) -> "HoverLink":
        return HoverLink.from_spec(self)


def default_limits(wavelength: float = geo.DEFAULT_WAVELENGTH, span_wavelengths: float = 4.0,
                   max_step: float = 0.01) -> AntennaLimits:
    return AntennaLimits(0.0, span_wavelengths * wavelength, wavelength / 2.0, max_step)


@dataclass(frozen=True)
class HoverLink:
    """Slot-invariant link quantities for a hovering UAV."""

    cos_b: float
    cos_e: float
    eps1: float
    eps2: float
    wavelength: float

    @classmethod
    def from_spec(cls, spec: MAProblemSpec) -> "HoverLink":
        g = spec.geometry
        uav = g.uav_at(*spec.hover_xy)
        d_b2 = geo.distance(uav, g.bob) ** 2
        d_e2 = geo.distance(uav, g.eve) ** 2
        return cls(
            geo.direction_cosine(uav, g.bob),
            geo.direction_cosine(uav, g.eve),
            float(geo.snr_coefficient(g, d_b2, geo.BOB)),
            float(geo.snr_coefficient(g, d_e2, geo.EVE)),
            g.wavelength,
        )

    def steering(self, X):
        return (geo.steering_vector(X, self.cos_b, self.wavelength),
                geo.steering_vector(X, self.cos_e, self.wavelength))

    def rates(self, X, W) -> np.ndarray:
        """Unclipped per-slot R_b - R_e."""
        a_b, a_e = self.steering(X)
        gb = self.eps1 * np.abs(np.sum(np.conj(a_b) * W, axis=-1)) ** 2
        ge = self.eps2 * np.abs(np.sum(np.conj(a_e) * W, axis=-1)) ** 2
        return np.log2(1.0 + gb) - np.log2(1.0 + ge)

    def asr(self, X, W) -> float:
        return float(np.mean(np.maximum(self.rates(X, W), 0.0)))


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    candidate: float
    objective: float
    best: float
    temperature: float
    accepted: bool


@dataclass
class MASolution:
    antenna_schedule: AntennaSchedule
    beam_schedule: BeamSchedule
    asr: float
    per_slot_rates: np.ndarray
    trace: list[TraceRecord]
    suspended: np.ndarray  # bool per slot

    def violations(self):
        return self.antenna_schedule.violations() + self.beam_schedule.violations()


def optimize_positions_block(spec: MAProblemSpec, beams: np.ndarray, layout: np.ndarray,
                             iterations: int | None = None, link: HoverLink | None = None) -> np.ndarray:
    """Projected AdaGrad ascent on antenna positions with beams fixed.

    Returns the best feasible schedule visited (the entry layout included).
    """
    p = spec.params
    link = link or spec.link()
    iterations = p.position_iterations if iterations is None else iterations
    initial = spec.initial_layout
    X = project_layout(np.asarray(layout, dtype=float), initial, spec.limits)
    W = np.asarray(beams, dtype=complex)
    best_X, best_f = X, float(np.mean(link.rates(X, W)))
    state = AdaGradState.zeros_like(X, p.position_rate, p.epsilon)
    for _ in range(iterations):
        g = mc_average_gradient(
            lambda: grad_positions(X, W, link.cos_b, link.cos_e, link.eps1, link.eps2, link.wavelength),
            p.mc_samples,
        )
        state, step = adagrad_step(state, g)
        X = project_layout(X + step, initial, spec.limits)
        f = float(np.mean(link.rates(X, W)))
        if not math.isfinite(f):
            raise SolverError("non-finite objective in position PGA")
        if f > best_f:
            best_X, best_f = X, f
    return best_X


def optimize_beamforming_block(spec: MAProblemSpec, layout: np.ndarray, beams: np.ndarray,
                               iterations: int | None = None, link: HoverLink | None = None) -> np.ndarray:
    p = spec.params
    link = link or spec.link()
    a_b, a_e = link.steering(np.asarray(layout, dtype=float))
    params = PGAParams(iterations=p.beam_iterations if iterations is None else iterations,
                       mc_samples=p.mc_samples, beam_rate=p.beam_rate, epsilon=p.epsilon)
    W, _ = pga_beamforming(beams, a_b, a_e, link.eps1, link.eps2, spec.geometry.p_max, params)
    return W


def initial_state(spec: MAProblemSpec, link: HoverLink | None = None):
    link = link or spec.link()
    X = np.tile(spec.initial_layout, (spec.N, 1))
    a_b, _ = link.steering(X)
    return X, geo.mrt_beam(a_b, spec.geometry.p_max)


def suspend_negative_slots(link: HoverLink, X, W):
    """Zero the beam wherever R_b < R_e; returns (beams, clipped rates, mask)."""
    pre = link.rates(X, W)
    mask = pre < 0
    W = np.array(W, dtype=complex)
    W[mask] = 0.0
    return W, np.where(mask, 0.0, pre), mask


def solve_p1(spec: MAProblemSpec, progress=None) -> MASolution:
    p = spec.params
    link = spec.link()
    rng = make_rng(spec.seed)
    initial = spec.initial_layout
    X, W = initial_state(spec, link)
    tau = link.asr(X, W)
    best = (tau, X, W)
    schedule = AnnealSchedule(p.temperature0, p.cooling, spec.seed)
    jitter = p.perturbation * spec.geometry.wavelength
    trace: list[TraceRecord] = []

    for k in range(1, p.outer_iterations + 1):
        Xc, Wc = X, W
        if jitter > 0 and spec.M > 1:
            Xc = project_layout(X + rng.normal(0.0, jitter, size=spec.M), initial, spec.limits)
            # refit beams first so the position step is not pulled back by stale beams
            Wc = optimize_beamforming_block(spec, Xc, W, link=link)
        Xc = optimize_positions_block(spec, Wc, Xc, link=link)
        Wc = optimize_beamforming_block(spec, Xc, Wc, link=link)
        tau_c = link.asr(Xc, Wc)
        if not math.isfinite(tau_c):
            raise SolverError(f"non-finite secrecy rate at outer iteration {k}")
        schedule = cool(schedule)
        accepted = accept(acceptance_probability(tau_c, tau, schedule.temperature), rng)
        if accepted:
            X, W, tau = Xc, Wc, tau_c
        if tau > best[0]:
            best = (tau, X, W)
        trace.append(TraceRecord(k, tau_c, tau, best[0], schedule.temperature, accepted))
        if progress is not None:
            progress(trace[-1])

    _, X, W = best
    W, rates, mask = suspend_negative_slots(link, X, W)
    return MASolution(
        AntennaSchedule(X, initial, spec.limits),
        BeamSchedule(W, spec.geometry.p_max),
        float(np.mean(rates)),
        rates,
        trace,
        mask,
    )
