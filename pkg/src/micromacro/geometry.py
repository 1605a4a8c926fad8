"""Air-to-ground LoS channel model: geometry, steering vectors, SNR and secrecy rates.

All functions are pure. Where it is natural they broadcast over leading
dimensions, so the solvers can evaluate every time slot at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

DEFAULT_WAVELENGTH = 0.0107  # 28 GHz
DEFAULT_NOISE_DBM = -90.0
GAIN_FLOOR_DB = -60.0

BOB = "bob"
EVE = "eve"


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts * 1000.0)


def free_space_beta0(wavelength: float) -> float:
    """Free-space reference gain at 1 m, (lambda / 4 pi)^2."""
    return (wavelength / (4.0 * math.pi)) ** 2


@dataclass(frozen=True)
class Position3D:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite coordinate in {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class ScenarioGeometry:
    """Fixed scenario parameters shared by both mobility schemes.

    Noise powers are in watts. ``noise_eve = inf`` removes the eavesdropper
    (its SNR is identically zero).
    """

    bob: Position3D = field(default_factory=lambda: Position3D(0.0, 0.0, 0.0))
    eve: Position3D = field(default_factory=lambda: Position3D(400.0, 0.0, 0.0))
    altitude_H: float = 50.0
    wavelength: float = DEFAULT_WAVELENGTH
    beta0: float = free_space_beta0(DEFAULT_WAVELENGTH)
    alpha: float = 2.0
    noise_bob: float = dbm_to_watts(DEFAULT_NOISE_DBM)
    noise_eve: float = dbm_to_watts(DEFAULT_NOISE_DBM)
    p_max: float = 1.0

    def __post_init__(self):
        errors = self.validation_errors()
        if errors:
            raise ValueError("; ".join(errors))

    def validation_errors(self) -> list[str]:
        errors = []
        if not self.altitude_H > 0:
            errors.append(f"altitude_H must be > 0, got {self.altitude_H}")
        if not self.wavelength > 0:
            errors.append(f"wavelength must be > 0, got {self.wavelength}")
        if not self.beta0 > 0:
            errors.append(f"beta0 must be > 0, got {self.beta0}")
        if not self.alpha >= 2:
            errors.append(f"alpha must be >= 2, got {self.alpha}")
        if not self.noise_bob > 0 or not self.noise_eve > 0:
            errors.append("noise powers must be > 0")
        if not self.p_max > 0:
            errors.append(f"p_max must be > 0, got {self.p_max}")
        if self.bob.z != 0 or self.eve.z != 0:
            errors.append("ground users must lie at z = 0")
        return errors

    def with_(self, **changes) -> "ScenarioGeometry":
        return replace(self, **changes)

    def user(self, user_id: str) -> Position3D:
        if user_id == BOB:
            return self.bob
        if user_id == EVE:
            return self.eve
        raise ValueError(f"unknown user {user_id!r}")

    def noise(self, user_id: str) -> float:
        return self.noise_bob if user_id == BOB else self.noise_eve

    def uav_at(self, x: float, y: float) -> Position3D:
        return Position3D(x, y, self.altitude_H)


def distance(uav: Position3D, user: Position3D) -> float:
    dx, dy, dz = user.x - uav.x, user.y - uav.y, user.z - uav.z
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def direction_cosine(uav: Position3D, user: Position3D) -> float:
    """Cosine between the array axis (world x) and the UAV-to-user direction.

    sin(theta) cos(phi) reduces to dx / d when the array is aligned with x.
    """
    d = distance(uav, user)
    if d <= 0:
        raise ValueError("UAV and user coincide")
    return (user.x - uav.x) / d


def horizontal_distances_sq(xy: np.ndarray, user: Position3D, altitude: float) -> np.ndarray:
    """Squared 3-D distances from UAV horizontal points ``xy[..., 2]`` at ``altitude``."""
    xy = np.asarray(xy, dtype=float)
    return (xy[..., 0] - user.x) ** 2 + (xy[..., 1] - user.y) ** 2 + altitude**2


def direction_cosines(xy: np.ndarray, user: Position3D, altitude: float) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return (user.x - xy[..., 0]) / np.sqrt(horizontal_distances_sq(xy, user, altitude))


def steering_vector(antenna_x, cos_alpha, wavelength: float) -> np.ndarray:
    """Entries exp(j 2pi/lambda x_m cos(alpha)).

    ``antenna_x`` may be ``(..., M)``; ``cos_alpha`` broadcasts against the
    leading dimensions (pass shape ``(..., 1)`` for per-slot cosines).
    """
    if not wavelength > 0:
        raise ValueError(f"wavelength must be > 0, got {wavelength}")
    x = np.asarray(antenna_x, dtype=float)
    if x.size == 0:
        raise ValueError("antenna_x must be nonempty")
    return np.exp(1j * (2.0 * np.pi / wavelength) * x * np.asarray(cos_alpha, dtype=float))


def path_gain(beta0: float, d, alpha: float = 2.0):
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("distance must be > 0")
    g = beta0 / d_arr**alpha
    return float(g) if np.ndim(g) == 0 else g


def channel_vector(geometry: ScenarioGeometry, antenna_x, uav: Position3D, user_id: str) -> np.ndarray:
    user = geometry.user(user_id)
    d = distance(uav, user)
    a = steering_vector(antenna_x, direction_cosine(uav, user), geometry.wavelength)
    return math.sqrt(path_gain(geometry.beta0, d, geometry.alpha)) * a


def snr(h, w, noise: float):
    """|h^H w|^2 / noise, broadcasting over leading dimensions."""
    h = np.asarray(h)
    w = np.asarray(w)
    if h.shape[-1] != w.shape[-1]:
        raise ValueError(f"dimension mismatch: h has {h.shape[-1]}, w has {w.shape[-1]}")
    if not noise > 0:
        raise ValueError("noise must be > 0")
    out = np.abs(np.sum(np.conj(h) * w, axis=-1)) ** 2 / noise
    return float(out) if np.ndim(out) == 0 else out


def snr_coefficient(geometry: ScenarioGeometry, d_sq, user_id: str):
    """beta0 / (d^alpha sigma^2): SNR per unit |a^H w|^2."""
    d_sq = np.asarray(d_sq, dtype=float)
    return geometry.beta0 / (d_sq ** (geometry.alpha / 2.0) * geometry.noise(user_id))


def secrecy_rate(gamma_b, gamma_e):
    out = np.maximum(0.0, np.log2(1.0 + np.asarray(gamma_b)) - np.log2(1.0 + np.asarray(gamma_e)))
    return float(out) if np.ndim(out) == 0 else out


def average_secrecy_rate(rates: Sequence[float]) -> float:
    r = np.asarray(rates, dtype=float)
    if r.size == 0:
        raise ValueError("need at least one slot rate")
    return float(np.mean(r))


def beam_gain_grid(w, antenna_x, wavelength: float, cos_alpha_grid, floor_db: float = GAIN_FLOOR_DB) -> np.ndarray:
    """10 log10 |a(cos)^H w|^2 over a grid of direction cosines, floored for nulls."""
    grid = np.asarray(cos_alpha_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("empty direction-cosine grid")
    a = steering_vector(np.asarray(antenna_x, dtype=float)[None, :], grid[:, None], wavelength)
    power = np.abs(a.conj() @ np.asarray(w, dtype=complex)) ** 2
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power)
    return np.maximum(db, floor_db)


def ula_positions(M: int, spacing: float, start: float = 0.0) -> np.ndarray:
    return start + spacing * np.arange(M, dtype=float)


def mrt_beam(a: np.ndarray, p_max: float) -> np.ndarray:
    """Maximum-ratio beam sqrt(P) a / ||a|| (a is the steering vector, so h ∝ a)."""
    a = np.asarray(a, dtype=complex)
    return math.sqrt(p_max) * a / np.linalg.norm(a, axis=-1, keepdims=True)


def slot_rates(geometry: ScenarioGeometry, a_b, a_e, w, d_b_sq, d_e_sq):
    """Per-slot (R_b - R_e) before clipping and the SNRs behind it."""
    e1 = snr_coefficient(geometry, d_b_sq, BOB)
    e2 = snr_coefficient(geometry, d_e_sq, EVE)
    gb = e1 * np.abs(np.sum(np.conj(a_b) * w, axis=-1)) ** 2
    ge = e2 * np.abs(np.sum(np.conj(a_e) * w, axis=-1)) ** 2
    return np.log2(1.0 + gb) - np.log2(1.0 + ge), gb, ge
