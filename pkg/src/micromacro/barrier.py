"""Small dense log-barrier interior-point solver.

Maximizes a smooth concave objective subject to constraints of the form

    ||D_i z + e_i||^2 + g_i . z + h_i <= 0,

which covers affine constraints (D_i = 0) and convex quadratic ones such as
speed and acceleration limits written as squared norms. Each centering step
is solved by damped Newton with Armijo backtracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SolverError

# f(z) -> (value, gradient, hessian); value may be -inf/nan outside the domain
Objective = Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class QuadraticConstraints:
    D: np.ndarray  # (m, k, n)
    e: np.ndarray  # (m, k)
    g: np.ndarray  # (m, n)
    h: np.ndarray  # (m,)

    def __post_init__(self):
        m, k, n = self.D.shape
        if self.e.shape != (m, k) or self.g.shape != (m, n) or self.h.shape != (m,):
            raise ValueError("inconsistent constraint data shapes")

    @property
    def count(self) -> int:
        return self.D.shape[0]

    def _flat(self):
        m, k, n = self.D.shape
        return self.D.reshape(m * k, n)

    def values(self, z) -> np.ndarray:
        r = self.D @ z + self.e
        return np.sum(r * r, axis=1) + self.g @ z + self.h

    def jacobian(self, z) -> np.ndarray:
        r = self.D @ z + self.e
        return 2.0 * np.einsum("mkn,mk->mn", self.D, r) + self.g

    def weighted_hessian(self, weights) -> np.ndarray:
        Df = self._flat()
        wk = np.repeat(np.asarray(weights, dtype=float), self.D.shape[1])
        return 2.0 * (Df.T * wk) @ Df

    @classmethod
    def stack(cls, *blocks: "QuadraticConstraints") -> "QuadraticConstraints":
        blocks = [b for b in blocks if b.count]
        k = max(b.D.shape[1] for b in blocks)
        n = blocks[0].D.shape[2]

        def pad(b):
            extra = k - b.D.shape[1]
            return (np.pad(b.D, ((0, 0), (0, extra), (0, 0))), np.pad(b.e, ((0, 0), (0, extra))))

        padded = [pad(b) for b in blocks]
        return cls(
            np.concatenate([p[0] for p in padded]),
            np.concatenate([p[1] for p in padded]),
            np.concatenate([b.g for b in blocks]).reshape(-1, n),
            np.concatenate([b.h for b in blocks]),
        )


@dataclass(frozen=True)
class BarrierResult:
    z: np.ndarray
    objective: float
    gap: float  # m / t at exit: bound on suboptimality
    decrement: float  # last Newton decrement lambda^2 / 2
    newton_steps: int
    converged: bool


def _solve(H, g):
    try:
        return -np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return -np.linalg.lstsq(H, g, rcond=None)[0]


def maximize_barrier(objective: Objective, constraints: QuadraticConstraints, z0, *,
                     gap_tol: float = 1e-9, newton_tol: float = 1e-9, mu: float = 10.0,
                     t0: float = 1.0, armijo: float = 0.01, backtrack: float = 0.5,
                     max_newton: int = 500) -> BarrierResult:
    """Maximize a concave ``objective`` over ``constraints(z) <= 0`` from a strictly feasible ``z0``."""
    z = np.asarray(z0, dtype=float).copy()
    m = constraints.count
    if m and np.any(constraints.values(z) >= 0):
        raise ValueError("starting point is not strictly feasible")
    f, _, _ = objective(z)
    if not math.isfinite(f):
        raise ValueError("objective is not finite at the starting point")

    def phi(t, zz):
        fz = objective(zz)[0]
        if not math.isfinite(fz):
            return math.inf
        if not m:
            return -t * fz
        c = constraints.values(zz)
        if np.any(c >= 0):
            return math.inf
        return -t * fz - float(np.sum(np.log(-c)))

    t = t0
    steps = 0
    dec = math.inf
    while True:
        # centering
        while True:
            f, gf, Hf = objective(z)
            grad = -t * gf
            hess = -t * Hf
            if m:
                c = constraints.values(z)
                J = constraints.jacobian(z)
                inv = -1.0 / c
                grad = grad + J.T @ inv
                hess = hess + (J.T * inv**2) @ J + constraints.weighted_hessian(inv)
            dz = _solve(hess, grad)
            dec = float(-grad @ dz) / 2.0
            if not math.isfinite(dec):
                raise SolverError("Newton system became singular")
            # phi_t is O(t |f|), so below this floor the decrement is round-off
            if dec <= max(newton_tol, 1e-13 * t * max(1.0, abs(f))):
                break
            if steps >= max_newton:
                raise SolverError(
                    f"barrier solver hit {max_newton} Newton steps (gap {m / t:.3g}, decrement {dec:.3g})"
                )
            base = phi(t, z)
            s = 1.0
            slope = float(grad @ dz)
            while phi(t, z + s * dz) > base + armijo * s * slope:
                s *= backtrack
                if s < 1e-16:
                    break
            if s < 1e-16:
                # no progress possible at this precision; treat as centered
                break
            z = z + s * dz
            steps += 1
        if m == 0 or m / t <= gap_tol:
            break
        t *= mu
    f = objective(z)[0]
    return BarrierResult(z, float(f), m / t if m else 0.0, dec, steps, True)
