"""Secrecy-rate gradients, AdaGrad steps and projected gradient ascent on beams.

Complex beams are optimized over their real and imaginary parts as
independent coordinates. The complex "gradient" returned here is
``d/dRe + j d/dIm``, so ``w + t * g`` is an ascent step for small ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SolverError
from .feasible import project_power

LN2 = math.log(2.0)


def inner(a, w):
    """a^H w over the last axis."""
    return np.sum(np.conj(a) * w, axis=-1)


def slot_objective(a_b, a_e, w, eps1, eps2):
    """Unclipped log2(1 + eps1 |a_b^H w|^2) - log2(1 + eps2 |a_e^H w|^2)."""
    return np.log2(1.0 + eps1 * np.abs(inner(a_b, w)) ** 2) - np.log2(1.0 + eps2 * np.abs(inner(a_e, w)) ** 2)


def grad_beamforming(a_b, a_e, w, eps1, eps2):
    a_b, a_e, w = np.asarray(a_b), np.asarray(a_e), np.asarray(w, dtype=complex)
    eps1 = np.asarray(eps1, dtype=float)[..., None]
    eps2 = np.asarray(eps2, dtype=float)[..., None]
    s_b = inner(a_b, w)[..., None]
    s_e = inner(a_e, w)[..., None]
    # grad |a^H w|^2 = 2 a a^H w
    gb = eps1 * 2.0 * a_b * s_b / (1.0 + eps1 * np.abs(s_b) ** 2)
    ge = eps2 * 2.0 * a_e * s_e / (1.0 + eps2 * np.abs(s_e) ** 2)
    return (gb - ge) / LN2


def _power_gain_dx(x, w, cos_alpha, wavelength):
    # d|a^H w|^2 / dx_m = 2 Re{ conj(s) * d(conj(a_m))/dx_m * w_m },
    # d(conj(a_m))/dx_m = -j k cos(alpha) conj(a_m)
    k = 2.0 * np.pi / wavelength * np.asarray(cos_alpha, dtype=float)[..., None]
    a_conj = np.exp(-1j * k * x)
    s = np.sum(a_conj * w, axis=-1)[..., None]
    return 2.0 * np.real(np.conj(s) * (-1j) * k * a_conj * w), np.abs(s[..., 0]) ** 2


def grad_positions(x, w, cos_ab, cos_ae, eps1, eps2, wavelength: float):
    """Gradient of the per-slot secrecy objective w.r.t. antenna x-positions.

    Direction cosines are held fixed (far field). Broadcasts over slots when
    ``x`` and ``w`` are ``(N, M)`` and the scalars are ``(N,)``.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=complex)
    db, pb = _power_gain_dx(x, w, cos_ab, wavelength)
    de, pe = _power_gain_dx(x, w, cos_ae, wavelength)
    eps1 = np.asarray(eps1, dtype=float)
    eps2 = np.asarray(eps2, dtype=float)
    cb = (eps1 / (1.0 + eps1 * pb))[..., None]
    ce = (eps2 / (1.0 + eps2 * pe))[..., None]
    return (cb * db - ce * de) / LN2


# ---------------------------------------------------------------------------
# AdaGrad


@dataclass(frozen=True)
class AdaGradState:
    accum: np.ndarray  # real; complex coordinates stored as trailing (re, im) pair
    base_rate: float | np.ndarray
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, x, base_rate, epsilon: float = 1e-8) -> "AdaGradState":
        x = np.asarray(x)
        shape = x.shape + (2,) if np.iscomplexobj(x) else x.shape
        return cls(np.zeros(shape), base_rate, epsilon)


def _to_real(g):
    g = np.asarray(g)
    return np.stack([g.real, g.imag], axis=-1) if np.iscomplexobj(g) else g.astype(float)


def _from_real(r, like):
    return r[..., 0] + 1j * r[..., 1] if np.iscomplexobj(like) else r


def adagrad_step(state: AdaGradState, grad):
    """Return ``(new_state, step)`` with step = rate * g / sqrt(accum + eps)."""
    g = _to_real(grad)
    if g.shape != state.accum.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state {state.accum.shape}")
    accum = state.accum + g * g
    rate = np.asarray(state.base_rate, dtype=float)
    if rate.ndim and rate.ndim < g.ndim:
        rate = rate.reshape(rate.shape + (1,) * (g.ndim - rate.ndim))
    step = rate * g / np.sqrt(accum + state.epsilon)
    return AdaGradState(accum, state.base_rate, state.epsilon), _from_real(step, grad)


def mc_average_gradient(grad_fn: Callable[[], np.ndarray], samples: int):
    """Mean of ``samples`` gradient evaluations (Monte Carlo averaging)."""
    if samples < 1:
        raise ValueError("need at least one Monte Carlo sample")
    first = np.asarray(grad_fn())
    if samples == 1:
        return first
    total = first.copy()
    identical = True
    for _ in range(samples - 1):
        g = np.asarray(grad_fn())
        identical = identical and np.array_equal(g, first)
        total = total + g
    return first.copy() if identical else total / samples


# ---------------------------------------------------------------------------
# Projected gradient ascent on beams


@dataclass(frozen=True)
class PGAParams:
    iterations: int = 50
    mc_samples: int = 1
    beam_rate: float = 0.8  # per sqrt(P_max / M)
    position_rate: float = 1e-3  # meters
    epsilon: float = 1e-8
    backtracks: int = 20  # step halvings before a slot keeps its beam


def _radial(w, v):
    q = np.sum(np.abs(w) ** 2, axis=-1, keepdims=True)
    return q, np.real(np.sum(np.conj(w) * v, axis=-1, keepdims=True))


def power_active(w, g, p_max: float, rtol: float = 1e-9):
    """Slots on the power sphere whose gradient points outward, shape ``(..., 1)``."""
    q, radial = _radial(np.asarray(w, dtype=complex), g)
    return (q >= p_max * (1 - rtol)) & (radial > 0)


def tangent_gradient(w, g, p_max: float, rtol: float = 1e-9):
    """Drop the outward radial part of ``g`` for beams sitting on the power sphere.

    The projection would cancel that part anyway; keeping it out of the
    AdaGrad accumulator stops it from freezing the tangential steps.
    """
    w = np.asarray(w, dtype=complex)
    q, radial = _radial(w, g)
    active = power_active(w, g, p_max, rtol)
    return np.where(active, g - radial / np.where(q > 0, q, 1.0) * w, g)


def drop_inward(w, step, active):
    """Remove the inward radial part of ``step`` on active slots.

    Per-coordinate scaling can tilt a tangential step into the ball, where
    the outward gradient makes it a descent direction at every length.
    """
    q, radial = _radial(w, step)
    inward = active & (radial < 0)
    return np.where(inward, step - radial / np.where(q > 0, q, 1.0) * w, step)


def _safeguarded_step(w, f_cur, step, p_max, backtracks, objective):
    """Projected step, halved per slot until the objective does not drop.

    Slots that still lose after ``backtracks`` halvings keep their current beam.
    """
    scale = np.ones(np.shape(f_cur))
    out_w, out_f = w.copy(), np.array(f_cur, dtype=float, copy=True)
    pending = np.ones(np.shape(f_cur), dtype=bool)
    for _ in range(backtracks + 1):
        cand = project_power(w + scale[..., None] * step, p_max)
        f = objective(cand)
        if not np.all(np.isfinite(f)):
            raise SolverError("non-finite objective in beamforming PGA")
        ok = pending & (f >= f_cur)
        if np.ndim(ok):
            out_w[ok], out_f[ok] = cand[ok], f[ok]
        elif ok:
            out_w, out_f = cand, np.asarray(f, dtype=float)
        pending = pending & ~ok
        if not np.any(pending):
            break
        scale = np.where(pending, scale * 0.5, scale)
    return out_w, out_f


def pga_beamforming(w0, a_b, a_e, eps1, eps2, p_max: float, params: PGAParams = PGAParams(),
                    grad_noise: Callable[[np.ndarray], np.ndarray] | None = None):
    """Projected AdaGrad ascent on per-slot beams.

    ``w0`` may hold one beam ``(M,)`` or one per slot ``(N, M)``; slots are
    independent. Returns the best iterate seen for every slot (the start is
    a candidate) and the per-iteration mean objective of the running iterate.
    Each AdaGrad step is halved per slot until the objective does not drop,
    so the running objective never decreases.
    ``grad_noise`` optionally perturbs each Monte Carlo gradient sample.
    """
    w = project_power(np.asarray(w0, dtype=complex), p_max)
    rate = params.beam_rate * math.sqrt(p_max / w.shape[-1])
    state = AdaGradState.zeros_like(w, rate, params.epsilon)
    best_w = w.copy()
    best_f = np.asarray(slot_objective(a_b, a_e, w, eps1, eps2), dtype=float)
    trace = [float(np.mean(best_f))]

    def sample():
        g = grad_beamforming(a_b, a_e, w, eps1, eps2)
        return g if grad_noise is None else g + grad_noise(g)

    f_cur = best_f.copy()
    for _ in range(params.iterations):
        g_full = mc_average_gradient(sample, params.mc_samples)
        active = power_active(w, g_full, p_max)
        state, step = adagrad_step(state, tangent_gradient(w, g_full, p_max))
        step = drop_inward(w, step, active)
        w, f = _safeguarded_step(w, f_cur, step, p_max, params.backtracks,
                                 lambda v: np.asarray(slot_objective(a_b, a_e, v, eps1, eps2), dtype=float))
        f_cur = f
        better = f > best_f
        if np.ndim(better):
            best_w[better] = w[better]
        elif better:
            best_w = w.copy()
        best_f = np.maximum(best_f, f)
        trace.append(float(np.mean(f)))
    return best_w, trace
