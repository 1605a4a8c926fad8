import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from micromacro import feasible as fs
from micromacro.errors import InfeasibleError

LAM = 0.0107
LIMITS = fs.AntennaLimits(0.0, 4 * LAM, LAM / 2, 0.01)


# --- power -----------------------------------------------------------------


def test_project_power_examples():
    np.testing.assert_array_equal(fs.project_power([1, 0], 2.0), [1, 0])
    np.testing.assert_allclose(fs.project_power([2, 0], 1.0), [1, 0])
    np.testing.assert_allclose(fs.project_power([1, 1j], 1.0), np.array([1, 1j]) / math.sqrt(2))
    np.testing.assert_array_equal(fs.project_power([0, 0], 1.0), [0, 0])
    with pytest.raises(ValueError):
        fs.project_power([1], 0.0)


complex_vec = st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=8).map(
    lambda v: np.array([a + 1j * b for a, b in v]))


@given(complex_vec, st.floats(0.01, 20))
def test_project_power_properties(w, p):
    out = fs.project_power(w, p)
    q_in, q_out = fs.beam_power(w), fs.beam_power(out)
    assert q_out == pytest.approx(min(q_in, p), rel=1e-9, abs=1e-12)
    # idempotent
    np.testing.assert_allclose(fs.project_power(out, p), out, rtol=1e-12, atol=1e-15)
    # nonnegative real multiple of the input
    k = np.vdot(w, out) / max(np.vdot(w, w).real, 1e-300)
    assert abs(k.imag) < 1e-9 and k.real >= 0
    np.testing.assert_allclose(out, k.real * w, atol=1e-9)


def test_project_power_batched():
    W = np.array([[2, 0], [0.1, 0.1]], dtype=complex)
    out = fs.project_power(W, 1.0)
    np.testing.assert_allclose(out[0], [1, 0])
    np.testing.assert_array_equal(out[1], W[1])


# --- scalar projections ----------------------------------------------------


def test_step_clamp_examples():
    assert fs.project_antenna_step(0.05, 0.04, 0.02) == 0.05
    assert fs.project_antenna_step(0.10, 0.04, 0.02) == pytest.approx(0.06)
    assert fs.project_antenna_step(0.00, 0.04, 0.02) == pytest.approx(0.02)
    with pytest.raises(ValueError):
        fs.project_antenna_step(0.0, 0.0, 0.0)


def test_clamp_bounds_examples():
    assert fs.clamp_bounds(0.01, 0, 0.0428) == 0.01
    assert fs.clamp_bounds(-0.01, 0, 0.0428) == 0.0
    assert fs.clamp_bounds(0.05, 0, 0.0428) == 0.0428
    with pytest.raises(ValueError):
        fs.clamp_bounds(0.0, 1.0, 0.0)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(1e-4, 1))
def test_scalar_projections_idempotent(c, p, L):
    once = fs.project_antenna_step(c, p, L)
    assert abs(once - p) <= L + 1e-15
    assert fs.project_antenna_step(once, p, L) == once
    b = fs.clamp_bounds(c, -0.5, 0.5)
    assert fs.clamp_bounds(b, -0.5, 0.5) == b


# --- spacing ---------------------------------------------------------------


def test_enforce_min_spacing_examples():
    np.testing.assert_array_equal(fs.enforce_min_spacing([0, 0.01], 0.00535, (0, 0.0428)), [0, 0.01])
    np.testing.assert_allclose(fs.enforce_min_spacing([0, 0.004], 0.00535, (0, 0.0428)), [0, 0.00535])
    np.testing.assert_allclose(fs.enforce_min_spacing([0.0428, 0.0428], 0.00535, (0, 0.0428)), [0.03745, 0.0428])


def test_enforce_min_spacing_infeasible():
    with pytest.raises(InfeasibleError):
        fs.enforce_min_spacing([0, 0, 0], 0.03, (0, 0.0428))


@settings(max_examples=200)
@given(st.lists(st.floats(-0.01, 0.05), min_size=1, max_size=8), st.floats(0, 0.006))
def test_enforce_min_spacing_properties(x, gap):
    x = np.array(x)
    bounds = (0.0, 0.0428)
    assume((len(x) - 1) * gap <= bounds[1])
    out = fs.enforce_min_spacing(x, gap, bounds)
    assert np.all(out >= bounds[0] - 1e-12) and np.all(out <= bounds[1] + 1e-12)
    assert np.all(np.diff(np.sort(out)) >= gap - 1e-12)
    # no reordering: x_i < x_j implies out_i <= out_j
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(out[order]) >= -1e-15)
    np.testing.assert_array_equal(fs.enforce_min_spacing(out, gap, bounds), out)


def _brute_project(candidate, lower, upper, gap, step=0.0005):
    """Nearest ordered feasible point by grid search (M <= 3)."""
    grids = [np.arange(lo, hi + 1e-12, step) for lo, hi in zip(lower, upper)]
    best, best_d = None, math.inf
    for pt in itertools.product(*grids):
        if np.all(np.diff(pt) >= gap - 1e-12):
            d = np.sum((np.array(pt) - candidate) ** 2)
            if d < best_d:
                best, best_d = np.array(pt), d
    return best


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 0.0428), min_size=2, max_size=3))
def test_project_slot_is_feasible_and_close_to_nearest(cand):
    cand = np.sort(np.array(cand))
    prev = LIMITS.lo + LIMITS.min_spacing * np.arange(len(cand))
    out = fs.project_slot(cand, prev, LIMITS)
    lower = np.maximum(LIMITS.lo, prev - LIMITS.max_step)
    upper = np.minimum(LIMITS.hi, prev + LIMITS.max_step)
    assert np.all(out >= lower - 1e-12) and np.all(out <= upper + 1e-12)
    assert np.all(np.diff(out) >= LIMITS.min_spacing - 1e-12)
    # the sweep is a feasibility repair, not the Euclidean projection; it
    # must not be much farther than the true nearest point
    ref = _brute_project(cand, lower, upper, LIMITS.min_spacing)
    assert np.linalg.norm(out - cand) <= np.linalg.norm(ref - cand) * 2 + 1e-3


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_project_layout_feasible(N, M, seed):
    rng = np.random.default_rng(seed)
    init = LIMITS.lo + LIMITS.min_spacing * np.arange(M)
    cand = init + rng.normal(0, 0.02, size=(N, M))
    X = fs.project_layout(cand, init, LIMITS)
    assert fs.antenna_violations(X, init, LIMITS) == []
    # feasible input is left alone
    np.testing.assert_array_equal(fs.project_layout(X, init, LIMITS), X)


def test_antenna_violations_reports_each_kind():
    init = np.array([0.0, LAM / 2])
    X = np.array([[-0.001, 0.05], [0.02, 0.021]])
    text = " ".join(v.quantity for v in fs.antenna_violations(X, init, LIMITS))
    assert "lower bound" in text and "upper bound" in text and "step" in text and "spacing" in text


def test_power_violations():
    assert fs.power_violations(np.array([[1, 0], [2, 0]]), 1.0) == [fs.Violation(1, "power", 4.0, 1.0)]


# --- kinematics ------------------------------------------------------------


def test_straight_line_kinematics():
    traj = fs.straight_line((200, 200), (200, -200), 40, 50.0, 1.0, 15.0, 3.0)
    np.testing.assert_allclose(np.linalg.norm(traj.velocities(), axis=1), 10.0)
    assert fs.check_kinematics(traj) == []
    fast = fs.straight_line((200, 200), (200, -200), 20, 50.0, 1.0, 15.0, 3.0)
    v = fs.check_kinematics(fast)
    assert {x.quantity for x in v} == {"speed"}
    assert len(v) == 20 and v[0].value == pytest.approx(20.0)


def test_hover_kinematics():
    traj = fs.straight_line((5, 5), (5, 5), 10, 50.0, 1.0, 15.0, 3.0)
    assert fs.check_kinematics(traj) == []


def test_kinematics_pins_and_acceleration():
    traj = fs.straight_line((0, 0), (0, 40), 4, 50.0, 1.0, 15.0, 3.0)
    wp = traj.waypoints.copy()
    wp[2, 0] += 5.0
    wp[0, 1] = 1.0
    v = fs.check_kinematics(traj.with_waypoints(wp))
    q = {x.quantity for x in v}
    assert "acceleration" in q and "start pin" in q
    with pytest.raises(ValueError):
        fs.check_kinematics(fs.Trajectory(np.zeros((1, 2)), 50.0, np.zeros(2), np.zeros(2), 1.0, 1.0, 1.0))


@given(st.integers(1, 60), st.floats(1, 100))
def test_acceleration_discretization(N, dt):
    rng = np.random.default_rng(N)
    wp = rng.normal(size=(N + 1, 2))
    traj = fs.Trajectory(wp, 50.0, wp[0], wp[-1], dt, 1e9, 1e9)
    v = np.diff(wp, axis=0) / dt
    np.testing.assert_allclose(traj.velocities(), v)
    np.testing.assert_allclose(traj.accelerations(), np.diff(v, axis=0) / dt)
