import math

import numpy as np
import pytest
from scipy.optimize import minimize

from micromacro import geometry as geo
from micromacro import sca
from micromacro.errors import InfeasibleError
from micromacro.feasible import check_kinematics, straight_line

G = geo.ScenarioGeometry()


def sub_from(q0, s1, s2, bob=(0.0, 0.0), eve=(400.0, 0.0), H=50.0, dt=1.0, v_max=15.0, a_max=3.0):
    q0 = np.asarray(q0, dtype=float)
    N = q0.shape[0] - 1
    bob, eve = np.asarray(bob, dtype=float), np.asarray(eve, dtype=float)
    u0 = np.sum((q0[1:] - bob) ** 2, axis=1) + H**2
    w0 = np.sum((q0[1:] - eve) ** 2, axis=1) + H**2
    return sca.ConvexSubproblem(q0, u0, w0, np.broadcast_to(np.asarray(s1, float), (N,)).copy(),
                                np.broadcast_to(np.asarray(s2, float), (N,)).copy(), bob, eve, H, dt, v_max, a_max)


# --- slacks and surrogate --------------------------------------------------


def test_init_slacks_examples():
    hover = straight_line((0, 0), (0, 0), 3, 50.0, 1.0, 15.0, 3.0)
    assert np.all(sca.init_slacks(hover, G).u == 2500.0)
    t = straight_line((200, 200), (200, 200), 2, 50.0, 1.0, 15.0, 3.0)
    assert np.all(sca.init_slacks(t, G).w_slack == 82500.0)
    line = straight_line((200, 200), (200, -200), 40, 50.0, 1.0, 15.0, 3.0)
    s = sca.init_slacks(line, G)
    assert np.all(s.u >= 2500) and np.all(s.w_slack >= 2500)


def test_bob_term_tangency_and_zero_beam():
    sub = sub_from(np.zeros((3, 2)), [50.0, 0.0], 0.0)
    sub = sca.ConvexSubproblem(sub.q0, np.array([100.0, 100.0]), sub.w0, sub.s1, sub.s2, sub.bob_xy, sub.eve_xy,
                               50.0, 1.0, 15.0, 3.0)
    np.testing.assert_allclose(sub.bob_term(np.array([100.0, 100.0])), [math.log2(1.5), 0.0], rtol=1e-15)
    assert sub.bob_term(np.array([120.0, 7.0]))[1] == 0.0
    assert sub.bob_term(np.array([120.0, 1.0]))[0] <= math.log2(1 + 50 / 120)


def test_bob_term_lower_bound_grid():
    for u0 in np.geomspace(10, 1e6, 9):
        for s1 in np.geomspace(1e-3, 1e5, 9):
            u = u0 * np.geomspace(0.05, 20, 101)
            sub = sca.ConvexSubproblem(np.zeros((2, 2)), np.array([u0]), np.array([1.0]), np.array([s1]),
                                       np.array([0.0]), np.zeros(2), np.zeros(2), 1.0, 1.0, 1.0, 1.0)
            lower = np.array([sub.bob_term(np.array([x]))[0] for x in u])
            true = np.log2(1 + s1 / u)
            assert np.all(lower - true <= 1e-10 * np.maximum(1, np.abs(true)))
            off = np.abs(u - u0) > 1e-6 * u0
            assert np.all(lower[off] < true[off])


def test_linearize_rejects_bad_inputs():
    line = straight_line((200, 200), (200, -200), 40, 50.0, 1.0, 15.0, 3.0)
    W = np.ones((40, 2), dtype=complex) / math.sqrt(2)
    x = geo.ula_positions(2, G.wavelength / 2)
    bad = sca.SlackState(np.zeros(40), np.ones(40))
    with pytest.raises(ValueError):
        sca.linearize_subproblem(line, bad, W, G, x)
    with pytest.raises(ValueError):
        sca.linearize_subproblem(line, sca.init_slacks(line, G), W, G.with_(alpha=2.5), x)


@pytest.mark.parametrize("seed", range(5))
def test_surrogate_tangent_and_below_true_objective(seed):
    rng = np.random.default_rng(seed)
    line = straight_line((200, 200), (200, -200), 40, 50.0, 1.0, 15.0, 3.0)
    M = 2
    W = rng.normal(size=(40, M)) + 1j * rng.normal(size=(40, M))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    sub = sca.linearize_subproblem(line, sca.init_slacks(line, G), W, G, geo.ula_positions(M, G.wavelength / 2))
    q0 = line.waypoints
    assert abs(sub.surrogate(q0) - sub.true_objective(q0)) < 1e-10
    for _ in range(50):
        q = q0 + rng.normal(0, rng.choice([0.1, 5.0, 50.0]), q0.shape)
        if np.any(sub.eve_tangent(q) <= 0):
            continue
        assert sub.surrogate(q) <= sub.true_objective(q) + 1e-10


# --- convex subproblem -----------------------------------------------------


def test_singleton_feasible_set_returns_expansion_point():
    q0 = np.linspace([200, 200], [200, -200], 41)
    sub = sub_from(q0, 3e4, 1e4, v_max=10.0, a_max=0.0)
    out = sca.solve_convex_subproblem(sub)
    np.testing.assert_array_equal(out.q, q0)
    assert out.objective == pytest.approx(sub.surrogate(q0), abs=1e-14)


def test_bob_constraint_active_without_eve():
    q0 = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]])
    sub = sub_from(q0, 5e4, 0.0, bob=(10.0, 40.0), v_max=30.0, a_max=30.0)
    out = sca.solve_convex_subproblem(sub)
    np.testing.assert_allclose(out.u, sub.d_bob_sq(out.q), rtol=1e-6)
    # the free waypoint moves toward Bob
    assert sub.d_bob_sq(out.q)[0] < sub.d_bob_sq(q0)[0]
    assert out.objective > sub.surrogate(q0)


def test_mirror_symmetric_instance_gives_mirror_symmetric_path():
    # Bob and Eve on the x-axis; start and end mirror images across it
    q0 = np.linspace([200, 200], [200, -200], 41)
    sub = sub_from(q0, 3e4, 3e4)
    out = sca.solve_convex_subproblem(sub)
    mirrored = out.q[::-1] * np.array([1.0, -1.0])
    np.testing.assert_allclose(out.q, mirrored, atol=1e-5)
    assert abs(out.q[20, 1]) < 1e-5


def _reference(sub):
    """SLSQP on the free waypoint with slacks eliminated."""
    H2 = sub.altitude**2
    floor = sub.eve_tangent(sub.q0) > H2 * (1 + 1e-7)

    def full(z):
        q = sub.q0.copy()
        q[1] = z
        return q

    def kin(z):
        q = full(z)
        v = np.diff(q, axis=0)
        a = np.diff(q, 2, axis=0)
        c = [(sub.v_max * sub.dt) ** 2 - np.sum(v**2, axis=1), [(sub.a_max * sub.dt**2) ** 2 - np.sum(a**2)]]
        tan = sub.eve_tangent(q)
        c.append(np.where(floor, tan - H2, tan))
        return np.concatenate(c)

    best = None
    for start in (sub.q0[1], 0.5 * (sub.q0[0] + sub.q0[2])):
        r = minimize(lambda z: -sub.surrogate(full(z)), start, method="SLSQP",
                     constraints=[{"type": "ineq", "fun": kin}], options={"ftol": 1e-14, "maxiter": 1000})
        if np.all(kin(r.x) >= -1e-9) and (best is None or -r.fun > best):
            best = -r.fun
    return best


@pytest.mark.parametrize("seed", range(8))
def test_subproblem_agrees_with_reference_solver(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-100, 100, 2)
    heading = rng.normal(size=2)
    heading *= rng.uniform(0, 15) / np.linalg.norm(heading)
    q0 = np.array([a, a + heading, a + 2 * heading])
    sub = sub_from(q0, rng.uniform(1e3, 1e5), rng.uniform(0, 1e5), bob=rng.uniform(-200, 200, 2),
                   eve=rng.uniform(-200, 200, 2), v_max=rng.uniform(16, 30), a_max=rng.uniform(1, 10))
    out = sca.solve_convex_subproblem(sub)
    ref = _reference(sub)
    assert out.objective == pytest.approx(ref, abs=1e-6)
    assert out.objective >= sub.surrogate(q0) - 1e-12


# --- full trajectory solver ------------------------------------------------


def uav(N=40, M=2, geometry=G, seed=0, **kw):
    return sca.UAVProblemSpec(geometry, N, M, seed=seed, **kw)


def test_upfront_infeasibility():
    with pytest.raises(InfeasibleError):
        uav(N=20)
    with pytest.raises(InfeasibleError):
        uav(N=40, v_max=9.0)


@pytest.fixture(scope="module")
def base_solution():
    s = uav()
    return s, sca.solve_p2(s)


def test_solution_is_feasible_and_consistent(base_solution):
    s, sol = base_solution
    assert sol.violations() == []
    q = sol.trajectory.waypoints
    assert tuple(q[0]) == s.start and tuple(q[-1]) == s.end
    # recompute through geometry alone
    x = s.antenna_x
    rates = []
    for xy, w in zip(sol.trajectory.slot_xy, sol.beam_schedule.beams):
        uav_pos = G.uav_at(*xy)
        gb = geo.snr(geo.channel_vector(G, x, uav_pos, geo.BOB), w, G.noise_bob)
        ge = geo.snr(geo.channel_vector(G, x, uav_pos, geo.EVE), w, G.noise_eve)
        rates.append(geo.secrecy_rate(gb, ge))
    assert abs(geo.average_secrecy_rate(rates) - sol.asr) < 1e-9


def test_sca_rounds_are_monotone(base_solution):
    _, sol = base_solution
    for r in sol.trace:
        assert r.surrogate_after >= r.surrogate_before - 1e-6
    best = [r.best for r in sol.trace]
    assert np.all(np.diff(best) >= 0)


def test_trajectory_approaches_bob(base_solution):
    s, sol = base_solution
    line = s.initial_trajectory()
    d_opt = geo.horizontal_distances_sq(sol.trajectory.slot_xy, G.bob, 50.0)
    d_line = geo.horizontal_distances_sq(line.slot_xy, G.bob, 50.0)
    mid = slice(s.N // 4, 3 * s.N // 4)
    assert np.all(d_opt[mid] < d_line[mid])
    assert sol.asr > float(np.mean(np.maximum(sca.slot_rates(s, line, sca.optimize_beams_along(s, line)), 0)))


def test_removing_eve_bends_further_toward_bob():
    # Eve just behind Bob, so avoiding her pulls the path away from Bob
    g = G.with_(eve=geo.Position3D(-100.0, 0.0, 0.0))
    with_eve = sca.solve_p2(uav(geometry=g))
    alone = sca.solve_p2(uav(geometry=g.with_(noise_eve=math.inf)))
    d = lambda sol: float(np.min(geo.horizontal_distances_sq(sol.trajectory.slot_xy, G.bob, 50.0)))  # noqa: E731
    assert d(alone) < d(with_eve)


def test_reproducible():
    a = sca.solve_p2(uav(N=30, seed=3, params=sca.UAVParams(sca_iterations=5)))
    b = sca.solve_p2(uav(N=30, seed=3, params=sca.UAVParams(sca_iterations=5)))
    np.testing.assert_array_equal(a.trajectory.waypoints, b.trajectory.waypoints)
    np.testing.assert_array_equal(a.beam_schedule.beams, b.beam_schedule.beams)
    assert a.trace == b.trace
    assert check_kinematics(a.trajectory) == []
