import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from micromacro import annealing as sa


def test_acceptance_examples():
    assert sa.acceptance_probability(2.0, 1.0, 1.0) == 1.0
    assert sa.acceptance_probability(1.0, 1.0, 1.0) == 1.0
    assert sa.acceptance_probability(0.0, 1.0, 1.0) == pytest.approx(0.3679, abs=1e-4)
    assert sa.acceptance_probability(0.0, 1.0, 1.0) == pytest.approx(math.exp(-1), rel=1e-15)
    with pytest.raises(ValueError):
        sa.acceptance_probability(0.0, 1.0, 0.0)


@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(1e-3, 10), st.floats(0, 5), st.floats(1, 3))
def test_acceptance_properties(new, old, T, bump, factor):
    p = sa.acceptance_probability(new, old, T)
    assert 0.0 <= p <= 1.0
    if new > old:
        assert p == 1.0
    assert sa.acceptance_probability(new + bump, old, T) >= p
    assert sa.acceptance_probability(new, old, T * factor) >= p


def test_accept_extremes():
    rng = sa.make_rng(0)
    assert all(sa.accept(1.0, rng) for _ in range(1000))
    assert not any(sa.accept(0.0, rng) for _ in range(1000))


def test_accept_half_fraction():
    rng = sa.make_rng(12345)
    frac = sum(sa.accept(0.5, rng) for _ in range(10_000)) / 10_000
    assert 0.48 <= frac <= 0.52


def test_accept_is_reproducible():
    a = [sa.accept(0.3, sa.make_rng(7)) for _ in range(3)]
    r1, r2 = sa.make_rng(99), sa.make_rng(99)
    assert [sa.accept(0.3, r1) for _ in range(200)] == [sa.accept(0.3, r2) for _ in range(200)]
    assert len(set(a)) == 1


def test_cool_examples():
    s = sa.AnnealSchedule(1.0, 0.8, 3)
    assert sa.cool(s).temperature == pytest.approx(0.8, rel=1e-15)
    assert sa.cool(sa.cool(s)).temperature == pytest.approx(0.64, rel=1e-15)
    assert sa.cool(s).cooling == 0.8 and sa.cool(s).rng_seed == 3
    for bad in (1.0, 0.0, 1.5):
        with pytest.raises(ValueError):
            sa.AnnealSchedule(1.0, bad)
    with pytest.raises(ValueError):
        sa.AnnealSchedule(0.0, 0.5)


@given(st.floats(1e-3, 10), st.floats(0.01, 0.99), st.integers(1, 200))
def test_cooling_is_geometric(T0, rho, K):
    assume(T0 * rho**K > 1e-300)
    s = sa.AnnealSchedule(T0, rho)
    temps = []
    for _ in range(K):
        s = sa.cool(s)
        temps.append(s.temperature)
    assert all(b < a for a, b in zip([T0] + temps, temps))
    assert s.temperature == pytest.approx(T0 * rho**K, rel=1e-12, abs=1e-300)


def test_cooling_never_reaches_zero():
    s = sa.AnnealSchedule(1.0, 0.01)
    for _ in range(500):
        s = sa.cool(s)
    assert s.temperature > 0
