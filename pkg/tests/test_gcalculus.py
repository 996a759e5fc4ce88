import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gergodic.gcalculus import DimensionError, GFunction, UncertaintyInterval, dissipativity_margin, g_eval

reals = st.floats(-1e3, 1e3, allow_nan=False)
G14 = GFunction.from_bounds(1.0, 4.0)


@pytest.mark.parametrize("a, expected", [(2.0, 4.0), (-2.0, -1.0), (0.0, 0.0)])
def test_branches(a, expected):
    assert g_eval(G14, a) == expected


@given(st.floats(0.1, 10), reals)
def test_classical_interval_is_linear(s, a):
    g = GFunction.from_bounds(s, s)
    assert g_eval(g, a) == pytest.approx(0.5 * s * a, rel=1e-14, abs=1e-300)


def test_margin_examples():
    assert dissipativity_margin(G14, -1.0, 0.0) == -1.0
    assert dissipativity_margin(G14, -5.0, 1.0) == -1.0
    assert dissipativity_margin(G14, -1.0, 1.0) == 3.0


@given(reals, reals)
def test_sublinear(a, b):
    assert g_eval(G14, a + b) <= g_eval(G14, a) + g_eval(G14, b) + 1e-9 * (1 + abs(a) + abs(b))


@given(reals, st.floats(0, 100))
def test_positive_homogeneity(a, t):
    assert g_eval(G14, t * a) == pytest.approx(t * g_eval(G14, a), rel=1e-12, abs=1e-12)


def test_sandwich_and_monotone_on_random_pairs():
    rng = np.random.default_rng(0)
    b = rng.normal(size=10_000) * 10
    a = b + rng.exponential(size=b.size) * 5
    diff = G14.scalar(a) - G14.scalar(b)
    assert np.all(diff >= 0.5 * 1.0 * (a - b) - 1e-12)
    assert np.all(diff <= 0.5 * 4.0 * (a - b) + 1e-12)


def test_matches_brute_force_over_levels():
    vs = np.linspace(1.0, 4.0, 64)
    for a in np.linspace(-7, 7, 57):
        assert abs(g_eval(G14, a) - 0.5 * np.max(vs * a)) <= 1e-12


def test_diagonal_two_dimensional():
    g = GFunction(UncertaintyInterval((1.0, 2.0), (4.0, 3.0), dim=2))
    assert g_eval(g, np.diag([2.0, -2.0])) == pytest.approx(4.0 - 2.0)
    # off-diagonal entries do not contribute under a diagonal uncertainty set
    assert g_eval(g, np.array([[2.0, 5.0], [5.0, -2.0]])) == pytest.approx(2.0)


def test_rejects_bad_input():
    with pytest.raises(DimensionError):
        g_eval(G14, np.eye(2))
    g2 = GFunction(UncertaintyInterval(1.0, 2.0, dim=2))
    with pytest.raises(DimensionError):
        g_eval(g2, 1.0)
    with pytest.raises(ValueError):
        g_eval(g2, np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        UncertaintyInterval(0.0, 1.0)
    with pytest.raises(ValueError):
        UncertaintyInterval(2.0, 1.0)


def test_levels():
    np.testing.assert_allclose(UncertaintyInterval(1.0, 4.0).levels(3), [1.0, 2.5, 4.0])
