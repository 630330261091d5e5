import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eulerci.fields import GridSpec, ScalarField
from eulerci.norms import holder_norm, seminorm

from conftest import random_scalar


@pytest.fixture(scope="module")
def grid():
    return GridSpec(32)


def _single_mode(grid, k=2):
    x = np.broadcast_to(grid.mesh()[0], grid.shape)
    return ScalarField.from_phys(grid, np.sin(2 * np.pi * k * x))


def test_order_zero_is_sup(grid):
    f = _single_mode(grid)
    assert holder_norm(f, 0) == pytest.approx(f.linf())
    assert seminorm(f, 0) == pytest.approx(f.linf())


def test_first_seminorm_of_sine(grid):
    # [sin(2 pi k x)]_1 = 2 pi k, hit exactly on the grid when the
    # cosine's extremum is a sample point
    f = _single_mode(grid, k=2)
    assert seminorm(f, 1) == pytest.approx(4 * np.pi, rel=1e-12)


def test_norm_accumulates_orders(grid):
    f = _single_mode(grid, k=2)
    # ||f||_1 = sup|f| + sup|f'|
    assert holder_norm(f, 1) == pytest.approx(f.linf() + 4 * np.pi,
                                              rel=1e-12)


def test_fractional_between_integers(grid, rng):
    f = random_scalar(grid, rng)
    s0 = seminorm(f, 0.0)
    s_half = seminorm(f, 0.5)
    s1 = seminorm(f, 1.0)
    # all the pairwise distances on the torus are below 1, so raising
    # the exponent can only grow the difference quotient
    assert s0 <= s_half * (1 + 1e-12)
    assert s_half <= s1 * (1 + 1e-12) or s_half == pytest.approx(s1)


def test_scaling(grid, rng):
    f = random_scalar(grid, rng)
    g = ScalarField.from_phys(grid, 3.5 * f.phys())
    for s in (0.0, 0.3, 1.0):
        assert holder_norm(g, s) == pytest.approx(3.5 * holder_norm(f, s),
                                                  rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1),
       s=st.sampled_from([0.0, 0.1, 0.5, 1.0]))
def test_triangle_inequality(seed, s):
    grid = GridSpec(16)
    r = np.random.default_rng(seed)
    f = random_scalar(grid, r)
    g = random_scalar(grid, r)
    fg = ScalarField.from_phys(grid, f.phys() + g.phys())
    assert holder_norm(fg, s) \
        <= (holder_norm(f, s) + holder_norm(g, s)) * (1 + 1e-12)


def test_constant_has_zero_seminorm(grid):
    c = ScalarField.from_phys(grid, np.full(grid.shape, 2.7))
    assert seminorm(c, 0.5) == 0.0
    assert seminorm(c, 1.0) < 1e-12
    assert holder_norm(c, 0.5) == pytest.approx(2.7)
