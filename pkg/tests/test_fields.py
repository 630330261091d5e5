"""Grid container and the first-derivative calculus on it.

The load-bearing facts: spectral derivatives of resolvable modes are
exact, composition identities (div curl, curl grad, Leray) hold to
rounding on the whole representable spectrum, and the effective-symbol
variants stay consistent off the Nyquist planes.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eulerci.fields import (GridSpec, ScalarField, curl, dealias, deriv,
                            divergence, gradient, hermitian_defect,
                            inv_laplacian, laplacian, leray, sample_at,
                            sym_outer, trace, traceless)

from conftest import random_scalar, random_symtensor, random_vector


def _full(grid, broadcastable):
    return np.broadcast_to(broadcastable, grid.shape)


def test_grid_basics(grid32):
    assert grid32.n == 32
    assert grid32.shape == (32, 32, 32)
    assert grid32.h == pytest.approx(1.0 / 32)
    assert grid32.axis[1] - grid32.axis[0] == pytest.approx(grid32.h)
    assert grid32.spec_shape == (32, 32, 17)


def test_deriv_exact_on_single_mode(grid32):
    x = _full(grid32, grid32.mesh()[0])
    f = ScalarField.from_phys(grid32, np.sin(2 * np.pi * 3 * x))
    df = deriv(f, 0)
    expect = 2 * np.pi * 3 * np.cos(2 * np.pi * 3 * x)
    assert np.abs(df.phys() - expect).max() < 1e-11


def test_second_deriv_sign(grid32):
    y = _full(grid32, grid32.mesh()[1])
    f = ScalarField.from_phys(grid32, np.cos(2 * np.pi * y))
    d2 = deriv(f, 1, order=2)
    assert np.allclose(d2.phys(), -(2 * np.pi) ** 2 * f.phys(), atol=1e-10)


def test_roundtrip_phys_spec(grid32, rng):
    f = random_scalar(grid32, rng)
    g = ScalarField.from_spec(grid32, f.spec())
    assert np.abs(f.phys() - g.phys()).max() < 1e-13


def test_hermitian_defect_of_real_field(grid32, rng):
    assert hermitian_defect(random_scalar(grid32, rng)) < 1e-13


def test_div_curl_is_zero(grid32, rng):
    v = random_vector(grid32, rng)
    assert divergence(curl(v)).linf() < 1e-11 * max(1.0, v.linf())


def test_curl_grad_is_zero(grid32, rng):
    f = random_scalar(grid32, rng)
    assert curl(gradient(f)).linf() < 1e-11


def test_laplacian_inverse_roundtrip(grid32, rng):
    f = random_scalar(grid32, rng, mean_free=True)
    g = inv_laplacian(laplacian(f))
    assert np.abs(f.phys() - g.phys()).max() < 1e-10


def test_leray_kills_gradients(grid32, rng):
    f = random_scalar(grid32, rng)
    assert leray(gradient(f)).linf() < 1e-11


def test_leray_fixes_divergence_free(grid32, rng):
    v = random_vector(grid32, rng, div_free=True)
    w = leray(v)
    assert np.abs(v.phys() - w.phys()).max() < 1e-12 * max(1.0, v.linf())


def test_leray_exact_on_full_spectrum(grid32, rng):
    # no band limit at all: every representable mode, Nyquist included.
    # the effective-symbol inverse makes div(leray v) vanish identically
    v = random_vector(grid32, rng, kmax=grid32.n // 2, mean_free=False)
    assert divergence(leray(v)).linf() < 1e-11 * max(1.0, v.linf())


def test_k2_tilde_matches_k2_off_nyquist(grid32):
    n = grid32.n
    k2 = np.asarray(grid32.k2)
    k2t = np.asarray(grid32.k2_tilde)
    on_nyquist = np.zeros(grid32.spec_shape, dtype=bool)
    for m in grid32.modes:
        on_nyquist |= np.broadcast_to(np.abs(m) == n // 2,
                                      grid32.spec_shape)
    assert np.allclose(k2[~on_nyquist], k2t[~on_nyquist])
    # the effective symbol only ever loses energy relative to the raw one
    assert (k2t <= k2 + 1e-12).all()


def test_inv_k2_tilde_zero_on_degenerate_modes(grid32):
    # modes whose every component is 0 or Nyquist carry no first
    # derivative; their inverse must be exactly zero
    n = grid32.n
    inv = np.asarray(grid32.inv_k2_tilde)
    degenerate = np.ones(grid32.spec_shape, dtype=bool)
    for m in grid32.modes:
        degenerate &= np.broadcast_to(
            (np.abs(m) == n // 2) | (m == 0), grid32.spec_shape)
    assert np.abs(inv[degenerate]).max() == 0.0
    assert np.abs(inv[~degenerate]).min() > 0.0


def test_trace_of_traceless(grid32, rng):
    T = random_symtensor(grid32, rng)
    assert trace(traceless(T)).linf() < 1e-13 * max(1.0, T.linf())


def test_sym_outer_trace_is_speed_squared(grid32, rng):
    v = random_vector(grid32, rng)
    lhs = trace(sym_outer(v)).phys()
    rhs = (v.phys() ** 2).sum(axis=0)
    assert np.abs(lhs - rhs).max() < 1e-12 * max(1.0, rhs.max())


def test_dealias_truncates(grid32, rng):
    f = random_scalar(grid32, rng, kmax=grid32.n // 2)
    g = dealias(f)
    spec = np.fft.rfftn(g.phys())
    cut = grid32.n / 3.0
    ax = np.fft.fftfreq(grid32.n, d=1.0 / grid32.n)
    high = (np.abs(ax)[:, None, None] > cut) \
        | (np.abs(ax)[None, :, None] > cut) \
        | (np.abs(ax[:grid32.n // 2 + 1])[None, None, :] > cut)
    assert np.abs(spec[high]).max() < 1e-10 * max(1.0, np.abs(spec).max())


def test_sample_at_grid_point(grid32, rng):
    f = random_scalar(grid32, rng)
    pts = np.array([[grid32.axis[2], grid32.axis[5], grid32.axis[7]],
                    [grid32.axis[0], grid32.axis[0], grid32.axis[0]]])
    vals = sample_at(f, pts)
    assert vals[0] == pytest.approx(f.phys()[2, 5, 7], abs=1e-11)
    assert vals[1] == pytest.approx(f.phys()[0, 0, 0], abs=1e-11)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_derivative_linearity(seed):
    grid = GridSpec(16)
    r = np.random.default_rng(seed)
    f = random_scalar(grid, r)
    g = random_scalar(grid, r)
    a, b = r.normal(size=2)
    lhs = deriv(ScalarField.from_phys(grid, a * f.phys() + b * g.phys()), 0)
    rhs = a * deriv(f, 0).phys() + b * deriv(g, 0).phys()
    assert np.abs(lhs.phys() - rhs).max() < 1e-10 * (abs(a) + abs(b) + 1)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_leray_is_projection(seed):
    grid = GridSpec(16)
    r = np.random.default_rng(seed)
    v = random_vector(grid, r, kmax=8, mean_free=False)
    once = leray(v)
    twice = leray(once)
    assert np.abs(once.phys() - twice.phys()).max() \
        < 1e-12 * max(1.0, v.linf())
