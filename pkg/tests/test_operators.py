"""Order(-1) operators, mollification, and residual bookkeeping.

The identities here are the ones the whole construction leans on:
div(R f) = f, curl(B v) = v, the commutator's quadratic smallness, and
the oscillatory decay of the inverse divergence.
"""

import numpy as np
import pytest

from eulerci.errors import PhaseDegenerateError
from eulerci.euler import abc_flow
from eulerci.fields import (GridSpec, ScalarField, VectorField, curl,
                            divergence, div_sym, laplacian, leray,
                            sym_outer, trace)
from eulerci.operators import (biot_savart, cet_commutator, div_div,
                               er_residual, inverse_divergence, mollify,
                               mollify_state, oscillatory_decay_probe,
                               pressure_from)

from conftest import random_scalar, random_symtensor, random_vector


def _abc_state(grid):
    """Steady solution with its pressure: the nonlinear term is a pure
    gradient for this field, so p = -|v|^2/2 (mean removed) closes it."""
    v = abc_flow(grid)
    sp = (v.phys() ** 2).sum(axis=0)
    p = ScalarField.from_phys(grid, -(sp - sp.mean()) / 2.0)
    return v, p


def test_mollify_preserves_mean(grid32, rng):
    f = random_scalar(grid32, rng, mean_free=False)
    g = mollify(f, 1.0 / 10)
    assert float(g.mean()) == pytest.approx(float(f.mean()), abs=1e-13)


def test_mollify_constant_is_identity(grid32):
    c = ScalarField.from_phys(grid32, np.full(grid32.shape, 1.7))
    assert np.abs(mollify(c, 0.1).phys() - 1.7).max() < 1e-13


def test_mollify_smooths(grid32, rng):
    f = random_scalar(grid32, rng)
    g = mollify(f, 1.0 / 4)
    assert g.linf() < f.linf()


def test_inverse_divergence_identity(grid32, rng):
    f = random_vector(grid32, rng)  # band-limited, mean-free
    T = inverse_divergence(f)
    err = div_sym(T) - f
    assert err.linf() < 1e-12 * max(1.0, f.linf())
    assert trace(T).linf() < 1e-12 * max(1.0, T.linf())


def test_inverse_divergence_full_spectrum(grid32, rng):
    # with every representable mode present the identity can only fail
    # on the degenerate set (all components 0 or Nyquist), where no
    # first derivative exists at all; elsewhere it is exact
    f = random_vector(grid32, rng, kmax=grid32.n // 2)
    err = (div_sym(inverse_divergence(f)) - f).spec()
    n = grid32.n
    degenerate = np.ones(grid32.spec_shape, dtype=bool)
    for m in grid32.modes:
        degenerate &= np.broadcast_to((np.abs(m) == n // 2) | (m == 0),
                                      grid32.spec_shape)
    off = np.asarray(err)[..., ~degenerate] if np.asarray(err).ndim > 3 \
        else np.asarray(err)[~degenerate]
    assert np.abs(off).max() < 1e-12 * max(1.0, f.linf())


def test_biot_savart_inverts_curl(grid32, rng):
    v = random_vector(grid32, rng, div_free=True)
    z = biot_savart(v)
    assert (curl(z) - v).linf() < 1e-11 * max(1.0, v.linf())
    assert divergence(z).linf() < 1e-11 * max(1.0, z.linf())


def test_div_div_is_composition(grid32, rng):
    T = random_symtensor(grid32, rng)
    a = div_div(T)
    b = divergence(div_sym(T))
    assert (a - b).linf() < 1e-10 * max(1.0, a.linf())


def test_pressure_solves_div_div(grid32, rng):
    # keep the quadratic inside the alias-free band (2 kmax < n/2) so
    # the raw Laplacian and the effective-symbol solve agree everywhere
    v = random_vector(grid32, rng, kmax=grid32.n // 4 - 1, div_free=True)
    p = pressure_from(v)
    lhs = laplacian(p)
    rhs = div_div(sym_outer(v)) * (-1.0)
    assert (lhs - rhs).linf() < 1e-9 * max(1.0, rhs.linf())
    assert abs(float(p.mean())) < 1e-13


def test_er_residual_steady_abc(grid64):
    v, p = _abc_state(grid64)
    dtv = VectorField.zeros(grid64)
    res = er_residual(v, p, None, dtv)
    scale = v.linf() ** 2
    assert res.unprojected < 1e-11 * scale
    assert res.projected < 1e-11 * scale


def test_er_residual_flags_wrong_pressure(grid64):
    v, p = _abc_state(grid64)
    dtv = VectorField.zeros(grid64)
    bad = ScalarField.from_phys(grid64, 0.5 * p.phys())
    res = er_residual(v, bad, None, dtv)
    # the projection quotients the pressure out entirely
    assert res.projected < 1e-11 * v.linf() ** 2
    assert res.unprojected > 1e-2


def test_mollified_state_stays_exact(grid64):
    # the commutator absorption keeps the mollified triple on the
    # relaxed equation with zero residual, not merely a small one
    v, p = _abc_state(grid64)
    from eulerci.fields import SymTensorField
    R = SymTensorField.zeros(grid64)
    v_l, p_l, R_l = mollify_state(v, p, R, ell=1.0 / 12)
    res = er_residual(v_l, p_l, R_l, VectorField.zeros(grid64))
    assert res.unprojected < 1e-10 * max(1.0, v.linf() ** 2)


def test_cet_commutator_quadratic_in_ell(grid64, rng):
    v = random_vector(grid64, rng, kmax=4)
    ells = [1.0 / 8, 1.0 / 16, 1.0 / 32]
    norms = [cet_commutator(v, ell).linf() for ell in ells]
    slope = np.polyfit(np.log(ells), np.log(norms), 1)[0]
    assert slope >= 1.8  # theory: 2


def test_oscillatory_decay(grid64, rng):
    a = random_vector(grid64, rng, kmax=2)
    disp = random_vector(grid64, rng, kmax=2)
    disp = VectorField.from_phys(grid64, 0.02 * disp.phys())
    rep = oscillatory_decay_probe(a, disp,
                                  [(2, 0, 0), (4, 0, 0), (8, 0, 0)],
                                  alpha=0.1)
    assert rep.slope <= -0.8  # theory: alpha - 1 = -0.9
    assert len(rep.freqs) == 3


def test_oscillatory_probe_rejects_folded_phase(grid64, rng):
    a = random_vector(grid64, rng, kmax=2)
    disp = random_vector(grid64, rng, kmax=2)
    disp = VectorField.from_phys(grid64, 5.0 * disp.phys())
    with pytest.raises(PhaseDegenerateError):
        oscillatory_decay_probe(a, disp, [(2, 0, 0), (4, 0, 0)])
