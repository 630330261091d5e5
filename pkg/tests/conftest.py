import numpy as np
import pytest

from eulerci.fields import (GridSpec, ScalarField, SymTensorField,
                            VectorField, leray)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(32)


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_scalar(grid, rng, kmax=None, mean_free=True):
    """Random band-limited scalar with O(1) amplitude."""
    n = grid.n
    kmax = n // 3 if kmax is None else kmax
    c = np.zeros((n, n, n), dtype=complex)
    ax = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    mask = (np.abs(ax)[:, None, None] <= kmax) \
        & (np.abs(ax)[None, :, None] <= kmax) \
        & (np.abs(ax)[None, None, :] <= kmax)
    c[mask] = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
    if mean_free:
        c[0, 0, 0] = 0.0
    f = np.fft.ifftn(c).real
    f = f / max(np.abs(f).max(), 1e-30)
    return ScalarField.from_phys(grid, f)


def random_vector(grid, rng, kmax=None, div_free=False, mean_free=True):
    comps = np.stack([random_scalar(grid, rng, kmax, mean_free).phys()
                      for _ in range(3)])
    v = VectorField.from_phys(grid, comps)
    if div_free:
        v = leray(v)
    return v


def random_symtensor(grid, rng, kmax=None):
    a = np.stack([random_scalar(grid, rng, kmax).phys() for _ in range(6)])
    return SymTensorField.from_phys(grid, a)


@pytest.fixture(scope="session")
def mikado_family():
    """The standard building-block family with measured constants.

    Session-scoped: selection plus the constant measurement cost tens
    of seconds and every consumer wants the same object.
    """
    import dataclasses

    from eulerci.mikado import build_family, constant_M

    fam = build_family()
    mb, M = constant_M(fam, c0=0.5021001042585347)
    return dataclasses.replace(fam, M_bar=mb, M=M)
