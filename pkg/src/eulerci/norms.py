"""Grid-sampled Hölder norms.

Fractional seminorms are measured over a dyadic family of lattice offsets
(coordinate axes and face diagonals, shift lengths 1, 2, 4, ... up to n/4
cells); integer seminorms take spectral derivatives over all multi-indices
of the given order.  For s = m + a,

    [f]_s   = max_|theta|=m [D^theta f]_a        (0 < a < 1)
    ||f||_s = ||f||_m + [f]_s,   ||f||_m = sum_{j<=m} [f]_j

with [f]_0 = ||f||_0 the sup norm.  Magnitudes are euclidean over vector
components and Frobenius over symmetric tensors, matching ``Field.mag``.
"""

from __future__ import annotations

import itertools

import numpy as np

from .fields import Field

OFFSET_DIRS = (
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, -1, 0), (0, 1, 1), (0, 1, -1), (1, 0, 1), (1, 0, -1),
)


def offset_shifts(n: int):
    """Dyadic shift lengths in cells: 1, 2, 4, ..., n//4."""
    out = []
    k = 1
    while k <= n // 4:
        out.append(k)
        k *= 2
    return out


def _deriv_multi(f: Field, theta) -> Field:
    """D^theta f for a multi-index given as a tuple of axis numbers."""
    fac = 1.0
    for axis in theta:
        fac = fac * f.grid.ik(axis)
    return f._new(spec=f.spec() * fac)


def _frac_seminorm(f: Field, a: float) -> float:
    """[f]_a over the dyadic offset family, 0 < a < 1."""
    p = f.phys()
    comps = p[None] if f.ncomp is None else p
    w = (np.ones(1) if f.ncomp is None else f.comp_weights).reshape(-1, 1, 1, 1)
    n = f.grid.n
    best = 0.0
    for d in OFFSET_DIRS:
        dlen = np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
        for k in offset_shifts(n):
            shifted = np.roll(comps, (-k * d[0], -k * d[1], -k * d[2]),
                              axis=(-3, -2, -1))
            diff = shifted - comps
            mag = np.sqrt((w * diff * diff).sum(axis=0)).max()
            h = k * dlen / n
            best = max(best, float(mag) / h ** a)
    return best


def seminorm(f: Field, s: float) -> float:
    """[f]_s for s >= 0 (integer orders use sup of derivatives)."""
    if s < 0:
        raise ValueError("order must be nonnegative")
    m = int(np.floor(s + 1e-12))
    a = s - m
    if a < 1e-12:
        if m == 0:
            return f.linf()
        return max(_deriv_multi(f, th).linf()
                   for th in itertools.combinations_with_replacement(range(3), m))
    if m == 0:
        return _frac_seminorm(f, a)
    return max(_frac_seminorm(_deriv_multi(f, th), a)
               for th in itertools.combinations_with_replacement(range(3), m))


def holder_norm(f: Field, s: float) -> float:
    """||f||_s = sum of integer seminorms up to floor(s), plus [f]_s."""
    m = int(np.floor(s + 1e-12))
    total = sum(seminorm(f, j) for j in range(m + 1))
    if s - m >= 1e-12:
        total += seminorm(f, s)
    return total
