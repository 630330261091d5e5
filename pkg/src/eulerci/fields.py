"""Periodic fields on the unit 3-torus and their spectral calculus.

All fields live on a uniform n**3 grid over [0,1)^3 with sample points
x_i = i/n.  Spectral representations use the real-FFT layout of
``np.fft.rfftn`` (shape (n, n, n//2+1), unnormalised forward transform),
so integer modes m and physical wavenumbers kappa = 2*pi*m.

Fields are logically immutable: stored arrays are marked read-only and
every operation returns a new field.  Scalar, vector and symmetric-tensor
fields share one implementation parameterised by the number of components;
symmetric tensors store the six upper-triangle components in the order
(xx, xy, xz, yy, yz, zz).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import GridError, NonZeroMeanError

# index pairs for the symmetric-tensor component order
SYM_COMPS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
# SYM_INDEX[i][j] -> component slot of T_ij
SYM_INDEX = ((0, 1, 2), (1, 3, 4), (2, 4, 5))
# multiplicity of each stored component in a full contraction
SYM_WEIGHT = np.array([1.0, 2.0, 2.0, 1.0, 2.0, 1.0])


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on the unit torus."""

    n: int

    def __post_init__(self):
        if self.n < 8 or self.n % 2 != 0:
            raise GridError(f"grid size must be even and >= 8, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def spec_shape(self):
        return (self.n, self.n, self.n // 2 + 1)

    @functools.cached_property
    def axis(self) -> np.ndarray:
        x = np.arange(self.n) / self.n
        x.setflags(write=False)
        return x

    @functools.cached_property
    def modes(self):
        """Integer mode arrays (mx, my, mz), broadcastable to spec_shape."""
        n = self.n
        mx = np.rint(np.fft.fftfreq(n) * n).astype(np.int64).reshape(n, 1, 1)
        my = mx.reshape(1, n, 1)
        mz = np.arange(n // 2 + 1, dtype=np.int64).reshape(1, 1, n // 2 + 1)
        for a in (mx, my, mz):
            a.setflags(write=False)
        return mx, my, mz

    @functools.cached_property
    def k2(self) -> np.ndarray:
        """|kappa|^2 on the spectral grid."""
        mx, my, mz = self.modes
        out = (2.0 * np.pi) ** 2 * (mx * mx + my * my + mz * mz).astype(float)
        out.setflags(write=False)
        return out

    @functools.cached_property
    def inv_k2(self) -> np.ndarray:
        """1/|kappa|^2 with the zero mode set to 0."""
        k2 = self.k2.copy()
        k2[0, 0, 0] = 1.0
        out = 1.0 / k2
        out[0, 0, 0] = 0.0
        out.setflags(write=False)
        return out

    @functools.cached_property
    def k2_tilde(self) -> np.ndarray:
        """-(sum of squared first-derivative symbols).

        Equals |kappa|^2 except on the Nyquist planes, where the zeroed
        odd-derivative rows make the effective wavenumber component 0.
        Operators that compose first derivatives with an inverse Laplacian
        must use this so their algebraic identities hold mode by mode.
        """
        nh = self.n // 2
        mt = [np.where(np.abs(m) == nh, 0, m) for m in self.modes]
        out = (2.0 * np.pi) ** 2 * (
            mt[0] * mt[0] + mt[1] * mt[1] + mt[2] * mt[2]).astype(float)
        out.setflags(write=False)
        return out

    @functools.cached_property
    def inv_k2_tilde(self) -> np.ndarray:
        """1/k2_tilde, zero where no first derivative survives.

        The zeroed modes (every component 0 or Nyquist) carry no
        representable derivative at all: div, grad and curl all vanish
        there identically, so dropping them keeps every composition
        exact on the rest of the spectrum.
        """
        k2 = self.k2_tilde.copy()
        deg = k2 == 0.0
        k2[deg] = 1.0
        out = 1.0 / k2
        out[deg] = 0.0
        out.setflags(write=False)
        return out

    def ik(self, axis: int, order: int = 1) -> np.ndarray:
        """(i*kappa_axis)**order with the Nyquist plane zeroed for odd orders.

        Odd derivatives of the unresolved Nyquist cosine alias to zero on the
        collocation grid, so the corresponding symbol entry must vanish to
        keep derivatives of real fields real.
        """
        m = self.modes[axis].astype(float)
        fac = (2j * np.pi * m) ** order
        if order % 2 == 1:
            fac = np.where(np.abs(m) == self.n // 2, 0.0, fac)
        return fac

    def mesh(self):
        """Physical coordinate arrays (broadcastable) X, Y, Z."""
        x = self.axis
        return (
            x.reshape(self.n, 1, 1),
            x.reshape(1, self.n, 1),
            x.reshape(1, 1, self.n),
        )


def _ro(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Field:
    """A real field with ``ncomp`` components; see module docstring."""

    ncomp = None  # subclasses fix this

    def __init__(self, grid: GridSpec, phys=None, spec=None):
        if phys is None and spec is None:
            raise GridError("need at least one representation")
        self.grid = grid
        nc = self.ncomp
        if phys is not None:
            phys = np.asarray(phys, dtype=float)
            want = (nc,) + grid.shape if nc else grid.shape
            if phys.shape != want:
                raise GridError(f"phys shape {phys.shape}, expected {want}")
            phys = _ro(phys)
        if spec is not None:
            spec = np.asarray(spec, dtype=complex)
            want = (nc,) + grid.spec_shape if nc else grid.spec_shape
            if spec.shape != want:
                raise GridError(f"spec shape {spec.shape}, expected {want}")
            spec = _ro(spec)
        self._phys = phys
        self._spec = spec

    @classmethod
    def from_phys(cls, grid, arr):
        return cls(grid, phys=arr)

    @classmethod
    def from_spec(cls, grid, arr):
        return cls(grid, spec=arr)

    @classmethod
    def zeros(cls, grid):
        shape = ((cls.ncomp,) if cls.ncomp else ()) + grid.shape
        return cls(grid, phys=np.zeros(shape))

    def phys(self) -> np.ndarray:
        if self._phys is None:
            self._phys = _ro(np.fft.irfftn(self._spec, s=self.grid.shape,
                                           axes=(-3, -2, -1)))
        return self._phys

    def spec(self) -> np.ndarray:
        if self._spec is None:
            self._spec = _ro(np.fft.rfftn(self._phys, axes=(-3, -2, -1)))
        return self._spec

    def mean(self):
        """Torus average; scalar -> float, otherwise per-component array."""
        if self._spec is not None:
            m = self._spec[..., 0, 0, 0].real / self.grid.n ** 3
        else:
            m = self._phys.mean(axis=(-3, -2, -1))
        return float(m) if self.ncomp is None else m

    def _new(self, phys=None, spec=None):
        return type(self)(self.grid, phys=phys, spec=spec)

    # ---- arithmetic (same-type, same-grid) ----

    def _check(self, other):
        if type(other) is not type(self) or other.grid != self.grid:
            raise GridError("operands must share type and grid")

    def __add__(self, other):
        self._check(other)
        if self._phys is not None and other._phys is not None:
            return self._new(phys=self._phys + other._phys)
        return self._new(spec=self.spec() + other.spec())

    def __sub__(self, other):
        self._check(other)
        if self._phys is not None and other._phys is not None:
            return self._new(phys=self._phys - other._phys)
        return self._new(spec=self.spec() - other.spec())

    def __neg__(self):
        if self._phys is not None:
            return self._new(phys=-self._phys)
        return self._new(spec=-self._spec)

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        if self._phys is not None:
            return self._new(phys=self._phys * c)
        return self._new(spec=self._spec * c)

    __rmul__ = __mul__

    #: per-component weights in magnitude contractions (None = scalar)
    comp_weights = None

    def mag(self) -> np.ndarray:
        """Pointwise magnitude (abs / euclidean / Frobenius)."""
        p = self.phys()
        if self.ncomp is None:
            return np.abs(p)
        w = self.comp_weights.reshape(-1, 1, 1, 1)
        return np.sqrt((w * p * p).sum(axis=0))

    def linf(self) -> float:
        """Sup of the pointwise magnitude."""
        return float(self.mag().max())

    def l2(self) -> float:
        """Root mean square over the torus (volume 1)."""
        p = self.phys()
        if self.ncomp is None:
            return float(np.sqrt((p * p).mean()))
        w = self.comp_weights.reshape(-1, 1, 1, 1)
        return float(np.sqrt((w * p * p).sum(axis=0).mean()))


class ScalarField(Field):
    ncomp = None


class VectorField(Field):
    ncomp = 3
    comp_weights = np.ones(3)


class SymTensorField(Field):
    """Frobenius magnitude: off-diagonal slots count twice."""

    ncomp = 6
    comp_weights = SYM_WEIGHT

    def comp(self, i: int, j: int) -> np.ndarray:
        """Physical array of component T_ij."""
        return self.phys()[SYM_INDEX[i][j]]


def hermitian_defect(f: Field) -> float:
    """Relative defect of conjugate symmetry on the self-conjugate planes.

    rfftn storage only leaves redundancy inside the kz = 0 and kz = n/2
    planes; a valid spectrum of a real field satisfies
    F[-mx, -my, kz] == conj(F[mx, my, kz]) there.
    """
    s = f.spec()
    scale = np.abs(s).max() + 1e-300
    worst = 0.0
    planes = [0]
    if f.grid.n % 2 == 0:
        planes.append(f.grid.n // 2)
    for kz in planes:
        p = s[..., kz]
        flipped = np.conj(np.roll(np.flip(p, axis=(-2, -1)), 1, axis=(-2, -1)))
        worst = max(worst, float(np.abs(p - flipped).max()) / scale)
    return worst


# ---------------------------------------------------------------------------
# spectral calculus
# ---------------------------------------------------------------------------


def deriv(f: Field, axis: int, order: int = 1) -> Field:
    """order-th partial derivative along ``axis`` (0, 1, 2)."""
    return f._new(spec=f.spec() * f.grid.ik(axis, order))


def gradient(f: ScalarField) -> VectorField:
    s = f.spec()
    g = np.stack([s * f.grid.ik(a) for a in range(3)])
    return VectorField.from_spec(f.grid, g)


def divergence(v: VectorField) -> ScalarField:
    s = v.spec()
    d = sum(s[a] * v.grid.ik(a) for a in range(3))
    return ScalarField.from_spec(v.grid, d)


def curl(v: VectorField) -> VectorField:
    s = v.spec()
    ik = [v.grid.ik(a) for a in range(3)]
    c = np.stack([
        ik[1] * s[2] - ik[2] * s[1],
        ik[2] * s[0] - ik[0] * s[2],
        ik[0] * s[1] - ik[1] * s[0],
    ])
    return VectorField.from_spec(v.grid, c)


def grad_vector(v: VectorField) -> np.ndarray:
    """Full velocity gradient as a physical array G[i, j] = d_j v_i."""
    s = v.spec()
    rows = []
    for i in range(3):
        row = np.stack([s[i] * v.grid.ik(j) for j in range(3)])
        rows.append(np.fft.irfftn(row, s=v.grid.shape, axes=(-3, -2, -1)))
    return np.stack(rows)


def div_sym(T: SymTensorField) -> VectorField:
    """(div T)_i = d_j T_ij for a symmetric tensor field."""
    s = T.spec()
    ik = [T.grid.ik(a) for a in range(3)]
    out = np.stack([
        sum(ik[j] * s[SYM_INDEX[i][j]] for j in range(3))
        for i in range(3)
    ])
    return VectorField.from_spec(T.grid, out)


def laplacian(f: Field) -> Field:
    return f._new(spec=f.spec() * (-f.grid.k2))


def inv_laplacian(f: Field, rtol: float = 1e-10) -> Field:
    """Solve Laplace(u) = f with zero-mean u; f must be mean-free."""
    s = f.spec()
    n3 = f.grid.n ** 3
    mean = np.atleast_1d(s[..., 0, 0, 0]).real / n3
    scale = f.l2() + 1e-300
    if np.abs(mean).max() > rtol * max(scale, 1e-30):
        raise NonZeroMeanError(
            f"inverse Laplacian needs a mean-free field; mean={mean}")
    return f._new(spec=s * (-f.grid.inv_k2))


def leray(v: VectorField) -> VectorField:
    """Divergence-free (solenoidal) projection, preserving the mean.

    Uses the effective inverse Laplacian 1/k2_tilde so that
    div(leray(v)) == 0 exactly for every v, Nyquist planes included.
    """
    s = v.spec()
    ik = [v.grid.ik(a) for a in range(3)]
    div = sum(ik[a] * s[a] for a in range(3))
    phi = div * v.grid.inv_k2_tilde
    out = np.stack([s[a] + ik[a] * phi for a in range(3)])
    return VectorField.from_spec(v.grid, out)


def sym_outer(v: VectorField, w: VectorField | None = None) -> SymTensorField:
    """Symmetric part of the outer product v (x) w (defaults to v (x) v)."""
    a = v.phys()
    b = a if w is None else w.phys()
    comps = np.stack([
        0.5 * (a[i] * b[j] + a[j] * b[i]) for (i, j) in SYM_COMPS
    ])
    return SymTensorField.from_phys(v.grid, comps)


def trace(T: SymTensorField) -> ScalarField:
    p = T.phys()
    return ScalarField.from_phys(T.grid, p[0] + p[3] + p[5])


def traceless(T: SymTensorField) -> SymTensorField:
    p = T.phys()
    tr3 = (p[0] + p[3] + p[5]) / 3.0
    out = p.copy()
    for slot in (0, 3, 5):
        out[slot] = out[slot] - tr3
    return SymTensorField.from_phys(T.grid, out)


def dealias(f: Field, fraction: float = 2.0 / 3.0) -> Field:
    """Zero all modes with any |m_axis| > fraction * n/2 (Orszag rule)."""
    cut = fraction * f.grid.n / 2.0
    mx, my, mz = f.grid.modes
    mask = ((np.abs(mx) <= cut) & (np.abs(my) <= cut) & (np.abs(mz) <= cut))
    return f._new(spec=f.spec() * mask)


def scalar_multiply(f: Field, s: ScalarField) -> Field:
    """Pointwise product with a scalar field (physical space)."""
    if s.grid != f.grid:
        raise GridError("grids differ")
    return f._new(phys=f.phys() * s.phys())


# ---------------------------------------------------------------------------
# off-grid evaluation
# ---------------------------------------------------------------------------


def _active_modes(spec3, n, threshold):
    """Gather (modes, weighted coefficients) above threshold from one
    rfftn-layout spectrum; weights fold in hermitian doubling and 1/n^3."""
    mx = np.rint(np.fft.fftfreq(n) * n).astype(int)
    keep = np.abs(spec3) > threshold
    ix, iy, iz = np.nonzero(keep)
    w = np.where((iz == 0) | (iz == n // 2), 1.0, 2.0)
    coefs = spec3[ix, iy, iz] * w / n ** 3
    modes = np.stack([mx[ix], mx[iy], iz], axis=1).astype(float)
    return modes, coefs


def sample_at(f: Field, pts: np.ndarray, method: str = "spectral",
              rel_threshold: float = 1e-13, chunk: int = 4096) -> np.ndarray:
    """Evaluate the field at arbitrary points in [0,1)^3.

    ``spectral`` sums the active Fourier modes directly (exact for
    band-limited data up to the threshold); ``trilinear`` interpolates
    between grid samples with periodic wraparound.
    Returns shape (M,) for scalars, (M, ncomp) otherwise.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = f.grid.n
    if method == "trilinear":
        p = f.phys()
        comps = p[None] if f.ncomp is None else p
        xf = pts * n
        i0 = np.floor(xf).astype(int)
        t = xf - i0
        out = np.zeros((len(pts), comps.shape[0]))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    wgt = (np.where(dx, t[:, 0], 1 - t[:, 0])
                           * np.where(dy, t[:, 1], 1 - t[:, 1])
                           * np.where(dz, t[:, 2], 1 - t[:, 2]))
                    idx = (i0 + (dx, dy, dz)) % n
                    out += wgt[:, None] * comps[:, idx[:, 0], idx[:, 1],
                                                idx[:, 2]].T
        return out[:, 0] if f.ncomp is None else out

    if method != "spectral":
        raise ValueError(f"unknown method {method!r}")

    s = f.spec()
    comps = s[None] if f.ncomp is None else s
    thr = rel_threshold * (np.abs(comps).max() + 1e-300)
    out = np.zeros((len(pts), comps.shape[0]))
    for c in range(comps.shape[0]):
        modes, coefs = _active_modes(comps[c], n, thr)
        if len(coefs) == 0:
            continue
        for lo in range(0, len(pts), chunk):
            block = pts[lo:lo + chunk]
            phase = np.exp(2j * np.pi * (block @ modes.T))
            out[lo:lo + chunk, c] = (phase * coefs).sum(axis=1).real
    return out[:, 0] if f.ncomp is None else out
