"""Mollification, inverse divergence, Biot-Savart and pressure recovery.

These are the order-zero workhorses of the iteration.  The inverse
divergence is implemented as an exact right inverse: for every mean-free
vector field f, ``div(inverse_divergence(f)) == f`` to rounding on the
subspace where the grid can represent first derivatives at all (every
mode except the handful whose components are all 0 or Nyquist), and the
output is symmetric and identically traceless.  The mollifier is a sampled
compactly-supported radial bump, normalised in the discrete sense so that
its symbol is exactly 1 at wavenumber zero (mollification preserves means
and, per component, every conserved linear functional).
"""

from __future__ import annotations

import dataclasses
import functools

import numpy as np

from .errors import NonZeroMeanError, ParameterError, PhaseDegenerateError
from .fields import (Field, GridSpec, ScalarField, SymTensorField,
                     VectorField, SYM_COMPS, SYM_INDEX, dealias, div_sym,
                     gradient, grad_vector, leray, sym_outer, trace,
                     traceless)


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------


def mollifier_kernel(grid: GridSpec, ell: float) -> np.ndarray:
    """Sampled bump psi_ell(x) = C exp(-1/(1-|x/ell|^2)) on the torus.

    Normalised so that h^3 * sum(psi) == 1 exactly.
    """
    if not 0 < ell < 0.5:
        raise ParameterError(f"mollification scale must be in (0, 1/2), got {ell}")
    if ell < 2.0 * grid.h:
        raise ParameterError(
            f"ell={ell} under-resolved: need ell >= 2h = {2.0 * grid.h}")
    x = grid.axis
    d = np.minimum(x, 1.0 - x)  # periodic distance to 0 along one axis
    r2 = (d.reshape(-1, 1, 1) ** 2 + d.reshape(1, -1, 1) ** 2
          + d.reshape(1, 1, -1) ** 2) / ell ** 2
    psi = np.zeros(grid.shape)
    inside = r2 < 1.0
    psi[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    psi /= psi.sum() * grid.h ** 3
    return psi


@functools.lru_cache(maxsize=32)
def _mollifier_symbol(n: int, ell: float) -> np.ndarray:
    grid = GridSpec(n)
    sym = np.fft.rfftn(mollifier_kernel(grid, ell)) * grid.h ** 3
    sym.setflags(write=False)
    return sym


def mollify(f: Field, ell: float) -> Field:
    """Periodic convolution with the sampled bump at scale ell."""
    sym = _mollifier_symbol(f.grid.n, float(ell))
    return f._new(spec=f.spec() * sym)


def cet_commutator(v: VectorField, ell: float) -> SymTensorField:
    """(v (x) v) * psi_ell  -  v_ell (x) v_ell.

    The quadratic commutator whose size is O(ell^2 [v]_1^2) for smooth v;
    the measured log-log slope in ell is the classic flux-regularity
    mechanism behind the energy bookkeeping.
    """
    v_ell = mollify(v, ell)
    return mollify(sym_outer(v), ell) - sym_outer(v_ell)


def mollify_state(v: VectorField, p: ScalarField, R: SymTensorField,
                  ell: float):
    """Mollify an Euler-Reynolds state, keeping it an exact solution class.

    Returns (v_ell, p_ell, R_ell) where R_ell absorbs the traceless part of
    the quadratic commutator and p_ell its trace (mean removed).
    """
    v_ell = mollify(v, ell)
    comm = cet_commutator(v, ell)
    # div(v_ell (x) v_ell) = div((v (x) v)_ell) - div(comm); cancelling
    # the second term needs the commutator subtracted from the stress
    # and its trace third pushed onto the pressure with a plus sign
    R_ell = mollify(R, ell) - traceless(comm)
    tr3 = trace(comm).phys() / 3.0
    p_phys = mollify(p, ell).phys() + tr3
    p_phys = p_phys - p_phys.mean()
    return v_ell, ScalarField.from_phys(v.grid, p_phys), R_ell


# ---------------------------------------------------------------------------
# inverse divergence
# ---------------------------------------------------------------------------


def inverse_divergence(f: VectorField, rtol: float = 1e-10) -> SymTensorField:
    """Symmetric traceless T with div T = f, for mean-free f.

    Fourier symbol (kappa != 0):

        T_ij = i [ -(k_i f_j + k_j f_i)/|k|^2
                   + k_i k_j (k.f)/(2|k|^4) + delta_ij (k.f)/(2|k|^2) ]

    which satisfies  i k_j T_ij = f_i  and  tr T = 0 identically.  The
    wavenumbers are the effective ones of the first-derivative symbols
    (k2_tilde), so both identities hold exactly on every mode whose
    derivative the grid can represent; modes with every component 0 or
    Nyquist carry no divergence at all and map to zero.
    """
    s = f.spec()
    grid = f.grid
    n3 = grid.n ** 3
    mean = s[:, 0, 0, 0].real / n3
    if np.abs(mean).max() > rtol * max(f.l2(), 1e-30):
        raise NonZeroMeanError(
            f"inverse divergence needs a mean-free field; mean={mean}")
    ik = [grid.ik(a) for a in range(3)]
    inv = grid.inv_k2_tilde
    ikdot = sum(ik[a] * s[a] for a in range(3))  # i (k . f~)
    out = np.empty((6,) + grid.spec_shape, dtype=complex)
    for slot, (i, j) in enumerate(SYM_COMPS):
        t = -(ik[i] * s[j] + ik[j] * s[i]) * inv
        t = t - 0.5 * ik[i] * ik[j] * ikdot * inv * inv
        if i == j:
            t = t + 0.5 * ikdot * inv
        out[slot] = t
    return SymTensorField.from_spec(grid, out)


# ---------------------------------------------------------------------------
# Biot-Savart and pressure
# ---------------------------------------------------------------------------


def biot_savart(v: VectorField, rtol: float = 1e-10) -> VectorField:
    """Vector potential z = (-Lap)^-1 curl v.

    For divergence-free mean-free v, curl z recovers v exactly.
    """
    s = v.spec()
    grid = v.grid
    mean = s[:, 0, 0, 0].real / grid.n ** 3
    if np.abs(mean).max() > rtol * max(v.l2(), 1e-30):
        raise NonZeroMeanError("Biot-Savart potential needs a mean-free field")
    ik = [grid.ik(a) for a in range(3)]
    c = np.stack([
        ik[1] * s[2] - ik[2] * s[1],
        ik[2] * s[0] - ik[0] * s[2],
        ik[0] * s[1] - ik[1] * s[0],
    ])
    return VectorField.from_spec(grid, c * grid.inv_k2_tilde)


def div_div(T: SymTensorField) -> ScalarField:
    """d_i d_j T_ij, computed spectrally."""
    s = T.spec()
    ik = [T.grid.ik(a) for a in range(3)]
    out = 0.0
    for i in range(3):
        for j in range(3):
            out = out + ik[i] * ik[j] * s[SYM_INDEX[i][j]]
    return ScalarField.from_spec(T.grid, out)


def pressure_from(v: VectorField, R: SymTensorField | None = None) -> ScalarField:
    """Zero-mean p with Lap p = div div (R - v (x) v).

    This is the pressure that closes the Euler-Reynolds momentum balance
    for a divergence-free v with stress R (R = 0 gives plain Euler).
    """
    T = sym_outer(v) * (-1.0)
    if R is not None:
        T = T + R
    g = div_div(T)
    p = ScalarField.from_spec(v.grid, g.spec() * (-v.grid.inv_k2_tilde))
    return p


#: contract-facing aliases
pressure_solve = pressure_from
leray_project = leray


@dataclasses.dataclass(frozen=True)
class ERResidual:
    """Momentum-balance residual, with and without the pressure gradient.

    ``projected`` is the Leray-projected residual sup-norm: gradients (and
    with them any pressure convention) are quotiented out, so this is the
    part a correct stress construction actually controls.  ``unprojected``
    keeps the supplied pressure and diagnoses its bookkeeping.
    """

    projected: float
    unprojected: float


def er_residual(v: VectorField, p: ScalarField, R: SymTensorField | None,
                dtv: VectorField, dealias_products: bool = False) -> ERResidual:
    """Residual of  dt v + div(v (x) v) + grad p - div R  in sup norm.

    ``dtv`` is supplied by the caller (analytic, or finite-differenced
    between stored slices).  With ``dealias_products`` the quadratic term
    is formed from the 2/3-truncated velocity, matching what the
    pseudospectral solver actually integrates; the default keeps the raw
    grid product.
    """
    vv = dealias(v, 2.0 / 3.0) if dealias_products else v
    adv = div_sym(sym_outer(vv, vv))
    if dealias_products:
        adv = dealias(adv, 2.0 / 3.0)
    r = dtv + adv
    if R is not None:
        r = r + div_sym(R) * (-1.0)
    proj = leray(r)
    raw = r + gradient(p)
    return ERResidual(projected=proj.linf(), unprojected=raw.linf())


@dataclasses.dataclass(frozen=True)
class DecayProbeReport:
    """Oscillatory inverse-divergence decay measurement."""

    freqs: tuple[float, ...]      # |k| of each probe wavevector
    norms: tuple[float, ...]      # Holder norm of R(a e^{2 pi i k.Phi})
    slope: float                  # least-squares d log(norm) / d log|k|
    alpha: float
    grad_bounds: tuple[float, float]   # (min, max) singular value of grad Phi

    def rows(self):
        return list(zip(self.freqs, self.norms))


def oscillatory_decay_probe(a: VectorField, phi_disp: VectorField,
                            kvecs, alpha: float = 0.1,
                            cbar: float = 4.0) -> DecayProbeReport:
    """Norm decay of R applied to modulated high-frequency waves.

    The wave is ``a(x) exp(2 pi i k . Phi(x))`` with ``Phi = x + phi_disp``
    (the displacement must be periodic; k must be an integer vector so the
    wave itself is periodic).  The smoothing of the order(-1) operator
    should beat the Holder-alpha growth: the fitted slope of log norm
    against log |k| is reported and expected near alpha - 1.
    """
    from .norms import holder_norm

    g = a.grid
    jac = grad_vector(phi_disp)
    for i in range(3):
        jac[i, i] += 1.0
    gram = np.einsum('kiabc,kjabc->abcij', jac, jac)
    eig = np.linalg.eigvalsh(gram)
    smin = float(np.sqrt(max(eig[..., 0].min(), 0.0)))
    smax = float(np.sqrt(eig[..., -1].max()))
    if smin < 1.0 / cbar or smax > cbar:
        raise PhaseDegenerateError(
            f"grad Phi singular values [{smin:.3g}, {smax:.3g}] leave "
            f"[1/{cbar}, {cbar}]")

    x = g.mesh()
    disp = phi_disp.phys()
    freqs, norms = [], []
    for kvec in kvecs:
        kv = np.asarray(kvec, dtype=float)
        if not np.allclose(kv, np.round(kv)):
            raise ParameterError(f"probe wavevector {kvec} is not integer")
        phase = np.zeros(g.shape)
        for axis in range(3):
            phase += kv[axis] * (x[axis] + disp[axis])
        wave = np.exp(2j * np.pi * phase)
        amp = a.phys()
        fre = amp * wave.real
        fim = amp * wave.imag
        fre = fre - fre.mean(axis=(-3, -2, -1), keepdims=True)
        fim = fim - fim.mean(axis=(-3, -2, -1), keepdims=True)
        Tre = inverse_divergence(VectorField.from_phys(g, fre))
        Tim = inverse_divergence(VectorField.from_phys(g, fim))
        nr = holder_norm(Tre, alpha)
        ni = holder_norm(Tim, alpha)
        freqs.append(float(np.linalg.norm(kv)))
        norms.append(float(np.hypot(nr, ni)))

    lf = np.log(np.asarray(freqs))
    ln = np.log(np.maximum(np.asarray(norms), 1e-300))
    slope = float(np.polyfit(lf, ln, 1)[0]) if len(freqs) > 1 else float("nan")
    return DecayProbeReport(freqs=tuple(freqs), norms=tuple(norms),
                            slope=slope, alpha=alpha,
                            grad_bounds=(smin, smax))
