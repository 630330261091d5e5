"""Energy profiles, the scaling normalisation, and the inductive window.

Profiles are closed-form handles (constant / affine / cosine family) so the
pipeline can evaluate them at arbitrary gluing midpoints.  ``normalize``
applies the scaling symmetry v(x,t) -> G v(x, G t), under which the energy
transforms as e(t) -> G^2 e(G t); choosing G = sqrt(delta_1 / sup e) pins
sup e to delta_1 exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NonPositiveProfileError, ParameterError
from .fields import VectorField
from .schedule import DerivedScales


@dataclass(frozen=True)
class EnergyProfile:
    """e(t) on [0, T] from the built-in family.

    kind 'constant': e = c0
    kind 'affine'  : e = c0 + c1 t
    kind 'cosine'  : e = c0 + c1 cos(2 pi t / T)
    """

    kind: str
    c0: float
    c1: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "affine", "cosine"):
            raise ParameterError(f"unknown profile kind {self.kind!r}")
        if self.T <= 0:
            raise ParameterError("profile horizon must be positive")
        if self.inf() <= 0:
            raise NonPositiveProfileError(
                f"profile must be strictly positive; inf = {self.inf()}")

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.c0
        if self.kind == "affine":
            return self.c0 + self.c1 * t
        return self.c0 + self.c1 * math.cos(2.0 * math.pi * t / self.T)

    def derivative(self, t: float) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "affine":
            return self.c1
        w = 2.0 * math.pi / self.T
        return -self.c1 * w * math.sin(w * t)

    # closed-form extrema on [0, T]
    def sup(self) -> float:
        if self.kind == "constant":
            return self.c0
        if self.kind == "affine":
            return max(self.c0, self.c0 + self.c1 * self.T)
        return self.c0 + abs(self.c1)

    def inf(self) -> float:
        if self.kind == "constant":
            return self.c0
        if self.kind == "affine":
            return min(self.c0, self.c0 + self.c1 * self.T)
        return self.c0 - abs(self.c1)

    def sup_derivative(self) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "affine":
            return abs(self.c1)
        return abs(self.c1) * 2.0 * math.pi / self.T


@dataclass(frozen=True)
class NormalizationReport:
    profile: EnergyProfile
    gamma: float
    sup_ok: bool          # sup e == delta_1 (always true by construction)
    slope_ok: bool        # sup |e'| <= 1
    ratio_ok: bool        # inf e >= delta_1 * lambda_0^(-alpha)
    notes: str


def normalize(profile: EnergyProfile, scales: DerivedScales,
              alpha: float) -> NormalizationReport:
    """Rescale so sup e = delta_1; report which window conditions hold.

    Desk ladders may fail the inf/sup ratio condition; that is recorded,
    not fatal.
    """
    if profile.inf() <= 0:
        raise NonPositiveProfileError("cannot normalize a non-positive profile")
    gamma = math.sqrt(scales.delta_q1 / profile.sup())
    # e~(t) = G^2 e(G t) on [0, T/G]
    if profile.kind == "constant":
        scaled = EnergyProfile("constant", gamma ** 2 * profile.c0,
                               T=profile.T / gamma)
    elif profile.kind == "affine":
        scaled = EnergyProfile("affine", gamma ** 2 * profile.c0,
                               gamma ** 3 * profile.c1, T=profile.T / gamma)
    else:
        # cos(2 pi G t / T) = cos(2 pi t / (T/G)): the period rescales too
        scaled = EnergyProfile("cosine", gamma ** 2 * profile.c0,
                               gamma ** 2 * profile.c1, T=profile.T / gamma)
    sup_ok = abs(scaled.sup() - scales.delta_q1) <= 1e-12 * scales.delta_q1
    slope_ok = scaled.sup_derivative() <= 1.0 + 1e-12
    floor = scales.delta_q1 * scales.lambda_q ** (-alpha)
    ratio_ok = scaled.inf() >= floor * (1.0 - 1e-12)
    notes = []
    if not slope_ok:
        notes.append(f"sup|e'| = {scaled.sup_derivative():.3g} > 1")
    if not ratio_ok:
        notes.append(f"inf e = {scaled.inf():.3g} < {floor:.3g}")
    return NormalizationReport(scaled, gamma, sup_ok, slope_ok, ratio_ok,
                               "; ".join(notes))


@dataclass(frozen=True)
class GapReport:
    gap: float
    lower_strict: float
    upper_strict: float
    lower_relaxed: float
    upper_relaxed: float
    in_strict_window: bool
    in_relaxed_window: bool


def kinetic_energy(v: VectorField) -> float:
    """Integral of |v|^2 over the unit torus (exact grid quadrature)."""
    p = v.phys()
    return float((p * p).sum(axis=0).mean())


def energy_gap(v: VectorField, profile: EnergyProfile,
               scales: DerivedScales, t: float,
               alpha: float) -> GapReport:
    """e(t) - int |v|^2 against the strict and relaxed inductive windows."""
    gap = profile(t) - kinetic_energy(v)
    lo_s = scales.delta_q1 * scales.lambda_q ** (-alpha)
    hi_s = scales.delta_q1
    lo_r = 0.5 * lo_s
    hi_r = 2.0 * hi_s
    return GapReport(
        gap=gap, lower_strict=lo_s, upper_strict=hi_s,
        lower_relaxed=lo_r, upper_relaxed=hi_r,
        in_strict_window=lo_s <= gap <= hi_s,
        in_relaxed_window=lo_r <= gap <= hi_r,
    )
