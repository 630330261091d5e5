"""The parameter ladder and its admissibility audit.

Two regimes are supported.  The *asymptotic* ladder takes (a, b, beta,
alpha) and builds

    lambda_q = 2 pi ceil(a ** (b ** q)),     delta_q = lambda_q ** (-2 beta),
    ell      = sqrt(delta_{q+1}/delta_q) * lambda_q ** (-1 - 3 alpha / 2),
    tau_q    = ell ** (2 alpha) / (sqrt(delta_q) * lambda_q),

with ``audit`` checking every inequality the iteration leans on, reporting
per-q margins.  The *desk* ladder pins the small integer frequencies
directly (e.g. N = 2, 10) so the whole construction fits on a grid; the
same derived formulas apply, the audit runs in report-only mode, and a
resolvability check guards the dealias cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridUnderResolvedError, ParameterError

#: nominal spectral bandwidth factor of one Mikado tube family, used by the
#: desk-ladder resolvability check (cross-checked against mikado.bandwidth()).
DEFAULT_BANDWIDTH = 2


@dataclass(frozen=True)
class ScheduleParams:
    """Global ladder parameters for the asymptotic regime."""

    a: float
    b: float
    beta: float
    alpha: float
    M: float | None = None  # amplitude constant supplied by the mikado module
    T: float = 1.0

    def __post_init__(self):
        if not self.a > 1:
            raise ParameterError(f"need a > 1, got {self.a}")
        if not 0 < self.beta < 1.0 / 3.0:
            raise ParameterError(f"need beta in (0, 1/3), got {self.beta}")
        hi = (1.0 - self.beta) / (2.0 * self.beta)
        if not 1 < self.b < hi:
            raise ParameterError(
                f"need 1 < b < (1-beta)/(2 beta) = {hi}, got {self.b}")
        if not 0 < self.alpha < 1:
            raise ParameterError(f"need alpha in (0,1), got {self.alpha}")
        if self.T <= 0:
            raise ParameterError("time horizon must be positive")


@dataclass(frozen=True)
class DerivedScales:
    """All per-step scales the stages consume."""

    q: int
    N_q: int
    N_q1: int
    lambda_q: float
    lambda_q1: float
    delta_q: float
    delta_q1: float
    delta_q2: float
    ell: float
    tau_q: float
    ell_bracket_ok: bool  # lambda_q^(-3/2) <= ell <= lambda_q^(-1)


def _freq(a: float, b: float, q: int) -> int:
    logN = b ** q * math.log(a)
    if logN > 700:
        raise ParameterError(f"a**(b**{q}) overflows doubles")
    x = math.exp(logN)
    # don't let float noise push an exactly-integer power over the ceiling
    r = round(x)
    if abs(x - r) < 1e-9 * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def _derive_from_freqs(q, Nq, Nq1, Nq2, beta, alpha) -> DerivedScales:
    lam_q = 2.0 * math.pi * Nq
    lam_q1 = 2.0 * math.pi * Nq1
    lam_q2 = 2.0 * math.pi * Nq2
    d_q = lam_q ** (-2.0 * beta)
    d_q1 = lam_q1 ** (-2.0 * beta)
    d_q2 = lam_q2 ** (-2.0 * beta)
    ell = math.sqrt(d_q1 / d_q) * lam_q ** (-1.0 - 1.5 * alpha)
    tau = ell ** (2.0 * alpha) / (math.sqrt(d_q) * lam_q)
    ok = lam_q ** -1.5 <= ell <= lam_q ** -1.0
    return DerivedScales(q=q, N_q=Nq, N_q1=Nq1, lambda_q=lam_q,
                         lambda_q1=lam_q1, delta_q=d_q, delta_q1=d_q1,
                         delta_q2=d_q2, ell=ell, tau_q=tau,
                         ell_bracket_ok=ok)


def derive(params: ScheduleParams, q: int) -> DerivedScales:
    """Derived scales at step q; asserts the ceiling bracket on lambda_q."""
    Nq = _freq(params.a, params.b, q)
    scales = _derive_from_freqs(q, Nq, _freq(params.a, params.b, q + 1),
                                _freq(params.a, params.b, q + 2),
                                params.beta, params.alpha)
    raw = math.exp(params.b ** q * math.log(params.a))
    ratio = scales.lambda_q / raw
    if not (2 * math.pi - 1e-12 <= ratio <= 4 * math.pi + 1e-12):
        raise ParameterError(
            f"ceiling bracket violated at q={q}: lambda/a^(b^q) = {ratio}")
    return scales


# ---------------------------------------------------------------------------
# admissibility audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditLine:
    name: str
    q: int | None  # None for q-independent conditions
    passed: bool
    margin: float  # positive means pass, units: see detail
    detail: str


@dataclass(frozen=True)
class AuditReport:
    lines: tuple
    q_max: int

    @property
    def admissible(self) -> bool:
        return all(line.passed for line in self.lines)

    def pretty(self) -> str:
        rows = [f"{'condition':<22} {'q':>4} {'pass':>5} {'margin':>12}applies"]
        for ln in self.lines:
            qs = "-" if ln.q is None else str(ln.q)
            rows.append(f"{ln.name:<22} {qs:>4} {str(ln.passed):>5} "
                        f"{ln.margin:>12.4e} {ln.detail}")
        rows.append(f"admissible: {self.admissible}")
        return "\n".join(rows)

    def csv_rows(self):
        yield ("condition", "q", "passed", "margin", "detail")
        for ln in self.lines:
            yield (ln.name, "" if ln.q is None else ln.q,
                   int(ln.passed), repr(ln.margin), ln.detail)


def choice_of_b_poly(beta: float, b: float, alpha: float) -> float:
    """The exponent polynomial that must be strictly negative."""
    return (-beta - beta * b + 1.0 - b + 2.0 * b * b * beta
            + 8.0 * b * alpha)


def _log_margin(lhs: float, rhs: float) -> float:
    """log10(rhs/lhs); positive iff lhs <= rhs with room."""
    return math.log10(rhs) - math.log10(lhs)


def _audit_lines(scales_seq, beta, b, alpha):
    lines = []
    hi = (1.0 - beta) / (2.0 * beta)
    lines.append(AuditLine(
        "b-interval", None, 1 < b < hi, min(b - 1.0, hi - b),
        f"1 < b < {hi:.6g}"))
    poly = choice_of_b_poly(beta, b, alpha)
    lines.append(AuditLine(
        "exponent-poly", None, poly < 0, -poly,
        "frequency-gain exponent polynomial < 0"))
    for s in scales_seq:
        ratio32 = (s.delta_q / s.delta_q1) ** 1.5
        m1 = _log_margin(s.lambda_q ** (3 * alpha), ratio32)
        m2 = _log_margin(ratio32, s.lambda_q1 / s.lambda_q)
        lines.append(AuditLine(
            "freq-gap-lower", s.q, m1 >= 0, m1,
            "lambda_q^(3a) <= (delta_q/delta_q1)^(3/2)"))
        lines.append(AuditLine(
            "freq-gap-upper", s.q, m2 >= 0, m2,
            "(delta_q/delta_q1)^(3/2) <= lambda_q1/lambda_q"))
        lhs = math.sqrt(s.delta_q * s.delta_q1) * s.lambda_q / s.lambda_q1
        rhs = s.delta_q2 / s.lambda_q1 ** (8 * alpha)
        m3 = _log_margin(lhs, rhs)
        lines.append(AuditLine(
            "transport-gain", s.q, m3 >= 0, m3,
            "sqrt(delta_q delta_q1) lambda_q/lambda_q1 <= "
            "delta_q2 lambda_q1^(-8a)"))
        m4 = _log_margin(1.0, s.ell * s.lambda_q1)
        lines.append(AuditLine(
            "ell-resolves-next", s.q, m4 >= 0, m4, "ell * lambda_q1 >= 1"))
        m5 = min(_log_margin(s.lambda_q ** -1.5, s.ell),
                 _log_margin(s.ell, s.lambda_q ** -1.0))
        lines.append(AuditLine(
            "ell-bracket", s.q, s.ell_bracket_ok, m5,
            "lambda_q^(-3/2) <= ell <= lambda_q^(-1)"))
    return lines


def audit(params: ScheduleParams, q_max: int) -> AuditReport:
    """Check every ladder inequality for q = 0..q_max, with margins."""
    seq = [derive(params, q) for q in range(q_max + 1)]
    lines = _audit_lines(seq, params.beta, params.b, params.alpha)
    return AuditReport(lines=tuple(lines), q_max=q_max)


def asymptotic_feasible(beta: float, b: float, alpha: float) -> bool:
    """The a -> infinity limit of the audit (log-exponent form)."""
    hi = (1.0 - beta) / (2.0 * beta)
    return (1 < b < hi
            and alpha <= beta * (b - 1.0)
            and 3.0 * beta <= 1.0
            and choice_of_b_poly(beta, b, alpha) < 0
            and b >= 1.0 + 1.5 * alpha / (1.0 - beta)
            and beta * (b - 1.0) + 1.5 * alpha <= 0.5)


def find_admissible(beta: float):
    """A (b, alpha) pair passing the asymptotic audit, for beta in (0, 1/3)."""
    if not 0 < beta < 1.0 / 3.0:
        raise ParameterError("beta out of range")
    hi = (1.0 - beta) / (2.0 * beta)
    b = 0.5 * (1.0 + hi)
    # every alpha-dependence is one-sided, so shrink alpha until all hold
    alpha = min(beta * (b - 1.0), 0.1)
    for _ in range(60):
        if asymptotic_feasible(beta, b, alpha):
            return b, alpha
        alpha *= 0.5
    raise ParameterError(f"no admissible alpha found at beta={beta}, b={b}")


# ---------------------------------------------------------------------------
# desk ladder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeskLadder:
    """Grid-resolvable ladder pinned to explicit integer frequencies.

    Indices beyond the supplied list extend geometrically (they are only
    ever used through delta_{q+2} in the energy window).  The audit runs in
    report-only mode: failures are expected at desk scale and recorded.
    """

    indices: tuple
    beta: float
    alpha: float
    T: float = 1.0
    M: float | None = None

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 2:
            raise ParameterError("need at least two ladder frequencies")
        if any(i <= 0 for i in idx):
            raise ParameterError("ladder frequencies must be positive")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ParameterError("ladder must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        if not 0 < self.beta < 1.0 / 3.0:
            raise ParameterError(f"need beta in (0, 1/3), got {self.beta}")
        if not 0 < self.alpha < 1:
            raise ParameterError(f"need alpha in (0, 1), got {self.alpha}")

    def freq(self, q: int) -> int:
        idx = self.indices
        if q < len(idx):
            return idx[q]
        growth = idx[-1] / idx[-2]
        return int(round(idx[-1] * growth ** (q - len(idx) + 1)))

    def derive(self, q: int) -> DerivedScales:
        return _derive_from_freqs(q, self.freq(q), self.freq(q + 1),
                                  self.freq(q + 2), self.beta, self.alpha)

    def check_resolvable(self, n: int, q: int,
                         bandwidth: float = DEFAULT_BANDWIDTH) -> None:
        """Require lambda_{q+1} * bandwidth inside the 2/3 dealias cutoff."""
        need = self.freq(q + 1) * bandwidth
        cutoff = n / 3.0
        if need > cutoff:
            raise GridUnderResolvedError(
                f"mode {self.freq(q + 1)} x bandwidth {bandwidth} = {need} "
                f"exceeds dealias cutoff n/3 = {cutoff:.1f}")

    def audit_report(self, q_max: int) -> AuditReport:
        seq = [self.derive(q) for q in range(q_max + 1)]
        # desk ladders have no (a, b); report the b implied by the growth
        b_eff = math.log(self.freq(1)) / math.log(self.freq(0)) \
            if self.freq(0) > 1 else float("inf")
        lines = _audit_lines(seq, self.beta, min(b_eff, 1e6), self.alpha)
        return AuditReport(lines=tuple(lines), q_max=q_max)
