"""One inductive step as a pipeline: mollify, glue, perturb, measure.

The state of the iteration is a triple (v, p, R) known at a lattice of
sample times.  Triples are produced lazily -- a state holds a provider
closure and a small cache instead of 17 materialized 128^3 snapshots --
so memory stays bounded while any time in [0, T] remains reachable.

Every stage is gated by a measured Euler-Reynolds residual (time
derivative from an independent finite difference, products formed
without dealiasing so nothing is hidden) and every inductive estimate
becomes a diagnostic row (t, quantity, measured, bound, ratio).  At desk
scale only the structural invariants are enforced hard:

  * div v vanishes to rounding,
  * tr R vanishes to rounding,
  * v and p are mean-free,
  * the energy gap e(t) - integral |v|^2 stays positive.

The analytic inequalities (stress decay, C^1 growth, energy window,
velocity increment) are reported with their ratios and left to the
reader: a 10-mode first rung cannot contract a Frobenius sup the way a
10^5-mode rung does, and pretending otherwise would only hide the
numbers that show *why*.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time as _clock
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import EnergyProfile, kinetic_energy
from .euler import interval_solve
from .fields import (GridSpec, ScalarField, SymTensorField, VectorField,
                     divergence, trace)
from .gluing import build_chi, glue
from .mikado import build_family, constant_M
from .norms import holder_norm
from .operators import er_residual, mollify_state
from .perturbation import (FlowProvider, build_eta, build_perturbation,
                           energy_check, new_stress_and_pressure,
                           stress_decomposition)
from .schedule import (DEFAULT_BANDWIDTH, DeskLadder, DerivedScales,
                       ScheduleParams, audit)
from .snapshots import save_state

STAGES = ("input", "mollified", "glued", "perturbed")

DIV_TOL = 1e-10
TRACE_TOL = 1e-13
MEAN_TOL = 1e-12
RESIDUAL_GATE = 1e-3
CONTRACTION_TARGET = 0.5


class ConfigError(ValueError):
    """A run configuration violates the schema; the message names the key."""


class InvariantError(RuntimeError):
    """A structural invariant (div, trace, mean, gap) failed hard."""


class StageResidualError(RuntimeError):
    """A stage's measured residual exceeded the gate."""


class ResolvabilityStop(RuntimeError):
    """The next rung's frequency exceeds the dealias cutoff of the grid."""


# ---------------------------------------------------------------------------
# diagnostic rows

@dataclass(frozen=True)
class DiagRow:
    """One measured quantity, optionally against a bound.

    ``ratio`` is measured/bound when the bound is an upper limit and
    bound/measured when it is a floor, so ratio <= 1 always means
    "within bound".  Rows without a bound carry None in both slots.
    """

    t: float
    quantity: str
    measured: float
    bound: float | None
    ratio: float | None
    stage: str
    q: int

    def csv_row(self):
        fmt = lambda x: "" if x is None else format(float(x), ".17g")
        return [format(self.t, ".17g"), self.quantity, fmt(self.measured),
                fmt(self.bound), fmt(self.ratio), self.stage, str(self.q)]


CSV_HEADER = ["t", "quantity", "measured", "paper_bound", "ratio",
              "stage", "q"]


def _row(t, quantity, measured, bound, stage, q, floor=False):
    if bound is None:
        ratio = None
    elif floor:
        ratio = bound / measured if measured != 0.0 else math.inf
    else:
        ratio = measured / bound if bound != 0.0 else math.inf
    return DiagRow(float(t), quantity, float(measured),
                   None if bound is None else float(bound),
                   None if ratio is None else float(ratio),
                   stage, q)


# ---------------------------------------------------------------------------
# the iteration state

@dataclass
class IterationState:
    """A sampled Euler-Reynolds triple plus where it sits in the ladder.

    ``provider(t) -> (v, p, R)`` materializes the triple; ``fields_at``
    memoizes the last few queries (each triple is ten scalar grids, so
    the cache stays small on purpose).
    """

    q: int
    stage: str
    grid: GridSpec
    scales: DerivedScales
    T: float
    times: tuple
    provider: object = field(repr=False)
    diagnostics: list = field(default_factory=list, repr=False)
    cache_limit: int = 3
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def zero(cls, grid: GridSpec, scales: DerivedScales, T: float,
             samples_per_tau: int = 17):
        """The starting triple (0, 0, 0) on the standard lattice."""
        times = sample_lattice(scales.tau_q, T, samples_per_tau)
        zv = VectorField.zeros(grid)
        zp = ScalarField.from_phys(grid, np.zeros(grid.shape))
        zR = SymTensorField.zeros(grid)
        return cls(q=scales.q, stage="input", grid=grid, scales=scales,
                   T=T, times=times, provider=lambda t: (zv, zp, zR))

    def fields_at(self, t: float):
        key = round(float(t), 12)
        if key in self._cache:
            return self._cache[key]
        triple = self.provider(float(t))
        if len(self._cache) >= self.cache_limit:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = triple
        return triple

    def prime(self, t: float, triple):
        """Install an already-built triple (used by the step drivers)."""
        if len(self._cache) >= self.cache_limit:
            self._cache.pop(next(iter(self._cache)))
        self._cache[round(float(t), 12)] = triple

    def v_at(self, t):
        return self.fields_at(t)[0]

    def p_at(self, t):
        return self.fields_at(t)[1]

    def R_at(self, t):
        return self.fields_at(t)[2]

    def invariants(self, t_list=None, raise_on_fail: bool = True):
        """Measure the hard structural invariants at the given times.

        Returns {name: worst relative value}; raises InvariantError on
        the first violation unless told not to.
        """
        if t_list is None:
            t_list = (0.0, 0.5 * self.T, self.T)
        lam = (self.scales.lambda_q1 if self.stage == "perturbed"
               else max(self.scales.lambda_q, 1.0))
        worst = {"div_v": 0.0, "trace_R": 0.0, "mean_v": 0.0, "mean_p": 0.0}
        for t in t_list:
            v, p, R = self.fields_at(t)
            vinf = v.linf()
            div_scale = max(1.0, lam * vinf)
            worst["div_v"] = max(worst["div_v"],
                                 divergence(v).linf() / div_scale)
            rinf = R.linf()
            worst["trace_R"] = max(worst["trace_R"],
                                   trace(R).linf() / max(1.0, rinf))
            worst["mean_v"] = max(worst["mean_v"],
                                  float(np.abs(np.asarray(v.mean())).max())
                                  / max(1.0, vinf))
            worst["mean_p"] = max(worst["mean_p"],
                                  abs(float(p.mean()))
                                  / max(1.0, p.linf()))
        tols = {"div_v": DIV_TOL, "trace_R": TRACE_TOL,
                "mean_v": MEAN_TOL, "mean_p": MEAN_TOL}
        if raise_on_fail:
            for name, val in worst.items():
                if val > tols[name]:
                    raise InvariantError(
                        f"{name} = {val:.3e} exceeds {tols[name]:.0e} "
                        f"at stage '{self.stage}', q={self.q}")
        return worst


def sample_lattice(tau_q: float, T: float, samples_per_tau: int = 17):
    """Equispaced times covering [0, T], samples_per_tau per period.

    17 per period means spacing tau/16, so the gluing anchors i*tau and
    the half-period interiors all land on lattice points.
    """
    dt = tau_q / (samples_per_tau - 1)
    m = int(round(T / dt))
    return tuple(min(i * dt, T) for i in range(m + 1))


# ---------------------------------------------------------------------------
# the step report

@dataclass
class StepReport:
    q: int
    rows: list
    gates: dict
    contraction: float | None
    timings: dict
    notes: list

    @property
    def passed(self) -> bool:
        return all(ok for (_, _, ok) in self.gates.values())

    def summary_lines(self):
        out = [f"step q={self.q} -> q={self.q + 1}"]
        for name, (val, limit, ok) in self.gates.items():
            tag = "pass" if ok else "FAIL"
            out.append(f"  [{tag}] {name}: {val:.3e} (gate {limit:.0e})")
        if self.contraction is not None:
            tag = ("pass" if self.contraction <= CONTRACTION_TARGET
                   else "FAIL")
            out.append(f"  [{tag}] stress contraction: "
                       f"{self.contraction:.3f} (target "
                       f"{CONTRACTION_TARGET}) -- recorded, not enforced")
        for n in self.notes:
            out.append(f"  note: {n}")
        return out


def _residual_scale(v: VectorField, lam: float) -> float:
    # the natural size of div(v (x) v) at active frequency lam; the max
    # with lam keeps the zero state from dividing by zero
    return max(lam * v.linf() ** 2, lam, 1e-30)


def _fd_residual(triple_at, t, dt, lam, triple=None):
    """Residual of the triple at time t, d/dt by centered difference."""
    v, p, R = triple if triple is not None else triple_at(t)
    vp = triple_at(t + dt)[0]
    vm = triple_at(t - dt)[0]
    dtv = (vp - vm) * (1.0 / (2.0 * dt))
    res = er_residual(v, p, R, dtv, dealias_products=False)
    scale = _residual_scale(v, lam)
    return res.projected / scale, res.unprojected / scale


# ---------------------------------------------------------------------------
# the full step

def full_step(state: IterationState, ladder, profile: EnergyProfile, *,
              family=None, alpha: float | None = None,
              residual_gate: float = RESIDUAL_GATE,
              gate_times=None, fd_dt: float | None = None,
              samples_per_tau: int = 17, strict: bool = True,
              solver_kw: dict | None = None, progress=None):
    """Run mollify -> glue -> perturb on one state; return (state', report).

    ``ladder`` supplies the scales for this rung and the next; ``family``
    may be a prepared building-block family (with its constants already
    measured) to avoid repeating that work across steps or tests.

    Hard failures: structural invariants, a non-positive energy gap, an
    unresolvable next frequency (ResolvabilityStop), and -- when strict
    -- a stage residual above the gate.  Everything else is a row.
    """
    say = progress if progress is not None else (lambda *_: None)
    alpha = float(ladder.alpha if alpha is None else alpha)
    scales = ladder.derive(state.q)
    grid, T = state.grid, state.T
    tau = scales.tau_q
    rows: list = list(state.diagnostics)
    gates: dict = {}
    notes: list = []
    timings: dict = {}
    q = state.q

    if state.stage not in ("input", "perturbed"):
        raise InvariantError(
            f"full_step expects a closed triple, got stage '{state.stage}'")
    # the step builds at frequency lambda_{q+1} with products reaching
    # bandwidth times that; past the dealias cutoff the grid cannot
    # even represent the ansatz
    kmax = grid.n // 3
    if scales.N_q1 * DEFAULT_BANDWIDTH > kmax:
        raise ResolvabilityStop(
            f"N_(q+1) = {scales.N_q1} x bandwidth {DEFAULT_BANDWIDTH} "
            f"exceeds dealias cutoff {kmax} of an n={grid.n} grid")

    t0 = _clock.time()
    state.invariants()
    gap_worst = math.inf
    for t in (0.0, 0.5 * T, T):
        gap = float(profile(t)) - kinetic_energy(state.v_at(t))
        gap_worst = min(gap_worst, gap)
        rows.append(_row(t, "energy_gap[input]", gap, None, "input", q))
    if gap_worst <= 0.0:
        raise InvariantError(
            f"energy gap must stay positive; worst {gap_worst:.3e}")
    timings["preconditions"] = _clock.time() - t0

    if gate_times is None:
        gate_times = (0.25 * tau, 0.5 * tau, min(T, 1.0 * tau),
                      min(T, 1.75 * tau))
    gate_times = tuple(sorted(set(round(float(t), 12) for t in gate_times)))
    dt_fd = tau / 4096.0 if fd_dt is None else float(fd_dt)

    # ---- stage 1: mollify ------------------------------------------------
    t0 = _clock.time()
    ell = scales.ell

    def moll_triple(t):
        v, p, R = state.fields_at(t)
        # commutator-absorbing mollification: the triple stays on the
        # relaxed equation exactly, not merely to O(ell^2)
        return mollify_state(v, p, R, ell)

    state_m = IterationState(q=q, stage="mollified", grid=grid,
                             scales=scales, T=T, times=state.times,
                             provider=moll_triple)
    worst = 0.0
    for t in gate_times:
        r_proj, _ = _fd_residual(moll_triple, t, dt_fd, scales.lambda_q)
        worst = max(worst, r_proj)
        rows.append(_row(t, "er_residual[mollified]", r_proj,
                         residual_gate, "mollified", q))
    gates["er[mollified]"] = (worst, residual_gate, worst <= residual_gate)
    state_m.invariants(gate_times[:1])
    timings["mollified"] = _clock.time() - t0
    say(f"mollified: residual {worst:.3e}  ({timings['mollified']:.1f}s)")

    # ---- stage 2: glue ---------------------------------------------------
    t0 = _clock.time()
    part = build_chi(tau, T)
    lattice = np.asarray(state_m.times)
    solves = {}
    for i in part.indices:
        t_i = part.t(i)
        lo = max(0.0, t_i - 2.0 * tau / 3.0)
        hi = min(T, t_i + 2.0 * tau / 3.0)
        st = lattice[(lattice >= lo - 1e-12) & (lattice <= hi + 1e-12)]
        solves[i] = interval_solve(state_m.v_at(t_i), i, t_i, lo, hi,
                                   store_times=st, **(solver_kw or {}))
    glued = glue(solves, part)

    def glued_triple(t):
        return (glued.velocity_at(t), glued.pressure_at(t),
                glued.stress_at(t))

    state_g = IterationState(q=q, stage="glued", grid=grid, scales=scales,
                             T=T, times=state.times, provider=glued_triple,
                             cache_limit=2)
    worst = 0.0
    for t in gate_times:
        r_proj, _ = _fd_residual(glued_triple, t, dt_fd, scales.lambda_q)
        worst = max(worst, r_proj)
        rows.append(_row(t, "er_residual[glued]", r_proj,
                         residual_gate, "glued", q))
    gates["er[glued]"] = (worst, residual_gate, worst <= residual_gate)
    state_g.invariants(gate_times[:1])
    timings["glued"] = _clock.time() - t0
    say(f"glued: residual {worst:.3e}  ({timings['glued']:.1f}s)")

    # ---- stage 3: perturb ------------------------------------------------
    t0 = _clock.time()
    eta = build_eta(part, grid)
    flows = FlowProvider(glued)
    if family is None:
        family = build_family()
        mb, M = constant_M(family, c0=eta.c0)
        family = dataclasses.replace(family, M_bar=mb, M=M)
    timings["family"] = _clock.time() - t0

    def perturbed_triple(t):
        d = stress_decomposition(glued, eta, flows, profile, scales, t,
                                 alpha=alpha)
        pr = build_perturbation(d, flows, family, scales)
        ns = new_stress_and_pressure(glued, pr, d, scales, eta=eta,
                                     flows=flows, family=family,
                                     profile=profile, alpha=alpha)
        return ns.v, ns.p, ns.R

    def light_velocity(s):
        d = stress_decomposition(glued, eta, flows, profile, scales, s,
                                 alpha=alpha)
        w = build_perturbation(d, flows, family, scales, light=True).w
        return glued.velocity_at(s) + w

    scales_next = ladder.derive(q + 1)
    state_p = IterationState(q=q + 1, stage="perturbed", grid=grid,
                             scales=scales_next, T=T,
                             times=sample_lattice(scales_next.tau_q, T,
                                                  samples_per_tau),
                             provider=perturbed_triple, cache_limit=2)

    t0 = _clock.time()
    lam1 = scales.lambda_q1
    worst = 0.0
    R1_sup = 0.0
    R0_scale = 1e-30
    diff_sup = 0.0
    for t in gate_times:
        d = stress_decomposition(glued, eta, flows, profile, scales, t,
                                 alpha=alpha)
        pr = build_perturbation(d, flows, family, scales)
        ns = new_stress_and_pressure(glued, pr, d, scales, eta=eta,
                                     flows=flows, family=family,
                                     profile=profile, alpha=alpha)
        state_p.prime(t, (ns.v, ns.p, ns.R))

        vp = light_velocity(t + dt_fd)
        vm = light_velocity(t - dt_fd)
        dtv1 = (vp - vm) * (1.0 / (2.0 * dt_fd))
        res = er_residual(ns.v, ns.p, ns.R, dtv1, dealias_products=False)
        scale = _residual_scale(ns.v, lam1)
        r_proj = res.projected / scale
        worst = max(worst, r_proj)
        rows.append(_row(t, "er_residual[perturbed]", r_proj,
                         residual_gate, "perturbed", q + 1))
        rows.append(_row(t, "absorbed_trace", abs(ns.absorbed_trace),
                         None, "perturbed", q + 1))
        rows.append(_row(t, "div_w_rel", pr.div_w_rel, DIV_TOL,
                         "perturbed", q + 1))
        rows.append(_row(t, "support_leak", pr.support_leak, None,
                         "perturbed", q + 1))

        # the five inductive comparisons, measured against the ladder
        R1 = ns.R.linf()
        R1_sup = max(R1_sup, R1)
        rows.append(_row(t, "R_new_sup", R1,
                         scales.delta_q2 * lam1 ** (-3.0 * alpha),
                         "perturbed", q + 1))
        v1_c1 = holder_norm(ns.v, 1)
        rows.append(_row(t, "v_new_C1", v1_c1,
                         family.M * math.sqrt(scales.delta_q1) * lam1,
                         "perturbed", q + 1))
        rows.append(_row(t, "v_new_C0", ns.v.linf(),
                         1.0 - math.sqrt(scales.delta_q1),
                         "perturbed", q + 1))
        ec = energy_check(ns.v, profile, scales, t,
                          vbar=glued.velocity_at(t), w=pr.w,
                          rho_q=d.rho_q, alpha=alpha)
        rows.append(_row(t, "energy_gap", ec.gap, scales.delta_q2,
                         "perturbed", q + 1))
        rows.append(_row(t, "energy_gap_floor", ec.gap,
                         scales.delta_q2 / (8.0 * lam1 ** alpha),
                         "perturbed", q + 1, floor=True))
        rows.append(_row(t, "energy_dev_normalized", ec.normalized, None,
                         "perturbed", q + 1))
        dv = ns.v - state.v_at(t)
        diff = dv.linf() + holder_norm(dv, 1) / lam1
        diff_sup = max(diff_sup, diff)
        rows.append(_row(t, "v_increment", diff,
                         family.M * math.sqrt(scales.delta_q1),
                         "perturbed", q + 1))
        # reference scale for contraction: the stress amplitude this
        # step was asked to remove (traceless input plus pumping)
        R0_scale = max(R0_scale,
                       state.R_at(t).linf() + 3.0 * d.rho_q)
        say(f"perturbed t/tau={t / tau:5.2f}: residual {r_proj:.3e}  "
            f"|R1|={R1:.3f}  gap dev {ec.normalized:+.3f}")

    gates["er[perturbed]"] = (worst, residual_gate, worst <= residual_gate)
    contraction = R1_sup / R0_scale
    rows.append(_row(gate_times[-1], "stress_contraction", contraction,
                     CONTRACTION_TARGET, "perturbed", q + 1))
    state_p.invariants(gate_times[:1])
    state_p.diagnostics = rows
    timings["perturbed"] = _clock.time() - t0

    if contraction > CONTRACTION_TARGET:
        notes.append(
            f"stress contraction {contraction:.2f} misses the "
            f"{CONTRACTION_TARGET} target: at N_(q+1)={scales.N_q1} the "
            "building blocks are a few cells wide and the oscillation "
            "stress is dominated by their unresolved harmonics")

    report = StepReport(q=q, rows=rows, gates=gates,
                        contraction=contraction, timings=timings,
                        notes=notes)
    if strict:
        for name, (val, limit, ok) in gates.items():
            if not ok:
                raise StageResidualError(
                    f"{name} residual {val:.3e} exceeds gate {limit:.0e}")
    return state_p, report


def run_steps(state: IterationState, ladder, profile: EnergyProfile,
              max_steps: int = 8, **kw):
    """Iterate full_step until the grid can no longer hold the next rung.

    Returns (final_state, [reports], stopped_reason).
    """
    reports = []
    reason = "max_steps"
    for _ in range(max_steps):
        try:
            state, rep = full_step(state, ladder, profile, **kw)
        except ResolvabilityStop as stop:
            reason = str(stop)
            break
        reports.append(rep)
    return state, reports, reason


# ---------------------------------------------------------------------------
# report / run / export

def report(target, times=None, profile: EnergyProfile | None = None):
    """Diagnostic rows for a state (computed) or a run directory (read).

    On a state the rows are the plain norms and the energy gap at the
    requested times; on the zero state every norm is zero and the gap
    equals e(t).
    """
    if isinstance(target, (str, Path)):
        path = Path(target) / "diagnostics.csv"
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            assert header == CSV_HEADER, f"unexpected header in {path}"
            out = []
            for raw in rd:
                out.append(DiagRow(
                    t=float(raw[0]), quantity=raw[1],
                    measured=float(raw[2]),
                    bound=float(raw[3]) if raw[3] else None,
                    ratio=float(raw[4]) if raw[4] else None,
                    stage=raw[5], q=int(raw[6])))
            return out
    state = target
    if times is None:
        times = state.times[::max(1, (len(state.times) - 1) // 4)]
    rows = []
    for t in times:
        v, p, R = state.fields_at(t)
        rows.append(_row(t, "v_sup", v.linf(), None, state.stage, state.q))
        rows.append(_row(t, "v_l2", v.l2(), None, state.stage, state.q))
        rows.append(_row(t, "p_sup", p.linf(), None, state.stage, state.q))
        rows.append(_row(t, "R_sup", R.linf(), None, state.stage, state.q))
        if profile is not None:
            gap = float(profile(t)) - kinetic_energy(v)
            rows.append(_row(t, "energy_gap", gap, None, state.stage,
                             state.q))
    return rows


def format_rows(rows):
    lines = [f"{'t':>10}  {'quantity':<24} {'measured':>13} "
             f"{'bound':>13} {'ratio':>10}  stage"]
    for r in rows:
        b = "" if r.bound is None else f"{r.bound:13.4e}"
        ra = "" if r.ratio is None else f"{r.ratio:10.3f}"
        lines.append(f"{r.t:10.5f}  {r.quantity:<24} {r.measured:13.4e} "
                     f"{b:>13} {ra:>10}  {r.stage}")
    return lines


def _require(cfg: dict, key: str, typ, default=None, path: str = ""):
    here = f"{path}.{key}" if path else key
    if key not in cfg:
        if default is not None or type(None) in (
                typ if isinstance(typ, tuple) else (typ,)):
            return default
        raise ConfigError(f"missing config key: {here}")
    val = cfg[key]
    if isinstance(typ, tuple):
        ok = isinstance(val, typ)
    else:
        ok = isinstance(val, typ)
    if isinstance(val, bool) and bool not in (
            typ if isinstance(typ, tuple) else (typ,)):
        ok = False
    if not ok:
        raise ConfigError(f"config key {here} has wrong type: "
                          f"{type(val).__name__}")
    return val


def load_config(source) -> dict:
    """Parse and validate a run configuration (path, JSON text or dict)."""
    if isinstance(source, dict):
        raw = source
    else:
        text = Path(source).read_text() if Path(str(source)).exists() \
            else str(source)
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")

    grid = _require(raw, "grid", dict)
    ladder = _require(raw, "ladder", dict)
    profile = _require(raw, "profile", dict)
    times = _require(raw, "times", dict, default={})
    output = _require(raw, "output", dict)

    cfg = {
        "grid": {"n": _require(grid, "n", int, path="grid")},
        "ladder": {
            "mode": _require(ladder, "mode", str, path="ladder"),
            "indices": tuple(_require(ladder, "indices", list,
                                      default=[2, 10], path="ladder")),
            "beta": float(_require(ladder, "beta", (int, float),
                                   path="ladder")),
            "alpha": float(_require(ladder, "alpha", (int, float),
                                    path="ladder")),
            "b": ladder.get("b"),
        },
        "profile": {
            "kind": _require(profile, "kind", str, path="profile"),
            "c0": float(_require(profile, "c0", (int, float),
                                 path="profile")),
            "c1": float(profile.get("c1", 0.0)),
        },
        "times": {
            "samples": int(times.get("samples", 17)),
            "horizon_periods": float(times.get("horizon_periods", 2.0)),
            "gate": times.get("gate"),
        },
        "output": {"dir": _require(output, "dir", str, path="output")},
        "steps": int(raw.get("steps", 1)),
        "strict": bool(raw.get("strict", True)),
    }
    if cfg["ladder"]["mode"] not in ("desk", "paper"):
        raise ConfigError("ladder.mode must be 'desk' or 'paper'")
    if len(cfg["ladder"]["indices"]) != 2:
        raise ConfigError("ladder.indices must be [N_q, N_(q+1)]")
    if cfg["times"]["samples"] < 3:
        raise ConfigError("times.samples must be at least 3")
    if cfg["grid"]["n"] < 8 or cfg["grid"]["n"] % 2:
        raise ConfigError("grid.n must be even and at least 8")
    return cfg


def run(config, outdir=None, progress=None) -> Path:
    """Execute a configured run and write its artifact directory.

    Artifacts: config echo, diagnostics.csv (one row per (t, quantity,
    measured, paper_bound, ratio)), report.json with the gate verdicts,
    snapshots of the final triple at the mid period, and a summary.
    Identical configs produce identical csv/json bytes; timings go to a
    separate file outside that guarantee.
    """
    cfg = load_config(config)
    out = Path(outdir if outdir is not None else cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    say = progress if progress is not None else (lambda *_: None)

    grid = GridSpec(cfg["grid"]["n"])
    lad_cfg = cfg["ladder"]
    if lad_cfg["mode"] == "desk":
        ladder = DeskLadder(indices=tuple(lad_cfg["indices"]),
                            beta=lad_cfg["beta"], alpha=lad_cfg["alpha"])
    else:
        # asymptotic rungs are far past any desk grid; this mode reports
        # the audit and the zero-state diagnostics, then stops
        b = lad_cfg["b"] if lad_cfg["b"] else 1.5
        ladder = ScheduleParams(a=2.0, b=float(b), beta=lad_cfg["beta"],
                                alpha=lad_cfg["alpha"], M=1.0, T=1.0)

    prof_cfg = cfg["profile"]

    rows: list = []
    gates_out: dict = {}
    notes: list = []
    timings: dict = {}
    stopped = ""
    t_start = _clock.time()

    if lad_cfg["mode"] == "paper":
        rep = audit(ladder, q_max=8)
        for line in rep.lines:
            rows.append(_row(0.0, f"audit[{line.name}][q={line.q}]",
                             line.margin, 1.0, "audit", line.q))
        notes.append("paper-mode ladder: audit rows only; the first rung "
                     "frequency is beyond any desk grid")
        stopped = "paper mode"
    else:
        scales = ladder.derive(0)
        T = cfg["times"]["horizon_periods"] * scales.tau_q
        profile = EnergyProfile(kind=prof_cfg["kind"], c0=prof_cfg["c0"],
                                c1=prof_cfg["c1"], T=T)
        state = IterationState.zero(grid, scales, T,
                                    cfg["times"]["samples"])
        rows.extend(report(state, profile=profile))
        state.diagnostics = list(rows)

        gate = cfg["times"]["gate"]
        gate_times = (None if gate is None
                      else tuple(float(f) * scales.tau_q for f in gate))
        state, reports, stopped = run_steps(
            state, ladder, profile, max_steps=cfg["steps"],
            gate_times=gate_times,
            samples_per_tau=cfg["times"]["samples"],
            strict=cfg["strict"], progress=say)
        for i, rep in enumerate(reports):
            for name, (val, limit, ok) in rep.gates.items():
                gates_out[f"step{i}:{name}"] = [val, limit, bool(ok)]
            if rep.contraction is not None:
                gates_out[f"step{i}:contraction"] = [
                    rep.contraction, CONTRACTION_TARGET,
                    bool(rep.contraction <= CONTRACTION_TARGET)]
            notes.extend(rep.notes)
            timings[f"step{i}"] = rep.timings
        rows = (reports[-1].rows if reports else rows)

        if reports:
            t_save = 0.5 * ladder.derive(0).tau_q
            v, p, R = state.fields_at(t_save)
            save_state(out / "state_final", {"v": v, "p": p, "R": R},
                       time=t_save, stage=state.stage,
                       meta={"q": state.q, "n": grid.n,
                             "beta": lad_cfg["beta"],
                             "alpha": lad_cfg["alpha"]})

    with open(out / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_HEADER)
        for r in rows:
            wr.writerow(r.csv_row())
    with open(out / "report.json", "w") as fh:
        json.dump({"gates": gates_out, "notes": notes,
                   "stopped": stopped}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "timings.json", "w") as fh:
        json.dump({"wall": _clock.time() - t_start, "stages": timings},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "summary.txt", "w") as fh:
        for name, (val, limit, ok) in gates_out.items():
            fh.write(f"[{'pass' if ok else 'FAIL'}] {name}: {val:.3e} "
                     f"(limit {limit:.3g})\n")
        if stopped:
            fh.write(f"stopped: {stopped}\n")
        for n in notes:
            fh.write(f"note: {n}\n")
    say(f"run artifacts in {out}")
    return out


# ---------------------------------------------------------------------------
# the frequency sweep

@dataclass
class SweepPoint:
    N1: int
    lam: float
    R1_sup: float
    w0: float
    residual: float


@dataclass
class SweepResult:
    points: list
    exponent: float
    window: tuple = (-1.2, -0.6)

    @property
    def in_window(self) -> bool:
        lo, hi = self.window
        return lo <= self.exponent <= hi


def sweep_lambda(n: int = 256, N1_list=(8, 16, 32), beta: float = 0.05,
                 alpha: float = 0.05, family=None, light: bool = True,
                 measure_residual: bool = False,
                 progress=None) -> SweepResult:
    """Measure how the new stress decays as the injected frequency grows.

    Zero background on a fixed n^3 grid, one mid-period build per
    frequency, then a log-log fit of sup|R_new| against lambda.  The
    small beta keeps the amplitude ladder nearly flat across the sweep
    so the frequency is the only thing changing.
    """
    say = progress if progress is not None else (lambda *_: None)
    grid = GridSpec(n)
    if family is None:
        family = build_family()
        mb, M = constant_M(family, c0=0.5)
        family = dataclasses.replace(family, M_bar=mb, M=M)
    points = []
    for N1 in N1_list:
        ladder = DeskLadder(indices=(2, int(N1)), beta=beta, alpha=alpha)
        scales = ladder.derive(0)
        tau = scales.tau_q
        T = 2.0 * tau
        profile = EnergyProfile(kind="constant", c0=1.0, T=T)
        part = build_chi(tau, T)
        lattice = np.asarray(sample_lattice(tau, T))
        zero = VectorField.zeros(grid)
        solves = {}
        for i in part.indices:
            t_i = part.t(i)
            lo = max(0.0, t_i - 2.0 * tau / 3.0)
            hi = min(T, t_i + 2.0 * tau / 3.0)
            st = lattice[(lattice >= lo - 1e-12) & (lattice <= hi + 1e-12)]
            solves[i] = interval_solve(zero, i, t_i, lo, hi, store_times=st)
        glued = glue(solves, part)
        eta = build_eta(part, grid)
        flows = FlowProvider(glued)
        t = 0.5 * tau
        d = stress_decomposition(glued, eta, flows, profile, scales, t,
                                 alpha=alpha)
        pr = build_perturbation(d, flows, family, scales, light=light)
        ns = new_stress_and_pressure(glued, pr, d, scales, eta=eta,
                                     flows=flows, family=family,
                                     profile=profile, alpha=alpha)
        rel = math.nan
        if measure_residual:
            dt_fd = tau / 4096.0

            def light_velocity(s):
                dd = stress_decomposition(glued, eta, flows, profile,
                                          scales, s, alpha=alpha)
                return glued.velocity_at(s) + build_perturbation(
                    dd, flows, family, scales, light=True).w

            dtv = (light_velocity(t + dt_fd) - light_velocity(t - dt_fd)) \
                * (1.0 / (2.0 * dt_fd))
            res = er_residual(ns.v, ns.p, ns.R, dtv,
                              dealias_products=False)
            rel = res.projected / _residual_scale(ns.v, scales.lambda_q1)
        pt = SweepPoint(N1=int(N1), lam=scales.lambda_q1,
                        R1_sup=ns.R.linf(), w0=pr.w.linf(), residual=rel)
        points.append(pt)
        say(f"N1={N1}: |R1|={pt.R1_sup:.4f}  |w|0={pt.w0:.3f}  "
            f"residual {rel:.2e}")

    x = np.log([p.lam for p in points])
    y = np.log([p.R1_sup for p in points])
    exponent = float(np.polyfit(x, y, 1)[0])
    return SweepResult(points=points, exponent=exponent)
