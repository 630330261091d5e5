"""Command-line front end.

Subcommands map one-to-one onto the library's entry points: parameter
audits, building-block certification and export, single steps, full
runs, and reading back a run directory.  Everything prints to stdout
and signals failure through the exit code, so the commands compose in
shell scripts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_audit(args) -> int:
    from .schedule import (ParameterError, ScheduleParams,
                           asymptotic_feasible, audit, find_admissible)

    if args.scan_beta:
        # feasibility frontier in the large-a limit: for each beta the
        # searched (b, alpha) pair and whether every inequality holds
        print("beta,b,alpha,feasible")
        bad = 0
        for beta in np.arange(0.02, 0.34, 0.02):
            beta = round(float(beta), 2)
            if beta >= 1.0 / 3.0:
                break
            try:
                b, alpha = find_admissible(beta)
                ok = asymptotic_feasible(beta, b, alpha)
            except ParameterError as err:
                print(f"{beta},,,{err}")
                bad += 1
                continue
            bad += 0 if ok else 1
            print(f"{beta},{b:.6g},{alpha:.6g},{ok}")
        return 1 if bad else 0

    b, alpha = args.b, args.alpha
    if b is None or alpha is None:
        # derive an admissible pair for this beta, then let explicit
        # flags override either half
        b_auto, alpha_auto = find_admissible(args.beta)
        b = b_auto if b is None else b
        alpha = alpha_auto if alpha is None else alpha
    params = ScheduleParams(a=args.a, b=b, beta=args.beta,
                            alpha=alpha, M=args.M)
    rep = audit(params, q_max=args.qmax)
    rows = [(l.name, l.q, l.passed, l.margin, l.detail)
            for l in rep.lines]
    width = max(len(r[0]) for r in rows)
    failed = 0
    for name, q, passed, margin, detail in rows:
        failed += 0 if passed else 1
        m = "      n/a" if margin is None else f"{margin:12.4e}"
        qtxt = "  -" if q is None else f"{q:<3d}"
        print(f"[{'pass' if passed else 'FAIL'}] {name:<{width}} "
              f"q={qtxt} margin={m}  {detail}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["name", "q", "passed", "margin", "detail"])
            wr.writerows(rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed "
          f"(q up to {rep.q_max})")
    return 1 if failed else 0


def _cmd_mikado_check(args) -> int:
    from .mikado import build_family, verify_family

    fam = build_family(radius=args.radius)
    rep = verify_family(fam, n_quad=args.nquad)
    for name, val in vars(rep).items():
        print(f"{name:<26} {val}")
    ok = rep.min_coeff_ball > 0.0
    print("coefficient positivity on the radius-1/2 ball:",
          "pass" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_mikado_export(args) -> int:
    from .mikado import ROutOfRangeError, build_family
    from .vtk import write_vtk

    xx, xy, xz, yy, yz, zz = args.R
    R = np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])
    fam = build_family(radius=args.radius)
    n = args.n
    ax = (np.arange(n) + 0.5) / n
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
    try:
        W = fam.eval_W(R, pts)
    except ROutOfRangeError as err:
        print(f"stress outside the certified ball: {err}",
              file=sys.stderr)
        return 2
    arr = np.moveaxis(W.reshape(n, n, n, 3), -1, 0)
    out = write_vtk(args.vtk, {"W": arr},
                    title="building-block field W(R, x)")
    print(f"wrote {out} ({n}^3 vector samples)")
    return 0


def _load_cfg(path: str) -> dict:
    from .pipeline import ConfigError, load_config
    try:
        return load_config(path)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        raise SystemExit(2)


def _cmd_step(args) -> int:
    from .pipeline import StageResidualError, run

    cfg = _load_cfg(args.config)
    cfg["steps"] = 1
    try:
        out = run(cfg, outdir=args.out, progress=print)
    except StageResidualError as err:
        print(f"stage gate failed: {err}", file=sys.stderr)
        return 1
    print(Path(out) / "summary.txt")
    print((Path(out) / "summary.txt").read_text(), end="")
    return 0


def _cmd_run(args) -> int:
    from .pipeline import StageResidualError, run

    cfg = _load_cfg(args.config)
    try:
        out = run(cfg, outdir=args.out, progress=print)
    except StageResidualError as err:
        print(f"stage gate failed: {err}", file=sys.stderr)
        return 1
    print((Path(out) / "summary.txt").read_text(), end="")
    return 0


def _cmd_report(args) -> int:
    from .pipeline import format_rows, report

    rows = report(args.dir)
    for line in format_rows(rows):
        print(line)
    return 0


def _cmd_export(args) -> int:
    from .snapshots import load_state
    from .vtk import write_vtk

    src = Path(args.vtk)
    snap = src / "state_final" if (src / "state_final").is_dir() else src
    fields, manifest = load_state(snap)
    out = args.out or str(src / "fields.vtk")
    write_vtk(out, fields, title=f"state at t={manifest['time']:.6g} "
                                 f"({manifest['stage']})")
    print(f"wrote {out}: {', '.join(sorted(fields))} "
          f"on {manifest['n']}^3")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="eulerci",
        description="dissipative Euler flows, one desk at a time")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("audit", help="check a parameter ladder")
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--b", type=float, default=None,
                   help="default: derived from beta")
    p.add_argument("--alpha", type=float, default=None,
                   help="default: derived from beta")
    p.add_argument("--qmax", type=int, default=8)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--M", type=float, default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--scan-beta", action="store_true",
                   help="sweep beta over (0, 1/3) with derived (b, alpha)")
    p.set_defaults(fn=_cmd_audit)

    p = sub.add_parser("mikado-check",
                       help="re-verify the building-block family")
    p.add_argument("--radius", type=float, default=0.06)
    p.add_argument("--nquad", type=int, default=256)
    p.set_defaults(fn=_cmd_mikado_check)

    p = sub.add_parser("mikado-export",
                       help="sample W(R, x) and write a VTK file")
    p.add_argument("--R", type=float, nargs=6, required=True,
                   metavar=("XX", "XY", "XZ", "YY", "YZ", "ZZ"))
    p.add_argument("--vtk", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--radius", type=float, default=0.06)
    p.set_defaults(fn=_cmd_mikado_export)

    p = sub.add_parser("step", help="one inductive step from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_step)

    p = sub.add_parser("run", help="a configured multi-step run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("report", help="print a run directory's rows")
    p.add_argument("dir")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("export", help="snapshot -> VTK")
    p.add_argument("--vtk", required=True, metavar="DIR",
                   help="run directory or snapshot directory")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_export)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
