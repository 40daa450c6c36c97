"""Command-line studies: square / disk / lshape benchmark drivers and a
basis dump for cross-validation.

A JSON config file given via --config overrides any flags of the chosen
subcommand.  Exit code 0 on success; failures print a diagnostic and return
a nonzero code.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .mesh import Mesh, _lattice
from .study import (
    StudyConfig,
    adaptive_dof_slope,
    emit_results,
    run_adaptive,
    run_convergence,
    slopes,
)


def _common(sub):
    sub.add_argument("--formulation", choices=["prm", "tfsrm", "qfsrm"],
                     default="tfsrm")
    sub.add_argument("--p", type=int, default=3)
    sub.add_argument("--t", type=float, default=0.1)
    sub.add_argument("--out", default=None, help="output file path")
    sub.add_argument("--format", choices=["csv", "json"], default="csv")
    sub.add_argument("--config", default=None,
                     help="JSON config overriding the flags")
    sub.add_argument("--no-condense", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="hzplate")
    subs = parser.add_subparsers(dest="command", required=True)

    sq = subs.add_parser("square", help="clamped-square convergence study")
    _common(sq)
    sq.add_argument("--refinements", type=int, default=6)

    dk = subs.add_parser("disk", help="clamped-disk curved-boundary study")
    _common(dk)
    dk.add_argument("--geo-order", type=int, choices=[1, 3], default=3)
    dk.add_argument("--elements", type=int, default=24)
    dk.add_argument("--refinements", type=int, default=1)

    ls = subs.add_parser("lshape", help="L-shape adaptive study")
    _common(ls)
    ls.add_argument("--theta", type=float, default=0.5)
    ls.add_argument("--max-dofs", type=int, default=40000)
    ls.add_argument("--uniform", action="store_true")

    bc = subs.add_parser("basis-check", help="dump basis values as JSON")
    bc.add_argument("--space", choices=["hz", "rt", "lagrange", "dg"],
                    default="hz")
    bc.add_argument("--p", type=int, default=3)
    bc.add_argument("--points", default=None,
                    help="JSON file with an array of reference points")
    bc.add_argument("--out", default=None)
    return parser


def _apply_config(args):
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        for key, val in overrides.items():
            setattr(args, key.replace("-", "_"), val)
    return args


def _study_config(args) -> StudyConfig:
    kw = dict(
        domain=args.command,
        formulation=args.formulation,
        p=args.p,
        t=args.t,
        condense=not args.no_condense,
    )
    if args.command == "square":
        kw["refinements"] = args.refinements
    elif args.command == "disk":
        kw["geo_order"] = args.geo_order
        kw["n_elems"] = args.elements
        kw["refinements"] = args.refinements
    elif args.command == "lshape":
        kw["theta"] = args.theta
        kw["max_dofs"] = args.max_dofs
        kw["uniform"] = args.uniform
    return StudyConfig(**kw)


def _run_basis_check(args) -> int:
    from .spaces import build_dof_map

    ref = Mesh(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), [(0, 1, 2)])
    kind = args.space
    space = build_dof_map(ref, (kind, args.p))
    if args.points:
        with open(args.points) as fh:
            pts = np.array(json.load(fh), dtype=float)
    else:
        pts = _lattice(max(args.p, 2))
    doc = {"space": kind, "p": args.p, "points": pts.tolist()}
    if kind == "hz":
        vals, divs = space.element_values_divs(0, pts)
        doc["values"] = vals.tolist()
        doc["divergences"] = divs.tolist()
        doc["value_layout"] = "orthonormal Sym(2) coords (m11, sqrt2*m12, m22)"
    elif kind == "rt":
        vals, divs = space.element_values_divs(0, pts)
        doc["values"] = vals.tolist()
        doc["divergences"] = divs.tolist()
    else:
        vals, grads = space.ref_tables(pts)
        doc["values"] = vals.tolist()
        doc["gradients"] = grads.tolist()
    text = json.dumps(doc, sort_keys=True, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args = _apply_config(args)
        if args.command == "basis-check":
            return _run_basis_check(args)
        config = _study_config(args)
        if args.command == "lshape":
            records = run_adaptive(config)
            slope = adaptive_dof_slope(records) if len(records) >= 2 else None
            print(f"steps={len(records)} final dofs={records[-1].dofs} "
                  f"estimate={records[-1].estimate:.4e}"
                  + (f" dof-slope={slope:.3f}" if slope is not None else ""))
        else:
            records = run_convergence(config)
            msg = [f"meshes={len(records)} final dofs={records[-1].dofs}"]
            for name, err in sorted(records[-1].errors.items()):
                msg.append(f"{name}={err:.4e}")
            if len(records) >= 2:
                for name in sorted(records[-1].errors):
                    msg.append(f"slope_{name}={slopes(records, name):.3f}")
            print(" ".join(msg))
        if args.out:
            emit_results(records, args.format, args.out, config)
            print(f"wrote {args.out}")
        return 0
    except Exception as exc:  # surface a diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
