"""Command-line interface.

Exit codes: 0 success, 2 validation violations, 3 spec/schema error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import fieldmap as fm
from . import motion as mo
from . import orchestrator as orc
from .errors import (FieldCycleError, SchemaViolation, UnknownKind,
                     UnsupportedVersion)

EXIT_OK = 0
EXIT_VIOLATIONS = 2
EXIT_SPEC_ERROR = 3
EXIT_NUMERICAL = 4


def _load_spec(path, seed_override=None, expect_kind=None):
    p = Path(path)
    spec = orc.parse_spec(p.read_text(), base_dir=p.parent)
    if expect_kind and spec.kind != expect_kind:
        raise SchemaViolation(f"expected kind {expect_kind!r}, got {spec.kind!r}",
                              "$.kind")
    if seed_override is not None:
        doc = dict(spec.doc)
        doc["seed"] = seed_override
        spec = orc.parse_spec(doc, base_dir=spec.base_dir)
    return spec


def _cmd_plan_motion(args):
    limits = mo.MotionLimits(v_max=args.vmax, a_max=args.amax)
    prof = mo.plan(args.distance, limits)
    if not args.quiet:
        print(f"shape {prof.shape}  duration {mo.duration(prof):.6f} s")
    if args.out:
        traj = mo.sample_trajectory(prof, args.dt)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        path = Path(args.out) / "trajectory.csv"
        path.write_text(traj.to_csv(fm.reference_map()))
        if not args.quiet:
            print(f"wrote {path}")
    return EXIT_OK


def _cmd_calibrate_field(args):
    anchors = fm.anchors_from_csv(Path(args.anchors).read_text())
    fmap = fm.calibrate(anchors, model_kind=args.model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(fmap.to_json())
    if not args.quiet:
        print(f"calibrated {fmap.model} map -> {out}")
    return EXIT_OK


def _cmd_plan_lac(args):
    if args.map:
        fmap = fm.FieldMap.from_json(Path(args.map).read_text())
    else:
        fmap = fm.reference_map()
    rows = []
    for t in args.target:
        p = fmap.plan_lac_access(t, precision_m=args.precision, v_max=args.vmax)
        rows.append(p)
        if not args.quiet:
            print(f"B={p.target_field_T:.4g} T  z={p.position_m:.4f} m  "
                  f"gradient={p.gradient_T_per_m:+.4f} T/m  "
                  f"resolution={p.resolution_T * 1e4:.4f} G  "
                  f"max rate={p.max_sweep_rate_T_per_s:.4f} T/s")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        path = Path(args.out) / "lac_plan.csv"
        lines = ["target_T,position_m,gradient_T_per_m,resolution_T,max_sweep_rate_T_per_s"]
        for p in rows:
            lines.append(",".join(repr(x) for x in
                                  (p.target_field_T, p.position_m, p.gradient_T_per_m,
                                   p.resolution_T, p.max_sweep_rate_T_per_s)))
        path.write_text("\n".join(lines) + "\n")
        if not args.quiet:
            print(f"wrote {path}")
    return EXIT_OK


def _run_spec_kind(args, kind):
    spec = _load_spec(args.config, seed_override=args.seed, expect_kind=kind)
    if kind == "dnp_sweep" and args.nodes:
        doc = dict(spec.doc)
        doc.setdefault("dnp", {})
        doc["dnp"] = {**doc["dnp"], "nodes": args.nodes}
        spec = orc.parse_spec(doc, base_dir=spec.base_dir)
    orc.run(spec, out_dir=args.out, quiet=args.quiet)
    return EXIT_OK


def _cmd_validate_sequence(args):
    spec = _load_spec(args.spec, expect_kind="sequence_validation")
    record = orc.run(spec, out_dir=args.out, quiet=args.quiet)
    return EXIT_OK if record.violations == 0 else EXIT_VIOLATIONS


def _cmd_simulate_sequence(args):
    spec = _load_spec(args.spec, seed_override=args.seed,
                      expect_kind="sequence_validation")
    out = Path(args.out or spec.output_dir or "fieldcycle-out")
    orc.simulate_sequence(spec, runs=args.runs, out_dir=out, quiet=args.quiet)
    return EXIT_OK


def _cmd_run(args):
    spec = _load_spec(args.spec, seed_override=args.seed)
    record = orc.run(spec, out_dir=args.out, quiet=args.quiet)
    return EXIT_OK if record.violations == 0 else EXIT_VIOLATIONS


def build_parser():
    ap = argparse.ArgumentParser(
        prog="fieldcycle",
        description="Field-cycling NMR instrument digital twin",
    )
    ap.add_argument("--quiet", action="store_true", help="suppress progress output")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress progress output")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan-motion", help="plan a shuttle move", parents=[common])
    p.add_argument("--distance", type=float, required=True, help="move length (m)")
    p.add_argument("--vmax", type=float, default=2.0)
    p.add_argument("--amax", type=float, default=30.0)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_plan_motion)

    p = sub.add_parser("calibrate-field", help="fit a field map to anchors",
                       parents=[common])
    p.add_argument("--anchors", required=True, help="anchor CSV file")
    p.add_argument("--model", default="auto",
                   choices=["auto", "finite_solenoid", "monotone_spline"])
    p.add_argument("--out", required=True, help="output map JSON")
    p.set_defaults(fn=_cmd_calibrate_field)

    p = sub.add_parser("plan-lac", help="level anti-crossing access budget",
                       parents=[common])
    p.add_argument("--target", type=float, action="append", required=True,
                   help="target field (T); repeatable")
    p.add_argument("--map", default=None, help="field map JSON (default: reference)")
    p.add_argument("--precision", type=float, default=50e-6)
    p.add_argument("--vmax", type=float, default=2.0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_plan_lac)

    for verb, kind in (("dnp-sweep", "dnp_sweep"), ("t1-map", "t1_field_map")):
        p = sub.add_parser(verb, help=f"run a {kind} experiment spec",
                           parents=[common])
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--nodes", type=int, default=None)
        p.add_argument("--out", default=None)
        p.set_defaults(fn=lambda a, k=kind: _run_spec_kind(a, k))

    p = sub.add_parser("validate-sequence", help="check a trigger timeline",
                       parents=[common])
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_validate_sequence)

    p = sub.add_parser("simulate-sequence", help="jittered timeline realizations",
                       parents=[common])
    p.add_argument("--spec", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_simulate_sequence)

    p = sub.add_parser("run", help="run any experiment spec", parents=[common])
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_run)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (SchemaViolation, UnknownKind, UnsupportedVersion) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC_ERROR
    except FileNotFoundError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC_ERROR
    except json.JSONDecodeError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC_ERROR
    except FieldCycleError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
