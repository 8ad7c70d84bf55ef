"""Declarative experiment runner.

Parses JSON experiment specs, wires the field map, motion, sequencer, spin,
and relaxometry layers into runnable experiments, and persists result CSVs
plus a RunRecord.  All randomness derives from the single spec seed via a
per-module tag (seed XOR crc32(module name)), so identical (spec, seed)
pairs produce byte-identical result files.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import fieldmap as fm
from . import motion as mo
from . import relaxometry as rx
from . import sequencer as sq
from . import spin as sp
from .errors import (FieldCycleError, SchemaViolation, UnknownKind,
                     UnsupportedVersion)
from .util import parallel_map

__all__ = ["ExperimentSpec", "RunRecord", "parse_spec", "run", "derive_seed"]

TOOL_VERSION = "0.1.0"
SCHEMA_VERSION = 1

KINDS = (
    "shuttle_characterization",
    "lac_plan",
    "dnp_sweep",
    "t1_field_map",
    "sequence_validation",
)


def derive_seed(seed: int, module: str) -> int:
    """Per-module stream seed: spec seed XOR crc32 of the module tag."""
    return (int(seed) ^ zlib.crc32(module.encode())) & 0xFFFFFFFFFFFFFFFF


def spec_hash(doc: dict) -> str:
    """Content hash, stable under key reordering."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# parsing / validation

_REQUIRED = object()


def _expect(cond, message, path):
    if not cond:
        raise SchemaViolation(message, path)


def _get_typed(obj, key, types, path, default=_REQUIRED):
    if key not in obj:
        if default is _REQUIRED:
            raise SchemaViolation("missing required key", f"{path}.{key}")
        return default
    val = obj[key]
    if not isinstance(val, types):
        names = types.__name__ if isinstance(types, type) else \
            "/".join(t.__name__ for t in types)
        raise SchemaViolation(f"expected {names}, got {type(val).__name__}",
                              f"{path}.{key}")
    return val


_NUM = (int, float)


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    seed: int
    output_dir: Optional[str]
    doc: dict
    base_dir: Path = field(default_factory=Path)

    def block(self, name, default=None):
        return self.doc.get(name, default if default is not None else {})

    # --- materialized components -------------------------------------
    def fieldmap(self) -> fm.FieldMap:
        blk = self.doc.get("fieldmap", "reference")
        if blk == "reference":
            return fm.reference_map()
        _expect(isinstance(blk, dict), "expected 'reference' or an object",
                "$.fieldmap")
        if "file" in blk:
            text = (self.base_dir / blk["file"]).read_text()
            return fm.FieldMap.from_json(text)
        if "anchors_file" in blk:
            text = (self.base_dir / blk["anchors_file"]).read_text()
            anchors = fm.anchors_from_csv(text)
            return fm.calibrate(anchors, blk.get("model_kind", "auto"))
        raise SchemaViolation("needs 'file' or 'anchors_file'", "$.fieldmap")

    def limits(self) -> mo.MotionLimits:
        blk = _get_typed(self.doc, "motion", dict, "$", default={})
        return mo.MotionLimits(
            v_max=_get_typed(blk, "v_max", _NUM, "$.motion", default=2.0),
            a_max=_get_typed(blk, "a_max", _NUM, "$.motion", default=30.0),
            precision_m=_get_typed(blk, "precision_m", _NUM, "$.motion",
                                   default=50e-6),
            travel_range_m=_get_typed(blk, "travel_range_m", _NUM, "$.motion",
                                      default=1.600),
        )


def parse_spec(document, base_dir=".") -> ExperimentSpec:
    """Validate a spec document (JSON text or dict) into an ExperimentSpec."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"not valid JSON: {exc}", "$")
    else:
        doc = document
    _expect(isinstance(doc, dict), "top level must be an object", "$")
    version = _get_typed(doc, "schema_version", int, "$")
    if version != SCHEMA_VERSION:
        raise UnsupportedVersion(f"schema_version {version} not supported "
                                 f"(this tool reads {SCHEMA_VERSION})")
    kind = _get_typed(doc, "kind", str, "$")
    if kind not in KINDS:
        raise UnknownKind(f"kind {kind!r}; known kinds: {', '.join(KINDS)}")
    seed = _get_typed(doc, "seed", int, "$", default=0)
    output_dir = _get_typed(doc, "output_dir", str, "$", default=None)

    spec = ExperimentSpec(kind=kind, seed=seed, output_dir=output_dir,
                          doc=doc, base_dir=Path(base_dir))
    _validate_kind_block(spec)
    return spec


def _validate_kind_block(spec: ExperimentSpec):
    doc, kind = spec.doc, spec.kind
    if kind == "shuttle_characterization":
        blk = _get_typed(doc, "shuttle", dict, "$", default={})
        vs = _get_typed(blk, "velocities", list, "$.shuttle",
                        default=[0.5, 1.0, 1.5, 2.0])
        _expect(all(isinstance(v, _NUM) and v > 0 for v in vs),
                "velocities must be positive numbers", "$.shuttle.velocities")
    elif kind == "lac_plan":
        blk = _get_typed(doc, "lac", dict, "$", default={})
        targets = _get_typed(blk, "targets_T", list, "$.lac",
                             default=[0.051, 0.102])
        _expect(all(isinstance(t, _NUM) and t > 0 for t in targets),
                "targets_T must be positive numbers", "$.lac.targets_T")
    elif kind == "dnp_sweep":
        blk = _get_typed(doc, "dnp", dict, "$", default={})
        for key, default in (("hyperfine_Hz", 1e6), ("B_pol_T", 0.010)):
            v = _get_typed(blk, key, _NUM, "$.dnp", default=default)
            _expect(v > 0, f"{key} must be positive", f"$.dnp.{key}")
        nodes = _get_typed(blk, "nodes", int, "$.dnp", default=16)
        _expect(nodes >= 8, "need at least 8 quadrature nodes", "$.dnp.nodes")
    elif kind == "t1_field_map":
        blk = _get_typed(doc, "t1", dict, "$", default={})
        fields = _get_typed(blk, "fields_T", list, "$.t1",
                            default=[0.008, 0.1, 0.5, 1.0, 7.0])
        _expect(all(isinstance(b, _NUM) and b > 0 for b in fields),
                "fields_T must be positive numbers", "$.t1.fields_T")
    elif kind == "sequence_validation":
        blk = _get_typed(doc, "sequence", dict, "$", default={})
        _get_typed(blk, "t_pol_s", _NUM, "$.sequence", default=40.0)


# ---------------------------------------------------------------------------
# execution

@dataclass
class RunRecord:
    spec_hash: str
    tool_version: str
    seed: int
    kind: str
    started_at: str
    finished_at: Optional[str] = None
    status: str = "running"
    config: dict = field(default_factory=dict)
    manifest: list = field(default_factory=list)
    violations: int = 0
    error: Optional[str] = None

    def to_json(self) -> str:
        doc = dict(self.__dict__)
        doc["schema"] = 1
        return json.dumps(doc, indent=2, sort_keys=True)


class _Workspace:
    """Atomic result writing; only fully written files reach the manifest."""

    def __init__(self, out_dir: Path, record: RunRecord):
        self.out_dir = out_dir
        self.record = record
        out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str):
        final = self.out_dir / name
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, final)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.record.manifest.append(name)


def _csv_rows(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(x)) if isinstance(x, (int, float)) and
                              not isinstance(x, bool) else str(x) for x in row))
    return "\n".join(lines) + "\n"


def _run_shuttle(spec: ExperimentSpec, ws: _Workspace, quiet: bool):
    blk = spec.block("shuttle")
    limits = spec.limits()
    distance = blk.get("distance_m", 1.1627)
    velocities = blk.get("velocities", [0.5, 1.0, 1.5, 2.0])
    sigma = blk.get("jitter_sigma_s", 2.6e-3)
    runs = int(blk.get("runs", 0))
    jm = mo.JitterModel(sigma_s=sigma, seed=derive_seed(spec.seed, "motion"))

    rows = []
    for v in velocities:
        prof = mo.plan(distance, limits, v_target=float(v))
        nominal = mo.duration(prof)
        if runs > 0:
            realized = np.array([mo.apply_jitter(nominal, jm) for _ in range(runs)])
            rows.append([v, nominal, float(np.mean(realized)),
                         float(np.std(realized, ddof=1))])
        else:
            rows.append([v, nominal, nominal, 0.0])
    header = ["v_mps", "duration_s", "mean_realized_s", "std_realized_s"]
    ws.write("shuttle_durations.csv", _csv_rows(header, rows))
    if not quiet:
        for r in rows:
            print(f"v={r[0]:.3g} m/s  duration={r[1]:.6f} s")


def _run_lac(spec: ExperimentSpec, ws: _Workspace, quiet: bool):
    blk = spec.block("lac")
    fmap = spec.fieldmap()
    limits = spec.limits()
    targets = blk.get("targets_T", [0.051, 0.102])
    precision = blk.get("precision_m", limits.precision_m)
    v_max = blk.get("v_max", limits.v_max)
    rows = []
    for t in targets:
        p = fmap.plan_lac_access(float(t), precision_m=precision, v_max=v_max)
        rows.append([p.target_field_T, p.position_m, p.gradient_T_per_m,
                     p.resolution_T, p.max_sweep_rate_T_per_s])
        if not quiet:
            print(f"B={p.target_field_T:.4g} T  z={p.position_m:.4f} m  "
                  f"res={p.resolution_T * 1e4:.4f} G  "
                  f"rate={p.max_sweep_rate_T_per_s:.4f} T/s")
    header = ["target_T", "position_m", "gradient_T_per_m", "resolution_T",
              "max_sweep_rate_T_per_s"]
    ws.write("lac_plan.csv", _csv_rows(header, rows))


def _run_dnp(spec: ExperimentSpec, ws: _Workspace, quiet: bool):
    blk = spec.block("dnp")
    sys = sp.SpinSystem(
        hyperfine_Hz=float(blk.get("hyperfine_Hz", 1e6)),
        theta_rad=0.0,
        B_pol_T=float(blk.get("B_pol_T", 0.010)),
    )
    sweep = sp.SweepParams(
        sweep_rate_Hz_per_s=float(blk.get("sweep_rate_Hz_per_s", 6e9)),
        mw_rabi_Hz=float(blk.get("mw_rabi_Hz", 60e3)),
        n_sweeps=int(blk.get("n_sweeps", 1)),
    )
    ensemble = sp.PowderEnsemble.gauss_legendre(int(blk.get("nodes", 16)))
    result = sp.powder_average(sys, sweep, ensemble)
    ws.write("dnp_sweep.csv", _csv_rows(
        ["theta_rad", "weight", "polarization"],
        [[t, w, p] for t, w, p in result.table]))
    summary = {
        "mean_polarization": result.mean_polarization,
        "signs_uniform": result.signs_uniform(),
        "nodes": len(result.table),
    }
    ws.write("dnp_summary.json", json.dumps(summary, indent=2, sort_keys=True))
    if not quiet:
        print(f"powder mean polarization {result.mean_polarization:+.6f} "
              f"({len(result.table)} nodes)")


def _run_t1(spec: ExperimentSpec, ws: _Workspace, quiet: bool):
    blk = spec.block("t1")
    fmap = spec.fieldmap()
    limits = spec.limits()
    rblk = blk.get("relaxation", {})
    model = rx.RelaxationModel(
        T1_max_s=rblk.get("T1_max_s", 395.7),
        T1_min_s=rblk.get("T1_min_s", 10.19),
        B_knee_T=rblk.get("B_knee_T", 0.5),
        exponent=rblk.get("exponent", 2.0),
    )
    fields = [float(b) for b in blk.get("fields_T", [0.008, 0.1, 0.5, 1.0, 7.0])]
    n_waits = int(blk.get("n_waits", 16))
    lo, hi = blk.get("wait_span", [0.2, 2.0])
    noise = float(blk.get("noise_sigma", 0.0))
    b_pol = float(blk.get("B_pol_T", 0.008))
    base_seed = derive_seed(spec.seed, "relaxometry")

    def one(item):
        i, b = item
        t1b = float(rx.t1_of_field(b, model))
        waits = tuple(np.linspace(lo * t1b, hi * t1b, n_waits))
        prot = rx.RelaxometryProtocol(B_pol_T=b_pol, B_relax_T=b,
                                      T_relax_list_s=waits)
        return rx.simulate_protocol(prot, fmap, limits, model,
                                    seed=base_seed + i, noise_sigma=noise)

    curves = parallel_map(one, list(enumerate(fields)))
    for b, curve in zip(fields, curves):
        ws.write(f"curve_B{b:g}T.csv", curve.to_csv())
    t1map = rx.build_t1_map(fields, curves)
    ws.write("t1_map.csv", t1map.to_csv())
    if not quiet:
        for b, f in t1map.entries:
            print(f"B={b:.4g} T  T1={f.T1_s:.4g} s")
    if t1map.failures:
        ws.write("t1_failures.csv", _csv_rows(
            ["B_T", "error"], [[b, e] for b, e in t1map.failures]))


def _sequence_parts(spec: ExperimentSpec):
    blk = spec.block("sequence")
    fmap = spec.fieldmap()
    limits = spec.limits()
    b_start = float(blk.get("B_start_T", 0.008))
    z_start = fmap.position_of_field(b_start)
    z_end = fmap.position_of_field(float(blk.get("B_end_T", 7.0)))
    distance = blk.get("shuttle_distance_m")
    if distance is None:
        distance = abs(z_start - z_end)
    direction = 1.0 if z_end > z_start else -1.0
    prof = mo.plan(float(distance), limits, z_start=z_start, direction=direction)
    cryo = None
    if blk.get("cryo"):
        cblk = blk["cryo"] if isinstance(blk["cryo"], dict) else {}
        cryo = sq.CryoSpec(
            eject_duration_s=cblk.get("eject_duration_s", 1.0),
            fill_duration_s=cblk.get("fill_duration_s", 2.0),
            cold_delay_s=cblk.get("cold_delay_s", 3.5),
        )
    seq = sq.SequenceSpec(
        t_pol_s=float(blk.get("t_pol_s", 40.0)),
        shuttle_profile=prof,
        trigger_pulse_s=float(blk.get("trigger_pulse_s", 0.010)),
        acquire_duration_s=float(blk.get("acquire_duration_s", 1.0)),
        latencies={**sq.DEFAULT_LATENCIES, **blk.get("latencies", {})},
        cryo=cryo,
        low_field_max_T=float(blk.get("low_field_max_T", 0.030)),
    )
    return sq.build_timeline(seq), prof, fmap


def _run_sequence(spec: ExperimentSpec, ws: _Workspace, quiet: bool):
    timeline, prof, fmap = _sequence_parts(spec)
    report = sq.validate(timeline, prof, fmap)
    ws.write("validation_report.csv", report.to_csv())
    if not quiet:
        if report.ok:
            print("timeline valid")
        for v in report.violations:
            print(f"violation {v.code}: {v.detail}")
    return len(report.violations)


def simulate_sequence(spec: ExperimentSpec, runs: int, out_dir: Path,
                      quiet: bool = False) -> RunRecord:
    """Realize ``runs`` jittered executions of the spec's timeline."""
    record = _new_record(spec)
    ws = _Workspace(out_dir, record)
    try:
        timeline, prof, fmap = _sequence_parts(spec)
        blk = spec.block("sequence")
        jm = mo.JitterModel(sigma_s=float(blk.get("jitter_sigma_s", 2.6e-3)),
                            seed=derive_seed(spec.seed, "sequencer"))
        logs = [sq.simulate(timeline, jm, run_id=i) for i in range(runs)]
        rows = [r for log in logs for r in log.rows]
        text = sq.EventLog(tuple(rows), logs[0].metadata if logs else {}).to_csv()
        ws.write("event_log.csv", text)
        if not quiet:
            print(f"simulated {runs} runs, {len(rows)} events")
        _finish(record, ws, "ok")
    except FieldCycleError as exc:
        _finish(record, ws, "failed", error=str(exc))
        raise
    return record


_RUNNERS = {
    "shuttle_characterization": _run_shuttle,
    "lac_plan": _run_lac,
    "dnp_sweep": _run_dnp,
    "t1_field_map": _run_t1,
    "sequence_validation": _run_sequence,
}


def _new_record(spec: ExperimentSpec) -> RunRecord:
    return RunRecord(
        spec_hash=spec_hash(spec.doc),
        tool_version=TOOL_VERSION,
        seed=spec.seed,
        kind=spec.kind,
        started_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        config={k: v for k, v in spec.doc.items() if k != "schema_version"},
    )


def _finish(record: RunRecord, ws: _Workspace, status: str, error=None,
            violations: int = 0):
    record.status = status
    record.error = error
    record.violations = violations
    record.finished_at = _dt.datetime.now(_dt.timezone.utc).isoformat()
    (ws.out_dir / "runrecord.json").write_text(record.to_json())


def run(spec: ExperimentSpec, out_dir=None, quiet: bool = False) -> RunRecord:
    """Execute the experiment; writes result files and a RunRecord JSON."""
    out = Path(out_dir or spec.output_dir or "fieldcycle-out")
    record = _new_record(spec)
    ws = _Workspace(out, record)
    try:
        violations = _RUNNERS[spec.kind](spec, ws, quiet) or 0
        _finish(record, ws, "ok" if violations == 0 else "violations",
                violations=violations)
    except FieldCycleError as exc:
        _finish(record, ws, "failed", error=str(exc))
        raise
    return record
