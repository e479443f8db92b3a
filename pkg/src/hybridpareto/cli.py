"""Problem files, the ``hybridpareto`` command, and result files."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .driver import EfficientPoint, SamplingStalled, SweepConfig, SweepResult, run_sweep
from .poly import MooProblem, Polynomial
from .relax import Family

logger = logging.getLogger(__name__)

__all__ = [
    "PROBLEM_SCHEMA",
    "ProblemFileError",
    "ProblemFile",
    "parse_problem",
    "loads_problem",
    "serialize",
    "bundled_example",
    "write_results",
    "run",
    "main",
]

EXIT_OK, EXIT_SCHEMA, EXIT_IO, EXIT_NO_Z = 0, 2, 3, 4

_TERM = {
    "type": "object",
    "required": ["exponents", "coeff"],
    "additionalProperties": False,
    "properties": {
        "exponents": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "coeff": {"type": "number"},
    },
}
_POLY = {"type": "array", "items": _TERM}
_VEC = {"type": "array", "items": {"type": "number"}}

PROBLEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["n", "objectives"],
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "variables": {"type": "array", "items": {"type": "string"}},
        "objectives": {"type": "array", "items": _POLY, "minItems": 1},
        "constraints": {"type": "array", "items": _POLY},
        "lambda": _VEC,
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "box": {"type": "array", "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}},
                "samples": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "z_list": {"type": "array", "items": _VEC},
            },
        },
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["Q", "P"]},
                "k_max": {"type": "integer", "minimum": 1},
                "tolerances": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "gap": {"type": "number", "exclusiveMinimum": 0},
                        "feas": {"type": "number", "exclusiveMinimum": 0},
                        "rank": {"type": "number", "exclusiveMinimum": 0},
                        "filter": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
    },
}


class ProblemFileError(ValueError):
    """Invalid problem file. ``code`` is one of E_JSON, E_SCHEMA, E_LAMBDA, E_DIMENSION, E_IO."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message

    @property
    def exit_code(self) -> int:
        return EXIT_IO if self.code == "E_IO" else EXIT_SCHEMA


@dataclass
class ProblemFile:
    problem: MooProblem
    variables: list[str] | None = None
    sweep: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def sweep_config(self, **overrides) -> SweepConfig:
        s, o = self.sweep, self.options
        tol = o.get("tolerances", {})
        kw = dict(
            z_list=s.get("z_list"),
            box=s.get("box"),
            samples=s.get("samples", 0),
            seed=s.get("seed", 0),
            family=o.get("family", "P"),
            k_max=o.get("k_max"),
        )
        for key, name in (("gap", "tol_gap"), ("feas", "tol_feas"), ("rank", "tol_rank"), ("filter", "tol_filter")):
            if key in tol:
                kw[name] = tol[key]
        kw.update({k: v for k, v in overrides.items() if v is not None})
        if not kw.get("samples"):
            kw["box"] = None
        return SweepConfig(**kw)


def _poly_from_terms(n: int, terms, where: str) -> Polynomial:
    acc: dict = {}
    for t, term in enumerate(terms):
        exps = tuple(term["exponents"])
        if len(exps) != n:
            raise ProblemFileError("E_DIMENSION", f"{where}[{t}].exponents has length {len(exps)}, expected n={n}")
        c = float(term["coeff"])
        if not math.isfinite(c):
            raise ProblemFileError("E_SCHEMA", f"{where}[{t}].coeff is not finite")
        acc[exps] = acc.get(exps, 0.0) + c
    return Polynomial(n, acc)


def _poly_to_terms(p: Polynomial) -> list[dict]:
    return [{"exponents": list(a), "coeff": c} for a, c in p.items()]


def loads_problem(text: str) -> ProblemFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError("E_JSON", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return problem_from_dict(doc)


def problem_from_dict(doc) -> ProblemFile:
    validator = jsonschema.Draft202012Validator(PROBLEM_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ProblemFileError("E_SCHEMA", f"at {where}: {e.message}")

    n = doc["n"]
    names = doc.get("variables")
    if names is not None and len(names) != n:
        raise ProblemFileError("E_DIMENSION", f"variables has {len(names)} names, expected n={n}")
    objs = tuple(_poly_from_terms(n, f, f"objectives[{j}]") for j, f in enumerate(doc["objectives"]))
    cons = tuple(_poly_from_terms(n, g, f"constraints[{i}]") for i, g in enumerate(doc.get("constraints", [])))

    lam = doc.get("lambda")
    if lam is not None:
        if len(lam) != len(objs):
            raise ProblemFileError("E_DIMENSION", f"lambda has {len(lam)} entries, expected p={len(objs)}")
        if not all(math.isfinite(v) and v > 0 for v in lam):
            raise ProblemFileError("E_LAMBDA", "lambda must be strictly positive")

    sweep = dict(doc.get("sweep", {}))
    if "box" in sweep:
        box = sweep["box"]
        if len(box) != n:
            raise ProblemFileError("E_DIMENSION", f"sweep.box has {len(box)} rows, expected n={n}")
        if any(not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi) for lo, hi in box):
            raise ProblemFileError("E_SCHEMA", "sweep.box bounds must be finite with lower <= upper")
    for i, z in enumerate(sweep.get("z_list", [])):
        if len(z) != n:
            raise ProblemFileError("E_DIMENSION", f"sweep.z_list[{i}] has length {len(z)}, expected n={n}")

    problem = MooProblem(n, objs, cons, None if lam is None else np.asarray(lam, dtype=float))
    return ProblemFile(problem, list(names) if names is not None else None, sweep, dict(doc.get("options", {})))


def parse_problem(path) -> ProblemFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ProblemFileError("E_IO", f"cannot read {path}: {exc.strerror or exc}") from None
    return loads_problem(text)


def to_dict(pf: ProblemFile) -> dict:
    """Canonical document: terms in graded-lex order, merged, zero terms dropped."""
    pr = pf.problem
    doc: dict = {"n": pr.n}
    if pf.variables is not None:
        doc["variables"] = list(pf.variables)
    doc["objectives"] = [_poly_to_terms(f) for f in pr.objectives]
    doc["constraints"] = [_poly_to_terms(g) for g in pr.constraints]
    doc["lambda"] = [float(v) for v in pr.lam]
    if pf.sweep:
        doc["sweep"] = pf.sweep
    if pf.options:
        doc["options"] = pf.options
    return doc


def serialize(pf: ProblemFile) -> str:
    return json.dumps(to_dict(pf), indent=2, sort_keys=True) + "\n"


def bundled_example(name: str = "demo.json") -> ProblemFile:
    return loads_problem(resources.files("hybridpareto").joinpath("data", name).read_text())


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float)]


def _point_record(pt: EfficientPoint, cert_file: str | None = None) -> dict:
    rec = {
        "x": _floats(pt.x),
        "values": _floats(pt.values),
        "z": _floats(pt.z),
        "k_used": int(pt.k_used),
        "family": pt.family.value,
        "objective": float(pt.objective),
        "verified": bool(pt.verified),
        "reverify_ok": pt.reverify_ok,
        "certificate": cert_file,
    }
    return rec


def _clean_diag(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, float)):
            v = float(v)
            v = v if math.isfinite(v) else None
        out[k] = v
    return out


def _csv_text(points: list[EfficientPoint], n: int, p: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        [f"x_{i + 1}" for i in range(n)] + [f"f_{j + 1}" for j in range(p)]
        + [f"z_{i + 1}" for i in range(n)] + ["k_used", "verified", "reverify_ok"]
    )
    for pt in points:
        w.writerow(
            [_fmt(v) for v in pt.x] + [_fmt(v) for v in pt.values] + [_fmt(v) for v in pt.z]
            + [_fmt(pt.k_used), _fmt(pt.verified), _fmt(pt.reverify_ok)]
        )
    return buf.getvalue()


def write_results(out: Path, pf: ProblemFile, cfg: SweepConfig, result: SweepResult, emit_certificates: bool = False) -> dict:
    """Write results.json, efficient_points.csv, pareto_scatter.dat and optional certificates.

    Everything here is a deterministic function of the inputs; wall-clock
    information goes to run_log.json instead.
    """
    out.mkdir(parents=True, exist_ok=True)
    pr = pf.problem
    cert_files: list[str | None] = []
    if emit_certificates:
        (out / "certificates").mkdir(exist_ok=True)
    for i, pt in enumerate(result.efficient):
        name = None
        if emit_certificates and pt.certificate is not None:
            name = f"certificates/point_{i:05d}.json"
            (out / name).write_text(pt.certificate.to_json(indent=2, sort_keys=True) + "\n")
        cert_files.append(name)

    bundle = {
        "config": {
            "family": cfg.family.value,
            "k_max": cfg.k_max,
            "seed": cfg.seed,
            "samples": cfg.samples,
            "box": [list(b) for b in cfg.box] if cfg.box else None,
            "z_list": [list(z) for z in cfg.z_list] if cfg.z_list else None,
            "tolerances": {
                "gap": cfg.tol_gap,
                "feas": cfg.tol_feas,
                "rank": cfg.tol_rank,
                "filter": cfg.tol_filter,
            },
            "lambda": _floats(pr.lam),
        },
        "problem": to_dict(pf),
        "summary": {
            "z_count": result.z_count,
            "verified": sum(p.verified for p in result.raw),
            "efficient": len(result.efficient),
            "unverified": len(result.unverified),
        },
        "efficient_points": [_point_record(p, c) for p, c in zip(result.efficient, cert_files)],
        "unverified_points": [_point_record(p) for p in result.unverified],
        "diagnostics": [
            {"z": _floats(p.z), "verified": p.verified, "steps": [_clean_diag(d) for d in p.diagnostics]}
            for p in result.raw
        ],
    }
    (out / "results.json").write_text(json.dumps(bundle, indent=2) + "\n")
    (out / "efficient_points.csv").write_text(_csv_text(result.efficient, pr.n, pr.p))
    lines = ["# " + " ".join(f"x_{i + 1}" for i in range(pr.n))]
    lines += [" ".join(_fmt(v) for v in p.x) for p in result.efficient]
    (out / "pareto_scatter.dat").write_text("\n".join(lines) + "\n")
    return bundle


def _parse_box(text: str) -> list[list[float]]:
    rows = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        lo, hi = (float(v) for v in part.split(","))
        rows.append([lo, hi])
    return rows


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hybridpareto",
        description="Find efficient points of a convex polynomial multi-objective problem via moment relaxations.",
    )
    ap.add_argument("--problem", required=True, help="problem JSON file (use 'demo' for the bundled example)")
    ap.add_argument("--family", choices=["Q", "P"], default=None, help="relaxation family (default P)")
    ap.add_argument("--k-max", type=int, default=None, help="largest relaxation order (default k0+3)")
    ap.add_argument("--samples", type=int, default=None, help="number of z drawn from the box")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--box", type=str, default=None, help='sampling box "lo1,hi1;lo2,hi2;..." (write --box=... when a bound is negative)')
    ap.add_argument("--tol-gap", type=float, default=None)
    ap.add_argument("--tol-rank", type=float, default=None)
    ap.add_argument("--out", type=str, default="hybridpareto_out")
    ap.add_argument("--emit-certificates", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.time()
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        pf = bundled_example() if args.problem == "demo" else parse_problem(args.problem)
    except ProblemFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code

    try:
        box = _parse_box(args.box) if args.box is not None else None
    except ValueError:
        print(f"error: E_SCHEMA: cannot parse --box {args.box!r}", file=sys.stderr)
        return EXIT_SCHEMA
    if box is not None:
        if len(box) != pf.problem.n:
            print(f"error: E_DIMENSION: --box has {len(box)} rows, expected n={pf.problem.n}", file=sys.stderr)
            return EXIT_SCHEMA
        if args.samples is None and not pf.sweep.get("samples"):
            print("error: --box needs --samples", file=sys.stderr)
            return EXIT_SCHEMA
    try:
        cfg = pf.sweep_config(
            box=box,
            samples=args.samples,
            seed=args.seed,
            family=args.family,
            k_max=args.k_max,
            tol_gap=args.tol_gap,
            tol_rank=args.tol_rank,
            certificates=args.emit_certificates,
            workers=args.workers,
        )
    except ValueError as exc:
        print(f"error: E_SCHEMA: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if not cfg.has_sources:
        print("error: no z sources (give sweep.z_list, or a box with --samples >= 1)", file=sys.stderr)
        return EXIT_NO_Z

    try:
        result = run_sweep(pf.problem, cfg)
    except SamplingStalled as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_Z
    except ValueError as exc:
        print(f"error: E_DIMENSION: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if result.z_count == 0:
        print("error: no z sources (every listed z is outside the feasible set)", file=sys.stderr)
        return EXIT_NO_Z

    out = Path(args.out)
    try:
        write_results(out, pf, cfg, result, args.emit_certificates)
        log = {"started": started, "elapsed_seconds": time.time() - t0, "argv": list(argv if argv is not None else sys.argv[1:])}
        (out / "run_log.json").write_text(json.dumps(log, indent=2) + "\n")
    except OSError as exc:
        print(f"error: cannot write results to {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(
        f"{result.z_count} z, {sum(p.verified for p in result.raw)} verified, "
        f"{len(result.efficient)} efficient points -> {out}"
    )
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
