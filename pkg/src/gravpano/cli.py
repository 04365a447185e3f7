"""``gravpano`` command line: solve, ransac and bench."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateError,
    GravpanoError,
    InfeasibleConfigError,
    InvalidInputError,
    NoModelError,
    NotDivisibleError,
    ParseError,
    SingularConfigurationError,
)
from .geometry import Correspondence, DistortedPoint, GravityPrior, constraint_residuals
from .robust import RansacConfig, iteration_budget, ransac
from .solvers import HomographyModel, SolverId, solve

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DEGENERATE = 3
EXIT_NO_SOLUTION = 4
EXIT_NO_MODEL = 5
EXIT_UNWRITABLE = 6

SOLVER_NAMES = {
    "h1f": SolverId.H1f,
    "h2f1f2": SolverId.H2f1f2,
    "h2lambda": SolverId.H2lambda,
    "h3l1l2": SolverId.H3l1l2,
    "h4dlt": SolverId.H4dlt,
}
AUTO_BY_ROWS = {1: SolverId.H1f, 2: SolverId.H2lambda, 3: SolverId.H3l1l2}


@dataclass
class CorrespondenceFile:
    gravity1: np.ndarray
    gravity2: np.ndarray
    norm_scale: float
    rows: np.ndarray  # (n, 4) pixels
    meta: dict

    def correspondences(self) -> list[Correspondence]:
        g1 = GravityPrior.from_gravity(self.gravity1)
        g2 = GravityPrior.from_gravity(self.gravity2)
        S = self.norm_scale
        return [
            Correspondence(DistortedPoint(r[0], r[1], S), DistortedPoint(r[2], r[3], S), g1, g2)
            for r in self.rows.tolist()
        ]


def _parse_vector(text: str, line: int, key: str) -> np.ndarray:
    parts = text.replace(",", " ").split()
    try:
        v = np.array([float(p) for p in parts])
    except ValueError:
        raise ParseError(f"{key} must be numeric, got {text.strip()!r}", line) from None
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ParseError(f"{key} needs 3 finite values", line)
    if not np.any(v):
        raise ParseError(f"{key} must be nonzero", line)
    return v


def parse_correspondence_file(text: str) -> CorrespondenceFile:
    """Parse the CSV format; ``#`` lines carry ``key: value`` fields separated by ``;``."""
    meta: dict[str, tuple[str, int]] = {}
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for part in line[1:].split(";"):
                if ":" in part:
                    key, value = part.split(":", 1)
                    meta[key.strip().lower()] = (value.strip(), lineno)
            continue
        cells = [c.strip() for c in line.split(",")]
        if [c.lower() for c in cells] == ["u1", "v1", "u2", "v2"]:
            continue
        if len(cells) != 4:
            raise ParseError(f"expected 4 comma-separated values, got {len(cells)}", lineno)
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("values must be finite", lineno)
        rows.append(vals)
    for key in ("gravity1", "gravity2", "norm_scale"):
        if key not in meta:
            raise ParseError(f"missing '# {key}: ...' header")
    g1 = _parse_vector(*meta["gravity1"], "gravity1")
    g2 = _parse_vector(*meta["gravity2"], "gravity2")
    text_s, ln = meta["norm_scale"]
    try:
        S = float(text_s)
    except ValueError:
        raise ParseError(f"norm_scale must be numeric, got {text_s!r}", ln) from None
    if not (math.isfinite(S) and S > 0.0):
        raise ParseError("norm_scale must be positive and finite", ln)
    if not rows:
        raise ParseError("no correspondence rows")
    return CorrespondenceFile(g1, g2, S, np.array(rows, dtype=float), {k: v for k, (v, _) in meta.items()})


def format_correspondence_file(
    gravity1, gravity2, norm_scale: float, pts1: np.ndarray, pts2: np.ndarray, comments: dict | None = None
) -> str:
    lines = [
        "# gravity1: {} {} {}; gravity2: {} {} {}".format(*map(repr, map(float, gravity1)), *map(repr, map(float, gravity2))),
        f"# norm_scale: {float(norm_scale)!r}",
    ]
    for k, v in (comments or {}).items():
        lines.append(f"# {k}: {v}")
    lines.append("u1,v1,u2,v2")
    for a, b in zip(np.asarray(pts1).tolist(), np.asarray(pts2).tolist()):
        lines.append(f"{a[0]!r},{a[1]!r},{b[0]!r},{b[1]!r}")
    return "\n".join(lines) + "\n"


def _model_json(model) -> dict:
    if isinstance(model, HomographyModel):
        return {"H": model.H.tolist(), "lambda1": model.lambda1, "lambda2": model.lambda2}
    return {
        "s": model.s,
        "theta_deg": math.degrees(model.theta),
        "f1": model.f1,
        "f2": model.f2,
        "lambda1": model.lambda1,
        "lambda2": model.lambda2,
    }


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(", ", ": "), allow_nan=True)


def _read(path: str) -> CorrespondenceFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e.strerror}") from None
    return parse_correspondence_file(text)


def _load(args) -> tuple[CorrespondenceFile, list[Correspondence]]:
    cf = _read(args.file)
    try:
        corrs = cf.correspondences()
    except (InvalidInputError, SingularConfigurationError) as e:
        raise ParseError(str(e)) from None
    return cf, corrs


def cmd_solve(args) -> int:
    cf, corrs = _load(args)
    if args.solver == "auto":
        sid = AUTO_BY_ROWS[min(len(corrs), 3)]
    else:
        sid = SOLVER_NAMES[args.solver]
    if sid is SolverId.H4dlt:
        raise ParseError("solve supports the gravity-prior solvers only; use ransac for h4dlt")
    if args.aligned:
        sid = SolverId(sid.value + "_aligned")
    m = sid.sample_size
    if len(corrs) < m:
        raise ParseError(f"{sid.value} needs {m} rows, file has {len(corrs)}")
    sample = corrs[:m]
    result = solve(sid, sample)
    if not result.candidates:
        print(f"{sid.value}: no feasible solution ({result.raw_count} real roots)", file=sys.stderr)
        return EXIT_NO_SOLUTION
    out = sys.stdout
    for model in result.candidates:
        rec = {"solver": sid.value, **_model_json(model)}
        rec["residual"] = float(np.max(constraint_residuals(model, sample)))
        out.write(_dumps(rec) + "\n")
    return EXIT_OK


def cmd_ransac(args) -> int:
    cf, corrs = _load(args)
    sid = SOLVER_NAMES[args.solver]
    if args.aligned:
        if sid is SolverId.H4dlt:
            raise ParseError("h4dlt has no aligned variant")
        sid = SolverId(sid.value + "_aligned")
    need = max(4, sid.sample_size)
    if len(corrs) < need:
        raise ParseError(f"ransac with {sid.value} needs at least {need} rows, file has {len(corrs)}")
    try:
        config = RansacConfig(
            confidence=args.confidence,
            inlier_threshold=args.threshold,
            max_iterations=args.max_iterations,
            lo_enabled=args.lo,
            seed=args.seed,
            workers=None,
        )
    except InvalidInputError as e:
        raise ParseError(str(e)) from None
    t0 = time.perf_counter()
    result = ransac(corrs, sid, config)
    wall = time.perf_counter() - t0
    rec = {
        "solver": sid.value,
        "model": _model_json(result.model),
        "inlier_count": result.inlier_count,
        "inliers": result.inlier_indices,
        "iterations": result.iterations_run,
        "score": result.score,
    }
    sys.stdout.write(_dumps(rec) + "\n")
    # wall time varies run to run, so it stays off stdout
    print(f"wall_time_s: {wall:.6f}", file=sys.stderr)
    return EXIT_OK


def _bench_sweeps(preset: str):
    from .synthbench import GRAVITY_NOISE_LEVELS, IMAGE_NOISE_LEVELS

    if preset == "fig3a":
        solvers = [SolverId.H1f, SolverId.H2f1f2, SolverId.H4dlt]
        distortion = False
    else:
        solvers = [SolverId.H2lambda, SolverId.H3l1l2]
        distortion = True
    sweeps = [
        ("image_noise", IMAGE_NOISE_LEVELS, 0.0),
        ("roll_noise", GRAVITY_NOISE_LEVELS, 2.0),
        ("pitch_noise", GRAVITY_NOISE_LEVELS, 2.0),
    ]
    return solvers, distortion, sweeps


def cmd_bench(args) -> int:
    from .synthbench import SceneConfig, aggregate_cdf, run_sweep, write_cdf_csv, write_records_csv

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".gravpano-write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        print(f"output directory {out} is not writable: {e.strerror}", file=sys.stderr)
        return EXIT_UNWRITABLE
    written = []
    try:
        if args.preset == "iterations":
            path = out / "iterations.csv"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write("outlier_ratio,sample_size,iterations\n")
                for i in range(19):
                    eps = round(0.05 * i, 2)
                    for m in range(1, 7):
                        fh.write(f"{eps!r},{m},{iteration_budget(0.99, 1.0 - eps, m)}\n")
            written.append((path, 19 * 6))
        else:
            solvers, distortion, sweeps = _bench_sweeps(args.preset)
            for sweep, levels, image_noise in sweeps:
                make = SceneConfig.with_distortion if distortion else SceneConfig
                cfg = make(n_trials=args.trials, seed=args.seed, image_noise_sigma=image_noise)
                recs = run_sweep(cfg, sweep, levels, solvers, timing=args.timing)
                path = out / f"{args.preset}_{sweep}.csv"
                write_records_csv(path, recs)
                written.append((path, len(recs)))
                top = max(levels)
                for sid in solvers:
                    sel = [r for r in recs if r.solver_id == sid.value and r.level == top]
                    cdf = aggregate_cdf(sel, "focal_error")
                    path = out / f"{args.preset}_{sweep}_{sid.value}_focal_cdf.csv"
                    write_cdf_csv(path, cdf)
                    written.append((path, len(cdf)))
    except OSError as e:
        print(f"cannot write to {out}: {e.strerror}", file=sys.stderr)
        return EXIT_UNWRITABLE
    for path, n in written:
        sys.stdout.write(_dumps({"file": str(path), "rows": n}) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gravpano", description="Gravity-prior panorama stitching solvers.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run a minimal solver on the first rows of a correspondence file")
    s.add_argument("file")
    s.add_argument("--solver", choices=["h1f", "h2f1f2", "h2lambda", "h3l1l2", "auto"], default="auto")
    s.add_argument("--aligned", action="store_true", help="use the identity-prior special case")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("ransac", help="robust estimation over all rows")
    r.add_argument("file")
    r.add_argument("--solver", choices=sorted(SOLVER_NAMES), default="h1f")
    r.add_argument("--aligned", action="store_true")
    r.add_argument("--threshold", type=float, default=3.0, help="inlier threshold in pixels")
    r.add_argument("--confidence", type=float, default=0.99)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-iterations", type=int, default=10000)
    r.add_argument("--lo", action=argparse.BooleanOptionalAction, default=True, help="local optimization")
    r.set_defaults(func=cmd_ransac)

    b = sub.add_parser("bench", help="synthetic benchmark sweeps written as CSV")
    b.add_argument("--preset", choices=["fig3a", "fig3b", "iterations"], required=True)
    b.add_argument("--trials", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--timing", action="store_true", help="record solve times (makes output run-dependent)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_PARSE if e.code else EXIT_OK
    try:
        return args.func(args)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (DegenerateError, NotDivisibleError) as e:
        print(f"degenerate: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except NoModelError as e:
        print(f"no model: {e}", file=sys.stderr)
        return EXIT_NO_MODEL
    except InfeasibleConfigError as e:
        print(f"infeasible configuration: {e}", file=sys.stderr)
        return EXIT_PARSE
    except InvalidInputError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_PARSE
    except GravpanoError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
