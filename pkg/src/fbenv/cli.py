"""Benchmark command line.

Verbs
-----
``run <specfile>``
    Build the problem, run each solver preset, write traces and a summary.
``gen <family> [key=value ...] -o <dir>``
    Write a seeded synthetic instance (spec file, data files, metadata).
``check``
    Run a quick invariant suite on small built-in instances.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .problems import FAMILIES, DatasetError, ProblemSpec, build_problem, write_pgm
from .oracle import reference_solution
from .solver import PRESETS, COUNTER_KEYS, preset, solve

__all__ = ["RunSpec", "run_experiment", "format_table", "main"]

SUMMARY_COLUMNS = ("solver", "status", "iterations", "f_evals", "matvecs", "prox_calls", "svds",
                   "final_gap", "wall_time")


@dataclass
class RunSpec:
    """One experiment: a problem, solver presets and a stopping rule.

    ``stop="gap"`` stops at ``phi - phi_star <= gap_tol * (1 + |phi_star|)``
    against a reference solve; ``stop="residual"`` stops at ``||R|| <= tol``.
    """

    problem: ProblemSpec
    solvers: list = field(default_factory=lambda: ["fbs", "fast-fbs", "alg2-lbfgs"])
    stop: str = "gap"
    tol: float = 1e-8
    gap_tol: float = 1e-6
    max_iters: int = 10000
    out: str | None = None

    def validate(self):
        if not self.solvers:
            raise ValueError("at least one solver preset is required")
        bad = [s for s in self.solvers if s not in PRESETS]
        if bad:
            raise ValueError(f"unknown solver preset {bad[0]!r}; valid presets: {', '.join(PRESETS)}")
        if self.stop not in ("gap", "residual"):
            raise ValueError("stop must be 'gap' or 'residual'")


def run_experiment(spec, log=None):
    """Run every solver of ``spec``; returns ``(rows, traces)``.

    Each row is a dict keyed by :data:`SUMMARY_COLUMNS`; counters are sums
    over the per-iteration trace.  Files are written when ``spec.out`` is set.
    """
    spec.validate()
    problem, meta = build_problem(spec.problem)
    ref = reference_solution(problem)
    phi_star = ref.phi
    if log:
        log(f"{problem.name}: dim={problem.dim} lam={meta['lam']:.6g} phi*={phi_star:.12g}")

    rows, traces = [], {}
    for name in spec.solvers:
        overrides = dict(max_iters=spec.max_iters, seed=spec.problem.seed)
        if spec.stop == "gap":
            overrides.update(objective_target=phi_star, objective_tol=spec.gap_tol, tol_abs=0.0)
        else:
            overrides.update(tol_abs=spec.tol)
        params = preset(name, problem.lipschitz, **overrides)
        x, trace = solve(problem, params)
        traces[name] = trace
        sums = {k: int(trace.column(k).sum()) for k in COUNTER_KEYS}
        row = {
            "solver": name,
            "status": trace.status,
            "iterations": trace.iterations,
            "f_evals": sums["f_evals"],
            "matvecs": sums["matvecs"],
            "prox_calls": sums["prox_calls"],
            "svds": sums["svds"],
            "final_gap": float(problem.objective(x) - phi_star),
            "wall_time": trace.wall_time,
        }
        rows.append(row)
        if log:
            log(f"  {name}: {trace.status} after {trace.iterations} iterations")

    if spec.out:
        _write_outputs(Path(spec.out), rows, traces, phi_star, meta)
    return rows, traces


def format_table(rows):
    """Aligned plain-text rendering of summary rows."""
    cells = [list(SUMMARY_COLUMNS)]
    for r in rows:
        cells.append([_fmt(r[c]) for c in SUMMARY_COLUMNS])
    widths = [max(len(row[i]) for row in cells) for i in range(len(SUMMARY_COLUMNS))]
    lines = []
    for j, row in enumerate(cells):
        parts = [c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(parts).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3e}" if v != 0 and (abs(v) < 1e-2 or abs(v) >= 1e4) else f"{v:.4f}"
    return str(v)


def _write_outputs(out, rows, traces, phi_star, meta):
    out.mkdir(parents=True, exist_ok=True)
    for name, trace in traces.items():
        trace.to_csv(out / f"trace_{name}.csv")
        trace.to_json(out / f"trace_{name}.json")
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    (out / "summary.txt").write_text(format_table(rows), encoding="utf-8")
    with open(out / "plot.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["solver", "k", "matvecs", "objective_gap", "residual"])
        for name, trace in traces.items():
            mv = trace.cumulative("matvecs")
            for r, m in zip(trace.records, mv):
                w.writerow([name, r.k, int(m), repr(float(r.objective - phi_star)), repr(float(r.residual))])
    info = {"phi_star": phi_star, "lam": meta.get("lam"), "lambda_max": meta.get("lambda_max")}
    (out / "reference.json").write_text(json.dumps(info, indent=1), encoding="utf-8")


# ---------------------------------------------------------------------------
# gen


def _parse_kv(items):
    params = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {item!r}")
        params[key.strip()] = val.strip()
    return params


def generate(family, params, seed, out):
    """Write a synthetic instance to ``out``; returns the spec file path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    text = "\n".join([f"family = {family}", f"seed = {seed}"] + [f"{k} = {v}" for k, v in params.items()])
    spec = ProblemSpec.parse(text, "<gen>")
    problem, meta = build_problem(spec)
    spec_path = out / "problem.spec"
    spec_path.write_text(spec.to_text(), encoding="utf-8")

    if family in ("lasso", "logreg", "group-lasso"):
        A = problem.smooth.A.to_dense()
        np.savetxt(out / "A.csv", A, delimiter=",", fmt="%.17g")
        np.savetxt(out / "b.csv", meta["b"], delimiter=",", fmt="%.17g")
    elif family == "matcomp":
        rows = problem.meta["rows"]
        obs = meta["observed"]
        entries = np.column_stack([obs % rows, obs // rows, meta["b"]])
        np.savetxt(out / "entries.csv", entries, delimiter=",", fmt=["%d", "%d", "%.17g"])
    else:
        img = meta["x_true"].reshape(problem.meta["rows"], problem.meta["cols"], order="F")
        write_pgm(out / "image.pgm", img)
    info = {
        "family": family,
        "seed": seed,
        "lam": meta["lam"],
        "lambda_max": meta.get("lambda_max"),
        "noise_hash": meta.get("noise_hash"),
        "dim": problem.dim,
        "x_true": np.asarray(meta["x_true"]).tolist(),
    }
    (out / "meta.json").write_text(json.dumps(info), encoding="utf-8")
    return spec_path


# ---------------------------------------------------------------------------
# check


def run_checks(seed=0, log=print):
    """Quick invariant suite; returns the number of failures."""
    from .fbe import fb_cache, fbe_gradient, fbe_moreau_form
    from .linops import DenseOperator, norm_estimate
    from .oracle import fd_gradient
    from .problems import gen_synthetic

    failures = 0

    def report(name, ok, detail=""):
        nonlocal failures
        failures += not ok
        log(f"{'PASS' if ok else 'FAIL'}  {name}{'  ' + detail if detail else ''}")

    rng = np.random.default_rng(seed)
    A = DenseOperator(rng.standard_normal((12, 20)))
    u, v = rng.standard_normal(20), rng.standard_normal(12)
    err = abs(A.apply(u) @ v - u @ A.apply_adjoint(v))
    report("adjoint consistency", err <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(v) * 10)
    est = norm_estimate(A, tol=1e-10, max_iters=2000)
    exact = np.linalg.eigvalsh(A.matrix.T @ A.matrix)[-1]
    report("power iteration", abs(est.value - exact) <= 1e-6 * exact, f"{est.value:.6g} vs {exact:.6g}")

    problem, _ = gen_synthetic("lasso", {"m": 10, "n": 20}, seed)
    gamma = 0.5 / problem.lipschitz
    worst_form = worst_grad = 0.0
    for _ in range(10):
        x = rng.standard_normal(problem.dim)
        c = fb_cache(problem, gamma, x)
        worst_form = max(worst_form, abs(c.fbe - fbe_moreau_form(problem, gamma, x)) / (1 + abs(c.fbe)))
        fd = fd_gradient(lambda z: fb_cache(problem, gamma, z).fbe, x)
        an = fbe_gradient(problem, c)
        worst_grad = max(worst_grad, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-12))
    report("envelope formulas agree", worst_form <= 1e-10, f"{worst_form:.2e}")
    report("envelope gradient vs finite differences", worst_grad <= 1e-5, f"{worst_grad:.2e}")

    x, trace = solve(problem, preset("alg1-lbfgs"), tol_abs=1e-10, max_iters=2000)
    obj = trace.column("objective")
    report("line-search run converges", trace.converged, f"{trace.iterations} iterations")
    report("objective monotone", bool(np.all(np.diff(obj) <= 1e-12 * (1 + np.abs(obj[:-1])))))
    return failures


# ---------------------------------------------------------------------------
# entry point


def _build_parser():
    p = argparse.ArgumentParser(prog="fbenv", description="Forward-backward envelope solvers and benchmarks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run solver presets on a problem spec")
    r.add_argument("specfile")
    r.add_argument("--solvers", default="fbs,fast-fbs,alg2-lbfgs",
                   help=f"comma-separated presets from: {', '.join(PRESETS)}")
    r.add_argument("--seed", type=int, default=None, help="override the spec seed")
    r.add_argument("--max-iters", type=int, default=10000)
    r.add_argument("--tol", type=float, default=None,
                   help="stop on residual <= TOL instead of the objective gap rule")
    r.add_argument("--gap-tol", type=float, default=1e-6)
    r.add_argument("--out", default=None, help="output directory for traces and tables")

    g = sub.add_parser("gen", help="write a synthetic instance")
    g.add_argument("family", choices=FAMILIES)
    g.add_argument("params", nargs="*", help="generator parameters as key=value")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out", required=True)

    c = sub.add_parser("check", help="run the invariant suite on built-in instances")
    c.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None):
    args = _build_parser().parse_args(argv)
    err = lambda msg: print(f"fbenv: error: {msg}", file=sys.stderr)  # noqa: E731
    try:
        if args.verb == "run":
            pspec = ProblemSpec.load(args.specfile)
            if args.seed is not None:
                pspec.seed = args.seed
            spec = RunSpec(
                problem=pspec,
                solvers=[s.strip() for s in args.solvers.split(",") if s.strip()],
                stop="residual" if args.tol is not None else "gap",
                tol=args.tol if args.tol is not None else 1e-8,
                gap_tol=args.gap_tol,
                max_iters=args.max_iters,
                out=args.out,
            )
            rows, _ = run_experiment(spec, log=lambda m: print(m, file=sys.stderr))
            sys.stdout.write(format_table(rows))
            return 0 if all(r["status"] == "converged" for r in rows) else 1
        if args.verb == "gen":
            path = generate(args.family, _parse_kv(args.params), args.seed, args.out)
            print(path)
            return 0
        return 1 if run_checks(args.seed) else 0
    except (DatasetError, ValueError, OSError) as exc:
        err(exc)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
