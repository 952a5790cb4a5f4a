"""Command-line front end.

Subcommands: ``train`` (fit one model and save it), ``benchmark`` (run one
or more solvers under the timing harness and emit traces.csv plus SVG
plots), ``fstar`` (print the cached reference optimum), and ``plot``
(re-render plots from a previously written traces.csv).

Exit codes: 0 on success, 1 on usage errors (bad flags or values, reported
on stderr with usage text), 2 on runtime errors (I/O, parse failures,
non-convergence). Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from .data import LibsvmParseError, load_dataset
from .harness import (ConvergenceError, ExperimentSpec, compute_f_star,
                      read_trace_csv, render_convergence_svg, run_experiment,
                      write_trace_csv)
from .problems import PROBLEM_KINDS, ProblemConfig, make_problem
from .solvers import METHODS, SolverConfig, run_solver

__all__ = ["main", "write_model", "read_model", "ModelFormatError"]

MODEL_MAGIC = "s2ml-model v1"

_DEFAULTS = {
    "problem": "logistic",
    "solver": "tron",
    "grad_tol": 1e-6,
    "max_iters": 500,
    "seed": 42,
    "reps": 1,
    "threads": 1,
    "out": "model.txt",
    "out_dir": "results",
}


class ModelFormatError(ValueError):
    """A model file does not match the documented text format."""


def write_model(path, w, config: ProblemConfig) -> None:
    """Save weights in the versioned text format (17 significant digits)."""
    if config.lam is None:
        raise ValueError("write_model needs a resolved lambda value")
    w = np.asarray(w, dtype=np.float64)
    lines = [MODEL_MAGIC,
             f"kind={config.kind} lambda={config.lam:.17g} "
             f"bias={1 if config.add_bias else 0} dim={w.size}"]
    lines.extend(f"{x:.17g}" for x in w)
    Path(path).write_text("\n".join(lines) + "\n")


def read_model(path):
    """Load a model file; any deviation from the format is rejected."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: expected header {MODEL_MAGIC!r}")
    if len(lines) < 2:
        raise ModelFormatError(f"{path}: missing model description line")
    m = re.fullmatch(r"kind=(logistic|svm-l2) lambda=(\S+) bias=([01]) dim=(\d+)",
                     lines[1])
    if m is None:
        raise ModelFormatError(f"{path}: malformed description {lines[1]!r}")
    kind, lam_s, bias_s, dim_s = m.groups()
    try:
        lam = float(lam_s)
    except ValueError:
        raise ModelFormatError(f"{path}: bad lambda {lam_s!r}") from None
    dim = int(dim_s)
    expected = 2 + dim
    if len(lines) != expected:
        raise ModelFormatError(
            f"{path}: expected {expected} lines (2 header + {dim} coefficients), "
            f"got {len(lines)}")
    try:
        w = np.array([float(x) for x in lines[2:]], dtype=np.float64)
    except ValueError:
        raise ModelFormatError(f"{path}: malformed coefficient line") from None
    if w.size and not np.all(np.isfinite(w)):
        raise ModelFormatError(f"{path}: non-finite coefficient")
    return w, ProblemConfig(kind=kind, lam=lam, add_bias=bias_s == "1")


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _bool_from_text(value: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


# config-file key -> (namespace attribute, converter, repeatable)
_CONFIG_KEYS = {
    "data": ("data", str, False),
    "test-data": ("test_data", str, False),
    "problem": ("problem", str, False),
    "solver": ("solver", str, True),
    "lambda": ("lam", float, False),
    "bias": ("bias", _bool_from_text, False),
    "grad-tol": ("grad_tol", float, False),
    "max-iters": ("max_iters", int, False),
    "cg-max-iters": ("cg_max_iters", int, False),
    "cg-rtol": ("cg_rtol", float, False),
    "tr-radius0": ("tr_radius0", float, False),
    "lbfgs-memory": ("lbfgs_memory", int, False),
    "batch0-frac": ("batch0_frac", float, False),
    "batch-growth": ("batch_growth", float, False),
    "reps": ("reps", int, False),
    "seed": ("seed", int, False),
    "threads": ("threads", int, False),
    "deterministic": ("deterministic", _bool_from_text, False),
    "out": ("out", str, False),
    "out-dir": ("out_dir", str, False),
}


def _add_problem_flags(p):
    p.add_argument("--data", default=None,
                   help="LIBSVM data file (plain text or gzip)")
    p.add_argument("--problem", choices=sorted(PROBLEM_KINDS), default=None,
                   help="loss to minimize (default: logistic)")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="L2 penalty weight (default: 1/n)")
    p.add_argument("--bias", action="store_true", default=None,
                   help="append a constant-1 feature")


def _add_solver_flags(p, repeatable: bool):
    if repeatable:
        p.add_argument("--solver", choices=METHODS, action="append", default=None,
                       help="solver to run (repeatable; default: tron)")
    else:
        p.add_argument("--solver", choices=METHODS, default=None,
                       help="solver to run (default: tron)")
    p.add_argument("--grad-tol", type=float, default=None,
                   help="relative gradient-norm stopping tolerance (default 1e-6)")
    p.add_argument("--max-iters", type=int, default=None,
                   help="iteration cap (default 500)")
    p.add_argument("--cg-max-iters", type=int, default=None)
    p.add_argument("--cg-rtol", type=float, default=None)
    p.add_argument("--tr-radius0", type=float, default=None)
    p.add_argument("--lbfgs-memory", type=int, default=None)
    p.add_argument("--batch0-frac", type=float, default=None)
    p.add_argument("--batch-growth", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap for parallel sections (current runs are sequential)")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="force reproducible reductions")


def build_parser() -> _Parser:
    parser = _Parser(prog="s2ml", allow_abbrev=False,
                     description="Second-order training and benchmarking for "
                                 "sparse linear classification.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    t = sub.add_parser("train", allow_abbrev=False,
                       help="fit one model and write it to --out")
    _add_problem_flags(t)
    _add_solver_flags(t, repeatable=False)
    t.add_argument("--out", default=None, help="model output path (default model.txt)")
    t.add_argument("--config", default=None, help="key = value file with flag defaults")

    b = sub.add_parser("benchmark", allow_abbrev=False,
                       help="run solvers under the timing harness")
    _add_problem_flags(b)
    _add_solver_flags(b, repeatable=True)
    b.add_argument("--test-data", default=None,
                   help="held-out LIBSVM file for accuracy curves")
    b.add_argument("--reps", type=int, default=None,
                   help="repetitions per solver (default 1)")
    b.add_argument("--out-dir", default=None,
                   help="directory for traces.csv and plots (default results)")
    b.add_argument("--config", default=None, help="key = value file with flag defaults")

    f = sub.add_parser("fstar", allow_abbrev=False,
                       help="compute and print the reference optimum")
    _add_problem_flags(f)
    f.add_argument("--config", default=None, help="key = value file with flag defaults")

    pl = sub.add_parser("plot", allow_abbrev=False,
                        help="render plots from a previously written traces.csv")
    pl.add_argument("--data", default=None, help="traces.csv produced by benchmark")
    pl.add_argument("--out-dir", default=None,
                    help="directory for the SVG output (default results)")
    pl.add_argument("--config", default=None, help="key = value file with flag defaults")
    return parser


def _apply_config_file(args) -> None:
    """Fill unset flags from a ``key = value`` file; explicit flags win."""
    if getattr(args, "config", None) is None:
        return
    text = Path(args.config).read_text()
    config_solvers: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _UsageError(f"{args.config}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise _UsageError(f"{args.config}:{lineno}: unknown key {key!r}")
        dest, convert, repeatable = _CONFIG_KEYS[key]
        if not hasattr(args, dest):
            raise _UsageError(
                f"{args.config}:{lineno}: {key!r} does not apply to "
                f"'{args.command}'")
        try:
            converted = convert(value)
        except ValueError as exc:
            raise _UsageError(f"{args.config}:{lineno}: {exc}") from None
        if repeatable:
            config_solvers.append(converted)
        elif getattr(args, dest) is None:
            setattr(args, dest, converted)
    if config_solvers and getattr(args, "solver", None) is None:
        args.solver = (config_solvers if args.command == "benchmark"
                       else config_solvers[-1])


def _get(args, name):
    value = getattr(args, name, None)
    return _DEFAULTS.get(name) if value is None else value


def _resolve_problem(args) -> ProblemConfig:
    kind = _get(args, "problem")
    if kind not in PROBLEM_KINDS:
        raise _UsageError(f"--problem: invalid value {kind!r}")
    lam = getattr(args, "lam", None)
    if lam is not None and lam < 0:
        raise _UsageError("--lambda must be >= 0")
    return ProblemConfig(kind=kind, lam=lam, add_bias=bool(getattr(args, "bias", None)))


def _resolve_solver(args, method: str) -> SolverConfig:
    if method not in METHODS:
        raise _UsageError(f"--solver: invalid value {method!r}")
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        raise _UsageError("--threads must be >= 1")
    checks = [
        ("grad_tol", "--grad-tol", lambda v: v > 0, "must be > 0"),
        ("max_iters", "--max-iters", lambda v: v >= 0, "must be >= 0"),
        ("cg_max_iters", "--cg-max-iters", lambda v: v >= 1, "must be >= 1"),
        ("cg_rtol", "--cg-rtol", lambda v: 0 < v < 1, "must be in (0, 1)"),
        ("tr_radius0", "--tr-radius0", lambda v: v > 0, "must be > 0"),
        ("lbfgs_memory", "--lbfgs-memory", lambda v: v >= 1, "must be >= 1"),
        ("batch0_frac", "--batch0-frac", lambda v: 0 < v <= 1, "must be in (0, 1]"),
        ("batch_growth", "--batch-growth", lambda v: v >= 1, "must be >= 1"),
    ]
    base = SolverConfig()
    values = {}
    for dest, flag, ok, message in checks:
        value = getattr(args, dest, None)
        if value is None:
            value = getattr(base, dest)
        elif not ok(value):
            raise _UsageError(f"{flag} {message}")
        values[dest] = value
    return SolverConfig(method=method, rng_seed=_get(args, "seed"), **values)


def _require_data(args, what="--data"):
    value = getattr(args, "data", None)
    if value is None:
        raise _UsageError(f"{what} is required")
    return value


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_train(args) -> int:
    data = load_dataset(_require_data(args))
    pcfg = _resolve_problem(args)
    problem = make_problem(pcfg, data)
    method = _get(args, "solver")
    if isinstance(method, list):
        method = method[-1]
    scfg = _resolve_solver(args, method)
    w, termination = run_solver(problem, scfg)
    out = _get(args, "out")
    write_model(out, w, ProblemConfig(kind=pcfg.kind, lam=problem.lam,
                                      add_bias=pcfg.add_bias))
    print(f"s2ml: {method} finished ({termination}); "
          f"objective={problem.objective(w):.6e}; model -> {out}",
          file=sys.stderr)
    return 0


def _cmd_benchmark(args) -> int:
    train_path = _require_data(args)
    pcfg = _resolve_problem(args)
    methods = getattr(args, "solver", None) or [_DEFAULTS["solver"]]
    reps = _get(args, "reps")
    if reps < 1:
        raise _UsageError("--reps must be >= 1")
    spec = ExperimentSpec(
        problem=pcfg,
        solvers=tuple(_resolve_solver(args, m) for m in methods),
        train_path=train_path,
        test_path=getattr(args, "test_data", None),
        repetitions=reps,
        deterministic=bool(getattr(args, "deterministic", None)))
    traces = run_experiment(spec)
    out_dir = Path(_get(args, "out_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "traces.csv"
    write_trace_csv(traces, csv_path)
    render_convergence_svg(traces, "optimality_gap", out_dir / "gap.svg")
    wrote = [str(csv_path), str(out_dir / "gap.svg")]
    if spec.test_path is not None:
        render_convergence_svg(traces, "test_accuracy", out_dir / "accuracy.svg")
        wrote.append(str(out_dir / "accuracy.svg"))
    print(f"s2ml: benchmark complete; wrote {', '.join(wrote)}", file=sys.stderr)
    return 0


def _cmd_fstar(args) -> int:
    path = _require_data(args)
    data = load_dataset(path)
    problem = make_problem(_resolve_problem(args), data)
    value = compute_f_star(problem, cache_dir=Path(path).parent)
    print(f"{value:.17g}")
    return 0


def _cmd_plot(args) -> int:
    traces = read_trace_csv(_require_data(args))
    out_dir = Path(_get(args, "out_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    render_convergence_svg(traces, "optimality_gap", out_dir / "gap.svg")
    wrote = [str(out_dir / "gap.svg")]
    has_accuracy = any(t.test_accuracy is not None
                       for reps in traces.values() for run in reps for t in run)
    if has_accuracy:
        render_convergence_svg(traces, "test_accuracy", out_dir / "accuracy.svg")
        wrote.append(str(out_dir / "accuracy.svg"))
    print(f"s2ml: wrote {', '.join(wrote)}", file=sys.stderr)
    return 0


_DISPATCH = {
    "train": _cmd_train,
    "benchmark": _cmd_benchmark,
    "fstar": _cmd_fstar,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        _apply_config_file(args)
        return _DISPATCH[args.command](args)
    except _UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"s2ml: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, LibsvmParseError, ModelFormatError, ConvergenceError,
            ValueError) as exc:
        print(f"s2ml: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
