"""Benchmark harness: timed solver runs, optimality-gap traces, CSV and SVG
output, and the cached reference optimum the gap is measured against.

Metric evaluation (test accuracy, trace bookkeeping) happens outside the
timed region, so recorded wall-clock times reflect training work only.
"""

from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset, load_dataset
from .problems import Problem, ProblemConfig, make_problem
from .solvers import SolverConfig, run_solver

__all__ = [
    "TraceRecord",
    "ExperimentSpec",
    "ConvergenceError",
    "CSV_HEADER",
    "dataset_digest",
    "compute_f_star",
    "run_experiment",
    "write_trace_csv",
    "read_trace_csv",
    "render_convergence_svg",
]

CSV_HEADER = ("solver,rep,iter,wall_time_s,objective,optimality_gap,"
              "test_accuracy,grad_norm,rows_touched")

GAP_FLOOR = 1e-16  # log-plot clamp at the double-precision noise floor


class ConvergenceError(RuntimeError):
    """A reference-optimum run failed to reach its tolerance."""


@dataclass(frozen=True)
class TraceRecord:
    """One benchmark sample.

    ``wall_time_s`` is measured from run start on a monotonic clock;
    ``rows_touched`` is the cumulative Hessian-operator row count.
    """

    iter: int
    wall_time_s: float
    objective: float
    optimality_gap: float
    test_accuracy: float | None
    grad_norm: float
    rows_touched: int


@dataclass(frozen=True)
class ExperimentSpec:
    """A full benchmark: one problem, one or more solvers, optional test set.

    ``f_star`` is either a known optimum or ``"compute"``; repetition ``r``
    runs each solver with seed ``rng_seed + r``.
    """

    problem: ProblemConfig
    solvers: tuple[SolverConfig, ...]
    train_path: str | Path
    test_path: str | Path | None = None
    f_star: float | str = "compute"
    repetitions: int = 1
    deterministic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "solvers", tuple(self.solvers))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.solvers:
            raise ValueError("at least one solver is required")
        if isinstance(self.f_star, str) and self.f_star != "compute":
            raise ValueError('f_star must be a number or "compute"')


def dataset_digest(data: Dataset) -> str:
    """Content hash of a dataset (shape, structure, values, labels)."""
    h = hashlib.sha256()
    m = data.features
    h.update(np.array([m.n_rows, m.n_cols], dtype=np.int64).tobytes())
    for arr in (m.row_offsets, m.col_indices, m.values, data.labels):
        h.update(arr.tobytes())
    return h.hexdigest()


_FSTAR_MEMO: dict[tuple, float] = {}

# the reference run favors accurate inner solves so the tail iterations stay
# well above floating-point noise in the acceptance-ratio test
_FSTAR_SOLVER = SolverConfig(method="tron", max_iters=1000, grad_tol=1e-12,
                             cg_rtol=1e-3, cg_max_iters=250)


def _fstar_key(problem):
    data = getattr(problem, "data", None)
    if not isinstance(data, Dataset):
        return None
    return (dataset_digest(data), problem.kind, float(problem.lam),
            bool(problem.add_bias))


def compute_f_star(problem, cache_dir=None) -> float:
    """Reference optimum of the problem, cached by dataset digest and config.

    Runs the trust-region Newton solver to a 1e-12 relative gradient norm.
    When ``cache_dir`` is given the value is persisted as
    ``<digest>.fstar`` (17 significant digits) and reused on later calls.
    Raises :class:`ConvergenceError` if the run does not converge.
    """
    key = _fstar_key(problem)
    cache_path = None
    if cache_dir is not None and key is not None:
        digest = hashlib.sha256(repr(key).encode()).hexdigest()
        cache_path = Path(cache_dir) / f"{digest}.fstar"
    if key is not None and key in _FSTAR_MEMO:
        value = _FSTAR_MEMO[key]
        if cache_path is not None and not cache_path.exists():
            cache_path.write_text(f"{value:.17g}\n")
        return value
    if cache_path is not None and cache_path.exists():
        value = float(cache_path.read_text().strip())
        _FSTAR_MEMO[key] = value
        return value
    w, termination = run_solver(problem, _FSTAR_SOLVER)
    if termination != "converged":
        raise ConvergenceError(
            f"reference optimum did not converge (termination={termination}); "
            "increase the regularization weight or the iteration cap")
    value = float(problem.objective(w))
    if key is not None:
        _FSTAR_MEMO[key] = value
    if cache_path is not None:
        cache_path.write_text(f"{value:.17g}\n")
    return value


def _unique_names(configs) -> list[str]:
    names: list[str] = []
    for cfg in configs:
        name = cfg.method
        k = 2
        while name in names:
            name = f"{cfg.method}-{k}"
            k += 1
        names.append(name)
    return names


def _run_one(problem: Problem, config: SolverConfig, test: Dataset | None,
             f_star: float) -> list[TraceRecord]:
    records: list[TraceRecord] = []
    start = time.perf_counter()
    excluded = 0.0
    cumulative_rows = 0

    def on_snapshot(snap):
        nonlocal excluded, cumulative_rows
        now = time.perf_counter()
        wall = now - start - excluded
        cumulative_rows += snap.rows_touched
        accuracy = (problem.predict_accuracy(test, snap.w)
                    if test is not None else None)
        records.append(TraceRecord(
            iter=snap.iter, wall_time_s=wall, objective=snap.objective,
            optimality_gap=snap.objective - f_star, test_accuracy=accuracy,
            grad_norm=snap.grad_norm, rows_touched=cumulative_rows))
        excluded += time.perf_counter() - now  # keep metrics out of the clock

    run_solver(problem, config, on_snapshot)
    return records


def run_experiment(spec: ExperimentSpec) -> dict[str, list[list[TraceRecord]]]:
    """Run every (solver, repetition) pair and collect timed traces.

    Returns a map from solver name to one record list per repetition. All
    runs share a single reference optimum so gaps are comparable.
    """
    train = load_dataset(spec.train_path)
    problem = make_problem(spec.problem, train)
    test = None
    if spec.test_path is not None:
        test = load_dataset(spec.test_path, n_cols_hint=train.n_cols)
        if test.n_cols != train.n_cols:
            raise ValueError(
                f"test data has {test.n_cols} feature columns, train has {train.n_cols}")
    if spec.f_star == "compute":
        f_star = compute_f_star(problem, cache_dir=Path(spec.train_path).parent)
    else:
        f_star = float(spec.f_star)

    results: dict[str, list[list[TraceRecord]]] = {}
    for name, cfg in zip(_unique_names(spec.solvers), spec.solvers):
        reps = []
        for rep in range(spec.repetitions):
            run_cfg = replace(cfg, rng_seed=cfg.rng_seed + rep)
            reps.append(_run_one(problem, run_cfg, test, f_star))
        results[name] = reps
    return results


# ---------------------------------------------------------------------------
# Trace serialization
# ---------------------------------------------------------------------------

def write_trace_csv(traces: dict[str, list[list[TraceRecord]]], path) -> None:
    """Write all traces to one CSV; reals carry 17 significant digits, so a
    read-back is lossless."""
    lines = [CSV_HEADER]
    for solver, reps in traces.items():
        for rep, records in enumerate(reps):
            for t in records:
                acc = "" if t.test_accuracy is None else f"{t.test_accuracy:.17g}"
                lines.append(
                    f"{solver},{rep},{t.iter},{t.wall_time_s:.17g},"
                    f"{t.objective:.17g},{t.optimality_gap:.17g},{acc},"
                    f"{t.grad_norm:.17g},{t.rows_touched}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace_csv(path) -> dict[str, list[list[TraceRecord]]]:
    """Inverse of :func:`write_trace_csv` (bit-exact for finite values)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty trace file") from None
        if header != CSV_HEADER.split(","):
            raise ValueError(f"{path}: unexpected header {header!r}")
        out: dict[str, list[list[TraceRecord]]] = {}
        for row in reader:
            if len(row) != 9:
                raise ValueError(f"{path}: expected 9 fields, got {len(row)}")
            solver, rep_s, it, wall, obj, gap, acc, gn, rows = row
            rep = int(rep_s)
            reps = out.setdefault(solver, [])
            while len(reps) <= rep:
                reps.append([])
            reps[rep].append(TraceRecord(
                iter=int(it), wall_time_s=float(wall), objective=float(obj),
                optimality_gap=float(gap),
                test_accuracy=None if acc == "" else float(acc),
                grad_norm=float(gn), rows_touched=int(rows)))
    return out


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 720, 480
_ML, _MR, _MT, _MB = 72, 150, 24, 56


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def render_convergence_svg(traces: dict[str, list[list[TraceRecord]]],
                           metric: str, path) -> None:
    """Write a standalone SVG convergence plot.

    ``metric`` is ``"optimality_gap"`` (log-scale y, clamped below at 1e-16,
    ticks at decade marks) or ``"test_accuracy"`` (linear y). The x axis is
    wall-clock seconds. One polyline per (solver, repetition); output is a
    pure function of the input traces.
    """
    if metric not in ("optimality_gap", "test_accuracy"):
        raise ValueError(f"unknown metric {metric!r}")
    series = []  # (solver index, points)
    names = list(traces.keys())
    for si, name in enumerate(names):
        for records in traces[name]:
            pts = [(t.wall_time_s, getattr(t, metric)) for t in records
                   if getattr(t, metric) is not None]
            if pts:
                series.append((si, pts))
    if not series:
        raise ValueError(f"no data for metric {metric!r}")
    xs = [x for _, pts in series for x, _ in pts]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        raise ValueError("degenerate x range: all wall-clock values are identical")

    log_scale = metric == "optimality_gap"
    if log_scale:
        ys = [math.log10(max(v, GAP_FLOOR)) for _, pts in series for _, v in pts]
        y_lo = math.floor(min(ys))
        y_hi = math.ceil(max(ys))
        if y_hi == y_lo:
            y_hi = y_lo + 1
        ticks = [(float(k), f"1e{k}") for k in range(int(y_lo), int(y_hi) + 1)]
        y_of = lambda v: math.log10(max(v, GAP_FLOOR))
        y_title = "optimality gap"
    else:
        vals = [v for _, pts in series for _, v in pts]
        y_lo, y_hi = min(vals), max(vals)
        if y_hi - y_lo < 1e-12:
            y_lo, y_hi = y_lo - 0.05, y_hi + 0.05
        ticks = [(t, f"{t:.4g}") for t in _nice_ticks(y_lo, y_hi)]
        y_of = lambda v: v
        y_title = "test accuracy"

    px = lambda x: _ML + (x - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)
    py = lambda y: _H - _MB - (y - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    el = ['<?xml version="1.0" encoding="UTF-8"?>',
          f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
          f'width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
          f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
          f'<g font-family="sans-serif" font-size="12" fill="black">']
    # axes
    el.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
              'stroke="black" stroke-width="1"/>')
    el.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" '
              'stroke="black" stroke-width="1"/>')
    for xv in _nice_ticks(x_lo, x_hi):
        X = px(xv)
        el.append(f'<line x1="{X:.2f}" y1="{_H - _MB}" x2="{X:.2f}" '
                  f'y2="{_H - _MB + 5}" stroke="black" stroke-width="1"/>')
        el.append(f'<text x="{X:.2f}" y="{_H - _MB + 18}" '
                  f'text-anchor="middle">{xv:.4g}</text>')
    for yv, label in ticks:
        Y = py(yv)
        el.append(f'<line x1="{_ML - 5}" y1="{Y:.2f}" x2="{_ML}" y2="{Y:.2f}" '
                  'stroke="black" stroke-width="1"/>')
        el.append(f'<text x="{_ML - 8}" y="{Y + 4:.2f}" '
                  f'text-anchor="end">{label}</text>')
    el.append(f'<text x="{(_ML + _W - _MR) / 2:.2f}" y="{_H - 12}" '
              'text-anchor="middle">training time (s)</text>')
    el.append(f'<text x="16" y="{(_MT + _H - _MB) / 2:.2f}" text-anchor="middle" '
              f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2:.2f})">{y_title}</text>')
    # curves
    for si, pts in series:
        color = _PALETTE[si % len(_PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y_of(v)):.2f}" for x, v in pts)
        el.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                  'stroke-width="1.5"/>')
    # legend (one entry per solver)
    for si, name in enumerate(names):
        color = _PALETTE[si % len(_PALETTE)]
        Y = _MT + 10 + 18 * si
        el.append(f'<line x1="{_W - _MR + 12}" y1="{Y}" x2="{_W - _MR + 36}" '
                  f'y2="{Y}" stroke="{color}" stroke-width="2"/>')
        el.append(f'<text x="{_W - _MR + 42}" y="{Y + 4}">{name}</text>')
    el.append("</g>")
    el.append("</svg>")
    Path(path).write_text("\n".join(el) + "\n")
