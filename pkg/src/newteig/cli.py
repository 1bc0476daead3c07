"""Command-line entry point: convergence studies, comparisons and scaling runs.

Configuration files are flat ``key = value`` text, ``#`` starts a comment.
An empty file runs the default study (laplace, h = 1/6, 3 levels, 1
eigenvalue).  ``solve`` writes ``<output>_levels.csv`` and
``<output>_summary.txt``; ``bench`` writes ``<output>_work.txt``.
"""

import argparse
import sys
import time
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction

import numpy as np

from .assemble import CoefficientSet, example2_coefficients, laplace_coefficients
from .expressions import ExpressionError, parse_expression
from .linalg import SolverError
from .mesh import (DEFAULT_VERTEX_CAP, MeshError, build_hierarchy, load_mesh,
                   unit_square_mesh)
from .multilevel import (MultilevelError, SolveOptions, compare_with_direct,
                         run_multilevel)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


class ConfigError(Exception):
    """Invalid run configuration; carries the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)
        self.line = line


@dataclass
class RunConfig:
    """All knobs of a run, populated from a config file with defaults."""

    problem: str = "laplace"
    mesh_h: float = 1.0 / 6.0
    mesh_file: str = ""
    levels: int = 3
    eigen_count: int = 1
    quad_order: int = 0                  # 0 = auto (2 for laplace, 5 otherwise)
    solver_tol: float = 1e-10
    direct_tol: float = 1e-12
    dense_cap: int = 3000
    max_vertices: int = DEFAULT_VERTEX_CAP
    compare_direct: bool = False
    benchmark: bool = False
    bench_max_levels: int = 6
    output: str = "run"
    threads: int = 1
    a11: str = ""
    a12: str = ""
    a22: str = ""
    phi: str = ""
    rho: str = ""
    expressions: dict = field(default_factory=dict, repr=False)

    def validate(self):
        if self.problem not in ("laplace", "example2", "custom"):
            raise ConfigError("problem must be laplace, example2 or custom, "
                              "got {!r}".format(self.problem))
        if self.levels < 1:
            raise ConfigError("levels must be at least 1")
        if self.eigen_count < 1:
            raise ConfigError("eigen_count must be at least 1")
        if self.quad_order not in (0, 2, 5):
            raise ConfigError("quad_order must be 2, 5 or auto")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.bench_max_levels < 2:
            raise ConfigError("bench_max_levels must be at least 2")
        if not self.mesh_file:
            frac = Fraction(self.mesh_h).limit_denominator(10 ** 9)
            if frac.numerator != 1 or frac.denominator < 1:
                raise ConfigError("mesh_h must be the reciprocal of an integer, "
                                  "got {!r}".format(self.mesh_h))
        for key in ("a11", "a12", "a22", "phi", "rho"):
            text = getattr(self, key)
            if text and self.problem != "custom":
                raise ConfigError("coefficient key {!r} requires problem=custom".format(key))
            if text:
                try:
                    self.expressions[key] = parse_expression(text)
                except ExpressionError as exc:
                    raise ConfigError("bad {} expression: {}".format(key, exc)) from exc

    def coefficients(self):
        if self.problem == "laplace":
            return laplace_coefficients()
        if self.problem == "example2":
            return example2_coefficients()
        one = lambda x, y: np.ones_like(np.asarray(x, dtype=float))
        zero = lambda x, y: np.zeros_like(np.asarray(x, dtype=float))
        e11 = self.expressions.get("a11", one)
        e12 = self.expressions.get("a12", zero)
        e22 = self.expressions.get("a22", one)

        def diffusion(x, y):
            out = np.empty((len(x), 2, 2))
            out[:, 0, 0] = e11(x, y)
            out[:, 0, 1] = e12(x, y)
            out[:, 1, 0] = out[:, 0, 1]
            out[:, 1, 1] = e22(x, y)
            return out

        return CoefficientSet(diffusion=diffusion,
                              reaction=self.expressions.get("phi", zero),
                              weight=self.expressions.get("rho", one),
                              preset="custom")

    def solve_options(self):
        return SolveOptions(
            quad_order=self.quad_order or None,
            dense_cap=self.dense_cap,
            solver_tol=self.solver_tol,
            direct_tol=self.direct_tol,
            threads=self.threads,
        )


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "on": True,
               "false": False, "no": False, "0": False, "off": False}


def _coerce(name, kind, raw, line):
    if kind is bool:
        if raw.lower() not in _BOOL_WORDS:
            raise ConfigError("key {!r} expects a boolean, got {!r}".format(name, raw), line)
        return _BOOL_WORDS[raw.lower()]
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError("key {!r} expects an integer, got {!r}".format(name, raw),
                              line) from None
    if kind is float:
        try:
            return float(Fraction(raw))
        except (ValueError, ZeroDivisionError):
            raise ConfigError("key {!r} expects a number, got {!r}".format(name, raw),
                              line) from None
    return raw


def parse_config(path, strict=False):
    """Read a ``key = value`` config file into a validated RunConfig.

    Unknown keys raise in strict mode and warn otherwise; either way the
    report names the key and its line number.  Fractions like ``1/6`` are
    accepted for numeric values.
    """
    with open(path, "r", encoding="utf-8") as f:
        raw = f.readlines()
    types = {f.name: f.type for f in fields(RunConfig) if f.name != "expressions"}
    config = RunConfig()
    for lineno, text in enumerate(raw, start=1):
        stripped = text.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value', got {!r}".format(stripped), lineno)
        key, raw_value = (part.strip() for part in stripped.split("=", 1))
        if key == "quad_order" and raw_value == "auto":
            raw_value = "0"
        if key not in types:
            message = "unknown key {!r}".format(key)
            if strict:
                raise ConfigError(message, lineno)
            print("warning: {} (line {})".format(message, lineno), file=sys.stderr)
            continue
        setattr(config, key, _coerce(key, types[key], raw_value, lineno))
    config.validate()
    return config


def _build_hierarchy(config, n_levels):
    if config.mesh_file:
        coarse = load_mesh(config.mesh_file)
    else:
        coarse = unit_square_mesh(config.mesh_h)
    return build_hierarchy(coarse, n_levels, max_vertices=config.max_vertices)


def _fmt(value):
    """Shortest float representation that round-trips (keeps the CSV diffable)."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _csv_header(m, compare):
    cols = ["level", "h", "n_free", "time_assemble_s", "time_solve_s"]
    for i in range(1, m + 1):
        cols += ["lambda_{}".format(i), "err_lambda_{}".format(i),
                 "err_energy_{}".format(i)]
    if compare:
        for i in range(1, m + 1):
            cols += ["lambda_dir_{}".format(i), "diff_dir_{}".format(i)]
    return ",".join(cols)


def _csv_row(rec, m, direct_values=None, value_diffs=None):
    cells = [_fmt(rec.level), _fmt(rec.h), _fmt(rec.n_free),
             _fmt(rec.wall_time_assemble), _fmt(rec.wall_time_solve)]
    for i in range(m):
        cells += [_fmt(rec.eigenvalues[i]), _fmt(rec.eigenvalue_errors[i]),
                  _fmt(rec.energy_errors[i])]
    if direct_values is not None:
        for i in range(m):
            cells += [_fmt(direct_values[i]), _fmt(value_diffs[i])]
    return ",".join(cells)


def _write_csv(path, records, m, compare_data=None, aborted_level=None):
    with open(path, "w", encoding="utf-8") as f:
        f.write(_csv_header(m, compare_data is not None) + "\n")
        for k, rec in enumerate(records):
            if compare_data is not None:
                direct_values, value_diffs = compare_data[k]
                f.write(_csv_row(rec, m, direct_values, value_diffs) + "\n")
            else:
                f.write(_csv_row(rec, m) + "\n")
        if aborted_level is not None:
            f.write("# ABORTED level={}\n".format(aborted_level))


def _write_summary(path, config, record, comparison=None):
    lines = []
    lines.append("multilevel Newton eigenvalue run")
    lines.append("problem={} levels={} m={} mesh={}".format(
        config.problem, config.levels, config.eigen_count,
        config.mesh_file or "structured h={}".format(_fmt(config.mesh_h))))
    lines.append("")
    lines.append("{:>5} {:>12} {:>8} {}".format("level", "h", "n_free", "eigenvalues"))
    for rec in record.levels:
        lines.append("{:>5} {:>12.6g} {:>8} {}".format(
            rec.level, rec.h, rec.n_free,
            " ".join("{:.12g}".format(v) for v in rec.eigenvalues)))
    lines.append("")
    lines.append("reference values: " + " ".join(
        "{:.12g}".format(v) for v in record.reference_values))
    lines.append("observed eigenvalue orders (log err vs log h, last 3 levels): "
                 + " ".join("{:.3f}".format(o) for o in record.observed_orders))
    energy = ["{:.3f}".format(o) if np.isfinite(o) else "-"
              for o in record.energy_orders]
    lines.append("observed energy-error orders: " + " ".join(energy))
    if comparison is not None:
        lines.append("")
        lines.append("per-level max |lambda_ml - lambda_dir|: " + " ".join(
            "{:.3e}".format(d.max()) for d in comparison.value_diffs))
    lines.append("")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines))


def cmd_solve(config):
    """Run the configured study; returns (exit_code, ConvergenceRecord or None)."""
    hierarchy = _build_hierarchy(config, config.levels)
    coeffs = config.coefficients()
    m = config.eigen_count
    csv_path = config.output + "_levels.csv"
    try:
        if config.compare_direct:
            comparison = compare_with_direct(hierarchy, coeffs, m, config.solve_options())
            record = comparison.multilevel
            compare_data = list(zip(comparison.direct_values, comparison.value_diffs))
            _write_csv(csv_path, record.levels, m, compare_data)
        else:
            comparison = None
            record = run_multilevel(hierarchy, coeffs, m, config.solve_options())
            _write_csv(csv_path, record.levels, m)
    except MultilevelError as exc:
        _write_csv(csv_path, exc.records, m, aborted_level=exc.level)
        print("error: {}".format(exc), file=sys.stderr)
        return EXIT_SOLVER, None
    _write_summary(config.output + "_summary.txt", config, record, comparison)
    return EXIT_OK, record


@dataclass
class WorkReport:
    """Scaling data of a benchmark sweep over hierarchy depths."""

    depths: list                        # n per run
    finest_sizes: list                  # N_n per run
    totals: list                        # wall-clock total per run
    level_sizes: list                   # N_k of the deepest run
    level_times: list                   # (assemble, solve) per level of deepest run
    exponent: float                     # fit of log(total) vs log(N_n)
    fit_residual: float
    note: str = ""


def run_bench(config):
    """Benchmark sweep: depths 2..bench_max_levels on the same coarse mesh.

    Every depth is run twice and the warm-up pass is discarded, so the
    recorded wall times do not carry first-touch allocation noise.
    """
    coeffs = config.coefficients()
    m = config.eigen_count
    options = config.solve_options()
    depths = list(range(2, config.bench_max_levels + 1))
    totals, finest = [], []
    deepest = None
    for n in depths:
        hierarchy = _build_hierarchy(config, n)
        run_multilevel(hierarchy, coeffs, m, options)   # warm-up, discarded
        t0 = time.perf_counter()
        record = run_multilevel(hierarchy, coeffs, m, options)
        totals.append(time.perf_counter() - t0)
        finest.append(record.levels[-1].n_free)
        deepest = record
    if len(depths) >= 3:
        logs = np.polyfit(np.log(finest), np.log(totals), 1, full=True)
        exponent = float(logs[0][0])
        residuals = logs[1]
        fit_residual = float(np.sqrt(residuals[0] / len(depths))) if len(residuals) else 0.0
        note = ""
    else:
        exponent = float("nan")
        fit_residual = float("nan")
        note = "exponent fit skipped (needs >= 3 depths)"
    return WorkReport(
        depths=depths,
        finest_sizes=finest,
        totals=totals,
        level_sizes=[rec.n_free for rec in deepest.levels],
        level_times=[(rec.wall_time_assemble, rec.wall_time_solve)
                     for rec in deepest.levels],
        exponent=exponent,
        fit_residual=fit_residual,
        note=note,
    )


def cmd_bench(config):
    """Run the benchmark sweep and write ``<output>_work.txt``."""
    report = run_bench(config)
    lines = ["benchmark sweep (depth, finest N, total seconds)"]
    for n, size, total in zip(report.depths, report.finest_sizes, report.totals):
        lines.append("{:>3} {:>10} {:>12.4f}".format(n, size, total))
    lines.append("")
    lines.append("deepest run per level (N_k, assemble s, solve s)")
    for size, (ta, ts) in zip(report.level_sizes, report.level_times):
        lines.append("{:>10} {:>12.4f} {:>12.4f}".format(size, ta, ts))
    lines.append("")
    if report.note:
        lines.append(report.note)
    else:
        lines.append("total time ~ N^{:.3f} (fit residual {:.3e}); linear-work "
                     "scaling corresponds to exponent 1.0 and is conditional on "
                     "an optimal inner solver".format(report.exponent, report.fit_residual))
    lines.append("")
    with open(config.output + "_work.txt", "w", encoding="utf-8") as f:
        f.write("\n".join(lines))
    return EXIT_OK, report


def cmd_meshinfo(path):
    mesh = load_mesh(path)
    print("vertices:        {}".format(mesh.num_vertices))
    print("triangles:       {}".format(mesh.num_triangles))
    print("boundary nodes:  {}".format(int(mesh.boundary.sum())))
    print("interior nodes:  {}".format(int((~mesh.boundary).sum())))
    print("max diameter:    {:.12g}".format(mesh.max_diameter()))
    print("total area:      {:.12g}".format(mesh.area()))
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="newteig",
        description="Multilevel Newton iteration for FEM eigenvalue problems.")
    parser.add_argument("--strict", action="store_true",
                        help="reject unknown config keys instead of warning")
    sub = parser.add_subparsers(dest="command", required=True)
    p_solve = sub.add_parser("solve", help="run a convergence study")
    p_solve.add_argument("config")
    p_bench = sub.add_parser("bench", help="run the scaling benchmark sweep")
    p_bench.add_argument("config")
    p_info = sub.add_parser("meshinfo", help="print statistics of a mesh file")
    p_info.add_argument("meshfile")
    args = parser.parse_args(argv)

    try:
        if args.command == "meshinfo":
            return cmd_meshinfo(args.meshfile)
        config = parse_config(args.config, strict=args.strict)
        if args.command == "bench":
            if not config.benchmark:
                config = replace(config, benchmark=True)
            code, _ = cmd_bench(config)
        else:
            code, _ = cmd_solve(config)
        return code
    except ConfigError as exc:
        print("config error: {}".format(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (MeshError, ValueError) as exc:
        print("error: {}".format(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (MultilevelError, SolverError) as exc:
        print("solver error: {}".format(exc), file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print("i/o error: {}".format(exc), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
