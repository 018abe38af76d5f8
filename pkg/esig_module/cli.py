import argparse
import csv
import itertools
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeRemainingColumn
from rich.table import Table

from . import __version__
from .analytic_engine import (
    chaos_projection_kernels, compute_expected_signature, compute_level_terms, default_lattice,
    kernel_on_lattice)
from .covariance import CovarianceModel, cluster_exponent, make_model, MODEL_KINDS
from .diagrams import index_compatible
from .discrete_oracle import UniformGrid, pl_diagram_value, pl_level_terms
from .errors import ConfigError, DimensionMismatchError, DomainError, EsigError
from .montecarlo import estimate_expected_signature
from .quadrature import QuadratureConfig
from .tensor_words import Word, all_words
from .utils import get_unique_path, parse_float_list, parse_int_list, parse_word_key, resolve_workers
from .verify import GENERIC_POINTS, available_suites, run_suite

logger = logging.getLogger(__name__)

# JSON goes to stdout, everything human-readable to stderr
console = Console(stderr=True)

SUBCOMMANDS = ("compute", "verify", "convergence", "sample")


def setup_logging(verbose: bool = False, log_file: str = "esig.log"):
    """Configures the logging system."""
    level = logging.DEBUG if verbose else logging.INFO
    format_str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    logging.basicConfig(
        filename=log_file,
        level=level,
        format=format_str,
        filemode='w'  # Overwrite log each run
    )


@dataclass
class RunConfig:
    subcommand: str
    model: str = "fbm"
    hurst: Optional[float] = None
    horizon: float = 1.0
    sigma: float = 1.0
    theta: float = 1.0
    bridge_eps: Optional[float] = None
    s: float = 0.0
    t: Optional[float] = None
    dim: int = 2
    level: int = 4
    chaos: int = 0
    word: Optional[str] = None
    lattice: int = 5
    free_times: Optional[str] = None
    grids: List[int] = field(default_factory=lambda: [8, 16, 32, 64, 128])
    grid: int = 256
    paths: int = 100_000
    seed: int = 2024
    with_oracle: bool = False
    suite: Optional[str] = None
    quadrature: Dict[str, Any] = field(default_factory=dict)
    threads: int = 0

    def model_params(self) -> Dict[str, Any]:
        return {"hurst": self.hurst, "horizon": self.horizon, "sigma": self.sigma,
                "theta": self.theta, "bridge_eps": self.bridge_eps}

    def build_model(self) -> CovarianceModel:
        return make_model(self.model, self.model_params())

    def quadrature_config(self) -> QuadratureConfig:
        return QuadratureConfig.from_dict(self.quadrature)

    def interval(self, model: CovarianceModel) -> Tuple[float, float]:
        t = self.t if self.t is not None else min(1.0, model.max_time)
        return self.s, t

    def word_of(self) -> Word:
        letters = parse_word_key(self.word) if self.word else (1,) * self.level
        return Word(letters, self.dim)

    def validate(self) -> None:
        """Raises the library's own errors for anything the run cannot accept."""
        if self.subcommand not in SUBCOMMANDS:
            raise DomainError(f"Unknown subcommand '{self.subcommand}'")
        if self.subcommand == "verify":
            if not self.suite:
                raise DomainError("verify needs --suite")
            return
        model = self.build_model()
        s, t = self.interval(model)
        if s > t:
            raise DomainError(f"Interval endpoints must satisfy s <= t, got s={s}, t={t}")
        model.check_times(s, t)
        if not 1 <= self.dim <= 4:
            raise DimensionMismatchError(f"--dim must lie in 1..4, got {self.dim}")
        if not 0 <= self.level <= 6:
            raise DimensionMismatchError(f"--level must lie in 0..6, got {self.level}")
        if self.chaos < 0:
            raise DomainError(f"--chaos must be non-negative, got {self.chaos}")
        if self.word and len(self.word_of()) != self.level:
            raise DimensionMismatchError(f"--word has length {len(self.word_of())}, --level is {self.level}")
        if self.paths < 2:
            raise DomainError(f"--paths must be at least 2, got {self.paths}")
        if self.grid < 1 or any(g < 1 for g in self.grids):
            raise DomainError("Grid sizes must be positive")
        self.quadrature_config()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if known.get("subcommand") not in SUBCOMMANDS:
            raise ConfigError(f"Config needs a subcommand, one of {', '.join(SUBCOMMANDS)}")
        return cls(**known)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        quad = {
            "rel_tol": args.rel_tol, "abs_tol": args.abs_tol, "max_depth": args.max_depth,
            "grading_exponent": args.grading_exponent, "mc_fallback_samples": args.mc_fallback_samples,
            "rng_seed": args.rng_seed, "stationary_fast_path": args.stationary_fast_path,
        }
        return cls(
            subcommand=args.command, model=args.model, hurst=args.hurst, horizon=args.horizon,
            sigma=args.sigma, theta=args.theta, bridge_eps=args.bridge_eps, s=args.s, t=args.t,
            dim=args.dim, level=getattr(args, "level", 4), chaos=getattr(args, "chaos", 0),
            word=getattr(args, "word", None), lattice=getattr(args, "lattice", 5),
            free_times=getattr(args, "free_times", None),
            grids=parse_int_list(getattr(args, "grids", "8,16,32,64,128")),
            grid=getattr(args, "grid", 256), paths=getattr(args, "paths", 100_000),
            seed=getattr(args, "seed", 2024), with_oracle=getattr(args, "with_oracle", False),
            suite=getattr(args, "suite", None),
            quadrature={k: v for k, v in quad.items() if v is not None and v is not False},
            threads=args.threads,
        )


@contextmanager
def progress_bar(description: str) -> Iterator[Callable[[int, int], None]]:
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.percentage:>3.0f}%"),
        TimeRemainingColumn(),
        console=console,
    ) as progress:
        task = progress.add_task(description, total=None)

        def advance(done: int, total: int) -> None:
            progress.update(task, completed=done, total=total)

        yield advance


def _free_points(cfg: RunConfig, s: float, t: float, m: int) -> List[Tuple[float, ...]]:
    if cfg.free_times:
        point = tuple(parse_float_list(cfg.free_times))
        if len(point) != m:
            raise DimensionMismatchError(f"--free-times has {len(point)} entries, --chaos is {m}")
        return [point]
    return default_lattice(s, t, m, cfg.lattice)


def unresolved_words(values: Dict[str, float], errors: Dict[str, float]) -> List[str]:
    """Keys whose value lies within its own error bound, i.e. indistinguishable from zero."""
    return [key for key, value in values.items() if errors.get(key, 0.0) > 0 and abs(value) <= errors[key]]


def warn_unresolved(keys: List[str], what: str) -> None:
    if not keys:
        return
    shown = ", ".join(keys[:5]) + (", ..." if len(keys) > 5 else "")
    logger.warning(f"{len(keys)} {what} below their error bound: {', '.join(keys)}")
    console.print(f"[yellow]Warning:[/yellow] {len(keys)} {what} are smaller than their error bound ({shown})")


def run_compute(cfg: RunConfig, workers: int) -> Dict[str, Any]:
    model = cfg.build_model()
    s, t = cfg.interval(model)
    qcfg = cfg.quadrature_config()
    if cfg.chaos == 0:
        with progress_bar(f"[cyan]Integrating diagrams up to level {cfg.level} ({workers} workers)...") as advance:
            result = compute_expected_signature(model, cfg.level, s, t, qcfg, cfg.dim, workers, advance)
        doc = result.to_json()
        print_terms_table([term.to_json() for n in sorted(result.terms) for term in result.terms[n]])
        unresolved = unresolved_words(doc["word_values"], doc["word_errors"])
        if unresolved:
            doc["unresolved_words"] = unresolved
        warn_unresolved(unresolved, "word values")
        return doc

    word = cfg.word_of()
    points = _free_points(cfg, s, t, cfg.chaos)
    kernels = []
    unresolved = []
    with progress_bar(f"[cyan]Evaluating chaos-{cfg.chaos} kernels of {word.key}...") as advance:
        for diagram, kernel in chaos_projection_kernels(model, word, cfg.chaos, s, t):
            values = kernel_on_lattice(kernel, points, qcfg, workers, advance)
            entry = kernel.to_json()
            entry["values"] = [{"free_times": list(p), "value": v, "err": e} for p, v, e in values]
            kernels.append(entry)
            for p, v, e in values:
                if 0 < e and abs(v) <= e:
                    unresolved.append(f"{diagram.label}@" + ",".join(f"{u:g}" for u in p))
    warn_unresolved(unresolved, "kernel values")
    doc = {
        "model": model.describe(),
        "interval": [s, t],
        "level": len(word),
        "chaos": cfg.chaos,
        "word": word.key,
        "cluster_exponent": cluster_exponent(model),
        "kernels": kernels,
    }
    if unresolved:
        doc["unresolved_kernels"] = unresolved
    return doc


def run_convergence(cfg: RunConfig, workers: int) -> Dict[str, Any]:
    model = cfg.build_model()
    s, t = cfg.interval(model)
    qcfg = cfg.quadrature_config()
    rows: List[Dict[str, Any]] = []
    if cfg.chaos == 0:
        analytic = {term.diagram.label: term.value
                    for term in compute_level_terms(model, cfg.level, s, t, qcfg, workers)}
        with progress_bar("[cyan]Running the grid oracle...") as advance:
            for done, cells in enumerate(cfg.grids, start=1):
                for diagram, value in pl_level_terms(model, UniformGrid(s, t, cells), cfg.level):
                    exact = analytic[diagram.label]
                    rows.append({"cells": cells, "diagram": diagram.label, "oracle": value, "analytic": exact,
                                 "rel_error": abs(value - exact) / abs(exact) if exact else abs(value)})
                advance(done, len(cfg.grids))
    else:
        word = cfg.word_of()
        points = ([tuple(parse_float_list(cfg.free_times))] if cfg.free_times else
                  list(itertools.combinations([s + (t - s) * g for g in GENERIC_POINTS], cfg.chaos)))
        with progress_bar("[cyan]Running the grid oracle on chaos kernels...") as advance:
            kernels = chaos_projection_kernels(model, word, cfg.chaos, s, t)
            for done, (diagram, kernel) in enumerate(kernels, start=1):
                for point, exact, _ in kernel_on_lattice(kernel, points, qcfg, workers):
                    for cells in cfg.grids:
                        value = pl_diagram_value(diagram, model, UniformGrid(s, t, cells), point) \
                            if not kernel.vanishes else 0.0
                        rows.append({"cells": cells, "diagram": diagram.label, "free_times": list(point),
                                     "oracle": value, "analytic": exact,
                                     "rel_error": abs(value - exact) / abs(exact) if exact else abs(value)})
                advance(done, len(kernels))
    print_convergence_table(rows)
    return {"model": model.describe(), "interval": [s, t], "level": cfg.level, "chaos": cfg.chaos,
            "grids": cfg.grids, "rows": rows}


def run_sample(cfg: RunConfig, workers: int) -> Dict[str, Any]:
    model = cfg.build_model()
    s, t = cfg.interval(model)
    grid = UniformGrid(s, t, cfg.grid)
    with progress_bar(f"[cyan]Sampling {cfg.paths} paths ({workers} workers)...") as advance:
        estimate = estimate_expected_signature(model, grid, cfg.level, cfg.paths, cfg.seed, cfg.dim,
                                               workers, progress=advance)
    doc = {"model": model.describe(), "interval": [s, t], **estimate.to_json()}
    if cfg.with_oracle:
        oracle: Dict[str, float] = {}
        for n in range(2, min(cfg.level, 4) + 1, 2):
            terms = pl_level_terms(model, grid, n)
            for word in all_words(cfg.dim, n):
                oracle[word.key] = sum(v for P, v in terms if index_compatible(P, word))
        doc["oracle_values"] = oracle
    print_words_table(doc["word_values"], doc["std_errors"], "Std. error")
    return doc


def run_verify(cfg: RunConfig, workers: int) -> Tuple[Dict[str, Any], bool]:
    options: Dict[str, Any] = {"workers": workers}
    if cfg.hurst is not None:
        options["hurst"] = cfg.hurst
    if cfg.suite == "montecarlo":
        options.update(n_paths=cfg.paths, cells=cfg.grid, seed=cfg.seed)
    if cfg.suite == "oracle-convergence":
        options["grids"] = cfg.grids
    with console.status(f"[cyan]Running suite {cfg.suite}..."):
        results = run_suite(str(cfg.suite), **options)
    print_checks_table(str(cfg.suite), results)
    passed = all(r.passed for r in results)
    return {"suite": cfg.suite, "passed": passed, "checks": [r.to_dict() for r in results]}, passed


def print_terms_table(terms: List[Dict[str, Any]]):
    table = Table(title="Diagram integrals")
    table.add_column("Diagram", style="cyan")
    table.add_column("Value", style="green")
    table.add_column("Error bound", style="dim")
    table.add_column("Method", style="dim")
    for term in terms:
        table.add_row(term["label"], f"{term['value']:.10g}", f"{term['err']:.2e}", term["method"])
    console.print(table)


def print_words_table(values: Dict[str, float], errors: Dict[str, float], error_label: str):
    table = Table(title="Signature coefficients")
    table.add_column("Word", style="cyan")
    table.add_column("Value", style="green")
    table.add_column(error_label, style="dim")
    for key, value in values.items():
        if value != 0.0:
            table.add_row(key, f"{value:.8g}", f"{errors.get(key, 0.0):.2e}")
    console.print(table)


def print_convergence_table(rows: List[Dict[str, Any]]):
    table = Table(title="Grid oracle vs analytic")
    table.add_column("Cells", style="cyan")
    table.add_column("Diagram", style="cyan")
    table.add_column("Free times", style="dim")
    table.add_column("Oracle", style="green")
    table.add_column("Analytic", style="green")
    table.add_column("Rel. error", style="yellow")
    for row in rows:
        free = ", ".join(f"{u:.3g}" for u in row.get("free_times", []))
        table.add_row(str(row["cells"]), row["diagram"], free, f"{row['oracle']:.8g}",
                      f"{row['analytic']:.8g}", f"{row['rel_error']:.2e}")
    console.print(table)


def print_checks_table(suite: str, results: List[Any]):
    table = Table(title=f"Suite {suite}")
    table.add_column("Check", style="cyan")
    table.add_column("Status")
    table.add_column("Measured", style="green")
    table.add_column("Expected", style="green")
    table.add_column("Tolerance", style="dim")
    table.add_column("Detail", style="dim")
    for r in results:
        status = "[green]pass[/green]" if r.passed else "[red]FAIL[/red]"
        table.add_row(r.name, status, f"{r.measured:.8g}", f"{r.expected:.8g}", f"{r.tolerance:.1e}", r.detail)
    console.print(table)


def _output_path(path: str, conflict: str) -> str:
    if os.path.exists(path) and conflict == "keep_both":
        path = get_unique_path(path)
        logger.debug(f"Conflict resolved: {path}")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def write_csv(path: str, values: Dict[str, float], errors: Dict[str, float], error_label: str,
              conflict: str = "overwrite"):
    path = _output_path(path, conflict)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["word", "value", error_label])
        for key, value in values.items():
            writer.writerow([key, repr(value), repr(errors.get(key, 0.0))])
    console.print(f"[dim]CSV: {os.path.abspath(path)}[/dim]")


def emit(doc: Dict[str, Any], output: Optional[str], conflict: str):
    text = json.dumps(doc, indent=2)
    if not output:
        print(text)
        return
    output = _output_path(output, conflict)
    with open(output, "w") as f:
        f.write(text + "\n")
    console.print(f"[dim]Output: {os.path.abspath(output)}[/dim]")


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e.strerror}", path) from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e.msg} at line {e.lineno}", path) from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object", path)
    return RunConfig.from_dict(data.get("config", data))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", choices=MODEL_KINDS, default="fbm", help="Covariance model")
    common.add_argument("--hurst", type=float, help="Hurst parameter (fbm)")
    common.add_argument("--horizon", type=float, default=1.0, help="Model horizon T")
    common.add_argument("--sigma", type=float, default=1.0, help="OU volatility")
    common.add_argument("--theta", type=float, default=1.0, help="OU mean reversion")
    common.add_argument("--bridge-eps", type=float, help="Bridge cutoff before T (default 1e-3 T)")
    common.add_argument("--s", type=float, default=0.0, help="Interval start")
    common.add_argument("--t", type=float, help="Interval end (default min(1, model max time))")
    common.add_argument("--dim", type=int, default=2, help="Path dimension d")
    common.add_argument("--threads", type=int, default=0, help="Number of workers (0 = auto)")
    common.add_argument("-o", "--output", help="Write the JSON document here instead of stdout")
    common.add_argument("--csv", help="Also write the word table as CSV")
    common.add_argument("--conflict", choices=['overwrite', 'keep_both'], default='overwrite',
                        help="Conflict resolution for output files")
    common.add_argument("--log", action="store_true", help="Enable verbose file logging")
    common.add_argument("--log-file", default="esig.log", help="Log file path")
    common.add_argument("--config", help="Re-run a RunConfig (or an emitted document) from JSON")

    quad = common.add_argument_group("quadrature")
    quad.add_argument("--rel-tol", type=float, help="Relative tolerance (default 1e-6, 1e-3 above 4 dims)")
    quad.add_argument("--abs-tol", type=float, help="Absolute tolerance")
    quad.add_argument("--max-depth", type=int, help="Refinement depth limit")
    quad.add_argument("--grading-exponent", type=float, help="Endpoint grading strength")
    quad.add_argument("--mc-fallback-samples", type=int, help="Initial QMC samples above 4 dims")
    quad.add_argument("--rng-seed", type=int, help="Seed of the QMC scramblings")
    quad.add_argument("--stationary-fast-path", action="store_true", help="Gap-only integrands for fbm/bm")

    parser = argparse.ArgumentParser(description="Expected signatures and chaos kernels of Gaussian processes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    compute = sub.add_parser("compute", parents=[common], help="Expected signature or chaos kernels")
    compute.add_argument("--level", type=int, default=4, help="Truncation level N (word length for kernels)")
    compute.add_argument("--chaos", type=int, default=0, help="Chaos order m")
    compute.add_argument("--word", help="Word for chaos kernels, e.g. 1,2,1 (default all 1s)")
    compute.add_argument("--lattice", type=int, default=5, help="Free-time lattice points per axis")
    compute.add_argument("--free-times", help="Explicit free times, e.g. 0.2,0.7")

    verify = sub.add_parser("verify", parents=[common], help="Run a check suite")
    verify.add_argument("--suite", required=True, help=f"One of: {', '.join(available_suites())}")
    verify.add_argument("--grids", default="8,16,32,64,128", help="Grid sizes for oracle-convergence")
    verify.add_argument("--grid", type=int, default=256, help="Grid size for montecarlo")
    verify.add_argument("--paths", type=int, default=100_000, help="Paths for montecarlo")
    verify.add_argument("--seed", type=int, default=2024, help="Seed for sampled checks")

    conv = sub.add_parser("convergence", parents=[common], help="Grid oracle against the analytic values")
    conv.add_argument("--level", type=int, default=4, help="Diagram size n")
    conv.add_argument("--chaos", type=int, default=0, help="Chaos order m")
    conv.add_argument("--word", help="Word for chaos kernels (default all 1s)")
    conv.add_argument("--grids", default="8,16,32,64,128", help="Comma-separated cell counts")
    conv.add_argument("--free-times", help="Explicit free times")

    sample = sub.add_parser("sample", parents=[common], help="Monte Carlo estimate")
    sample.add_argument("--level", type=int, default=4, help="Truncation level N")
    sample.add_argument("--grid", type=int, default=256, help="Cells of the simulation grid")
    sample.add_argument("--paths", type=int, default=100_000, help="Number of paths")
    sample.add_argument("--seed", type=int, default=2024, help="Master seed")
    sample.add_argument("--with-oracle", action="store_true", help="Add exact grid values next to the means")
    return parser


def cli_mode(argv: Optional[List[str]] = None):
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(verbose=args.log, log_file=args.log_file)

    cfg: Optional[RunConfig] = None
    try:
        cfg = load_config(args.config) if args.config else RunConfig.from_args(args)
        cfg.validate()
        workers = resolve_workers(cfg.threads)
        logger.info(f"esig {__version__}: {cfg.subcommand} with {workers} workers")

        passed = True
        if cfg.subcommand == "compute":
            doc = run_compute(cfg, workers)
        elif cfg.subcommand == "convergence":
            doc = run_convergence(cfg, workers)
        elif cfg.subcommand == "sample":
            doc = run_sample(cfg, workers)
        else:
            doc, passed = run_verify(cfg, workers)

        doc.update({"config": cfg.to_dict(), "version": __version__})
        emit(doc, args.output, args.conflict)
        if args.csv and "word_values" in doc:
            errors = doc.get("word_errors", doc.get("std_errors", {}))
            write_csv(args.csv, doc["word_values"], errors, "err", args.conflict)
        if not passed:
            console.print(f"[red]Suite {cfg.suite} failed.[/red]")
            sys.exit(1)
    except EsigError as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=True)
        error_doc = {
            "error": {"type": type(e).__name__, "message": str(e), **e.details()},
            "config": cfg.to_dict() if cfg else None,
            "version": __version__,
        }
        print(json.dumps(error_doc, indent=2))
        console.print(f"[red]Error:[/red] {e}")
        sys.exit(1)
    except KeyboardInterrupt:
        console.print("\n[bold red]Aborted by user! Stopping workers...[/bold red]")
        sys.exit(1)
