"""Experiment driver and command-line interface.

Configs are flat ``key=value`` text files (``#`` starts a comment). A run
writes, under ``<output_root>/<run_id>/``:

``config.txt``      the normalized config
``iterations.csv``  one row per iterate: ``t,sums,messages,ticks,relative_error``
``summary.csv``     one :class:`ResultRow`
``timing.txt``      wall-clock seconds (kept out of the CSVs so they are
                    byte-reproducible)

Exit statuses: 0 converged, 2 ``max_iter`` reached, 3 diverged, 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import itertools
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .distributed import CONVERGED, DIVERGED, MAX_ITER, diht_run, naive_diht_run
from .errors import ConfigError, DivergenceError, InvalidArgument
from .netsim import (AsyncDelivery, SyncDelivery, Topology, make_er_topology,
                     make_geometric_topology)
from .recovery import centralized_iht, generate_problem, load_problem, save_problem
from .topk import (LITERAL_RULE, MAGNITUDE_RULE, TA_EXAMPLE_VECTORS, build_sorted_list,
                   ta_topk, ta_trace_csv)

OUTPUT_ROOT_ENV = "DIHT_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_MAX_ITER = 2
EXIT_DIVERGED = 3
EXIT_USAGE = 64
_STATUS_EXIT = {CONVERGED: EXIT_OK, MAX_ITER: EXIT_MAX_ITER, DIVERGED: EXIT_DIVERGED}

ITERATIONS_SCHEMA = "# schema=diht-iterations/1"
SUMMARY_SCHEMA = "# schema=diht-summary/1"
ITERATION_COLUMNS = ["t", "sums", "messages", "ticks", "relative_error"]
SUMMARY_COLUMNS = ["run_id", "config_hash", "algorithm", "status", "iterations",
                   "total_messages", "preprocessing_messages", "clock_ticks", "total_sums",
                   "final_error"]

TOPOLOGY_KINDS = ("er", "geometric", "path", "complete", "file")
ALGORITHMS = ("diht", "naive", "centralized")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "random"
    N: int = 1000
    M: int = 250
    P: int = 50
    K: int = 20
    alpha: str = "auto"
    noise_std: float = 0.0
    problem_seed: int = 0
    problem_file: str = ""
    topology: str = "er"
    topology_param: float = 0.25
    topology_seed: int = 0
    topology_file: str = ""
    algorithm: str = "diht"
    delivery: str = "sync"
    delivery_seed: int = 0
    max_delay: int = 8
    side_rule: str = MAGNITUDE_RULE
    tol: float = 1e-2
    max_iter: int = 2000
    output_dir: str = ""
    trace: bool = False

    def validate(self):
        for key in ("N", "M", "P", "K", "max_iter", "max_delay"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be a positive integer", key)
        if self.alpha != "auto":
            try:
                if not float(self.alpha) > 0:
                    raise ValueError
            except ValueError:
                raise ConfigError("alpha must be 'auto' or a positive number", "alpha") from None
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative", "noise_std")
        if not self.tol > 0:
            raise ConfigError("tol must be positive", "tol")
        if self.topology not in TOPOLOGY_KINDS:
            raise ConfigError(f"topology must be one of {', '.join(TOPOLOGY_KINDS)}", "topology")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}", "algorithm")
        if self.delivery not in ("sync", "async"):
            raise ConfigError("delivery must be 'sync' or 'async'", "delivery")
        if self.side_rule not in (MAGNITUDE_RULE, LITERAL_RULE):
            raise ConfigError("side_rule must be 'magnitude' or 'literal'", "side_rule")
        if self.topology == "file" and not Path(self.topology_file).is_file():
            raise ConfigError(f"topology file {self.topology_file!r} not found", "topology_file")
        if self.problem_file and not Path(self.problem_file).is_file():
            raise ConfigError(f"problem file {self.problem_file!r} not found", "problem_file")
        return self

    def to_text(self, include_output=True):
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "output_dir" and not include_output:
                continue
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self):
        return hashlib.sha256(self.to_text(include_output=False).encode()).hexdigest()[:12]

    @property
    def run_id(self):
        return f"{self.name}-{self.config_hash}"

    @property
    def topology_label(self):
        if self.topology in ("er", "geometric"):
            return f"{self.topology}:{self.topology_param:g}"
        return self.topology


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key, raw):
    f = _FIELDS.get(key)
    if f is None:
        raise ConfigError(f"unknown config key {key!r}", key)
    kind = f.type
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} (expected {kind})", key) from None
    return raw


def _split_lines(text):
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        yield key.strip(), value.strip()


def _apply(values, base=None):
    kwargs = {}
    for key, raw in values.items():
        if key == "topology" and ":" in raw:
            raw, param = raw.split(":", 1)
            kwargs["topology_param"] = _coerce("topology_param", param)
        kwargs[key] = _coerce(key, raw)
    base = base or ExperimentConfig()
    return dataclasses.replace(base, **kwargs).validate()


def parse_config(text, overrides=None):
    """Parse ``key=value`` text into a validated :class:`ExperimentConfig`.

    ``topology`` also accepts ``kind:param`` (e.g. ``er:0.25``).
    """
    values = dict(_split_lines(text))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return _apply(values)


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def load_config(path, overrides=None):
    return parse_config(_read(path), overrides)


def parse_matrix(text):
    """Expand a sweep matrix: any value may list ``|``-separated options.

    The cells are the Cartesian product of all options; an empty matrix
    has no cells.
    """
    pairs = list(_split_lines(text))
    if not pairs:
        return []
    keys = [k for k, _ in pairs]
    options = [[v.strip() for v in raw.split("|")] for _, raw in pairs]
    cells = [_apply(dict(zip(keys, combo))) for combo in itertools.product(*options)]
    return sorted(cells, key=lambda c: c.config_hash)


def output_root(explicit=None):
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def build_problem(cfg):
    if cfg.problem_file:
        problem = load_problem(cfg.problem_file)
        if cfg.alpha != "auto":
            problem = problem.with_step_size(float(cfg.alpha))
        return problem
    alpha = None if cfg.alpha == "auto" else float(cfg.alpha)
    return generate_problem(cfg.N, cfg.M, cfg.P, cfg.K, cfg.problem_seed, alpha=alpha,
                            noise_std=cfg.noise_std)


def build_topology(cfg, P):
    kind = cfg.topology
    if kind == "er":
        return make_er_topology(P, cfg.topology_param, cfg.topology_seed)
    if kind == "geometric":
        return make_geometric_topology(P, cfg.topology_param, cfg.topology_seed)
    if kind == "path":
        return Topology.path(P)
    if kind == "complete":
        return Topology.complete(P)
    topo = Topology.read_edge_list(cfg.topology_file)
    if topo.P != P:
        raise ConfigError(f"topology file has {topo.P} agents, problem has {P}", "topology_file")
    return topo


def delivery_model(cfg):
    if cfg.delivery == "async":
        return AsyncDelivery(seed=cfg.delivery_seed, max_delay=cfg.max_delay)
    return SyncDelivery()


@dataclass
class ResultRow:
    run_id: str
    config_hash: str
    algorithm: str
    status: str
    iterations: int
    total_messages: int
    preprocessing_messages: int
    clock_ticks: int
    total_sums: int
    final_error: float
    wall_time: float = 0.0

    def csv_values(self):
        return [getattr(self, c) for c in SUMMARY_COLUMNS]


@dataclass
class RunOutcome:
    row: ResultRow
    rows: list
    problem: object = None
    metrics: object = None


def execute(cfg):
    """Run one configured experiment in memory (no files written)."""
    start = time.perf_counter()
    problem = build_problem(cfg)
    if cfg.algorithm == "centralized":
        try:
            res = centralized_iht(problem, tol=cfg.tol, max_iter=cfg.max_iter)
        except DivergenceError as exc:
            return _diverged(cfg, exc, start)
        status = CONVERGED if res.converged else MAX_ITER
        rows = [(t, "", 0, 0, e) for t, e in enumerate(res.errors)]
        row = ResultRow(cfg.run_id, cfg.config_hash, cfg.algorithm, status,
                        res.estimate.iteration, 0, 0, 0, 0, res.errors[-1])
        row.wall_time = time.perf_counter() - start
        return RunOutcome(row, rows, problem, res)

    topo = build_topology(cfg, problem.P)
    runner = diht_run if cfg.algorithm == "diht" else naive_diht_run
    kwargs = dict(tol=cfg.tol, max_iter=cfg.max_iter, delivery=delivery_model(cfg),
                  trace=cfg.trace)
    if cfg.algorithm == "diht":
        kwargs["rule"] = cfg.side_rule
    try:
        res = runner(problem, topo, **kwargs)
    except DivergenceError as exc:
        return _diverged(cfg, exc, start)
    m = res.metrics
    rows = [(0, "", m.preprocessing_messages, m.preprocessing_ticks, m.errors[0])]
    rows += list(m.iteration_rows())
    row = ResultRow(cfg.run_id, cfg.config_hash, cfg.algorithm, m.status, m.iterations,
                    m.total_messages, m.preprocessing_messages, m.clock_ticks, m.total_sums,
                    m.errors[-1])
    row.wall_time = time.perf_counter() - start
    out = RunOutcome(row, rows, problem, m)
    out.network = res.network
    return out


def _diverged(cfg, exc, start):
    row = ResultRow(cfg.run_id, cfg.config_hash, cfg.algorithm, DIVERGED,
                    exc.iteration or 0, 0, 0, 0, 0, float("inf"))
    row.wall_time = time.perf_counter() - start
    return RunOutcome(row, [])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(schema, header, rows):
    buf = io.StringIO()
    buf.write(schema + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def read_csv_rows(path):
    """Rows of a schema-tagged CSV as dicts (comment lines skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_run(outcome, cfg, root):
    run_dir = Path(root) / cfg.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text(include_output=False))
    (run_dir / "iterations.csv").write_text(
        _csv_text(ITERATIONS_SCHEMA, ITERATION_COLUMNS, outcome.rows))
    (run_dir / "summary.csv").write_text(
        _csv_text(SUMMARY_SCHEMA, SUMMARY_COLUMNS, [outcome.row.csv_values()]))
    (run_dir / "timing.txt").write_text(f"wall_time_s={outcome.row.wall_time:.3f}\n")
    net = getattr(outcome, "network", None)
    if cfg.trace and net is not None:
        net.write_trace(run_dir / "trace.txt")
    return run_dir


def run_config(cfg, root=None):
    """Execute ``cfg`` and write its artifacts; returns ``(ResultRow, run_dir)``."""
    root = output_root(root or cfg.output_dir or None)
    outcome = execute(cfg)
    return outcome.row, write_run(outcome, cfg, root)


SWEEP_COLUMNS = ["run_id", "config_hash", "name", "topology", "algorithm", "delivery",
                 "status", "iterations", "total_messages", "clock_ticks", "total_sums",
                 "final_error", "error"]
TABLE_COLUMNS = ["problem", "topology", "algorithm", "total_messages", "clock_ticks"]


def _sweep_cell(cfg, root):
    try:
        row, _ = run_config(cfg, root)
        return dict(dataclasses.asdict(row), error="")
    except Exception as exc:  # one bad cell must not stop the sweep
        return {"run_id": cfg.run_id, "config_hash": cfg.config_hash,
                "algorithm": cfg.algorithm, "status": "error", "iterations": "",
                "total_messages": "", "clock_ticks": "", "total_sums": "",
                "final_error": "", "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(cells, root, jobs=1):
    """Run every cell and write ``results.csv`` and ``table.csv`` under ``root``.

    Rows come out sorted by config hash whatever order the cells finish in.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells, itertools.repeat(root)))
    else:
        results = [_sweep_cell(c, root) for c in cells]
    table = []
    for cfg, res in zip(cells, results):
        res.update(name=cfg.name, topology=cfg.topology_label, delivery=cfg.delivery)
        table.append(res)
    table.sort(key=lambda r: r["config_hash"])
    rows = [[r.get(c, "") for c in SWEEP_COLUMNS] for r in table]
    (root / "results.csv").write_text(_csv_text("# schema=diht-sweep/1", SWEEP_COLUMNS, rows))
    layout = sorted(table, key=lambda r: (r["name"], r["topology"], r["algorithm"]))
    (root / "table.csv").write_text(_csv_text(
        "# schema=diht-table/1", TABLE_COLUMNS,
        [[r["name"], r["topology"], r["algorithm"], r["total_messages"], r["clock_ticks"]]
         for r in layout]))
    return table


def ta_example_trace(K=2):
    lists = [build_sorted_list(v) for v in TA_EXAMPLE_VECTORS]
    return ta_trace_csv(ta_topk(lists, K), len(lists))


def plot_data(run_dir, out_dir=None):
    """Write ``sums_per_iteration.csv`` and ``error_per_iteration.csv``."""
    run_dir = Path(run_dir)
    src = run_dir / "iterations.csv"
    if not src.is_file():
        raise ConfigError(f"{src} not found; is {run_dir} a run directory?", "run_dir")
    rows = read_csv_rows(src)
    out = Path(out_dir) if out_dir else run_dir
    out.mkdir(parents=True, exist_ok=True)
    sums = [(r["t"], r["sums"]) for r in rows if r["sums"] != ""]
    errs = [(r["t"], r["relative_error"]) for r in rows]
    (out / "sums_per_iteration.csv").write_text(
        "iteration,sums\n" + "".join(f"{t},{s}\n" for t, s in sums))
    (out / "error_per_iteration.csv").write_text(
        "iteration,relative_error\n" + "".join(f"{t},{e}\n" for t, e in errs))
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser():
    ap = _Parser(prog="diht", description="Distributed IHT experiments on a simulated network.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one configured experiment")
    p.add_argument("config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--output-dir", help=f"output root (default: ${OUTPUT_ROOT_ENV} or ./runs)")

    p = sub.add_parser("sweep", help="run every cell of a config matrix")
    p.add_argument("matrix", help="config file whose values may list '|' options")
    p.add_argument("--output-dir")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    p = sub.add_parser("trace-ta", help="threshold-algorithm trace of the built-in example")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out", help="write CSV here instead of stdout")

    p = sub.add_parser("plot-data", help="extract plot-ready series from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out")

    p = sub.add_parser("gen-problem", help="generate and save a random problem")
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--M", type=int, default=250)
    p.add_argument("--P", type=int, default=50)
    p.add_argument("--K", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", default="auto")
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-topology", help="generate and save a topology edge list")
    p.add_argument("--kind", choices=("er", "geometric", "path", "complete"), default="er")
    p.add_argument("--P", type=int, default=50)
    p.add_argument("--param", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, InvalidArgument) as exc:
        field = getattr(exc, "field", None)
        where = f" [{field}]" if field else ""
        print(f"diht {args.command}: error{where}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _dispatch(args):
    cmd = args.command
    if cmd == "run":
        cfg = load_config(args.config, args.set)
        row, run_dir = run_config(cfg, args.output_dir)
        print(f"{row.run_id}: {row.status} after {row.iterations} iterations, "
              f"{row.total_messages} messages, {row.clock_ticks} ticks -> {run_dir}")
        return _STATUS_EXIT[row.status]
    if cmd == "sweep":
        cells = parse_matrix(_read(args.matrix))
        root = output_root(args.output_dir)
        table = run_sweep(cells, root, args.jobs)
        failed = sum(r["status"] == "error" for r in table)
        print(f"{len(table)} cells, {failed} failed -> {root / 'results.csv'}")
        return EXIT_OK
    if cmd == "trace-ta":
        if args.k < 1 or args.k > len(TA_EXAMPLE_VECTORS[0]):
            raise ConfigError("k must lie in 1..10", "k")
        text = ta_example_trace(args.k)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    if cmd == "plot-data":
        out = plot_data(args.run_dir, args.out)
        print(f"wrote plot data to {out}")
        return EXIT_OK
    if cmd == "gen-problem":
        alpha = None if args.alpha == "auto" else float(args.alpha)
        problem = generate_problem(args.N, args.M, args.P, args.K, args.seed, alpha=alpha,
                                   noise_std=args.noise_std)
        save_problem(problem, args.out)
        print(f"wrote {args.out} (alpha={problem.step_size!r})")
        return EXIT_OK
    if cmd == "gen-topology":
        cfg = ExperimentConfig(topology=args.kind, topology_param=args.param,
                               topology_seed=args.seed)
        topo = build_topology(cfg, args.P)
        topo.write_edge_list(args.out)
        print(f"wrote {args.out} (P={topo.P}, E={topo.E})")
        return EXIT_OK
    raise AssertionError(cmd)
