"""Running configured experiments and writing their metrics to disk."""

from __future__ import annotations

import csv
import io
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .config import (
    ConfigError,
    ExperimentConfig,
    LogisticData,
    MnistData,
    QuadraticData,
    config_from_dict,
)
from .data import PartitionPlan, Samples, ShardedDataset, dirichlet_partition, load_idx, make_blobs, mark_byzantine
from .data import synthetic_quadratic
from .server import RoundRecord, run_training

OUTPUT_ENV = "RAGA_OUTPUT_DIR"
METRICS_HEADER = ("round", "train_loss", "test_loss", "test_acc", "z_norm", "gap_to_opt", "weiszfeld_iters", "wall_ms")
PLOT_HEADER = ("series", "round", "value")
SUMMARY_HEADER = ("metric", "mean", "max", "min", "n")


class ExperimentError(RuntimeError):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".12g")


def _write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as err:
        raise ExperimentError(f"{path}: cannot write ({err.strerror})") from None


def _table(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def metrics_rows(records: list[RoundRecord], wall_time: bool = False) -> list[list[str]]:
    return [
        [
            _fmt(r.t),
            _fmt(r.train_loss),
            _fmt(r.test_loss),
            _fmt(r.test_accuracy),
            _fmt(r.grad_proxy_norm),
            _fmt(r.gap_to_opt),
            _fmt(r.weiszfeld_iters),
            _fmt(r.wall_ms) if wall_time else "",
        ]
        for r in records
    ]


def emit_csv(records: list[RoundRecord], path, wall_time: bool = False):
    """Write per-round metrics; wall-clock time is left blank unless asked for."""
    _write_text(Path(path), _table(METRICS_HEADER, metrics_rows(records, wall_time)))


def read_metrics(path) -> list[dict[str, str]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ExperimentError(f"{path}: cannot read ({err.strerror})") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != METRICS_HEADER:
        raise ExperimentError(f"{path}:1: expected header {','.join(METRICS_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(METRICS_HEADER):
            raise ExperimentError(f"{path}:{lineno}: expected {len(METRICS_HEADER)} fields, got {len(row)}")
        try:
            int(row[0])
            for cell in row[1:]:
                if cell:
                    float(cell)
        except ValueError:
            raise ExperimentError(f"{path}:{lineno}: non-numeric field") from None
        out.append(dict(zip(METRICS_HEADER, row)))
    return out


def emit_plot_data(metrics_files, out_path, metric: str = "test_acc", labels=None):
    """Stack metrics files into a long ``series,round,value`` table.

    ``labels`` names each series; the default is the file's parent directory
    plus its stem. Rounds where the metric is blank are skipped.
    """
    files = [Path(f) for f in metrics_files]
    if not files:
        raise ExperimentError("emit_plot_data needs at least one metrics file")
    if metric not in METRICS_HEADER[1:]:
        raise ExperimentError(f"unknown metric {metric!r}")
    labels = labels or [f"{f.parent.name}/{f.stem}" for f in files]
    rows = []
    for label, f in zip(labels, files):
        for rec in read_metrics(f):
            if rec[metric]:
                rows.append([label, rec["round"], rec[metric]])
    _write_text(Path(out_path), _table(PLOT_HEADER, rows))


# datasets


@dataclass(frozen=True)
class Problem:
    data: ShardedDataset
    test_set: Samples | None


def build_problem(config: ExperimentConfig, seed: int) -> Problem:
    """Training shards (with Byzantine marks) and test set for one seed."""
    data = config.dataset
    clients = config.partition.clients
    plan = PartitionPlan(clients, config.partition.concentration, seed)
    try:
        if isinstance(data, MnistData):
            train = load_idx(data.images_path, data.labels_path, data.subset)
            test = load_idx(data.test_images_path, data.test_labels_path, data.test_subset)
            ds = dirichlet_partition(train, plan)
        elif isinstance(data, LogisticData):
            rng = np.random.default_rng(np.random.SeedSequence([seed], spawn_key=(2,)))
            pool = make_blobs(clients * data.per_shard, data.dim, data.class_count, data.separation, rng)
            test = make_blobs(data.test_size, data.dim, data.class_count, data.separation, rng)
            ds = dirichlet_partition(pool, plan)
        elif isinstance(data, QuadraticData):
            if data.offsets is not None:
                offsets = np.asarray(data.offsets, dtype=float)
            else:
                rng = np.random.default_rng(np.random.SeedSequence([seed], spawn_key=(3,)))
                offsets = data.offset_scale * rng.standard_normal((clients, data.dim))
            ds = synthetic_quadratic(data.dim, clients, data.per_shard, offsets, data.noise_std, seed)
            test = None
        else:
            raise ConfigError(f"unsupported dataset {data!r}")
    except OSError as err:
        raise ExperimentError(f"{err.filename}: cannot read dataset ({err.strerror})") from None
    return Problem(mark_byzantine(ds, config.byz_fraction, seed), test)


# runs


def output_root(config: ExperimentConfig) -> Path:
    """The configured output directory, or the environment override when set."""
    override = os.environ.get(OUTPUT_ENV)
    return Path(override).expanduser().resolve() if override else Path(config.output_dir)


def run_seed(config: ExperimentConfig, seed: int) -> list[RoundRecord]:
    problem = build_problem(config, seed)
    records, _ = run_training(config.trainer_config(seed), problem.data, config.model_spec(), problem.test_set)
    return records


def _run_summary(records: list[RoundRecord]) -> dict[str, float]:
    out = {"final_train_loss": records[-1].train_loss}
    accs = [r.test_accuracy for r in records if r.test_accuracy is not None]
    if accs:
        out["final_test_acc"] = accs[-1]
        out["max_test_acc"] = max(accs)
    gaps = [r.gap_to_opt for r in records if r.gap_to_opt is not None]
    if gaps:
        out["final_gap_to_opt"] = gaps[-1]
    return out


def summary_rows(per_seed: list[dict[str, float]]) -> list[list[str]]:
    rows = []
    for key in per_seed[0]:
        vals = np.array([s[key] for s in per_seed if key in s], dtype=float)
        rows.append([key, _fmt(vals.mean()), _fmt(vals.max()), _fmt(vals.min()), _fmt(len(vals))])
    return rows


def run_experiment(config: ExperimentConfig, out_dir=None) -> Path:
    """Run every seed, writing ``metrics_seed<s>.csv`` files and ``summary.csv``.

    Returns the output directory.
    """
    out = Path(out_dir) if out_dir is not None else output_root(config)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ExperimentError(f"{out}: cannot create output directory ({err.strerror})") from None
    per_seed = []
    for seed in config.seeds:
        records = run_seed(config, seed)
        emit_csv(records, out / f"metrics_seed{seed}.csv", config.record_wall_time)
        per_seed.append(_run_summary(records))
    _write_text(out / "summary.csv", _table(SUMMARY_HEADER, summary_rows(per_seed)))
    _write_text(out / "config.yaml", yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False))
    return out


# sweeps

# short names accepted by --vary, mapped to dotted config paths
VARY_ALIASES = {
    "attack": "trainer.attack.kind",
    "aggregator": "trainer.aggregator.kind",
    "phi": "partition.concentration",
    "concentration": "partition.concentration",
    "clients": "partition.clients",
    "rounds": "trainer.rounds",
    "local_steps": "trainer.local_steps",
    "batch_size": "trainer.batch_size",
    "epsilon": "trainer.aggregator.epsilon",
    "seed": "seeds",
}


def parse_vary(spec: str) -> tuple[str, list]:
    """``key=v1,v2`` into a dotted path and YAML-typed values."""
    key, sep, raw = spec.partition("=")
    key = key.strip()
    if not sep or not key or not raw:
        raise ConfigError(f"--vary expects key=v1,v2,..., got {spec!r}")
    values = [yaml.safe_load(v) for v in raw.split(",")]
    return VARY_ALIASES.get(key, key), values


def _set_path(tree: dict, dotted: str, value):
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        nxt = node.get(p)
        if not isinstance(nxt, dict):
            raise ConfigError(f"{dotted}: {p} is not a section")
        node = nxt
    if parts[-1] not in node:
        raise ConfigError(f"{dotted}: unknown key")
    node[parts[-1]] = [value] if dotted == "seeds" else value


def _cell_name(assignment) -> str:
    parts = []
    for path, value in assignment:
        tag = path.rsplit(".", 1)[-1]
        if path.endswith(".kind"):
            tag = path.split(".")[-2]
        parts.append(f"{tag}={value}")
    return "_".join(parts).replace("/", "-") or "base"


def sweep_cells(config: ExperimentConfig, varies: list[tuple[str, list]]) -> list[tuple[str, ExperimentConfig]]:
    """Cartesian product of the ``--vary`` values, each as a named config."""
    base_label = config.label
    cells = []
    axes = [[(path, v) for v in values] for path, values in varies]
    for assignment in itertools.product(*axes):
        tree = yaml.safe_load(yaml.safe_dump(config.model_dump(mode="json")))
        for path, value in assignment:
            _set_path(tree, path, value)
        name = _cell_name(assignment)
        tree["label"] = name if base_label is None else f"{base_label}/{name}"
        cells.append((name, config_from_dict(tree)))
    names = [n for n, _ in cells]
    if len(set(names)) != len(names):
        raise ConfigError("--vary values produce duplicate cell names")
    return cells


def _run_cell(args):
    cfg, out = args
    run_experiment(cfg, out)
    return out


def run_sweep(config: ExperimentConfig, varies, workers: int = 1, out_dir=None) -> Path:
    """Run every cell into its own subdirectory, then write ``sweep_summary.csv``."""
    root = Path(out_dir) if out_dir is not None else output_root(config)
    cells = sweep_cells(config, varies)
    jobs = [(cfg, root / name) for name, cfg in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_run_cell, jobs))
    else:
        for job in jobs:
            _run_cell(job)
    # gathered after every cell finished, in cell order
    rows = []
    for name, _ in cells:
        for row in _read_summary(root / name / "summary.csv"):
            rows.append([name] + row)
    _write_text(root / "sweep_summary.csv", _table(("cell",) + SUMMARY_HEADER, rows))
    plot_files = [root / name / f"metrics_seed{cfg.seeds[0]}.csv" for name, cfg in cells]
    metric = "test_acc" if config.model_spec().is_classifier else "gap_to_opt"
    emit_plot_data(plot_files, root / f"plot_{metric}.csv", metric, [name for name, _ in cells])
    return root


def _read_summary(path: Path) -> list[list[str]]:
    try:
        rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))
    except OSError as err:
        raise ExperimentError(f"{path}: cannot read ({err.strerror})") from None
    return rows[1:]
