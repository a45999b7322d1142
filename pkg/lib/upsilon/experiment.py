"""Module to run seeded experiments and plot their results.

    run  --config <file.ini> [--workers N] [--out DIR] [--db FILE]
    plot --csv <results.csv> --spec <plot.ini> --out <file.svg>

An experiment expands into cells (setting x seed). Cells run in a worker
pool and their rows are sorted by cell key, so results.csv does not depend
on scheduling.
"""

import argparse
import configparser
import dataclasses
import datetime
import json
import os
import sys
import time
from dataclasses import dataclass, field
from multiprocessing import Pool, freeze_support
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

import config as cfg
import diagnostics
import plot as plotting
import utils
from datagen import BenchmarkSpec, SpecError, generate
from sec import SinkhornConfig, sinkhorn_assign
from strategies import StrategyKind, sample_reassignments
from train import ConfigError, TrainConfig, Variant, VariantError, VariantKind, fit_labeled_only, train_variant

EXPERIMENT_KINDS = ("strategies", "imbalance", "sweep", "ablation", "ksweep", "sinkhorn_bench")

RESULT_COLUMNS = [
    "kind",
    "row_type",
    "variant",
    "ratio",
    "k",
    "iterations",
    "trial",
    "seed",
    "accuracy",
    "ood_as_id_prop",
    "kl_id",
    "kl_ood",
    "r_id",
    "r_ood",
    "marginal_violation",
    "detail",
]
# Wall times are kept out of results.csv
TIMING_COLUMNS = ["kind", "row_type", "iterations", "seed", "runtime_s"]
SETTING_COLUMNS = ["kind", "variant", "ratio", "k", "iterations"]
METRIC_COLUMNS = ["accuracy", "ood_as_id_prop", "kl_id", "kl_ood", "r_id", "r_ood", "marginal_violation"]

DEFAULT_VARIANTS = {
    "strategies": ("strategy:baseline", "strategy:reassigned", "strategy:openset", "strategy:oracle"),
    "sweep": ("strategy:baseline", "vanilla_pl", "upsilon"),
    "ablation": ("strategy:baseline", "vanilla_pl", "rpl_only", "sec_only", "openset_k1", "upsilon"),
    "ksweep": ("strategy:baseline", "upsilon"),
    "imbalance": ("strategy:baseline",),
    "sinkhorn_bench": ("upsilon",),
}

EXPERIMENT_KEYS = (
    "kind",
    "seed",
    "n_seeds",
    "output",
    "variants",
    "ratios",
    "ks",
    "iterations",
    "trials",
    "reassignments",
    "confusion",
    "bench_accuracy",
    "bench_k",
    "bench_m",
    "bench_instances",
    "dataset_seed",
)
TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig) if f.name not in ("sinkhorn", "seed"))
BENCHMARK_KEYS = tuple(k for k in BenchmarkSpec.keys() if k != "seed")
SINKHORN_KEYS = ("reg", "max_iters", "marginal_tol")


class ExperimentConfigError(ValueError):
    """An experiment config violates the grammar or a field range. `key` is section.key."""

    def __init__(self, key, msg):
        self.key = key
        super().__init__(f"{key}: {msg}")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    benchmark: BenchmarkSpec
    train: TrainConfig
    variants: Tuple[str, ...] = ()
    ratios: Tuple[float, ...] = ()
    ks: Tuple[int, ...] = ()
    iterations: Tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    n_seeds: int = 5
    seed: int = 42
    output: str = "results/"
    trials: int = 20
    reassignments: int = 10
    confusion: bool = False
    bench_accuracy: bool = False
    bench_k: int = 4
    bench_m: int = 256
    bench_instances: int = 50
    dataset_seed: Optional[int] = None
    source: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ExperimentConfigError("experiment.kind", f"must be one of {EXPERIMENT_KINDS}, got '{self.kind}'")
        if self.n_seeds < 1:
            raise ExperimentConfigError("experiment.n_seeds", f"must be >= 1, got {self.n_seeds}")
        if any(not 0.0 <= r <= 1.0 for r in self.ratios):
            raise ExperimentConfigError("experiment.ratios", f"entries must be in [0, 1], got {list(self.ratios)}")
        if any(k < 0 for k in self.ks):
            raise ExperimentConfigError("experiment.ks", f"entries must be >= 0, got {list(self.ks)}")
        if not self.iterations or any(i < 1 for i in self.iterations):
            raise ExperimentConfigError("experiment.iterations", f"entries must be >= 1, got {list(self.iterations)}")
        for key in ("trials", "reassignments", "bench_k", "bench_m", "bench_instances"):
            if getattr(self, key) < 1:
                raise ExperimentConfigError(f"experiment.{key}", f"must be >= 1, got {getattr(self, key)}")
        if self.bench_m < self.bench_k:
            raise ExperimentConfigError("experiment.bench_m", f"must be >= bench_k = {self.bench_k}")
        if self.kind == "ksweep" and not self.ks:
            raise ExperimentConfigError("experiment.ks", "ksweep needs a k list")
        if self.kind == "sweep" and not self.ratios:
            raise ExperimentConfigError("experiment.ratios", "sweep needs a ratio list")

        variants = self.variants or DEFAULT_VARIANTS[self.kind]
        for v in variants:
            try:
                Variant.parse(v)
            except VariantError as ex:
                raise ExperimentConfigError("experiment.variants", str(ex))
        object.__setattr__(self, "variants", tuple(Variant.parse(v).name for v in variants))

    def as_dict(self):
        d = dataclasses.asdict(self)
        d.pop("source")

        return d


def _convert(key, value: str, default):
    try:
        if isinstance(default, bool):
            state = configparser.ConfigParser.BOOLEAN_STATES.get(value.strip().lower())
            if state is None:
                raise ValueError(f"not a boolean: '{value}'")
            return state
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as ex:
        raise ExperimentConfigError(key, str(ex))

    return value.strip()


def _list(key, value: str, kind):
    try:
        return tuple(kind(v.strip()) for v in value.split(",") if v.strip())
    except ValueError as ex:
        raise ExperimentConfigError(key, str(ex))


def load_experiment_config(path: str):
    """Reads and validates an experiment config file.

    Grammar: INI sections [experiment], [benchmark], [train], [sinkhorn];
    `key = value` lines; comma-separated lists; `#` and `;` comments. Keys
    missing from the file take their defaults from the config module.

    Raises:
        ExperimentConfigError: Naming the first offending section.key.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        if not parser.read(path, encoding="utf-8"):
            raise ExperimentConfigError("file", f"cannot read {path}")
    except configparser.Error as ex:
        raise ExperimentConfigError("file", str(ex).splitlines()[0])

    allowed = {"experiment": EXPERIMENT_KEYS, "benchmark": BENCHMARK_KEYS, "train": TRAIN_KEYS, "sinkhorn": SINKHORN_KEYS}
    for section in parser.sections():
        if section not in allowed:
            raise ExperimentConfigError(section, "unknown section")
        for key in parser[section]:
            if key not in allowed[section]:
                raise ExperimentConfigError(f"{section}.{key}", "unknown key")
    if not parser.has_option("experiment", "kind"):
        raise ExperimentConfigError("experiment.kind", "missing")

    def section(name):
        return parser[name] if parser.has_section(name) else {}

    defaults = SinkhornConfig.from_cfg()
    values = {k: _convert(f"sinkhorn.{k}", v, getattr(defaults, k)) for k, v in section("sinkhorn").items()}
    try:
        sinkhorn = dataclasses.replace(defaults, **values)
    except ValueError as ex:
        raise ExperimentConfigError(f"sinkhorn.{str(ex).split()[0]}", str(ex))

    exp = section("experiment")
    seed = _convert("experiment.seed", exp.get("seed", str(cfg.RANDOM_SEED)), 0)

    defaults = BenchmarkSpec.from_cfg(seed=seed)
    values = {k: _convert(f"benchmark.{k}", v, getattr(defaults, k)) for k, v in section("benchmark").items()}
    try:
        benchmark = dataclasses.replace(defaults, **values)
    except SpecError as ex:
        raise ExperimentConfigError(f"benchmark.{ex.key}", str(ex))

    defaults = TrainConfig.from_cfg(sinkhorn=sinkhorn, seed=seed)
    values = {k: _convert(f"train.{k}", v, getattr(defaults, k)) for k, v in section("train").items()}
    try:
        train = dataclasses.replace(defaults, **values)
    except ConfigError as ex:
        raise ExperimentConfigError(f"train.{ex.key}", str(ex))

    kwargs = {"kind": exp["kind"].strip(), "benchmark": benchmark, "train": train, "seed": seed, "source": path}
    if "variants" in exp:
        kwargs["variants"] = _list("experiment.variants", exp["variants"], str)
    if "ratios" in exp:
        kwargs["ratios"] = _list("experiment.ratios", exp["ratios"], float)
    for key in ("ks", "iterations"):
        if key in exp:
            kwargs[key] = _list(f"experiment.{key}", exp[key], int)
    scalars = {f.name: f.default for f in dataclasses.fields(ExperimentConfig)}
    for key in ("n_seeds", "output", "trials", "reassignments", "confusion", "bench_accuracy", "bench_k", "bench_m", "bench_instances"):
        if key in exp:
            kwargs[key] = _convert(f"experiment.{key}", exp[key], scalars[key])
    if "dataset_seed" in exp:
        kwargs["dataset_seed"] = _convert("experiment.dataset_seed", exp["dataset_seed"], 0)

    return ExperimentConfig(**kwargs)


@dataclass(frozen=True)
class Cell:
    """One setting x seed of an experiment."""

    key: str
    kind: str
    seed_index: int
    seed: int
    variant: Optional[str] = None
    ratio: Optional[float] = None
    k: Optional[int] = None
    iterations: Optional[int] = None
    trial: Optional[int] = None


def build_cells(ec: ExperimentConfig):
    """Expands an experiment into its cells, sorted by key."""
    cells = []
    seeds = range(ec.n_seeds)
    ratio = ec.benchmark.mismatch_ratio

    def add(seed_index, **kw):
        parts = []
        for name in ("ratio", "k", "iterations", "trial", "variant"):
            v = kw.get(name)
            if v is None:
                continue
            parts.append(f"{name}={v:.2f}" if name == "ratio" else f"{name}={v:03d}" if isinstance(v, int) else f"{name}={v}")
        parts.append(f"seed={seed_index:03d}")
        cells.append(Cell("/".join(parts), ec.kind, seed_index, utils.cell_seed(ec.seed, seed_index), **kw))

    if ec.kind == "imbalance":
        for t in range(ec.trials):
            add(0, trial=t)
    elif ec.kind == "sinkhorn_bench":
        for it in ec.iterations:
            for s in seeds:
                add(s, iterations=int(it))
    elif ec.kind == "sweep":
        for r in ec.ratios:
            for v in ec.variants:
                for s in seeds:
                    add(s, ratio=float(r), variant=v)
    elif ec.kind == "ksweep":
        for s in seeds:
            add(s, ratio=ratio, variant="strategy:baseline")
            for k in ec.ks:
                add(s, ratio=ratio, k=int(k), variant="upsilon")
    else:
        for v in ec.variants:
            for s in seeds:
                add(s, ratio=ratio, variant=v)

    return sorted(cells, key=lambda c: c.key)


def _row(cell: Cell, **metrics):
    row = {c: None for c in RESULT_COLUMNS}
    row.update(kind=cell.kind, row_type="seed", variant=cell.variant, ratio=cell.ratio, k=cell.k, iterations=cell.iterations)
    row.update(trial=cell.trial, seed=cell.seed)
    row.update(metrics)

    return row


def _benchmark_dataset(spec: BenchmarkSpec, seed: int):
    return generate(dataclasses.replace(spec, seed=int(seed)))


def _dataset_seed(ec: ExperimentConfig, cell: Cell):
    # With dataset_seed set, seeds only vary the training run
    return cell.seed if ec.dataset_seed is None else ec.dataset_seed


def _train_cell(ec: ExperimentConfig, cell: Cell, dataset, variant: Variant, k_extra=None):
    tcfg = variant.adapt_config(ec.train.replace(seed=cell.seed), k_ood=len(dataset.ood_classes()))
    if k_extra is not None:
        tcfg = tcfg.replace(k_extra=k_extra)

    return train_variant(dataset, tcfg, variant)


def _curves(cell, result):
    log = result.log.copy()
    log.insert(0, "cell", cell.key)
    log.insert(1, "variant", cell.variant)
    log.insert(2, "ratio", cell.ratio)
    log.insert(3, "k", cell.k)
    log.insert(4, "seed", cell.seed)

    return log


def _confusion(dataset, result):
    pred = result.predict(dataset.full_test_x)
    n_true = dataset.k_id + dataset.k_ood
    cm = diagnostics.confusion(dataset.full_test_y, pred, result.label_space, n_true_classes=n_true)

    return cm.to_frame()


def _run_training_cell(cell: Cell, ec: ExperimentConfig):
    spec = dataclasses.replace(ec.benchmark, seed=_dataset_seed(ec, cell), mismatch_ratio=cell.ratio)
    dataset = generate(spec)
    variant = Variant.parse(cell.variant)
    detail = None

    if variant.kind is VariantKind.STRATEGY and variant.strategy.kind is StrategyKind.REASSIGNED:
        # Best of the sampled OOD -> ID maps
        best = None
        for mapping in sample_reassignments(dataset.k_id, dataset.k_ood, ec.reassignments, cell.seed):
            v = dataclasses.replace(variant, strategy=dataclasses.replace(variant.strategy, reassignment=mapping))
            result = _train_cell(ec, cell, dataset, v)
            if best is None or result.final_accuracy > best[0].final_accuracy:
                best = (result, mapping)
        result, mapping = best
        detail = "map=" + "-".join(str(c) for c in mapping)
    else:
        result = _train_cell(ec, cell, dataset, variant, k_extra=cell.k)

    last = result.log.iloc[-1]
    row = _row(
        cell,
        accuracy=result.final_accuracy,
        ood_as_id_prop=float(last["ood_as_id_prop"]),
        kl_id=None if np.isnan(last["kl_imbalance"]) else float(last["kl_imbalance"]),
        detail=detail,
    )
    out = {"rows": [row], "curves": _curves(cell, result)}
    if ec.confusion and ec.kind in ("ablation", "sweep"):
        out["confusion"] = _confusion(dataset, result)

    return out


def _run_imbalance_cell(cell: Cell, ec: ExperimentConfig):
    base = utils.cell_seed(ec.seed, 0)
    dataset = _benchmark_dataset(ec.benchmark, base + cell.trial)
    tcfg = Variant.parse("baseline").adapt_config(ec.train)
    params = fit_labeled_only(tcfg, dataset, base + cell.trial)
    r = diagnostics.imbalance_trial(params, dataset, cell.trial)

    return {"rows": [_row(cell, **{k: r[k] for k in ("kl_id", "kl_ood", "r_id", "r_ood")})]}


def _run_sinkhorn_cell(cell: Cell, ec: ExperimentConfig):
    rng = utils.derived_rng(cell.seed, 3)
    instances = [rng.dirichlet(np.ones(ec.bench_k), size=ec.bench_m).T for _ in range(ec.bench_instances)]
    scfg = dataclasses.replace(ec.train.sinkhorn, max_iters=cell.iterations)

    start = time.perf_counter()
    assignments = [sinkhorn_assign(P, scfg) for P in instances]
    runtime = time.perf_counter() - start

    accuracy = None
    if ec.bench_accuracy:
        dataset = _benchmark_dataset(ec.benchmark, _dataset_seed(ec, cell))
        tcfg = ec.train.replace(seed=cell.seed, sinkhorn=scfg)
        accuracy = train_variant(dataset, tcfg, Variant.parse("upsilon")).final_accuracy

    violation = float(np.mean([a.row_violation for a in assignments]))

    timing = {"kind": cell.kind, "row_type": "seed", "iterations": cell.iterations, "seed": cell.seed, "runtime_s": runtime}

    return {"rows": [_row(cell, marginal_violation=violation, accuracy=accuracy)], "timing": timing}


def run_cell(cell: Cell, ec: ExperimentConfig):
    """Runs one cell. Returns a dict with 'rows' and optionally 'curves' and 'confusion'."""
    if cell.kind == "imbalance":
        return _run_imbalance_cell(cell, ec)
    if cell.kind == "sinkhorn_bench":
        return _run_sinkhorn_cell(cell, ec)

    return _run_training_cell(cell, ec)


def runCell(item):
    """Runs a cell in a worker.

    Args:
        item: Tuple containing (cell, experiment config, config)

    Returns:
        (cell key, payload or None, error message or None)
    """
    cell, ec, config = item
    cfg.setConfig(config)

    try:
        return cell.key, run_cell(cell, ec), None
    except Exception as ex:
        print(f"Error: Cell {cell.key} failed.\n", flush=True)
        utils.writeErrorLog(ex)

        return cell.key, None, f"{type(ex).__name__}: {ex}"


def summarize(rows: pd.DataFrame):
    """Appends mean and std rows (population std) per setting.

    Imbalance experiments also get a median row.
    """
    if rows.empty:
        return rows

    stats = ["mean", "std"] + (["median"] if (rows["kind"] == "imbalance").any() else [])
    keys = rows[SETTING_COLUMNS].astype(object).where(rows[SETTING_COLUMNS].notna(), "")
    summary = []

    for _, idx in keys.groupby(SETTING_COLUMNS, sort=False).groups.items():
        group = rows.loc[idx]
        values = group[METRIC_COLUMNS].apply(pd.to_numeric, errors="coerce")
        for stat in stats:
            row = {c: None for c in RESULT_COLUMNS}
            row.update({c: group.iloc[0][c] for c in SETTING_COLUMNS})
            row["row_type"] = stat
            if stat == "std":
                agg = values.apply(lambda v: float(np.std(v.dropna())) if v.notna().any() else None)
            else:
                agg = getattr(values, stat)()
            row.update({c: (None if pd.isna(agg[c]) else float(agg[c])) for c in METRIC_COLUMNS})
            summary.append(row)

    return pd.concat([rows, pd.DataFrame(summary, columns=RESULT_COLUMNS)], ignore_index=True)


def _typed(table: pd.DataFrame):
    table = table.copy()
    for c in METRIC_COLUMNS + ["ratio"]:
        table[c] = pd.to_numeric(table[c], errors="coerce").astype(float)
    for c in ("k", "iterations", "trial", "seed"):
        table[c] = pd.to_numeric(table[c], errors="coerce").astype("Int64")

    return table


def default_plot_specs(ec: ExperimentConfig):
    """Plots written for each experiment kind, as (file stem, csv name, spec)."""
    P = plotting.PlotSpec
    if ec.kind == "strategies":
        return [("accuracy_by_strategy", "results.csv", P(x="variant", y=("accuracy",), categorical=True, title="Labeling strategies"))]
    if ec.kind == "imbalance":
        return [
            ("kl_by_trial", "results.csv", P(x="trial", y=("kl_id", "kl_ood"), ylabel="KL to uniform", title="ID vs OOD imbalance")),
            ("ratio_by_trial", "results.csv", P(x="trial", y=("r_id", "r_ood"), ylabel="majority / minority", logy=True)),
        ]
    if ec.kind == "sweep":
        return [("accuracy_vs_ratio", "results.csv", P(x="ratio", y=("accuracy",), series="variant", xlabel="mismatch ratio"))]
    if ec.kind == "ablation":
        return [
            ("accuracy_by_variant", "results.csv", P(x="variant", y=("accuracy",), categorical=True)),
            ("ood_as_id_over_epochs", "curves.csv", P(x="epoch", y=("ood_as_id_prop",), series="variant", ylabel="OOD labeled as ID")),
            ("accuracy_over_epochs", "curves.csv", P(x="epoch", y=("accuracy",), series="variant")),
        ]
    if ec.kind == "ksweep":
        return [("accuracy_vs_k", "results.csv", P(x="k", y=("accuracy",), series="variant", xlabel="extra classes K"))]

    specs = [
        ("violation_vs_iterations", "results.csv", P(x="iterations", y=("marginal_violation",), logx=True, logy=True)),
        ("runtime_vs_iterations", "timing.csv", P(x="iterations", y=("runtime_s",), logx=True)),
    ]
    if ec.bench_accuracy:
        specs.append(("accuracy_vs_iterations", "results.csv", P(x="iterations", y=("accuracy",), logx=True)))

    return specs


def _write_plots(ec, out_dir):
    written = []
    for stem, csv_name, spec in default_plot_specs(ec):
        csv_path = os.path.join(out_dir, csv_name)
        if not os.path.isfile(csv_path):
            continue
        try:
            written.append(plotting.plot(csv_path, spec, os.path.join(out_dir, "plots", stem + ".svg")))
        except plotting.PlotError as ex:
            print(f"Skipping plot {stem}: {ex}", flush=True)

    return written


def _versions():
    import matplotlib
    import scipy
    import sklearn

    return {"numpy": np.__version__, "scipy": scipy.__version__, "scikit-learn": sklearn.__version__, "pandas": pd.__version__, "matplotlib": matplotlib.__version__}


def _write_manifest(ec, config_path, out_dir, cells, artifacts, db_session=None):
    manifest = {
        "kind": ec.kind,
        "config_path": os.path.abspath(config_path),
        "config_hash": utils.file_hash(config_path),
        "inputs": {os.path.basename(config_path): utils.file_hash(config_path)},
        "resolved_config": ec.as_dict(),
        "final_accuracy": f"mean test accuracy over the last {ec.train.last_epochs_fraction:.0%} of epochs",
        "std": "population standard deviation over seeds",
        "cells": [{"key": c.key, "seed": c.seed} for c in cells],
        "artifacts": sorted(os.path.relpath(a, out_dir) for a in artifacts),
        "versions": _versions(),
        "created": datetime.datetime.now().isoformat(timespec="seconds"),
    }
    if ec.kind == "sinkhorn_bench":
        manifest["nondeterministic_files"] = ["timing.csv"]
    if db_session:
        manifest["db_session"] = db_session

    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, default=str)


def _import_results(db_path, csv_path, ec, config_path):
    sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from db import ExperimentResultsDB

    stem = os.path.splitext(os.path.basename(config_path))[0]
    session = f"{ec.kind}_{stem}_{datetime.datetime.now().strftime('%Y%m%d_%H%M%S')}"
    status = ExperimentResultsDB(db_path).import_results_csv(csv_path, session, ec.kind)

    return session, status


def run(config_path: str, workers: int = None, out: str = None, db: str = None, verbose: bool = True):
    """Runs an experiment and writes its artifacts.

    Writes results.csv (seed rows plus mean/std rows), curves.csv for
    training kinds, timing.csv for sinkhorn_bench, confusion/<cell>.csv
    when requested, plots/*.svg and manifest.json into the output directory.

    Returns:
        0 on success, 1 on a config violation, 2 on a runtime failure.
    """
    try:
        ec = load_experiment_config(config_path)
    except ExperimentConfigError as ex:
        print(f"Config error: {ex}", flush=True)
        return 1

    out_dir = out or ec.output
    try:
        os.makedirs(out_dir, exist_ok=True)
        marker = os.path.join(out_dir, ".write_test")
        open(marker, "w").close()
        os.remove(marker)
    except OSError as ex:
        print(f"Config error: experiment.output: {out_dir} is not writable ({ex})", flush=True)
        return 1

    cfg.ERROR_LOG_FILE = os.path.join(out_dir, os.path.basename(cfg.ERROR_LOG_FILE))
    utils.clearErrorLog()

    cells = build_cells(ec)
    workers = utils.capped_workers(cfg.CPU_THREADS if workers is None else workers)

    # Add config items to each cell, workers restore it
    items = [(c, ec, cfg.getConfig()) for c in cells]

    if verbose:
        print(f"Running {len(cells)} {ec.kind} cells with {workers} worker(s)...", flush=True)

    if workers < 2 or len(items) < 2:
        results = [runCell(item) for item in tqdm(items, disable=not verbose)]
    else:
        with Pool(workers, initializer=utils.limit_blas_threads, initargs=(1,)) as p:
            results = list(tqdm(p.imap_unordered(runCell, items), total=len(items), disable=not verbose))

    results.sort(key=lambda r: r[0])
    failed = [r for r in results if r[2] is not None]
    if failed:
        key, _, err = failed[0]
        print(f"Error: experiment cell {key} failed: {err} (see {cfg.ERROR_LOG_FILE})", flush=True)
        return 2

    try:
        rows = pd.DataFrame([row for _, payload, _ in results for row in payload["rows"]], columns=RESULT_COLUMNS)
        table = _typed(summarize(rows))
        csv_path = os.path.join(out_dir, "results.csv")
        table.to_csv(csv_path, index=False, float_format="%.8g")
        artifacts = [csv_path]

        curves = [payload["curves"] for _, payload, _ in results if "curves" in payload]
        if curves:
            curves_path = os.path.join(out_dir, "curves.csv")
            pd.concat(curves, ignore_index=True).to_csv(curves_path, index=False, float_format="%.8g")
            artifacts.append(curves_path)

        timing = [payload["timing"] for _, payload, _ in results if "timing" in payload]
        if timing:
            timing_path = os.path.join(out_dir, "timing.csv")
            pd.DataFrame(timing, columns=TIMING_COLUMNS).to_csv(timing_path, index=False, float_format="%.8g")
            artifacts.append(timing_path)

        for key, payload, _ in results:
            if "confusion" in payload:
                path = os.path.join(out_dir, "confusion", key.replace("/", "__") + ".csv")
                os.makedirs(os.path.dirname(path), exist_ok=True)
                payload["confusion"].to_csv(path)
                artifacts.append(path)

        artifacts += _write_plots(ec, out_dir)

        session = None
        if db:
            session, status = _import_results(db, csv_path, ec, config_path)
            if not status["success"]:
                print(f"Error: results store: {status['error']}", flush=True)
                return 2
            if verbose:
                print(f"Imported {status['rows_imported']} rows into session {session}", flush=True)

        _write_manifest(ec, config_path, out_dir, cells, artifacts, session)

    except Exception as ex:
        print(f"Error: cannot write results to {out_dir}.\n", flush=True)
        utils.writeErrorLog(ex)
        return 2

    if verbose:
        print(f"...Done. Results in {out_dir}", flush=True)

    return 0


def plot_command(csv_path: str, spec_path: str, out_path: str):
    try:
        plotting.plot(csv_path, plotting.load_plot_spec(spec_path), out_path)
    except plotting.PlotError as ex:
        print(f"Plot error: {ex}", flush=True)
        return 1

    print(f"Wrote {out_path}", flush=True)

    return 0


def build_parser():
    parser = argparse.ArgumentParser(description="Run class-mismatched semi-supervised learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Run an experiment config.")
    p_run.add_argument("--config", required=True, help="Path to the experiment config (INI).")
    p_run.add_argument("--workers", type=int, default=None, help="Number of worker processes. Defaults to {}.".format(cfg.CPU_THREADS))
    p_run.add_argument("--out", default=None, help="Output directory. Defaults to experiment.output of the config.")
    p_run.add_argument("--db", default=None, help="Import results.csv into this sqlite results store.")

    p_plot = sub.add_parser("plot", help="Plot a results CSV.")
    p_plot.add_argument("--csv", required=True, help="Path to a results or curves CSV.")
    p_plot.add_argument("--spec", required=True, help="Path to the plot spec (INI with a [plot] section).")
    p_plot.add_argument("--out", required=True, help="Path of the SVG file.")

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.command == "run":
        return run(args.config, args.workers, args.out, args.db)

    return plot_command(args.csv, args.spec, args.out)


if __name__ == "__main__":
    # Freeze support for executable
    freeze_support()

    sys.exit(main())

    # A few examples to test
    # python3 experiment.py run --config experiments/sweep.ini --workers 4 --out results/sweep
    # python3 experiment.py plot --csv results/sweep/results.csv --spec experiments/plot_sweep.ini --out sweep.svg
