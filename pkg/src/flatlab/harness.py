"""Experiment driver: configs, multi-seed sweeps, aggregation and reports.

A sweep trains every selected flat mode over its hyperparameter grid for
every seed, selects per-mode hyperparameters on the validation split,
reads the test metric once per mode for the selected setting, and emits
deterministic CSV artifacts (results.csv, per-grid validation means, a
summary table with the standard-error overlap rule applied).
"""

from __future__ import annotations

import csv
import hashlib
import json
import shutil
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import landscape, models
from .data import Dataset, generate, load_idx
from .errors import ConfigError
from .models import Model
from .optimizers import FLAT_MODES, OptimizerConfig, run_training, swa_start_epoch
from .params import ParameterVector, load_checkpoint, save_checkpoint
from .rng import RngStream

MODE_ORDER = ("baseline", "swa", "sam", "wasam")
RHO_GRID_DEFAULT = (0.01, 0.02, 0.05, 0.1, 0.2)
SWA_START_GRID_DEFAULT = (0.5, 0.6, 0.75, 0.9)
SCHEMA_VERSION = 1

RESULTS_CSV_HEADER = ("mode", "rho", "swa_start_frac", "seed", "split", "metric", "loss", "diverged")
SUMMARY_CSV_HEADER = (
    "mode",
    "rho",
    "swa_start_frac",
    "n_seeds",
    "n_diverged",
    "test_mean",
    "test_stderr",
    "delta_vs_baseline",
    "best",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if not np.isfinite(x):
        return ""
    return repr(x)


def _parse_optimizer(section: dict) -> tuple[OptimizerConfig, dict]:
    """Split an optimizer config section into base settings and run extras.

    The section may carry the per-run keys rho, swa_start_frac, swa_freq
    and seed next to the base-optimizer keys; those are returned separately.
    """
    section = dict(section)
    extras = {k: section.pop(k) for k in ("rho", "swa_start_frac", "swa_freq", "seed") if k in section}
    known = set(OptimizerConfig.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown optimizer keys {sorted(unknown)}")
    config = OptimizerConfig(**section)
    config.validate()
    return config, extras


def build_dataset(data_cfg: dict) -> Dataset:
    """Build the dataset named by a config section."""
    cfg = dict(data_cfg)
    kind = cfg.pop("kind", None)
    if kind is None:
        raise ConfigError("data section needs a 'kind'")
    if kind == "idx":
        try:
            images, labels = cfg.pop("images"), cfg.pop("labels")
        except KeyError:
            raise ConfigError("idx data needs 'images' and 'labels' paths") from None
        split_seed = cfg.pop("split_seed", 0)
        if cfg:
            raise ConfigError(f"unknown data keys {sorted(cfg)}")
        return load_idx(images, labels, split_seed=split_seed)
    n = cfg.pop("n", 200)
    noise = cfg.pop("noise", 0.1)
    seed = cfg.pop("seed", 0)
    if cfg:
        raise ConfigError(f"unknown data keys {sorted(cfg)}")
    return generate(kind, n=n, noise=noise, seed=seed)


def build_model_for(model_spec: str, metric: str, dataset: Dataset, seed: int) -> tuple[Model, ParameterVector]:
    """Model plus seeded initial parameters, checked against the dataset."""
    model, params0 = models.build_model(
        model_spec,
        RngStream(seed).split("init"),
        input_dim=dataset.dim,
        n_classes=dataset.n_classes,
        metric=metric,
    )
    if model.input_dim != dataset.dim:
        raise ConfigError(
            f"model input dim {model.input_dim} does not match dataset dim {dataset.dim}"
        )
    if model.n_classes < dataset.n_classes:
        raise ConfigError("model has fewer classes than the dataset")
    return model, params0


@dataclass
class RunConfig:
    """One training run, as read from a JSON config file."""

    model: str
    data: dict
    optimizer: OptimizerConfig
    mode: str = "baseline"
    rho: float = 0.0
    swa_start_frac: float = 0.75
    swa_freq: int | None = None
    seed: int = 0
    metric: str = "accuracy"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        version = raw.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {version}")
        try:
            model = raw.pop("model")
            data = raw.pop("data")
            optimizer = raw.pop("optimizer")
        except KeyError as exc:
            raise ConfigError(f"config is missing the {exc.args[0]!r} section") from None
        config, extras = _parse_optimizer(optimizer)
        mode = raw.pop("mode", "baseline")
        metric = raw.pop("metric", "accuracy")
        if raw:
            raise ConfigError(f"unknown config keys {sorted(raw)}")
        if mode not in FLAT_MODES:
            raise ConfigError(f"unknown mode {mode!r}; known: {FLAT_MODES}")
        run = cls(
            model=model,
            data=data,
            optimizer=config,
            mode=mode,
            rho=float(extras.get("rho", 0.0)),
            swa_start_frac=float(extras.get("swa_start_frac", 0.75)),
            swa_freq=extras.get("swa_freq"),
            seed=int(extras.get("seed", 0)),
            metric=metric,
        )
        if run.mode in ("swa", "wasam"):
            swa_start_epoch(run.swa_start_frac, config.epochs)
        return run


@dataclass
class ExperimentConfig:
    """A full sweep: modes x hyperparameter grids x seeds."""

    model: str
    data: dict
    optimizer: OptimizerConfig
    modes: tuple[str, ...] = MODE_ORDER
    seeds: tuple[int, ...] = (1, 2, 3)
    rho_grid: tuple[float, ...] = RHO_GRID_DEFAULT
    swa_start_grid: tuple[float, ...] = SWA_START_GRID_DEFAULT
    swa_freq: int | None = None
    metric: str = "accuracy"

    def validate(self) -> None:
        self.optimizer.validate()
        if not self.modes:
            raise ConfigError("no modes selected")
        unknown = [m for m in self.modes if m not in FLAT_MODES]
        if unknown:
            raise ConfigError(f"unknown modes {unknown}; known: {FLAT_MODES}")
        if len(set(self.modes)) != len(self.modes):
            raise ConfigError("duplicate modes")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if any(m in self.modes for m in ("sam", "wasam")) and not self.rho_grid:
            raise ConfigError("rho grid is empty but a perturbation mode is selected")
        if any(m in self.modes for m in ("swa", "wasam")):
            if not self.swa_start_grid:
                raise ConfigError("averaging-start grid is empty but an averaging mode is selected")
            for frac in self.swa_start_grid:
                swa_start_epoch(frac, self.optimizer.epochs)
        if any(r < 0 for r in self.rho_grid):
            raise ConfigError("rho must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        version = raw.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {version}")
        try:
            model = raw.pop("model")
            data = raw.pop("data")
            optimizer = raw.pop("optimizer")
        except KeyError as exc:
            raise ConfigError(f"config is missing the {exc.args[0]!r} section") from None
        config, extras = _parse_optimizer(optimizer)
        if extras:
            raise ConfigError(
                f"per-run optimizer keys {sorted(extras)} do not belong in a sweep config"
            )
        known = {"modes", "seeds", "rho_grid", "swa_start_grid", "swa_freq", "metric"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        exp = cls(
            model=model,
            data=data,
            optimizer=config,
            modes=tuple(raw.get("modes", MODE_ORDER)),
            seeds=tuple(int(s) for s in raw.get("seeds", (1, 2, 3))),
            rho_grid=tuple(float(r) for r in raw.get("rho_grid", RHO_GRID_DEFAULT)),
            swa_start_grid=tuple(float(f) for f in raw.get("swa_start_grid", SWA_START_GRID_DEFAULT)),
            swa_freq=raw.get("swa_freq"),
            metric=raw.get("metric", "accuracy"),
        )
        exp.validate()
        return exp

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model,
            "data": dict(self.data),
            "optimizer": {
                k: getattr(self.optimizer, k) for k in OptimizerConfig.__dataclass_fields__
            },
            "modes": list(self.modes),
            "seeds": list(self.seeds),
            "rho_grid": list(self.rho_grid),
            "swa_start_grid": list(self.swa_start_grid),
            "swa_freq": self.swa_freq,
            "metric": self.metric,
        }


def load_config(path, overrides: list[str] | None = None) -> dict:
    """Read a JSON config file and apply ``key.path=value`` overrides."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        keys = dotted.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {dotted!r}: {key!r} is not a section")
        node[keys[-1]] = value
    return raw


@dataclass
class RunRecord:
    """Outcome of one (mode, grid point, seed) training run."""

    mode: str
    rho: float | None
    swa_start_frac: float | None
    seed: int
    diverged: bool
    val_loss: float
    val_metric: float
    theta0_sha: str
    checkpoint: str
    averaging_events: int
    grad_evals: int
    steps: int
    test_loss: float | None = None
    test_metric: float | None = None


@dataclass
class ModeSummary:
    mode: str
    rho: float | None
    swa_start_frac: float | None
    n_seeds: int
    n_diverged: int
    mean: float
    stderr: float
    per_seed: tuple[float, ...]
    delta: float | None = None
    best: bool = False


@dataclass
class ResultTable:
    rows: list[ModeSummary] = field(default_factory=list)

    def row(self, mode: str) -> ModeSummary:
        for r in self.rows:
            if r.mode == mode:
                return r
        raise KeyError(mode)


@dataclass
class ExperimentResult:
    out_dir: Path
    table: ResultTable
    records: list[RunRecord]
    n_diverged: int
    all_diverged: bool


def _mode_grid(config: ExperimentConfig, mode: str) -> list[tuple[float | None, float | None]]:
    if mode == "baseline":
        return [(None, None)]
    if mode == "swa":
        return [(None, f) for f in config.swa_start_grid]
    if mode == "sam":
        return [(r, None) for r in config.rho_grid]
    return [(r, f) for r in config.rho_grid for f in config.swa_start_grid]


def _checkpoint_name(mode: str, rho, frac, seed: int) -> str:
    parts = [mode]
    if rho is not None:
        parts.append(f"rho{rho}")
    if frac is not None:
        parts.append(f"start{frac}")
    parts.append(f"seed{seed}")
    return "_".join(parts) + ".fltl"


def evaluate_solution(model: Model, params: ParameterVector, dataset: Dataset, split: str) -> tuple[float, float]:
    """Evaluate a solution on one split, refreshing batch-norm statistics."""
    if model.has_batch_norm:
        models.recompute_bn_stats(model, params, dataset)
    return models.evaluate(model, params, dataset, split)


def _execute_run(payload: dict) -> dict:
    """Train one (mode, grid point, seed) run; used by the worker pool."""
    config = ExperimentConfig.from_dict(payload["config"])
    mode, rho, frac, seed = payload["mode"], payload["rho"], payload["frac"], payload["seed"]
    out_dir = Path(payload["out_dir"])

    dataset = build_dataset(config.data)
    model, params0 = build_model_for(config.model, config.metric, dataset, seed)
    theta0_sha = hashlib.sha256(params0.values.tobytes()).hexdigest()
    result = run_training(
        model,
        params0,
        dataset,
        config.optimizer,
        mode=mode,
        rho=rho if rho is not None else 0.0,
        swa_start_frac=frac if frac is not None else 0.75,
        swa_freq=config.swa_freq,
        rng=RngStream(seed).split("train"),
    )
    solution = result.averaged if mode in ("swa", "wasam") and result.averaged is not None else result.final
    diverged = result.diverged or (mode in ("swa", "wasam") and result.averaged is None)
    if diverged:
        val_loss = val_metric = float("nan")
    else:
        val_loss, val_metric = evaluate_solution(model, solution, dataset, "val")
    name = _checkpoint_name(mode, rho, frac, seed)
    save_checkpoint(solution, out_dir / "checkpoints" / name)
    return {
        "mode": mode,
        "rho": rho,
        "frac": frac,
        "seed": seed,
        "diverged": diverged,
        "val_loss": val_loss,
        "val_metric": val_metric,
        "theta0_sha": theta0_sha,
        "checkpoint": f"checkpoints/{name}",
        "averaging_events": result.averaging_events,
        "grad_evals": result.grad_evals,
        "steps": result.steps,
    }


def _selection_score(record: RunRecord) -> float:
    if np.isfinite(record.val_metric):
        return record.val_metric
    return -record.val_loss  # metric-free models fall back to validation loss


def _stderr(values: np.ndarray) -> float:
    if values.size <= 1:
        warnings.warn("standard error over a single seed is reported as 0", stacklevel=2)
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def run_experiment(config: ExperimentConfig, out_dir, workers: int = 1) -> ExperimentResult:
    """Execute a full sweep and write all result artifacts under ``out_dir``.

    Runs are independent across (seed, mode, grid point) and may execute in
    a process pool; outputs are collected and sorted so every artifact is
    byte-identical across reruns regardless of scheduling.
    """
    config.validate()
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    config_dict = config.to_dict()
    payloads = [
        {"config": config_dict, "mode": mode, "rho": rho, "frac": frac, "seed": seed, "out_dir": str(out_dir)}
        for mode in MODE_ORDER
        if mode in config.modes
        for (rho, frac) in _mode_grid(config, mode)
        for seed in config.seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw_records = list(pool.map(_execute_run, payloads))
    else:
        raw_records = [_execute_run(p) for p in payloads]

    records = [
        RunRecord(
            mode=r["mode"],
            rho=r["rho"],
            swa_start_frac=r["frac"],
            seed=r["seed"],
            diverged=r["diverged"],
            val_loss=r["val_loss"],
            val_metric=r["val_metric"],
            theta0_sha=r["theta0_sha"],
            checkpoint=r["checkpoint"],
            averaging_events=r["averaging_events"],
            grad_evals=r["grad_evals"],
            steps=r["steps"],
        )
        for r in raw_records
    ]

    # Per-seed initialization sharing across modes is an invariant, not a
    # hope: verify it from the recorded fingerprints.
    by_seed: dict[int, set[str]] = {}
    for r in records:
        by_seed.setdefault(r.seed, set()).add(r.theta0_sha)
    for seed, shas in by_seed.items():
        if len(shas) != 1:
            raise RuntimeError(f"seed {seed} produced different initializations across runs")

    n_diverged = sum(r.diverged for r in records)
    all_diverged = n_diverged == len(records)

    # Validation-based selection, then a single test read per mode.
    dataset = build_dataset(config.data)
    selected: dict[str, tuple[float | None, float | None]] = {}
    for mode in (m for m in MODE_ORDER if m in config.modes):
        best_point, best_score = None, -np.inf
        for point in _mode_grid(config, mode):
            live = [
                r
                for r in records
                if (r.mode, r.rho, r.swa_start_frac) == (mode, *point) and not r.diverged
            ]
            if not live:
                continue
            score = float(np.mean([_selection_score(r) for r in live]))
            if score > best_score:
                best_point, best_score = point, score
        if best_point is None:
            continue
        selected[mode] = best_point
        for record in records:
            if (record.mode, record.rho, record.swa_start_frac) == (mode, *best_point) and not record.diverged:
                model, _ = build_model_for(config.model, config.metric, dataset, record.seed)
                params = load_checkpoint(out_dir / record.checkpoint)
                test_loss, test_metric = evaluate_solution(model, params, dataset, "test")
                record.test_loss, record.test_metric = test_loss, test_metric
                shutil.copyfile(
                    out_dir / record.checkpoint,
                    out_dir / "checkpoints" / f"selected_{mode}_seed{record.seed}.fltl",
                )

    _write_results_csv(records, out_dir / "results.csv")
    _write_grid_means(records, out_dir / "grid_val_means.csv")
    if "wasam" in config.modes:
        _write_wasam_marginals(records, out_dir / "wasam_marginals.csv")

    table = _tabulate(records)
    _write_summary(table, n_diverged, out_dir)
    return ExperimentResult(out_dir, table, records, n_diverged, all_diverged)


def _sort_key(r: RunRecord):
    return (
        MODE_ORDER.index(r.mode),
        -1.0 if r.rho is None else r.rho,
        -1.0 if r.swa_start_frac is None else r.swa_start_frac,
        r.seed,
    )


def _write_results_csv(records: list[RunRecord], path) -> None:
    rows = []
    for r in sorted(records, key=_sort_key):
        rows.append(
            [r.mode, _fmt(r.rho), _fmt(r.swa_start_frac), r.seed, "val", _fmt(r.val_metric), _fmt(r.val_loss), int(r.diverged)]
        )
    for r in sorted(records, key=_sort_key):
        if r.test_metric is not None:
            rows.append(
                [r.mode, _fmt(r.rho), _fmt(r.swa_start_frac), r.seed, "test", _fmt(r.test_metric), _fmt(r.test_loss), int(r.diverged)]
            )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_CSV_HEADER)
        writer.writerows(rows)


def _write_grid_means(records: list[RunRecord], path) -> None:
    """Mean validation metric per (mode, grid point) over non-diverged seeds."""
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.mode, r.rho, r.swa_start_frac), []).append(r)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("mode", "rho", "swa_start_frac", "n_seeds", "mean_val_metric"))
        for key in sorted(groups, key=lambda k: (MODE_ORDER.index(k[0]), -1.0 if k[1] is None else k[1], -1.0 if k[2] is None else k[2])):
            live = [r for r in groups[key] if not r.diverged]
            mean = float(np.mean([_selection_score(r) for r in live])) if live else None
            writer.writerow([key[0], _fmt(key[1]), _fmt(key[2]), len(live), _fmt(mean)])


def _write_wasam_marginals(records: list[RunRecord], path) -> None:
    """Validation-metric marginals of the joint (rho, start) search."""
    live = [r for r in records if r.mode == "wasam" and not r.diverged]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("axis", "value", "n_runs", "mean_val_metric"))
        for axis, getter in (("rho", lambda r: r.rho), ("swa_start_frac", lambda r: r.swa_start_frac)):
            values = sorted({getter(r) for r in live})
            for v in values:
                scores = [_selection_score(r) for r in live if getter(r) == v]
                writer.writerow([axis, _fmt(v), len(scores), _fmt(float(np.mean(scores)))])


def _tabulate(records: list[RunRecord]) -> ResultTable:
    """Aggregate per-mode test results and apply the overlap bolding rule."""
    table = ResultTable()
    for mode in MODE_ORDER:
        tested = sorted(
            (r for r in records if r.mode == mode and r.test_metric is not None),
            key=lambda r: r.seed,
        )
        if not tested:
            continue
        values = np.array([r.test_metric for r in tested])
        n_diverged = sum(r.diverged for r in records if r.mode == mode)
        table.rows.append(
            ModeSummary(
                mode=mode,
                rho=tested[0].rho,
                swa_start_frac=tested[0].swa_start_frac,
                n_seeds=values.size,
                n_diverged=n_diverged,
                mean=float(values.mean()),
                stderr=_stderr(values),
                per_seed=tuple(float(v) for v in values),
            )
        )
    if not table.rows:
        return table
    baseline = next((r for r in table.rows if r.mode == "baseline"), None)
    for row in table.rows:
        if baseline is not None and row.mode != "baseline":
            row.delta = row.mean - baseline.mean
    top = max(r.mean for r in table.rows)
    for row in table.rows:
        row.best = row.mean == top or row.mean + row.stderr >= top
    return table


def _write_summary(table: ResultTable, n_diverged: int, out_dir: Path) -> None:
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_CSV_HEADER)
        for r in table.rows:
            writer.writerow(
                [r.mode, _fmt(r.rho), _fmt(r.swa_start_frac), r.n_seeds, r.n_diverged, _fmt(r.mean), _fmt(r.stderr), _fmt(r.delta), int(r.best)]
            )
    lines = ["mode        test metric              selected (rho, start)"]
    for r in table.rows:
        star = " *" if r.best else ""
        if r.mode == "baseline" or r.delta is None:
            value = f"{r.mean:.4f} +/- {r.stderr:.4f}"
        else:
            value = f"{r.delta:+.4f} +/- {r.stderr:.4f} (abs {r.mean:.4f})"
        sel = f"({_fmt(r.rho) or '-'}, {_fmt(r.swa_start_frac) or '-'})"
        lines.append(f"{r.mode:<11} {value:<24} {sel}{star}")
    lines.append("")
    lines.append("* best mean, or mean + stderr reaches the best mean")
    lines.append(f"diverged runs excluded from aggregation: {n_diverged}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")


def report(results_dir) -> ResultTable:
    """Rebuild the summary artifacts from results.csv alone.

    Regenerating from unchanged results is byte-identical; missing or
    empty results are an error rather than an empty report.
    """
    results_dir = Path(results_dir)
    path = results_dir / "results.csv"
    if not path.exists():
        raise ConfigError(f"{path} does not exist")
    records: dict[tuple, RunRecord] = {}
    n_diverged = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != RESULTS_CSV_HEADER:
            raise ConfigError(f"unexpected results.csv header {header}")
        for row in reader:
            mode, rho, frac, seed, split, metric, loss, diverged = row
            key = (mode, rho, frac, int(seed))
            if key not in records:
                records[key] = RunRecord(
                    mode=mode,
                    rho=float(rho) if rho else None,
                    swa_start_frac=float(frac) if frac else None,
                    seed=int(seed),
                    diverged=bool(int(diverged)),
                    val_loss=float("nan"),
                    val_metric=float("nan"),
                    theta0_sha="",
                    checkpoint="",
                    averaging_events=0,
                    grad_evals=0,
                    steps=0,
                )
                if records[key].diverged:
                    n_diverged += 1
            rec = records[key]
            if split == "val":
                rec.val_metric = float(metric) if metric else float("nan")
                rec.val_loss = float(loss) if loss else float("nan")
            elif split == "test":
                rec.test_metric = float(metric) if metric else None
                rec.test_loss = float(loss) if loss else None
    if not records:
        raise ConfigError("results.csv contains no runs")
    table = _tabulate(list(records.values()))
    if not table.rows:
        raise ConfigError("results.csv contains no test rows to summarize")
    _write_summary(table, n_diverged, results_dir)
    return table


def interpolate_checkpoints(
    raw_config: dict,
    ckpt_a,
    ckpt_b,
    out_dir,
    *,
    steps: int = 26,
    alpha_min: float = landscape.DEFAULT_ALPHA_RANGE[0],
    alpha_max: float = landscape.DEFAULT_ALPHA_RANGE[1],
    splits: tuple[str, ...] = ("train", "test"),
    recompute_bn: bool = True,
    barrier_split: str = "train",
) -> tuple[Path, Path]:
    """Interpolate between two checkpoints of the configured model.

    Writes interpolation.csv and barrier.csv under ``out_dir`` and returns
    their paths.
    """
    dataset = build_dataset(_section(raw_config, "data"))
    model, _ = build_model_for(_section(raw_config, "model"), raw_config.get("metric", "accuracy"), dataset, 0)
    theta = _load_compatible(ckpt_a, model)
    theta_prime = _load_compatible(ckpt_b, model)
    evaluate = landscape.model_evaluator(model, dataset, splits=splits, recompute_bn=recompute_bn)
    alphas = landscape.interpolation_alphas(alpha_min, alpha_max, steps)
    grid, barrier = landscape.interpolate(theta, theta_prime, evaluate, alphas=alphas, barrier_split=barrier_split)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_path = out_dir / "interpolation.csv"
    barrier_path = out_dir / "barrier.csv"
    landscape.write_grid_csv(grid, grid_path)
    landscape.write_barrier_csv(barrier, barrier_path)
    return grid_path, barrier_path


def surface_checkpoint(
    raw_config: dict,
    ckpt,
    out_dir,
    *,
    steps: int = landscape.DEFAULT_SURFACE_STEPS,
    value_range: tuple[float, float] = landscape.DEFAULT_SURFACE_RANGE,
    normalization: str = "filter",
    direction_seed: int = 0,
    splits: tuple[str, ...] = ("train", "test"),
    recompute_bn: bool = True,
    crop_alpha: tuple[float, float] | None = None,
    crop_beta: tuple[float, float] | None = None,
) -> Path:
    """Evaluate a random-plane surface around one checkpoint.

    Cropping, when requested, filters the emitted rows only; the evaluation
    grid itself is always the full requested range.
    """
    dataset = build_dataset(_section(raw_config, "data"))
    model, _ = build_model_for(_section(raw_config, "model"), raw_config.get("metric", "accuracy"), dataset, 0)
    center = _load_compatible(ckpt, model)
    pair = landscape.sample_plane(center, RngStream(direction_seed).split("plane"), normalization=normalization)
    evaluate = landscape.model_evaluator(model, dataset, splits=splits, recompute_bn=recompute_bn)
    grid = landscape.surface(center, pair, evaluate, steps=steps, value_range=value_range)
    if crop_alpha or crop_beta:
        grid = landscape.crop_grid(grid, crop_alpha, crop_beta)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "surface.csv"
    landscape.write_grid_csv(grid, path)
    return path


def _section(raw_config: dict, key: str):
    try:
        return raw_config[key]
    except KeyError:
        raise ConfigError(f"config is missing the {key!r} section") from None


def _load_compatible(path, model: Model) -> ParameterVector:
    params = load_checkpoint(path)
    if params.segments != model.segments:
        raise ConfigError(f"checkpoint {path} does not match the configured model")
    return params
