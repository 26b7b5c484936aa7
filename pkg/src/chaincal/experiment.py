"""Experiment grids: config validation, cell execution, CSV aggregation.

An experiment sweeps calibration over the product of chain combos, masks,
perturbation factors, training-set sizes, noise levels, and repetitions.
Each product element is a cell with its own seed derived by hashing the
master seed with the cell coordinates, so results do not depend on
execution order or worker count, and a re-run recomputes only cells whose
JSON is missing or unreadable.

Per-cell RNG consumption order (the determinism contract): training
indices are drawn from the pool first, observation noise second, model
perturbation third, all from one generator seeded by the cell hash.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import jsonschema
import numpy as np

from .dataset import (
    DEFAULT_WORKSPACE_BOX,
    Dataset,
    DatasetFormatError,
    NoiseSpec,
    apply_noise,
    generate,
    load,
    save,
    split,
)
from .kinematics import default_model, load_model, model_hash, save_model
from .metrics import CalibrationResult
from .optimizer import SolverSettings, solve_subset
from .parameters import parse_mask_spec, perturb
from .residuals import ChainCombo, combo_names


class ConfigError(ValueError):
    pass


_SOLVER_FIELDS = (
    "max_iterations", "cost_tolerance", "step_tolerance",
    "initial_damping", "damping_increase", "damping_decrease",
)

CONFIG_SCHEMA = {
    "type": "object",
    "required": [
        "name", "seed", "dataset", "test_poses", "combos", "masks",
        "perturbations", "train_sizes", "noise", "repetitions",
    ],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "pattern": r"^[A-Za-z0-9_.-]+$"},
        "seed": {"type": "integer", "minimum": 0},
        "dataset": {
            "type": "object",
            "required": ["count"],
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "box": {
                    "type": "array", "minItems": 3, "maxItems": 3,
                    "items": {
                        "type": "array", "minItems": 2, "maxItems": 2,
                        "items": {"type": "number"},
                    },
                },
            },
        },
        "test_poses": {"type": "integer", "minimum": 1},
        "combos": {
            "type": "array", "minItems": 1,
            "items": {"type": "string", "enum": list(combo_names())},
        },
        "masks": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "perturbations": {
            "type": "array", "minItems": 1,
            "items": {"type": "number", "minimum": 0},
        },
        "train_sizes": {
            "type": "array", "minItems": 1,
            "items": {"type": "integer", "minimum": 1},
        },
        "noise": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "sigma_touch_mm": {"type": "number", "minimum": 0},
                    "sigma_camera_px": {"type": "number", "minimum": 0},
                },
            },
        },
        "repetitions": {"type": "integer", "minimum": 1},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {f: {"type": "number"} for f in _SOLVER_FIELDS},
        },
        "mu": {"enum": ["live", "frozen"]},
        "observability": {"enum": ["initial", "truth"]},
        "model": {"type": "string"},
    },
}


def validate_config(data) -> None:
    """Raise ConfigError naming the offending path for a bad config."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(data))
    if error is not None:
        raise ConfigError(f"config invalid at {error.json_path}: {error.message}")
    for i, spec in enumerate(data["masks"]):
        try:
            parse_mask_spec(spec)
        except (ValueError, KeyError) as e:
            raise ConfigError(f"config invalid at $.masks[{i}]: {e}") from None
    need = max(data["train_sizes"]) + data["test_poses"]
    have = data["dataset"]["count"]
    if need > have:
        raise ConfigError(
            f"config invalid at $.dataset.count: {have} poses cannot cover "
            f"max train_sizes + test_poses = {need}"
        )


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    dataset_count: int
    dataset_seed: int
    box: tuple
    test_poses: int
    combos: tuple
    masks: tuple                 # mask spec strings
    perturbations: tuple
    train_sizes: tuple
    noises: tuple                # NoiseSpec per level
    repetitions: int
    solver: SolverSettings
    mu_mode: str = "live"        # "frozen" fixes the touch weights at the start
    observe_at: str = "initial"
    model_path: str | None = None

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        validate_config(data)
        ds = data["dataset"]
        box = tuple(tuple(float(v) for v in iv) for iv in ds.get("box", DEFAULT_WORKSPACE_BOX))
        solver = SolverSettings()
        if "solver" in data:
            kw = dict(data["solver"])
            if "max_iterations" in kw:
                kw["max_iterations"] = int(kw["max_iterations"])
            solver = replace(solver, **kw)
        return ExperimentConfig(
            name=data["name"],
            seed=int(data["seed"]),
            dataset_count=int(ds["count"]),
            dataset_seed=int(ds.get("seed", data["seed"])),
            box=box,
            test_poses=int(data["test_poses"]),
            combos=tuple(data["combos"]),
            masks=tuple(data["masks"]),
            perturbations=tuple(float(p) for p in data["perturbations"]),
            train_sizes=tuple(int(s) for s in data["train_sizes"]),
            noises=tuple(
                NoiseSpec(float(n.get("sigma_touch_mm", 0.0)), float(n.get("sigma_camera_px", 0.0)))
                for n in data["noise"]
            ),
            repetitions=int(data["repetitions"]),
            solver=solver,
            mu_mode=data.get("mu", "live"),
            observe_at=data.get("observability", "initial"),
            model_path=data.get("model"),
        )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return ExperimentConfig.from_dict(data)


@dataclass(frozen=True)
class Cell:
    combo: str
    mask: str            # spec string
    pert: float
    train_size: int
    noise: NoiseSpec
    repetition: int

    @property
    def cell_id(self) -> str:
        mask = self.mask.replace(":", "-").replace("+", "_")
        noise = f"t{self.noise.sigma_touch_mm:g}c{self.noise.sigma_camera_px:g}"
        return (
            f"{self.combo}__{mask}__p{self.pert:g}__n{self.train_size}"
            f"__{noise}__r{self.repetition}"
        )

    def to_dict(self) -> dict:
        return {
            "combo": self.combo,
            "mask": self.mask,
            "pert": self.pert,
            "train_size": self.train_size,
            "sigma_touch_mm": self.noise.sigma_touch_mm,
            "sigma_camera_px": self.noise.sigma_camera_px,
            "repetition": self.repetition,
        }


def enumerate_cells(config: ExperimentConfig) -> list:
    return [
        Cell(combo, mask, pert, size, noise, rep)
        for combo, mask, pert, size, noise, rep in itertools.product(
            config.combos, config.masks, config.perturbations,
            config.train_sizes, config.noises, range(config.repetitions),
        )
    ]


def cell_seed(master: int, cell: Cell) -> int:
    """Stable 128-bit seed hashed from the master seed and coordinates."""
    payload = json.dumps([master, cell.to_dict()], sort_keys=True)
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:16], "big")


def _write_json(path: Path, data) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        json.dump(data, f, indent=1)
    os.replace(tmp, path)


@lru_cache(maxsize=4)
def _load_context(out_dir: str):
    """Truth model, clean dataset and split, loaded once per process."""
    out = Path(out_dir)
    model = load_model(out / "model.json")
    dataset = load(out / "dataset.jsonl")
    with open(out / "splits.json") as f:
        splits = json.load(f)
    test_idx = np.array(splits["test"], dtype=int)
    pool = np.array(splits["pool"], dtype=int)
    return model, dataset, test_idx, pool


def run_cell(out_dir: str, cell: Cell, seed: int, solver: SolverSettings,
             observe_at: str, mu_mode: str = "live") -> CalibrationResult:
    """Execute one cell against the materialized run directory."""
    truth, dataset, test_idx, pool = _load_context(out_dir)
    rng = np.random.default_rng(seed)
    train_idx = rng.choice(pool, size=cell.train_size, replace=False)
    train = apply_noise(dataset.subset(train_idx), cell.noise, rng)
    mask = parse_mask_spec(cell.mask)
    start = perturb(truth, mask, cell.pert, rng)
    result = solve_subset(
        start, mask, train.samples, ChainCombo.from_name(cell.combo), solver,
        truth_model=truth,
        test_samples=dataset.subset(test_idx).samples,
        observe_at=observe_at,
        mu_frozen=(mu_mode == "frozen"),
    )
    return result


def _cell_task(args):
    out_dir, cell, seed, solver, observe_at, mu_mode = args
    path = Path(out_dir) / "cells" / f"{cell.cell_id}.json"
    try:
        result = run_cell(out_dir, cell, seed, solver, observe_at, mu_mode)
        record = {"cell": cell.to_dict(), "seed": str(seed), "result": result.to_dict()}
        _write_json(path, record)
        return cell.cell_id, None
    except Exception as e:
        return cell.cell_id, f"{type(e).__name__}: {e}"


def _cell_done(out_dir: Path, cell: Cell) -> bool:
    path = out_dir / "cells" / f"{cell.cell_id}.json"
    if not path.exists():
        return False
    try:
        with open(path) as f:
            record = json.load(f)
        CalibrationResult.from_dict(record["result"])
        return True
    except (json.JSONDecodeError, KeyError, ValueError):
        return False


def _materialize(config: ExperimentConfig, out: Path) -> None:
    """Create or validate the run directory inputs shared by all cells."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "cells").mkdir(exist_ok=True)
    truth = load_model(config.model_path) if config.model_path else default_model()
    hash_ = model_hash(truth)

    model_path = out / "model.json"
    if not model_path.exists():
        save_model(truth, model_path)
    elif model_hash(load_model(model_path)) != hash_:
        raise ConfigError(f"{model_path} does not match the configured model")

    ds_path = out / "dataset.jsonl"
    dataset = None
    if ds_path.exists():
        try:
            dataset = load(ds_path)
        except DatasetFormatError:
            dataset = None
        if dataset is not None and (
            dataset.model_hash != hash_
            or len(dataset) != config.dataset_count
            or dataset.seed != config.dataset_seed
        ):
            dataset = None
    if dataset is None:
        dataset = generate(truth, config.dataset_count, box=config.box,
                           seed=config.dataset_seed)
        save(dataset, ds_path)

    splits_path = out / "splits.json"
    if not splits_path.exists():
        pool, test = split(len(dataset), len(dataset) - config.test_poses,
                           config.test_poses, config.seed)
        _write_json(splits_path, {"test": test.tolist(), "pool": pool.tolist()})

    _write_json(out / "config.json", _config_record(config))


def _config_record(config: ExperimentConfig) -> dict:
    return {
        "name": config.name,
        "seed": config.seed,
        "dataset": {
            "count": config.dataset_count,
            "seed": config.dataset_seed,
            "box": [list(iv) for iv in config.box],
        },
        "test_poses": config.test_poses,
        "combos": list(config.combos),
        "masks": list(config.masks),
        "perturbations": list(config.perturbations),
        "train_sizes": list(config.train_sizes),
        "noise": [
            {"sigma_touch_mm": n.sigma_touch_mm, "sigma_camera_px": n.sigma_camera_px}
            for n in config.noises
        ],
        "repetitions": config.repetitions,
        "solver": {f: getattr(config.solver, f) for f in _SOLVER_FIELDS},
        "mu": config.mu_mode,
        "observability": config.observe_at,
        **({"model": config.model_path} if config.model_path else {}),
    }


def run_experiment(config: ExperimentConfig, out_dir, jobs: int | None = None) -> dict:
    """Run all missing cells of an experiment and aggregate CSVs.

    Returns a summary dict with completed/reused/failed counts; failures
    are per-cell and never abort the sweep. jobs=None consults the
    CHAINCAL_JOBS environment variable and defaults to 1 (inline).
    """
    out = Path(out_dir)
    _materialize(config, out)
    if jobs is None:
        jobs = int(os.environ.get("CHAINCAL_JOBS", "1"))
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")

    cells = enumerate_cells(config)
    pending = [c for c in cells if not _cell_done(out, c)]
    reused = len(cells) - len(pending)
    tasks = [
        (str(out), c, cell_seed(config.seed, c), config.solver,
         config.observe_at, config.mu_mode)
        for c in pending
    ]
    failures = []
    if jobs == 1 or len(tasks) <= 1:
        outcomes = map(_cell_task, tasks)
    else:
        executor = ProcessPoolExecutor(max_workers=jobs)
        outcomes = executor.map(_cell_task, tasks)
    for cell_id, error in outcomes:
        if error is not None:
            failures.append({"cell": cell_id, "error": error})
    if jobs > 1 and len(tasks) > 1:
        executor.shutdown()

    summary = {
        "name": config.name,
        "cells_total": len(cells),
        "cells_reused": reused,
        "cells_run": len(pending) - len(failures),
        "failures": sorted(failures, key=lambda f: f["cell"]),
    }
    _write_json(out / "run_report.json", summary)
    aggregate(out)
    return summary


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


_CELL_COLS = ("combo", "mask", "pert", "train_size", "sigma_touch_mm", "sigma_camera_px")

_LONG_METRICS = (
    "test_ee_mm", "initial_cost", "final_cost", "iterations",
    "o1", "o4", "rank", "behind_camera",
)


def _metric_values(record: dict) -> dict:
    res = record["result"]
    solve = res["solve"]
    obs = res["observability"]
    test = res.get("test_error")
    return {
        "test_ee_mm": None if test is None else test["mean_mm"],
        "initial_cost": solve["initial_cost"],
        "final_cost": solve["final_cost"],
        "iterations": solve["iterations"],
        "o1": obs["o1"],
        "o4": obs["o4"],
        "rank": obs["rank"],
        "behind_camera": solve["behind_camera_count"],
    }


def aggregate(out_dir) -> dict:
    """Rebuild the CSV tables from whatever cells exist on disk.

    Writes results_long.csv (one row per repetition and metric),
    <name>.csv (per-cell-group summary over repetitions) and
    <name>_parameters.csv (per-parameter recovery errors). Rows follow the
    config enumeration order, so repeated aggregation is byte-identical.
    """
    out = Path(out_dir)
    with open(out / "config.json") as f:
        config = ExperimentConfig.from_dict(json.load(f))
    cells = enumerate_cells(config)

    records = {}
    for cell in cells:
        path = out / "cells" / f"{cell.cell_id}.json"
        if not path.exists():
            continue
        try:
            with open(path) as f:
                records[cell.cell_id] = json.load(f)
        except json.JSONDecodeError:
            continue

    long_rows = []
    for cell in cells:
        record = records.get(cell.cell_id)
        if record is None:
            continue
        values = _metric_values(record)
        base = (cell.combo, cell.mask, cell.pert, cell.train_size,
                cell.noise.sigma_touch_mm, cell.noise.sigma_camera_px, cell.repetition)
        for metric in _LONG_METRICS:
            if values[metric] is None:
                continue
            long_rows.append(base + (metric, values[metric]))
    _write_csv(out / "results_long.csv",
               _CELL_COLS + ("repetition", "metric", "value"), long_rows)

    group_rows = []
    param_rows = []
    groups = [c for c in cells if c.repetition == 0]
    for group in groups:
        reps = []
        for rep in range(config.repetitions):
            record = records.get(replace(group, repetition=rep).cell_id)
            if record is not None:
                reps.append(record)
        if not reps:
            continue
        key = (group.combo, group.mask, group.pert, group.train_size,
               group.noise.sigma_touch_mm, group.noise.sigma_camera_px)
        ee = [m["test_ee_mm"] for m in map(_metric_values, reps) if m["test_ee_mm"] is not None]
        vals = [_metric_values(r) for r in reps]
        ee_mean = float(np.mean(ee)) if ee else ""
        ee_std = float(np.std(ee, ddof=1)) if len(ee) > 1 else (0.0 if ee else "")
        group_rows.append(key + (
            len(reps), ee_mean, ee_std,
            float(np.mean([v["o1"] for v in vals])),
            float(np.mean([v["o4"] for v in vals])),
            int(min(v["rank"] for v in vals)),
            float(np.mean([v["final_cost"] for v in vals])),
        ))

        errs = [r["result"].get("parameter_abs_error") for r in reps]
        errs = [np.asarray(e, dtype=float) for e in errs if e is not None]
        if errs:
            free = reps[0]["result"]["mask"]["free"]
            stacked = np.stack(errs)
            mean = stacked.mean(axis=0)
            std = stacked.std(axis=0, ddof=1) if len(errs) > 1 else np.zeros(stacked.shape[1])
            for j, entry in enumerate(free):
                param_rows.append(key + (
                    entry["chain"], entry["link"], entry["field"], mean[j], std[j],
                ))

    _write_csv(out / f"{config.name}.csv",
               _CELL_COLS + ("repetitions", "test_ee_mean_mm", "test_ee_std_mm",
                             "o1_mean", "o4_mean", "rank_min", "final_cost_mean"),
               group_rows)
    _write_csv(out / f"{config.name}_parameters.csv",
               _CELL_COLS + ("chain", "link", "field", "mean_abs_error", "std_error"),
               param_rows)
    return {
        "cells_expected": len(cells),
        "cells_found": len(records),
        "tables": [
            str(out / "results_long.csv"),
            str(out / f"{config.name}.csv"),
            str(out / f"{config.name}_parameters.csv"),
        ],
    }
