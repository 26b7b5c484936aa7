"""Command line interface.

Subcommands: generate, calibrate, observability, experiment, report.
Exit codes: 0 success, 1 execution failure (IK budget, failed cells),
2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .dataset import (
    DEFAULT_WORKSPACE_BOX,
    DatasetFormatError,
    GenerationError,
    NoiseSpec,
    apply_noise,
    generate,
    load,
    save,
    split,
)
from .experiment import ConfigError, aggregate, load_config, run_experiment
from .kinematics import default_model, load_model, model_hash
from .observability import analyze
from .optimizer import SolverSettings, solve_subset
from .parameters import parse_mask_spec, perturb
from .residuals import ChainCombo, combo_names


def _load_truth(path):
    return load_model(path) if path else default_model()


def _checked_dataset(path, model):
    dataset = load(path)
    if dataset.model_hash != model_hash(model):
        raise ConfigError(
            f"{path} was generated from a different model "
            f"(hash {dataset.model_hash[:12]}..)"
        )
    return dataset


def _cmd_generate(args) -> int:
    model = _load_truth(args.model)
    box = DEFAULT_WORKSPACE_BOX
    if args.box is not None:
        b = args.box
        box = ((b[0], b[1]), (b[2], b[3]), (b[4], b[5]))
    dataset = generate(model, args.count, box=box, seed=args.seed)
    noise = NoiseSpec(args.sigma_touch, args.sigma_camera)
    if not noise.clean:
        dataset = apply_noise(dataset, noise, np.random.default_rng((args.seed, (1 << 32) + 1)))
    save(dataset, args.out)
    print(f"wrote {len(dataset)} poses to {args.out} "
          f"(seed {args.seed}, sigma_touch {noise.sigma_touch_mm} mm, "
          f"sigma_camera {noise.sigma_camera_px} px)")
    return 0


def _cmd_calibrate(args) -> int:
    truth = _load_truth(args.model)
    dataset = _checked_dataset(args.dataset, truth)
    mask = parse_mask_spec(args.mask)
    combo = ChainCombo.from_name(args.combo)
    train_idx, test_idx = split(len(dataset), args.poses, args.test_poses, args.seed)

    rng = np.random.default_rng(args.seed)
    train = dataset.subset(train_idx)
    noise = NoiseSpec(args.sigma_touch, args.sigma_camera)
    if not noise.clean:
        train = apply_noise(train, noise, rng)
    start = perturb(truth, mask, args.pert, rng)

    settings = SolverSettings()
    if args.max_iterations is not None:
        settings = replace(settings, max_iterations=args.max_iterations)
    if args.damping_decrease is not None:
        settings = replace(settings, damping_decrease=args.damping_decrease)
    result = solve_subset(
        start, mask, train.samples, combo, settings,
        truth_model=truth,
        test_samples=dataset.subset(test_idx).samples if args.test_poses else None,
        mu_frozen=args.freeze_mu,
    )
    r = result.solve_report
    print(f"combo {combo.label}, mask {args.mask} ({mask.free_count} free), "
          f"{args.poses} poses, perturbation {args.pert:g}")
    print(f"cost {r.initial_cost:.6g} -> {r.final_cost:.6g} "
          f"in {r.iterations} iterations ({r.termination})")
    obs = result.observability
    print(f"observability o1 {obs.o1:.6g}, o4 {obs.o4:.6g}, "
          f"rank {obs.rank}/{obs.free_count}")
    if result.test_ee_mm is not None:
        t = result.test_ee_mm
        print(f"test end-effector error {t.mean_mm:.6g} mm "
              f"(std {t.std_mm:.6g}, n {t.values_mm.shape[0]})")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(result.to_dict(), f, indent=1)
        print(f"wrote {args.out}")
    return 0


def _cmd_observability(args) -> int:
    truth = _load_truth(args.model)
    dataset = _checked_dataset(args.dataset, truth)
    mask = parse_mask_spec(args.mask)
    combo = ChainCombo.from_name(args.combo)
    train_idx, _ = split(len(dataset), args.poses, 0, args.seed)

    rng = np.random.default_rng(args.seed)
    model = truth if args.at_truth else perturb(truth, mask, args.pert, rng)
    report = analyze(model, mask, [dataset.samples[i] for i in train_idx], combo,
                     evaluated_at="truth" if args.at_truth else "initial")
    print(f"combo {combo.label}, mask {args.mask} ({mask.free_count} free), "
          f"{args.poses} poses, at {report.evaluated_at}")
    print(f"o1 {report.o1:.6g}")
    print(f"o4 {report.o4:.6g}")
    print(f"rank {report.rank}/{report.free_count}"
          + (" (rank deficient)" if report.rank_deficient else ""))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report.to_dict(), f, indent=1)
        print(f"wrote {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    config = load_config(args.config)
    summary = run_experiment(config, args.out, jobs=args.jobs)
    print(f"experiment {summary['name']}: {summary['cells_total']} cells, "
          f"{summary['cells_reused']} reused, {summary['cells_run']} run, "
          f"{len(summary['failures'])} failed")
    for failure in summary["failures"]:
        print(f"  FAILED {failure['cell']}: {failure['error']}", file=sys.stderr)
    return 1 if summary["failures"] else 0


def _cmd_report(args) -> int:
    info = aggregate(args.out)
    print(f"aggregated {info['cells_found']}/{info['cells_expected']} cells")
    for table in info["tables"]:
        print(f"  {table}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaincal",
        description="multi-chain kinematic self-calibration toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a self-touch pose dataset")
    p.add_argument("--count", type=int, required=True, help="number of poses")
    p.add_argument("--box", type=float, nargs=6, metavar=("XLO", "XHI", "YLO", "YHI", "ZLO", "ZHI"),
                   help="target box in Root frame, mm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-touch", type=float, default=0.0, help="touch noise std, mm")
    p.add_argument("--sigma-camera", type=float, default=0.0, help="pixel noise std, px")
    p.add_argument("--model", help="ground-truth model JSON (default: bundled)")
    p.add_argument("--out", required=True, help="output dataset path (JSON lines)")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("calibrate", help="run one calibration")
    p.add_argument("--combo", required=True, choices=list(combo_names()))
    p.add_argument("--mask", default="LA:all", help='mask spec "<chains>:<fields>"')
    p.add_argument("--poses", type=int, default=50, help="training poses")
    p.add_argument("--test-poses", type=int, default=100, help="held-out poses (0 disables)")
    p.add_argument("--pert", type=float, default=5.0, help="perturbation factor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-touch", type=float, default=0.0)
    p.add_argument("--sigma-camera", type=float, default=0.0)
    p.add_argument("--model", help="ground-truth model JSON (default: bundled)")
    p.add_argument("--dataset", required=True, help="dataset from the generate command")
    p.add_argument("--max-iterations", type=int, default=None,
                   help="solver iteration budget (default: solver's own)")
    p.add_argument("--damping-decrease", type=float, default=None,
                   help="damping shrink factor on accepted steps")
    p.add_argument("--freeze-mu", action="store_true",
                   help="fix touch weights at the initial estimate")
    p.add_argument("--out", help="write the full result record as JSON")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("observability", help="observability indices of a configuration")
    p.add_argument("--combo", required=True, choices=list(combo_names()))
    p.add_argument("--mask", default="LA:all")
    p.add_argument("--poses", type=int, default=50)
    p.add_argument("--pert", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--at-truth", action="store_true",
                   help="evaluate at ground truth instead of the perturbed start")
    p.add_argument("--model", help="ground-truth model JSON (default: bundled)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=_cmd_observability)

    p = sub.add_parser("experiment", help="run a configured sweep")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel workers (default: CHAINCAL_JOBS or 1)")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("report", help="rebuild CSV tables from a run directory")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except GenerationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
