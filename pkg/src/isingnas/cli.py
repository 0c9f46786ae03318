"""Command line entry point: ``isingnas <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .coverage import coverage_by_temperature, profile_bounds
from .evolution import evolve
from .lattice import SimulationParams, generate_dataset, read_dataset_csv, temperature_grid, write_dataset_csv
from .mlp import load_model, save_model
from .pipeline import (
    PROFILES,
    PipelineConfig,
    PipelineError,
    analyze,
    load_config,
    read_coverage_csv,
    read_population_manifest,
    run_pipeline,
    split_dataset,
    write_coverage_csv,
    write_evolution_log_csv,
    write_population,
)


def _add_common(p, out_help="output path"):
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--profile", choices=sorted(PROFILES), help="named preset (default: paper)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help=out_help)


def _add_config_flags(p, sections):
    """One ``--section.key`` flag per configuration key in the given sections."""
    for key, f in PipelineConfig.keys().items():
        if f.metadata["section"] in sections and key != "pipeline.out":
            p.add_argument(f"--{key}", dest=key, default=None, metavar=type(f.default).__name__.upper(),
                           help=f.metadata.get("help") or None)


def _config(args, **extra) -> PipelineConfig:
    overrides = {k: v for k, v in vars(args).items() if "." in k and v is not None}
    overrides.update({k: v for k, v in extra.items() if v is not None})
    if args.seed is not None:
        overrides["pipeline.seed"] = args.seed
    return load_config(args.config, args.profile, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isingnas", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate Ising configurations to CSV")
    _add_common(p, "dataset CSV")
    p.add_argument("--size", type=int, dest="simulation.lattice_size")
    p.add_argument("--tmin", type=float, dest="simulation.tmin")
    p.add_argument("--tmax", type=float, dest="simulation.tmax")
    p.add_argument("--tsteps", type=int, dest="simulation.tsteps")
    p.add_argument("--samples", type=int, dest="simulation.samples_per_temperature")
    _add_config_flags(p, {"simulation"})

    p = sub.add_parser("split", help="stratified train/val/test split of a dataset CSV")
    _add_common(p, "output directory")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--sizes", help="train,val,test row counts")
    _add_config_flags(p, {"split"})

    p = sub.add_parser("evolve", help="run the architecture search")
    _add_common(p, "output directory")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--val", type=Path, required=True)
    p.add_argument("--test", type=Path)
    _add_config_flags(p, {"train", "evolution"})

    p = sub.add_parser("coverage", help="per-temperature coverage of one model")
    _add_common(p, "coverage CSV")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--train", type=Path, required=True, help="profiling data for neuron bounds")
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--model-id", default=None)
    _add_config_flags(p, {"coverage"})

    p = sub.add_parser("analyze", help="statistics, correlations and histogram across models")
    _add_common(p, "output directory")
    p.add_argument("--models", type=Path, nargs="+", required=True)
    p.add_argument("--coverage", type=Path, nargs="+", required=True, help="one coverage CSV per model")
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--manifests", type=Path, nargs="*", default=[],
                   help="population manifests whose test_mse feeds the histogram")
    _add_config_flags(p, {"analysis"})

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _add_common(p, "output directory")
    _add_config_flags(p, {"simulation", "split", "train", "evolution", "coverage", "analysis", "pipeline"})
    return parser


def _generate(args):
    cfg = _config(args)
    params = SimulationParams(cfg.lattice_size, temperature_grid(cfg.tmin, cfg.tmax, cfg.tsteps),
                              cfg.samples_per_temperature, cfg.equilibration_steps,
                              cfg.decorrelation_steps or None, cfg.coupling, cfg.seed)
    write_dataset_csv(generate_dataset(params), args.out or "data.csv")


def _split(args):
    extra = {}
    if args.sizes:
        parts = args.sizes.split(",")
        if len(parts) != 3:
            raise ValueError("--sizes needs three comma-separated counts")
        extra = dict(zip(("split.train_size", "split.val_size", "split.test_size"), parts))
    data = read_dataset_csv(args.data)
    # the sample count comes from the file, not the profile
    counts = {int((data.temperatures == t).sum()) for t in data.temperature_grid}
    extra["simulation.samples_per_temperature"] = str(min(counts))
    extra["simulation.tsteps"] = str(len(data.temperature_grid))
    cfg = _config(args, **extra)
    cfg.check_splits()
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    for part in split_dataset(data, (cfg.train_size, cfg.val_size, cfg.test_size), cfg.seed):
        write_dataset_csv(part, out / f"{part.split}.csv")


def _evolve(args):
    cfg = _config(args)
    train = read_dataset_csv(args.train, split="train")
    val = read_dataset_csv(args.val, split="val")
    test = read_dataset_csv(args.test, split="test") if args.test else None
    population, log = evolve(cfg.evolution_config(cfg.seed), train, val, cfg.train_config(cfg.seed), test)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    write_evolution_log_csv(log, out / "evolution_log.csv")
    write_population(population, log, out)
    save_model(population[0].model, out / "best_model.json")


def _coverage(args):
    cfg = _config(args)
    model = load_model(args.model)
    train = read_dataset_csv(args.train)
    test = read_dataset_csv(args.test)
    bounds = profile_bounds(model, train.X)
    reports = coverage_by_temperature(model, test.X, test.y, bounds, cfg.coverage_params())
    write_coverage_csv(reports, args.out or "coverage.csv", args.model_id or args.model.stem)


def _analyze(args):
    if len(args.models) != len(args.coverage):
        raise ValueError("need exactly one coverage CSV per model")
    cfg = _config(args)
    models = [load_model(p) for p in args.models]
    coverage = [read_coverage_csv(p) for p in args.coverage]
    test = read_dataset_csv(args.test, split="test")
    test_mses = [float(row["test_mse"]) for m in args.manifests for row in read_population_manifest(m)]
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    if cfg.plots:
        (out / "plots").mkdir(exist_ok=True)
    analyze(models, [test] * len(models), coverage, test_mses, cfg, out)


def _pipeline(args):
    cfg = _config(args)
    run_pipeline(cfg, args.out or cfg.out)


COMMANDS = {
    "generate": _generate,
    "split": _split,
    "evolve": _evolve,
    "coverage": _coverage,
    "analyze": _analyze,
    "pipeline": _pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except PipelineError as exc:
        print(f"isingnas: error in stage {exc.stage}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"isingnas: error in stage {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
