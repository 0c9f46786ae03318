"""End-to-end experiment: generate, split, evolve, evaluate, coverage, analyze.

Configuration is a flat mapping of dotted keys (``simulation.lattice_size``,
``evolution.generations``, ...). It can be read from a ``key = value`` text
file, overridden from the command line, or taken from a named profile.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import analysis
from .coverage import METRICS, CoverageParams, CoverageReport, coverage_by_temperature, profile_bounds
from .evolution import EvolutionConfig, EvolutionLog, Genome, evolve
from .lattice import (
    Dataset,
    SimulationParams,
    format_float,
    generate_dataset,
    temperature_grid,
    write_dataset_csv,
)
from .mlp import TrainConfig, TrainedModel, evaluate, save_model

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def _f(section: str, default, help: str = ""):
    return field(default=default, metadata={"section": section, "help": help})


@dataclass
class PipelineConfig:
    # simulation
    lattice_size: int = _f("simulation", 8)
    tmin: float = _f("simulation", 1.0)
    tmax: float = _f("simulation", 3.5)
    tsteps: int = _f("simulation", 26)
    samples_per_temperature: int = _f("simulation", 5000)
    equilibration_steps: int = _f("simulation", 512, "Metropolis single-site attempts")
    decorrelation_steps: int = _f("simulation", 0, "Wolff flips between snapshots; 0 means lattice size")
    coupling: float = _f("simulation", 1.0)
    # split (total rows, each divisible by tsteps)
    train_size: int = _f("split", 26000)
    val_size: int = _f("split", 13000)
    test_size: int = _f("split", 26000)
    # training
    epochs: int = _f("train", 10)
    batch_size: int = _f("train", 100)
    learning_rate: float = _f("train", 0.001)
    beta1: float = _f("train", 0.9)
    beta2: float = _f("train", 0.999)
    epsilon: float = _f("train", 1e-8)
    train_fraction: float = _f("train", 1.0)
    # evolution
    population_size: int = _f("evolution", 50)
    generations: int = _f("evolution", 40)
    selection_size: int = _f("evolution", 0, "0 means population_size // 2")
    crossover_prob: float = _f("evolution", 0.0)
    max_layers: int = _f("evolution", 20)
    max_neurons: int = _f("evolution", 20)
    # coverage
    threshold: float = _f("coverage", 0.0)
    top_k: int = _f("coverage", 1)
    sections: int = _f("coverage", 10)
    # analysis
    histogram_bins: int = _f("analysis", 20)
    histogram_max: float = _f("analysis", 0.5)
    plots: bool = _f("analysis", False)
    # run control
    runs: int = _f("pipeline", 30)
    seed: int = _f("pipeline", 0)
    shared_dataset: bool = _f("pipeline", True, "false regenerates the data for every run")
    out: str = _f("pipeline", "results")
    profile: str = _f("pipeline", "paper")

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("pipeline.runs must be >= 1")

    def check_splits(self) -> None:
        n = self.tsteps
        for name in ("train_size", "val_size", "test_size"):
            if getattr(self, name) % n:
                raise ValueError(f"split.{name} must be divisible by the {n} grid temperatures")
        if self.train_size + self.val_size + self.test_size > n * self.samples_per_temperature:
            raise ValueError("split sizes exceed the number of generated samples")

    # -- dotted-key view --------------------------------------------------
    @classmethod
    def keys(cls) -> Dict[str, dataclasses.Field]:
        return {f"{f.metadata['section']}.{f.name}": f for f in dataclasses.fields(cls)}

    def to_flat(self) -> Dict[str, object]:
        return {k: getattr(self, f.name) for k, f in self.keys().items()}

    def hash(self) -> str:
        flat = {k: v for k, v in self.to_flat().items() if k not in ("pipeline.out", "analysis.plots")}
        return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()

    def replace(self, **overrides) -> "PipelineConfig":
        return dataclasses.replace(self, **overrides)

    def with_flat(self, flat: Dict[str, object]) -> "PipelineConfig":
        keys = self.keys()
        changes = {}
        for key, value in flat.items():
            if key not in keys:
                raise KeyError(f"unknown configuration key {key!r}")
            f = keys[key]
            changes[f.name] = _coerce(value, type(getattr(self, f.name)), key)
        return dataclasses.replace(self, **changes)

    # -- component views ----------------------------------------------------
    @property
    def temperatures(self) -> List[float]:
        return temperature_grid(self.tmin, self.tmax, self.tsteps)

    def simulation_params(self, seed: int) -> SimulationParams:
        return SimulationParams(
            lattice_size=self.lattice_size,
            temperatures=self.temperatures,
            samples_per_temperature=self.samples_per_temperature,
            equilibration_steps=self.equilibration_steps,
            decorrelation_steps=self.decorrelation_steps or None,
            coupling=self.coupling,
            seed=seed,
        )

    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.beta1, self.beta2,
                           self.epsilon, seed, self.train_fraction)

    def evolution_config(self, seed: int) -> EvolutionConfig:
        return EvolutionConfig(self.population_size, self.generations, self.selection_size or None,
                               self.crossover_prob, self.max_layers, self.max_neurons, seed)

    def coverage_params(self) -> CoverageParams:
        return CoverageParams(self.threshold, self.top_k, self.sections)


def _coerce(value, kind, key):
    if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ValueError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None
    return text


PROFILES: Dict[str, Dict[str, object]] = {
    # values from the reference experiment
    "paper": {},
    # small enough to finish in a couple of minutes on one core
    "desk": {
        "simulation.samples_per_temperature": 200,
        "split.train_size": 2080,
        "split.val_size": 1040,
        "split.test_size": 2080,
        "train.learning_rate": 0.01,
        "evolution.population_size": 8,
        "evolution.generations": 5,
        "pipeline.runs": 3,
        "pipeline.profile": "desk",
    },
}


def profile_config(name: str) -> PipelineConfig:
    if name not in PROFILES:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    flat = dict(PROFILES[name])
    flat.setdefault("pipeline.profile", name)
    return PipelineConfig().with_flat(flat)


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, profile: str | None = None, overrides: Dict[str, object] | None = None) -> PipelineConfig:
    """Profile defaults, then the config file, then explicit overrides."""
    flat: Dict[str, object] = {}
    if path is not None:
        flat.update(parse_config_text(Path(path).read_text()))
    if overrides:
        flat.update(overrides)
    name = profile or str(flat.get("pipeline.profile", "paper"))
    return profile_config(name).with_flat(flat)


def write_config(config: PipelineConfig, path) -> None:
    lines = [f"{k} = {v}" for k, v in config.to_flat().items()]
    Path(path).write_text("\n".join(lines) + "\n")


# -- stage helpers -------------------------------------------------------------

def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def split_dataset(dataset: Dataset, sizes: Sequence[int], seed: int) -> Tuple[Dataset, Dataset, Dataset]:
    """Stratified disjoint split into (train, val, test).

    Each split gets ``size / len(grid)`` rows of every grid temperature,
    drawn from a seeded shuffle of that temperature's rows.
    """
    grid = dataset.temperature_grid
    per = []
    for size in sizes:
        if size % len(grid):
            raise ValueError(f"split size {size} not divisible by {len(grid)} temperatures")
        per.append(size // len(grid))
    rng = np.random.default_rng(seed)
    parts: List[List[np.ndarray]] = [[] for _ in sizes]
    for t in grid:
        rows = np.flatnonzero(dataset.temperatures == t)
        if len(rows) < sum(per):
            raise ValueError(f"temperature {t} has {len(rows)} samples, {sum(per)} needed")
        rows = rng.permutation(rows)
        start = 0
        for i, n in enumerate(per):
            parts[i].append(np.sort(rows[start:start + n]))
            start += n
    names = ("train", "val", "test")
    return tuple(
        dataset.subset(np.concatenate(p) if p else np.empty(0, dtype=np.int64), split=names[i])
        for i, p in enumerate(parts)
    )


def write_evolution_log_csv(evo_log: EvolutionLog, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "best", "mean", "worst"])
        for row in zip(evo_log.generation, evo_log.best, evo_log.mean, evo_log.worst):
            w.writerow([row[0]] + [format_float(v) for v in row[1:]])


def write_population(population: Sequence[Genome], evo_log: EvolutionLog, out_dir) -> List[Path]:
    """One model file per genome plus ``manifest.csv`` ranked by validation MSE."""
    out_dir = Path(out_dir)
    (out_dir / "models").mkdir(parents=True, exist_ok=True)
    paths = []
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "val_mse", "test_mse", "layers", "widths", "activations", "initializers"])
        for rank, genome in enumerate(population):
            test = evo_log.test_mse[rank] if evo_log.test_mse else math.nan
            w.writerow([
                rank,
                format_float(genome.fitness),
                format_float(test),
                len(genome.layers),
                "-".join(str(l.width) for l in genome.layers),
                "-".join(l.activation for l in genome.layers),
                "-".join(l.initializer for l in genome.layers),
            ])
            path = out_dir / "models" / f"rank_{rank:03d}.json"
            save_model(genome.model, path)
            paths.append(path)
    return paths


def read_population_manifest(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_coverage_csv(reports: Dict[float, CoverageReport], path, model_id: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["temperature"] + list(METRICS) + ["t", "K", "k", "model_id"])
        for t, r in reports.items():
            w.writerow([format_float(t)] + [format_float(getattr(r, m)) for m in METRICS]
                       + [format_float(r.params.threshold), r.params.top_k, r.params.sections, model_id])


def read_coverage_csv(path) -> Dict[float, CoverageReport]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            params = CoverageParams(float(row["t"]), int(row["K"]), int(row["k"]))
            t = float(row["temperature"])
            out[t] = CoverageReport(*(float(row[m]) for m in METRICS), params=params,
                                    test_set=f"{row['model_id']}@T={t!r}")
    return out


def write_manifest(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def analyze(models: Sequence[TrainedModel], tests: Sequence[Dataset], coverage: Sequence[Dict[float, CoverageReport]],
            test_mses: Sequence[float], config: PipelineConfig, out_dir) -> dict:
    """Write temp_stats.csv, correlations.csv, mse_histogram.csv (and plots if enabled)."""
    out_dir = Path(out_dir)
    stats = analysis.per_temperature_stats(models, [t.X for t in tests], [t.y for t in tests],
                                           tests[0].temperature_grid)
    table = analysis.correlation_table(coverage, stats)
    hist = analysis.histogram(test_mses, config.histogram_bins, (0.0, config.histogram_max))
    analysis.write_temp_stats_csv(stats, out_dir / "temp_stats.csv")
    analysis.write_correlations_csv(table, out_dir / "correlations.csv")
    analysis.write_histogram_csv(hist, out_dir / "mse_histogram.csv")
    plots = analysis.plot_outputs(out_dir / "plots", stats, coverage, hist) if config.plots else []
    return {
        "std_convention": stats.std_convention,
        "aggregation": table.aggregation,
        "histogram_excluded": hist.excluded,
        "histogram_range": [0.0, config.histogram_max],
        "plots": plots,
    }


def run_pipeline(config: PipelineConfig, out_dir=None) -> Path:
    """Run every stage and write all artifacts under ``out_dir``; returns that directory."""
    out = Path(out_dir if out_dir is not None else config.out)
    out.mkdir(parents=True, exist_ok=True)
    if config.plots:
        (out / "plots").mkdir(exist_ok=True)
    seeds = {
        "simulation": derive_seed(config.seed, 1),
        "split": derive_seed(config.seed, 2),
        "runs": [derive_seed(config.seed, 3, r) for r in range(config.runs)],
    }
    manifest = {
        "config": config.to_flat(),
        "config_hash": config.hash(),
        "seeds": seeds,
        "stages": [],
        "runs": [],
    }

    def stage(name, fn, *args):
        log.info("stage %s", name)
        try:
            result = fn(*args)
        except Exception as exc:
            manifest["failed_stage"] = name
            write_manifest(out / "manifest.json", manifest)
            raise PipelineError(name, exc) from exc
        manifest["stages"].append(name)
        return result

    def make_splits(sim_seed, split_seed, directory):
        data = generate_dataset(config.simulation_params(sim_seed))
        write_dataset_csv(data, directory / "data.csv")
        splits = split_dataset(data, (config.train_size, config.val_size, config.test_size), split_seed)
        for part in splits:
            write_dataset_csv(part, directory / f"{part.split}.csv")
        return splits

    def check_config():
        # build every component config once so bad values fail before any work
        config.check_splits()
        config.simulation_params(0)
        config.train_config()
        config.evolution_config(0)
        config.coverage_params()

    stage("config", check_config)
    if config.shared_dataset:
        shared = stage("generate", make_splits, seeds["simulation"], seeds["split"], out)

    best_models, tests, coverages, test_mses = [], [], [], []
    for r, run_seed in enumerate(seeds["runs"]):
        run_dir = out / f"run_{r:03d}"
        run_dir.mkdir(exist_ok=True)
        if config.shared_dataset:
            train, val, test = shared
        else:
            train, val, test = stage(f"generate[{r}]", make_splits, derive_seed(run_seed, 1),
                                     derive_seed(run_seed, 2), run_dir)
        tests.append(test)

        population, evo_log = stage(
            f"evolve[{r}]", evolve, config.evolution_config(run_seed), train, val,
            config.train_config(run_seed), test,
        )
        write_evolution_log_csv(evo_log, run_dir / "evolution_log.csv")
        write_population(population, evo_log, run_dir)
        best = population[0].model
        save_model(best, run_dir / "best_model.json")
        best_models.append(best)
        test_mses.extend(evo_log.test_mse)

        def run_coverage(model=best, train=train, test=test):
            bounds = profile_bounds(model, train.X)
            return coverage_by_temperature(model, test.X, test.y, bounds, config.coverage_params())

        reports = stage(f"coverage[{r}]", run_coverage)
        write_coverage_csv(reports, run_dir / "coverage.csv", f"run_{r:03d}")
        coverages.append(reports)
        global_mse, per_t = evaluate(best, test.X, test.y)
        with open(run_dir / "temp_mse.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["temperature", "mse"])
            for t, v in per_t.items():
                w.writerow([format_float(t), format_float(v)])
        manifest["runs"].append({
            "run": r,
            "seed": run_seed,
            "best_val_mse": population[0].fitness,
            "best_test_mse": global_mse,
            "evaluations": evo_log.evaluations,
            "best_architecture": population[0].key,
        })

    meta = stage("analyze", analyze, best_models, tests, coverages, test_mses, config, out)
    manifest["analysis"] = meta
    manifest["complete"] = True
    write_manifest(out / "manifest.json", manifest)
    return out
