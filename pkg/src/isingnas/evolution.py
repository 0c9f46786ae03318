"""Mutation-only evolutionary search over MLP architectures.

A genome is the list of hidden layers ``(width, activation, initializer)``.
Each generation selects the K fittest genomes, mutates each (with
probability ``1 - crossover_prob``) into one offspring, evaluates the
offspring and keeps the N fittest of parents plus offspring. Fitness is
validation MSE, lower is better.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_targets
from .mlp import (
    ACTIVATIONS,
    INITIALIZERS,
    MAX_LAYERS,
    MAX_NEURONS,
    ArchitectureSpec,
    LayerSpec,
    TrainConfig,
    TrainedModel,
    init_model,
    mse,
    predict,
    train,
)

OPERATORS = ("add_layer", "remove_layer", "resize_layer", "change_activation", "change_initializer")
UNEVALUATED = math.nan


@dataclass
class EvolutionConfig:
    """``selection_size`` of ``None`` means ``population_size // 2`` (at least 1)."""

    population_size: int = 50
    generations: int = 40
    selection_size: int | None = None
    crossover_prob: float = 0.0
    max_layers: int = MAX_LAYERS
    max_neurons: int = MAX_NEURONS
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.selection_size is None:
            self.selection_size = max(1, self.population_size // 2)
        if not 1 <= self.selection_size <= self.population_size:
            raise ValueError("selection_size must lie in [1, population_size]")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ValueError("crossover_prob must lie in [0, 1]")
        if self.max_layers < 1 or self.max_neurons < 1:
            raise ValueError("architecture bounds must be >= 1")

    @property
    def mutation_prob(self) -> float:
        return 1.0 - self.crossover_prob


@dataclass
class Genome:
    layers: Tuple[LayerSpec, ...]
    fitness: float = UNEVALUATED
    origin: str = "random"
    model: TrainedModel | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.layers = tuple(l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in self.layers)
        if not self.layers:
            raise ValueError("a genome needs at least one hidden layer")

    @property
    def key(self) -> str:
        return "|".join(f"{l.width}:{l.activation}:{l.initializer}" for l in self.layers)

    @property
    def evaluated(self) -> bool:
        return not math.isnan(self.fitness)

    def decode(self, input_dim: int, max_layers: int = MAX_LAYERS, max_neurons: int = MAX_NEURONS) -> ArchitectureSpec:
        return ArchitectureSpec(input_dim, self.layers, max_layers, max_neurons)


@dataclass
class EvolutionLog:
    generation: List[int] = field(default_factory=list)
    best: List[float] = field(default_factory=list)
    mean: List[float] = field(default_factory=list)
    worst: List[float] = field(default_factory=list)
    evaluations: int = 0
    final_population: List[Genome] = field(default_factory=list)
    test_mse: List[float] = field(default_factory=list)

    def record(self, generation: int, population: Sequence[Genome]) -> None:
        f = np.array([g.fitness for g in population])
        finite = f[np.isfinite(f)]
        self.generation.append(generation)
        self.best.append(float(f.min()))
        self.mean.append(float(finite.mean()) if finite.size == f.size else math.inf)
        self.worst.append(float(f.max()))


def _random_layer(rng: np.random.Generator, max_neurons: int) -> LayerSpec:
    return LayerSpec(
        int(rng.integers(1, max_neurons + 1)),
        ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))],
        INITIALIZERS[int(rng.integers(len(INITIALIZERS)))],
    )


def random_genome(config: EvolutionConfig, rng: np.random.Generator) -> Genome:
    n_layers = int(rng.integers(1, config.max_layers + 1))
    return Genome(tuple(_random_layer(rng, config.max_neurons) for _ in range(n_layers)))


def applicable_operators(genome: Genome, max_layers: int = MAX_LAYERS, max_neurons: int = MAX_NEURONS) -> List[str]:
    ops = []
    if len(genome.layers) < max_layers:
        ops.append("add_layer")
    if len(genome.layers) > 1:
        ops.append("remove_layer")
    if max_neurons > 1:
        ops.append("resize_layer")
    ops += ["change_activation", "change_initializer"]
    return ops


def _other(choices: Sequence, current, rng: np.random.Generator):
    rest = [c for c in choices if c != current]
    return rest[int(rng.integers(len(rest)))]


def apply_operator(genome: Genome, op: str, rng: np.random.Generator, max_neurons: int = MAX_NEURONS) -> Genome:
    layers = list(genome.layers)
    if op == "add_layer":
        layers.insert(int(rng.integers(len(layers) + 1)), _random_layer(rng, max_neurons))
    elif op == "remove_layer":
        del layers[int(rng.integers(len(layers)))]
    else:
        i = int(rng.integers(len(layers)))
        layer = layers[i]
        if op == "resize_layer":
            layers[i] = dataclasses.replace(layer, width=_other(range(1, max_neurons + 1), layer.width, rng))
        elif op == "change_activation":
            layers[i] = dataclasses.replace(layer, activation=_other(ACTIVATIONS, layer.activation, rng))
        elif op == "change_initializer":
            layers[i] = dataclasses.replace(layer, initializer=_other(INITIALIZERS, layer.initializer, rng))
        else:
            raise ValueError(f"unknown mutation operator {op!r}")
    return Genome(tuple(layers), origin=op)


def mutate(genome: Genome, rng: np.random.Generator, max_layers: int = MAX_LAYERS,
           max_neurons: int = MAX_NEURONS) -> Genome:
    """New genome from one uniformly chosen applicable operator; ``origin`` names it."""
    ops = applicable_operators(genome, max_layers, max_neurons)
    return apply_operator(genome, ops[int(rng.integers(len(ops)))], rng, max_neurons)


def _xy(data):
    """Accept a Dataset-like object (``.X``/``.y``/``.split``) or an ``(X, y)`` pair."""
    if hasattr(data, "X") and hasattr(data, "y"):
        return data.X, data.y, getattr(data, "split", None)
    X, y = data
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64), None


def train_genome(genome: Genome, train_set, val_set, train_config: TrainConfig,
                 max_layers: int = MAX_LAYERS, max_neurons: int = MAX_NEURONS) -> Tuple[float, TrainedModel]:
    """Decode, initialise and train; return (validation MSE, trained model).

    Diverged training, or non-finite validation predictions, score ``inf``.
    """
    X, y, split = _xy(train_set)
    Xv, yv, _ = _xy(val_set)
    spec = genome.decode(X.shape[1], max_layers, max_neurons)
    model = train(init_model(spec, train_config.seed), X, y, train_config, split=split)
    if not model.valid:
        return math.inf, model
    with np.errstate(over="ignore", invalid="ignore"):
        fitness = mse(predict(model, Xv), yv)
    return (fitness if math.isfinite(fitness) else math.inf), model


def evaluate_fitness(genome: Genome, train_set, val_set, train_config: TrainConfig) -> float:
    return train_genome(genome, train_set, val_set, train_config)[0]


def select(population: Sequence[Genome], k: int, rng: np.random.Generator | None = None) -> List[Genome]:
    """Truncation selection of the ``k`` lowest-fitness genomes; ties keep input order.

    ``rng`` is accepted for interface symmetry with stochastic selection
    schemes and is not used.
    """
    if not 0 <= k <= len(population):
        raise ValueError(f"cannot select {k} of {len(population)} genomes")
    if any(not g.evaluated for g in population):
        raise ValueError("population contains unevaluated genomes")
    order = sorted(range(len(population)), key=lambda i: population[i].fitness)
    return [population[i] for i in order[:k]]


def genome_seed(seed: int, generation: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(generation), int(index)]).generate_state(1)[0])


def evolve(config: EvolutionConfig, train_set, val_set, train_config: TrainConfig, test_set=None,
           progress: Callable[[int, EvolutionLog], None] | None = None) -> Tuple[List[Genome], EvolutionLog]:
    """Run the search; returns the final population sorted by fitness, and the log.

    Genomes with an identical layer list share one evaluation per run.
    When ``test_set`` is given, ``log.test_mse`` holds the test MSE of each
    final genome.
    """
    rng = np.random.default_rng(config.seed)
    cache: Dict[str, Tuple[float, TrainedModel]] = {}
    log = EvolutionLog()

    def evaluate(genomes: Sequence[Genome], generation: int) -> None:
        for index, g in enumerate(genomes):
            if g.key not in cache:
                tc = dataclasses.replace(train_config, seed=genome_seed(config.seed, generation, index))
                cache[g.key] = train_genome(g, train_set, val_set, tc, config.max_layers, config.max_neurons)
                log.evaluations += 1
            g.fitness, g.model = cache[g.key]

    population = [random_genome(config, rng) for _ in range(config.population_size)]
    evaluate(population, 0)
    population = select(population, len(population))
    log.record(0, population)
    if progress:
        progress(0, log)

    for generation in range(1, config.generations + 1):
        parents = select(population, config.selection_size, rng)
        offspring = []
        for parent in parents:
            if rng.random() < config.mutation_prob:
                offspring.append(mutate(parent, rng, config.max_layers, config.max_neurons))
            else:
                offspring.append(Genome(parent.layers, origin="copy"))
        evaluate(offspring, generation)
        population = select(population + offspring, config.population_size)
        log.record(generation, population)
        if progress:
            progress(generation, log)

    log.final_population = list(population)
    if test_set is not None:
        Xt, yt, _ = _xy(test_set)
        with np.errstate(over="ignore", invalid="ignore"):
            log.test_mse = [
                mse(predict(g.model, Xt), yt) if g.model is not None and g.model.valid else math.inf
                for g in population
            ]
    return population, log


class NeuroevolutionRegressor(RegressorMixin, BaseEstimator):
    """Architecture search wrapped as a regressor.

    ``fit`` needs a validation set (``X_val``/``y_val``); without one, a
    seeded ``validation_fraction`` of the training rows is held out. The
    fitted estimator predicts with the lowest-validation-MSE network.

    Attributes
    ----------
    best_model_ : TrainedModel
    population_ : list of Genome
    log_ : EvolutionLog
    """

    def __init__(self, population_size=50, generations=40, selection_size=None, crossover_prob=0.0,
                 max_layers=MAX_LAYERS, max_neurons=MAX_NEURONS, epochs=10, batch_size=100,
                 learning_rate=0.001, validation_fraction=0.2, random_state=0):
        self.population_size = population_size
        self.generations = generations
        self.selection_size = selection_size
        self.crossover_prob = crossover_prob
        self.max_layers = max_layers
        self.max_neurons = max_neurons
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_features(X)
        y = check_targets(y, len(X))
        if X_val is None:
            rng = np.random.default_rng(self.random_state)
            order = rng.permutation(len(X))
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            val, tr = order[:n_val], order[n_val:]
            X, y, X_val, y_val = X[tr], y[tr], X[val], y[val]
        else:
            X_val = check_features(X_val, X.shape[1])
            y_val = check_targets(y_val, len(X_val))
        config = EvolutionConfig(self.population_size, self.generations, self.selection_size,
                                 self.crossover_prob, self.max_layers, self.max_neurons, self.random_state)
        tc = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                         learning_rate=self.learning_rate, seed=self.random_state)
        self.population_, self.log_ = evolve(config, (X, y), (X_val, y_val), tc)
        self.best_model_ = self.population_[0].model
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "best_model_")
        return predict(self.best_model_, check_features(X, self.n_features_in_))
