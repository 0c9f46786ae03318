"""Ising-model datasets, neuroevolved MLP regressors and neuron-coverage analysis."""

from .coverage import CoverageParams, CoverageProfiler, CoverageReport, NeuronBounds
from .evolution import EvolutionConfig, Genome, NeuroevolutionRegressor, evolve
from .lattice import Dataset, SimulationParams, SpinLattice, generate_dataset, temperature_grid
from .mlp import ArchitectureSpec, LayerSpec, MLPRegressor, TrainConfig, TrainedModel
from .pipeline import PipelineConfig, load_config, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "CoverageParams",
    "CoverageProfiler",
    "CoverageReport",
    "Dataset",
    "EvolutionConfig",
    "Genome",
    "LayerSpec",
    "MLPRegressor",
    "NeuronBounds",
    "NeuroevolutionRegressor",
    "PipelineConfig",
    "SimulationParams",
    "SpinLattice",
    "TrainConfig",
    "TrainedModel",
    "evolve",
    "generate_dataset",
    "load_config",
    "run_pipeline",
    "temperature_grid",
]
