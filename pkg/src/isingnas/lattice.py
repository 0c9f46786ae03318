"""2D Ising model on a periodic square lattice.

Metropolis single-spin updates are used to equilibrate a chain, Wolff
cluster updates to decorrelate the recorded snapshots. Temperatures are
in units where k_B = 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, List, Sequence

import numpy as np


class DatasetFormatError(ValueError):
    """Raised when a dataset CSV row cannot be parsed or validated."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass
class SpinLattice:
    """Square grid of +/-1 spins with a uniform ferromagnetic coupling."""

    spins: np.ndarray
    coupling: float = 1.0

    def __post_init__(self):
        spins = np.asarray(self.spins)
        if spins.ndim != 2 or spins.shape[0] != spins.shape[1]:
            raise ValueError(f"spins must be a square 2D array, got shape {spins.shape}")
        if spins.shape[0] < 2:
            raise ValueError("lattice size must be >= 2")
        if not np.all((spins == 1) | (spins == -1)):
            raise ValueError("every spin must be -1 or +1")
        self.spins = spins.astype(np.int8, copy=True)
        self.coupling = float(self.coupling)

    @property
    def size(self) -> int:
        return self.spins.shape[0]

    @classmethod
    def uniform(cls, size: int, value: int = 1, coupling: float = 1.0) -> "SpinLattice":
        return cls(np.full((size, size), value, dtype=np.int8), coupling)

    @classmethod
    def checkerboard(cls, size: int, coupling: float = 1.0) -> "SpinLattice":
        idx = np.add.outer(np.arange(size), np.arange(size))
        return cls(np.where(idx % 2 == 0, 1, -1), coupling)

    @classmethod
    def random(cls, size: int, rng: np.random.Generator, coupling: float = 1.0) -> "SpinLattice":
        return cls(rng.choice(np.array([-1, 1], dtype=np.int8), size=(size, size)), coupling)

    def copy(self) -> "SpinLattice":
        return SpinLattice(self.spins.copy(), self.coupling)


@dataclass
class SimulationParams:
    """Settings for generating a labelled dataset across a temperature grid.

    ``equilibration_steps`` counts single-site Metropolis attempts and
    ``decorrelation_steps`` counts Wolff cluster flips between snapshots.
    A ``decorrelation_steps`` of ``None`` means "equal to the lattice size".
    """

    lattice_size: int = 8
    temperatures: Sequence[float] = field(default_factory=lambda: temperature_grid(1.0, 3.5, 26))
    samples_per_temperature: int = 5000
    equilibration_steps: int = 512
    decorrelation_steps: int | None = None
    coupling: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.temperatures = [float(t) for t in self.temperatures]
        if self.lattice_size < 2:
            raise ValueError("lattice_size must be >= 2")
        if not self.temperatures:
            raise ValueError("temperature grid is empty")
        if any(t <= 0 for t in self.temperatures):
            raise ValueError("temperatures must be > 0")
        if any(b <= a for a, b in zip(self.temperatures, self.temperatures[1:])):
            raise ValueError("temperatures must be strictly increasing")
        if self.samples_per_temperature < 0:
            raise ValueError("samples_per_temperature must be >= 0")
        if self.equilibration_steps < 0:
            raise ValueError("equilibration_steps must be >= 0")
        if self.decorrelation_steps is None:
            self.decorrelation_steps = self.lattice_size
        if self.decorrelation_steps < 0:
            raise ValueError("decorrelation_steps must be >= 0")


@dataclass(frozen=True)
class LabeledSample:
    configuration: np.ndarray
    temperature: float


@dataclass
class Dataset:
    """Flattened spin configurations with their sampling temperatures.

    ``split`` tags where the rows came from (``"train"``, ``"val"``,
    ``"test"`` or ``None`` for a raw generated set); training code refuses
    anything tagged ``"test"``.
    """

    configurations: np.ndarray
    temperatures: np.ndarray
    lattice_size: int
    temperature_grid: List[float]
    split: str | None = None

    def __post_init__(self):
        self.configurations = np.asarray(self.configurations, dtype=np.int8).reshape(
            -1, self.lattice_size * self.lattice_size
        )
        self.temperatures = np.asarray(self.temperatures, dtype=np.float64).reshape(-1)
        self.temperature_grid = [float(t) for t in self.temperature_grid]
        if len(self.configurations) != len(self.temperatures):
            raise ValueError("configurations and temperatures differ in length")

    def __len__(self) -> int:
        return len(self.temperatures)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.lattice_size == other.lattice_size
            and self.temperature_grid == other.temperature_grid
            and np.array_equal(self.configurations, other.configurations)
            and np.array_equal(self.temperatures, other.temperatures)
        )

    @property
    def samples(self) -> Iterator[LabeledSample]:
        for x, t in zip(self.configurations, self.temperatures):
            yield LabeledSample(x, float(t))

    @property
    def X(self) -> np.ndarray:
        return self.configurations.astype(np.float64)

    @property
    def y(self) -> np.ndarray:
        return self.temperatures

    def subset(self, index, split: str | None = None) -> "Dataset":
        return Dataset(
            self.configurations[index],
            self.temperatures[index],
            self.lattice_size,
            self.temperature_grid,
            split if split is not None else self.split,
        )

    def by_temperature(self) -> dict[float, "Dataset"]:
        """Slices keyed by grid temperature, in grid order (empty slices omitted)."""
        out = {}
        for t in self.temperature_grid:
            mask = self.temperatures == t
            if mask.any():
                out[t] = self.subset(mask)
        return out


def temperature_grid(tmin: float, tmax: float, steps: int) -> List[float]:
    """Evenly spaced grid, rounded so labels serialize as short decimals."""
    if steps == 1:
        return [float(tmin)]
    return [round(float(t), 10) for t in np.linspace(tmin, tmax, steps)]


@lru_cache(maxsize=None)
def _neighbour_table(size: int) -> tuple:
    """Flat indices of the four periodic neighbours of every site."""
    table = []
    for r in range(size):
        for c in range(size):
            table.append((
                ((r - 1) % size) * size + c,
                ((r + 1) % size) * size + c,
                r * size + (c - 1) % size,
                r * size + (c + 1) % size,
            ))
    return tuple(table)


def total_energy(lattice: SpinLattice) -> float:
    """Energy -J * sum(s_i s_j) over the 2*size**2 periodic nearest-neighbour bonds."""
    s = lattice.spins.astype(np.int64)
    bonds = np.sum(s * np.roll(s, -1, axis=0)) + np.sum(s * np.roll(s, -1, axis=1))
    return float(-lattice.coupling * bonds)


def magnetization(lattice: SpinLattice) -> float:
    return float(lattice.spins.mean(dtype=np.float64))


def flip_energy_delta(lattice: SpinLattice, row: int, col: int) -> float:
    """Energy change if the spin at (row, col) were flipped. The lattice is not modified."""
    size = lattice.size
    if not (0 <= row < size and 0 <= col < size):
        raise IndexError(f"site ({row}, {col}) outside {size}x{size} lattice")
    s = lattice.spins
    nb = (
        int(s[(row - 1) % size, col]) + int(s[(row + 1) % size, col])
        + int(s[row, (col - 1) % size]) + int(s[row, (col + 1) % size])
    )
    return 2.0 * lattice.coupling * int(s[row, col]) * nb


def metropolis_accept(delta_e: float, temperature: float, u: float) -> bool:
    """Metropolis rule: downhill always, uphill with probability exp(-dE/T)."""
    if delta_e <= 0:
        return True
    return u < math.exp(-delta_e / temperature)


def metropolis_update(lattice: SpinLattice, temperature: float, rng: np.random.Generator) -> SpinLattice:
    """One single-site Metropolis attempt at a uniformly chosen site (in place)."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    size = lattice.size
    site = int(rng.integers(size * size))
    row, col = divmod(site, size)
    delta = flip_energy_delta(lattice, row, col)
    if metropolis_accept(delta, temperature, rng.random()):
        lattice.spins[row, col] = -lattice.spins[row, col]
    return lattice


def wolff_add_probability(coupling: float, temperature: float) -> float:
    return 1.0 - math.exp(-2.0 * coupling / temperature)


def wolff_update(lattice: SpinLattice, temperature: float, rng: np.random.Generator) -> SpinLattice:
    """Grow and flip one Wolff cluster (in place).

    Returns the lattice; the cluster size of the last call is available as
    ``lattice.last_cluster_size`` for diagnostics.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    size = lattice.size
    flat = lattice.spins.reshape(-1)
    neighbours = _neighbour_table(size)
    p_add = wolff_add_probability(lattice.coupling, temperature)
    random = rng.random

    seed = int(rng.integers(size * size))
    sign = flat[seed]
    in_cluster = [False] * (size * size)
    in_cluster[seed] = True
    stack = [seed]
    members = [seed]
    while stack:
        site = stack.pop()
        for nb in neighbours[site]:
            if not in_cluster[nb] and flat[nb] == sign and random() < p_add:
                in_cluster[nb] = True
                stack.append(nb)
                members.append(nb)
    flat[members] = -sign
    lattice.last_cluster_size = len(members)
    return lattice


def run_chain(params: SimulationParams, temperature: float, rng: np.random.Generator) -> List[LabeledSample]:
    """Equilibrate with Metropolis, then record one snapshot after each block of Wolff updates."""
    if temperature not in params.temperatures:
        raise ValueError(f"temperature {temperature} not in the simulation grid")
    lattice = SpinLattice.random(params.lattice_size, rng, params.coupling)
    for _ in range(params.equilibration_steps):
        metropolis_update(lattice, temperature, rng)
    samples = []
    for _ in range(params.samples_per_temperature):
        for _ in range(params.decorrelation_steps):
            wolff_update(lattice, temperature, rng)
        samples.append(LabeledSample(lattice.spins.reshape(-1).copy(), float(temperature)))
    return samples


def chain_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for the chain at grid position ``index``."""
    return np.random.default_rng([int(seed), int(index)])


def generate_dataset(params: SimulationParams) -> Dataset:
    n_features = params.lattice_size ** 2
    blocks, labels = [], []
    for index, temperature in enumerate(params.temperatures):
        samples = run_chain(params, temperature, chain_rng(params.seed, index))
        block = np.empty((len(samples), n_features), dtype=np.int8)
        for i, sample in enumerate(samples):
            block[i] = sample.configuration
        blocks.append(block)
        labels.append(np.full(len(samples), temperature))
    return Dataset(
        np.concatenate(blocks) if blocks else np.empty((0, n_features), dtype=np.int8),
        np.concatenate(labels) if labels else np.empty(0),
        params.lattice_size,
        list(params.temperatures),
    )


def format_float(value: float) -> str:
    """Shortest round-trip decimal, always with a fractional part."""
    text = repr(float(value))
    if "." not in text and "e" not in text and "n" not in text:
        text += ".0"
    return text


def write_dataset_csv(dataset: Dataset, path) -> None:
    n = dataset.lattice_size ** 2
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"s{i}" for i in range(n)] + ["temperature"])
        for x, t in zip(dataset.configurations, dataset.temperatures):
            writer.writerow([str(int(v)) for v in x] + [format_float(t)])


def read_dataset_csv(path, temperature_grid: Sequence[float] | None = None, split: str | None = None) -> Dataset:
    """Read a dataset written by :func:`write_dataset_csv`.

    The lattice size is inferred from the header. When ``temperature_grid``
    is omitted the grid is the sorted set of labels present in the file.
    Row numbers in errors count data rows from 1.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(0, "missing header") from None
        n = len(header) - 1
        size = math.isqrt(n)
        if n < 4 or size * size != n or header[-1] != "temperature":
            raise DatasetFormatError(0, f"header does not describe a square lattice: {len(header)} columns")
        if header[:-1] != [f"s{i}" for i in range(n)]:
            raise DatasetFormatError(0, "spin columns must be named s0..s{n-1}")
        configs, temps = [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != n + 1:
                raise DatasetFormatError(row_no, f"expected {n + 1} columns, got {len(row)}")
            try:
                spins = [int(v) for v in row[:-1]]
            except ValueError as exc:
                raise DatasetFormatError(row_no, f"unparsable spin value: {exc}") from None
            if any(v not in (-1, 1) for v in spins):
                raise DatasetFormatError(row_no, "spin value outside {-1, 1}")
            try:
                t = float(row[-1])
            except ValueError:
                raise DatasetFormatError(row_no, f"unparsable temperature {row[-1]!r}") from None
            if not math.isfinite(t):
                raise DatasetFormatError(row_no, f"non-finite temperature {row[-1]!r}")
            configs.append(spins)
            temps.append(t)
    grid = sorted(set(temps)) if temperature_grid is None else list(temperature_grid)
    return Dataset(
        np.array(configs, dtype=np.int8).reshape(-1, n),
        np.array(temps, dtype=np.float64),
        size,
        grid,
        split,
    )
