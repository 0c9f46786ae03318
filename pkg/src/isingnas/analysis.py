"""Per-temperature error statistics, coverage correlations and histograms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .coverage import METRICS, CoverageReport
from .lattice import format_float
from .mlp import evaluate

TARGETS = ("mse_mean", "mse_std", "temperature")
STD_CONVENTION = "population"


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined, e.g. for a constant input."""


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least two points")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def kendall_tau(x, y) -> float:
    """Kendall tau-b over all pairs (tie-corrected)."""
    x, y = _pair(x, y)
    i, j = np.triu_indices(x.size, k=1)
    sx = np.sign(x[i] - x[j])
    sy = np.sign(y[i] - y[j])
    s = int(np.sum(sx * sy))
    n_x = int(np.count_nonzero(sx))  # pairs not tied in x
    n_y = int(np.count_nonzero(sy))
    if n_x == 0 or n_y == 0:
        raise UndefinedCorrelationError("all values tied")
    return max(-1.0, min(1.0, s / math.sqrt(n_x * n_y)))


@dataclass
class TempStats:
    temperatures: List[float]
    mse_mean: np.ndarray
    mse_std: np.ndarray
    counts: List[int]
    per_model: np.ndarray = field(repr=False, default=None)  # (n_models, n_temps)
    std_convention: str = STD_CONVENTION


def per_temperature_stats(models: Sequence, X, y, temperature_grid: Sequence[float] | None = None) -> TempStats:
    """Mean and population std over models of each model's MSE per temperature.

    ``X`` and ``y`` are one shared test set, or lists holding one test set
    per model.
    """
    if not models:
        raise ValueError("need at least one model")
    if isinstance(y, (list, tuple)):
        Xs, ys = list(X), [np.asarray(v, dtype=np.float64) for v in y]
        if len(Xs) != len(models) or len(ys) != len(models):
            raise ValueError("need one test set per model")
    else:
        Xs, ys = [X] * len(models), [np.asarray(y, dtype=np.float64)] * len(models)
    grid = sorted(set(ys[0].tolist())) if temperature_grid is None else [float(t) for t in temperature_grid]
    rows = []
    for model, Xm, ym in zip(models, Xs, ys):
        _, per_t = evaluate(model, Xm, ym)
        rows.append([per_t[t] for t in grid])
    per_model = np.array(rows)
    return TempStats(
        temperatures=grid,
        mse_mean=per_model.mean(axis=0),
        mse_std=per_model.std(axis=0),
        counts=[int(np.count_nonzero(ys[0] == t)) for t in grid],
        per_model=per_model,
    )


@dataclass
class CorrelationCell:
    metric: str
    target: str
    pearson: float | None
    kendall: float | None
    note: str = ""


@dataclass
class CorrelationTable:
    """Correlation of each coverage metric with each error/temperature target.

    Metric rows named ``nc``..``snac`` use the per-temperature mean of the
    metric over models; rows suffixed ``_std`` use its population std.
    """

    cells: List[CorrelationCell]
    aggregation: str = "metric averaged over models per temperature, then correlated across temperatures"

    def get(self, metric: str, target: str) -> CorrelationCell:
        for c in self.cells:
            if c.metric == metric and c.target == target:
                return c
        raise KeyError((metric, target))


def metric_matrix(coverage: Sequence[Mapping[float, CoverageReport]], temperatures: Sequence[float],
                  metric: str) -> np.ndarray:
    """``(n_models, n_temps)`` values of one metric."""
    return np.array([[getattr(per_t[t], metric) for t in temperatures] for per_t in coverage])


def _safe(fn, x, y):
    try:
        return fn(x, y), ""
    except UndefinedCorrelationError as exc:
        return None, str(exc)


def correlation_table(coverage: Sequence[Mapping[float, CoverageReport]], stats: TempStats,
                      include_std: bool = True) -> CorrelationTable:
    for per_t in coverage:
        if sorted(per_t) != sorted(stats.temperatures):
            raise ValueError("coverage reports and statistics cover different temperature grids")
    targets = {
        "mse_mean": stats.mse_mean,
        "mse_std": stats.mse_std,
        "temperature": np.asarray(stats.temperatures),
    }
    cells = []
    aggregates = [("", np.mean)] + ([("_std", np.std)] if include_std else [])
    for suffix, agg in aggregates:
        for metric in METRICS:
            values = agg(metric_matrix(coverage, stats.temperatures, metric), axis=0)
            for target in TARGETS:
                p, note_p = _safe(pearson, values, targets[target])
                k, note_k = _safe(kendall_tau, values, targets[target])
                cells.append(CorrelationCell(metric + suffix, target, p, k, note_p or note_k))
    return CorrelationTable(cells)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    below: int
    above: int

    @property
    def excluded(self) -> int:
        return self.below + self.above


def histogram(values, bins: int, value_range: tuple) -> Histogram:
    """Equal-width half-open bins ``[lo, hi)``; values outside the range are tallied apart."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = map(float, value_range)
    if not hi > lo:
        raise ValueError("range upper bound must exceed lower bound")
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    edges = np.linspace(lo, hi, bins + 1)
    below = int(np.count_nonzero(v < lo))
    above = int(np.count_nonzero(~(v < hi)))  # includes nan/inf
    inside = v[(v >= lo) & (v < hi)]
    # scaled index rather than edge search: 0.3 with 10 bins over [0, 1) lands in bin 3
    idx = np.floor((inside - lo) * bins / (hi - lo)).astype(np.int64)
    counts = np.bincount(np.clip(idx, 0, bins - 1), minlength=bins)
    return Histogram(edges, counts, below, above)


def _fmt(value) -> str:
    if value is None:
        return ""
    return format_float(value)


def write_temp_stats_csv(stats: TempStats, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["temperature", "mse_mean", "mse_std"])
        for t, m, s in zip(stats.temperatures, stats.mse_mean, stats.mse_std):
            w.writerow([format_float(t), format_float(m), format_float(s)])


def read_temp_stats_csv(path) -> Dict[float, tuple]:
    with open(path, newline="") as fh:
        return {float(r["temperature"]): (float(r["mse_mean"]), float(r["mse_std"])) for r in csv.DictReader(fh)}


def write_correlations_csv(table: CorrelationTable, path) -> None:
    """Undefined cells are written with empty coefficients and a note."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "target", "pearson", "kendall", "note"])
        for c in table.cells:
            w.writerow([c.metric, c.target, _fmt(c.pearson), _fmt(c.kendall), c.note])


def write_histogram_csv(hist: Histogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, n in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            w.writerow([format_float(lo), format_float(hi), int(n)])


def plot_outputs(out_dir, stats: TempStats, coverage: Sequence[Mapping[float, CoverageReport]],
                 hist: Histogram) -> List[str]:
    """Render static PNG charts next to the CSVs; returns the written file names."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    out_dir = Path(out_dir)
    written = []

    def save(fig, name):
        fig.tight_layout()
        fig.savefig(out_dir / name, dpi=100)
        plt.close(fig)
        written.append(name)

    fig, ax = plt.subplots()
    ax.bar(hist.edges[:-1], hist.counts, width=np.diff(hist.edges), align="edge")
    ax.set_xlabel("test MSE")
    ax.set_ylabel("architectures")
    save(fig, "mse_histogram.png")

    for name, values in (("mse_mean", stats.mse_mean), ("mse_std", stats.mse_std)):
        fig, ax = plt.subplots()
        ax.plot(stats.temperatures, values, marker="o")
        ax.set_xlabel("temperature")
        ax.set_ylabel(name)
        save(fig, f"{name}_by_temperature.png")

    for metric in METRICS:
        m = metric_matrix(coverage, stats.temperatures, metric)
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        axes[0].plot(stats.temperatures, m.mean(axis=0), marker="o")
        axes[0].set_ylabel(f"mean {metric}")
        axes[1].plot(stats.temperatures, m.std(axis=0), marker="o")
        axes[1].set_ylabel(f"std {metric}")
        for ax in axes:
            ax.set_xlabel("temperature")
        save(fig, f"{metric}_by_temperature.png")
    return written
