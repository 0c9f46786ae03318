"""Neuron coverage metrics over hidden-layer activations.

Every metric takes the hidden post-activation trace of a test set, given
as a list with one ``(n_samples, width)`` array per hidden layer. The
output neuron is not counted. Per-neuron bounds ``[L_c, H_c]`` come from
:func:`profile_bounds` on the training split.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .mlp import TrainedModel, forward

METRICS = ("nc", "tknc", "kmn", "nbc", "snac")


@dataclass
class NeuronBounds:
    low: np.ndarray
    high: np.ndarray
    layer_sizes: List[int]

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        if self.low.shape != self.high.shape or self.low.size != sum(self.layer_sizes):
            raise ValueError("bounds do not match the layer sizes")
        if np.any(self.low > self.high):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_neurons(self) -> int:
        return int(self.low.size)


@dataclass(frozen=True)
class CoverageParams:
    """Threshold ``t`` for NC, ``top_k`` for TKNC and ``sections`` (k) for KMN."""

    threshold: float = 0.0
    top_k: int = 1
    sections: int = 10

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.sections < 1:
            raise ValueError("sections must be >= 1")


@dataclass
class CoverageReport:
    nc: float
    tknc: float
    kmn: float
    nbc: float
    snac: float
    params: CoverageParams
    test_set: str = ""

    def as_dict(self) -> dict:
        out = {m: getattr(self, m) for m in METRICS}
        out.update(asdict(self.params))
        out["test_set"] = self.test_set
        return out


def _as_trace(trace) -> List[np.ndarray]:
    layers = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in trace]
    if not layers or sum(a.shape[1] for a in layers) == 0:
        raise ValueError("trace has no hidden neurons")
    n = {len(a) for a in layers}
    if len(n) != 1:
        raise ValueError("layers disagree on the number of samples")
    if n.pop() == 0:
        raise ValueError("empty test set")
    return layers


def _flat(trace) -> np.ndarray:
    return np.concatenate(_as_trace(trace), axis=1)


def activation_trace(model: TrainedModel, X) -> List[np.ndarray]:
    """Hidden post-activations of a batch, one array per layer."""
    return forward(model, np.atleast_2d(np.asarray(X, dtype=np.float64)))[1]


def bounds_from_trace(trace) -> NeuronBounds:
    layers = _as_trace(trace)
    flat = np.concatenate(layers, axis=1)
    return NeuronBounds(flat.min(axis=0), flat.max(axis=0), [a.shape[1] for a in layers])


def profile_bounds(model: TrainedModel, profile_X) -> NeuronBounds:
    """Per-neuron min and max activation over the profiling inputs."""
    return bounds_from_trace(activation_trace(model, profile_X))


def nc_from_trace(trace, threshold: float = 0.0) -> float:
    A = _flat(trace)
    return float(np.count_nonzero((A > threshold).any(axis=0)) / A.shape[1])


def tknc_from_trace(trace, top_k: int = 1) -> float:
    """Ties within a layer go to the lowest neuron index."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    layers = _as_trace(trace)
    covered = 0
    for a in layers:
        width = a.shape[1]
        if top_k >= width:
            covered += width
            continue
        # stable sort on the negated values keeps lower indices first among equals
        top = np.argsort(-a, axis=1, kind="stable")[:, :top_k]
        covered += np.unique(top).size
    return covered / sum(a.shape[1] for a in layers)


def _section_hits(A: np.ndarray, bounds: NeuronBounds, sections: int) -> np.ndarray:
    """Boolean ``(n_neurons, sections)`` matrix of covered sections."""
    low, high = bounds.low, bounds.high
    width = (high - low) / sections
    inside = (A >= low) & (A <= high)
    index = np.zeros(A.shape, dtype=np.int64)
    for s in range(1, sections):
        index += A >= low + s * width
    index[:, width == 0] = 0
    hits = np.zeros((A.shape[1], sections), dtype=bool)
    rows, cols = np.nonzero(inside)
    hits[cols, index[rows, cols]] = True
    return hits


def kmn_from_trace(trace, bounds: NeuronBounds, sections: int = 10) -> float:
    """Covered sections summed over neurons, divided by ``sections * N``.

    Section s of neuron c is ``[L + (s-1)w, L + s w)`` with ``w = (H-L)/k``;
    the last section is closed at H. A neuron with ``L == H`` has one
    zero-width section, hit only by activations equal to L.
    """
    if sections < 1:
        raise ValueError("sections must be >= 1")
    A = _flat(trace)
    _check_bounds(A, bounds)
    return float(_section_hits(A, bounds, sections).sum() / (sections * A.shape[1]))


def _corner_sets(trace, bounds: NeuronBounds):
    A = _flat(trace)
    _check_bounds(A, bounds)
    return (A < bounds.low).any(axis=0), (A > bounds.high).any(axis=0)


def nbc_from_trace(trace, bounds: NeuronBounds) -> float:
    lower, upper = _corner_sets(trace, bounds)
    return float((lower.sum() + upper.sum()) / (2 * lower.size))


def snac_from_trace(trace, bounds: NeuronBounds) -> float:
    _, upper = _corner_sets(trace, bounds)
    return float(upper.sum() / upper.size)


def _check_bounds(A, bounds):
    if A.shape[1] != bounds.n_neurons:
        raise ValueError(f"trace has {A.shape[1]} neurons, bounds have {bounds.n_neurons}")


def nc(model, test_X, threshold: float = 0.0) -> float:
    return nc_from_trace(activation_trace(model, test_X), threshold)


def tknc(model, test_X, top_k: int = 1) -> float:
    return tknc_from_trace(activation_trace(model, test_X), top_k)


def kmn(model, test_X, bounds: NeuronBounds, sections: int = 10) -> float:
    return kmn_from_trace(activation_trace(model, test_X), bounds, sections)


def nbc(model, test_X, bounds: NeuronBounds) -> float:
    return nbc_from_trace(activation_trace(model, test_X), bounds)


def snac(model, test_X, bounds: NeuronBounds) -> float:
    return snac_from_trace(activation_trace(model, test_X), bounds)


def coverage_report(model, test_X, bounds: NeuronBounds, params: CoverageParams = CoverageParams(),
                    test_set: str = "") -> CoverageReport:
    trace = activation_trace(model, test_X)
    return CoverageReport(
        nc=nc_from_trace(trace, params.threshold),
        tknc=tknc_from_trace(trace, params.top_k),
        kmn=kmn_from_trace(trace, bounds, params.sections),
        nbc=nbc_from_trace(trace, bounds),
        snac=snac_from_trace(trace, bounds),
        params=params,
        test_set=test_set,
    )


def coverage_by_temperature(model, X, temperatures: Sequence[float], bounds: NeuronBounds,
                            params: CoverageParams = CoverageParams()) -> Dict[float, CoverageReport]:
    """One report per distinct temperature label, each slice scored on its own."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    temperatures = np.asarray(temperatures, dtype=np.float64)
    return {
        float(t): coverage_report(model, X[temperatures == t], bounds, params, test_set=f"T={t!r}")
        for t in np.unique(temperatures)
    }


class CoverageProfiler(BaseEstimator):
    """Learns neuron bounds from training inputs and scores test sets.

    Parameters
    ----------
    model : TrainedModel or fitted MLPRegressor
    threshold, top_k, sections : see :class:`CoverageParams`.
    """

    def __init__(self, model=None, threshold=0.0, top_k=1, sections=10):
        self.model = model
        self.threshold = threshold
        self.top_k = top_k
        self.sections = sections

    def _model(self) -> TrainedModel:
        model = getattr(self.model, "model_", self.model)
        if not isinstance(model, TrainedModel):
            raise TypeError("model must be a TrainedModel or a fitted MLPRegressor")
        return model

    @property
    def params_(self) -> CoverageParams:
        return CoverageParams(self.threshold, self.top_k, self.sections)

    def fit(self, X, y=None):
        self.bounds_ = profile_bounds(self._model(), X)
        return self

    def score_report(self, X, test_set: str = "") -> CoverageReport:
        check_is_fitted(self, "bounds_")
        return coverage_report(self._model(), X, self.bounds_, self.params_, test_set)

    def score_by_temperature(self, X, temperatures) -> Dict[float, CoverageReport]:
        check_is_fitted(self, "bounds_")
        return coverage_by_temperature(self._model(), X, temperatures, self.bounds_, self.params_)
