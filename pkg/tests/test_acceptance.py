"""Acceptance suite: one test per criterion, summarised as PASS/FAIL lines.

Run on its own with ``pytest tests/test_acceptance.py``; the summary
section at the end of the pytest output lists every criterion.
"""

import csv
import math
import time

import numpy as np
import pytest

from isingnas.analysis import kendall_tau, pearson
from isingnas.cli import main
from isingnas.coverage import (
    activation_trace,
    bounds_from_trace,
    kmn_from_trace,
    nbc_from_trace,
    nc_from_trace,
    snac_from_trace,
    tknc_from_trace,
)
from isingnas.lattice import SimulationParams, SpinLattice, flip_energy_delta, run_chain, total_energy
from isingnas.mlp import (
    ACTIVATIONS,
    INITIALIZERS,
    AdamState,
    ArchitectureSpec,
    LayerSpec,
    TrainConfig,
    adam_step,
    backprop_gradients,
    init_model,
)
from oracles import (
    bounds_oracle,
    corner_oracle,
    exact_ising_averages,
    kmn_oracle,
    longdouble_gradients,
    nc_oracle,
    tknc_oracle,
)

# fixed before any acceptance run was looked at
DESK_SEEDS = (42, 43, 44)
MEAN_PREDICTOR_MSE = (26 ** 2 - 1) / 12 * 0.1 ** 2


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """Desk-profile pipelines through the CLI: each seed once, plus a repeat of the first."""
    runs = {}
    for label, seed in [(str(s), s) for s in DESK_SEEDS] + [("repeat", DESK_SEEDS[0])]:
        out = tmp_path_factory.mktemp(f"desk_{label}")
        start = time.perf_counter()
        code = main(["pipeline", "--profile", "desk", "--seed", str(seed), "--out", str(out)])
        runs[label] = {"out": out, "code": code, "seconds": time.perf_counter() - start}
    return runs


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def correlations(out):
    return {(r["metric"], r["target"]): r for r in read_rows(out / "correlations.csv")}


def run_dirs(out):
    return sorted(out.glob("run_*"))


# -- 1 -------------------------------------------------------------------------

@pytest.mark.criterion(1, "Wolff sampling matches exact 3x3 enumeration within 1%")
def test_mcmc_exactness(detail):
    start = time.perf_counter()
    worst = 0.0
    for index, temperature in enumerate((1.5, 2.5)):
        params = SimulationParams(3, [temperature], 100_000, seed=2024)
        samples = run_chain(params, temperature, np.random.default_rng([2024, index]))
        spins = np.stack([s.configuration.reshape(3, 3) for s in samples]).astype(np.int64)
        bonds = (spins * np.roll(spins, 1, axis=1)).sum(axis=(1, 2)) + (spins * np.roll(spins, 1, axis=2)).sum(axis=(1, 2))
        energy = float((-bonds).mean())
        abs_m = float(np.abs(spins.mean(axis=(1, 2))).mean())
        exact_e, exact_m = exact_ising_averages(3, temperature)
        worst = max(worst, abs(energy - exact_e) / abs(exact_e), abs(abs_m - exact_m) / exact_m)
    elapsed = time.perf_counter() - start
    detail(f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert worst < 0.01
    assert elapsed < 60


# -- 2 -------------------------------------------------------------------------

@pytest.mark.criterion(2, "flip_energy_delta equals the energy difference")
def test_delta_e_consistency(detail):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10_000):
        size = int(rng.integers(2, 13))
        coupling = float(rng.choice([1.0, 0.5, -1.0, 2.5]))
        lattice = SpinLattice(rng.choice(np.array([-1, 1], dtype=np.int8), size=(size, size)), coupling)
        r, c = (int(v) for v in rng.integers(size, size=2))
        delta = flip_energy_delta(lattice, r, c)
        flipped = lattice.copy()
        flipped.spins[r, c] *= -1
        worst = max(worst, abs(delta - (total_energy(flipped) - total_energy(lattice))))
    detail(f"max abs err {worst:.1e}")
    assert worst <= 1e-9


# -- 3 -------------------------------------------------------------------------

def _relative_errors(analytic, numeric, floor=1e-8):
    """Elementwise |a - n| / max(|a|, |n|, floor).

    Central differences in extended precision carry about 3e-14 of
    absolute noise at h = 1e-5, which is 1e-5 relative at 3e-9. Entries
    below the floor are therefore held to an absolute 1e-13 instead.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


@pytest.mark.criterion(3, "backprop matches central differences on 20 architectures")
def test_gradient_check(detail):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        layers = tuple(
            LayerSpec(int(rng.integers(1, 21)), str(rng.choice(ACTIVATIONS)), str(rng.choice(INITIALIZERS)))
            for _ in range(int(rng.integers(1, 21)))
        )
        model = init_model(ArchitectureSpec(64, layers), int(rng.integers(1 << 30)))
        model.biases = [rng.normal(scale=0.1, size=b.shape) for b in model.biases]
        X = rng.choice([-1.0, 1.0], size=(4, 64))
        y = rng.uniform(1.0, 3.5, size=4)
        analytic = backprop_gradients(model, X, y)
        numeric = longdouble_gradients(model.weights, model.biases, [l.activation for l in layers], X, y)
        worst = max(worst, _relative_errors(analytic, numeric))
    elapsed = time.perf_counter() - start
    detail(f"max rel err {worst:.1e}, {elapsed:.1f} s")
    assert worst < 1e-5
    assert elapsed < 30


# -- 4 -------------------------------------------------------------------------

@pytest.mark.criterion(4, "two Adam steps reproduce the hand computation")
def test_adam_two_steps(detail):
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    theta, g1, g2 = 0.3, 0.2, -0.4
    m = (1 - b1) * g1
    v = (1 - b2) * g1 ** 2
    theta1 = theta - lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2 ** 2
    theta2 = theta1 - lr * (m / (1 - b1 ** 2)) / (math.sqrt(v / (1 - b2 ** 2)) + eps)

    cfg = TrainConfig(learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps)
    params = [np.array([theta])]
    state = AdamState.zeros_like(params)
    params, state = adam_step(params, [np.array([g1])], state, 1, cfg)
    err1 = abs(params[0][0] - theta1)
    params, state = adam_step(params, [np.array([g2])], state, 2, cfg)
    err2 = abs(params[0][0] - theta2)
    detail(f"errors {err1:.1e}, {err2:.1e}")
    assert err1 <= 1e-12 and err2 <= 1e-12


# -- 5 -------------------------------------------------------------------------

@pytest.mark.criterion(5, "coverage metrics equal brute-force definitions")
def test_coverage_oracle_equivalence(detail):
    rng = np.random.default_rng(5)
    checks = 0
    for _ in range(50):
        widths = []
        while not widths or sum(widths) < 10 and rng.random() < 0.6:
            room = 10 - sum(widths)
            if room == 0:
                break
            widths.append(int(rng.integers(1, room + 1)))
        layers = tuple(LayerSpec(w, str(rng.choice(ACTIVATIONS)), str(rng.choice(INITIALIZERS))) for w in widths)
        model = init_model(ArchitectureSpec(64, layers), int(rng.integers(1 << 30)))
        model.biases = [rng.normal(scale=0.3, size=b.shape) for b in model.biases]
        profile = activation_trace(model, rng.choice([-1.0, 1.0], size=(30, 64)))
        test = activation_trace(model, rng.choice([-1.0, 1.0], size=(10, 64)))
        bounds = bounds_from_trace(profile)
        low, high = bounds_oracle(profile)
        assert list(bounds.low) == low and list(bounds.high) == high
        for t, k, sections in ((0.0, 1, 10), (0.25, 2, 3), (-0.1, 3, 1)):
            assert nc_from_trace(test, t) == nc_oracle(test, t)
            assert tknc_from_trace(test, k) == tknc_oracle(test, k)
            assert kmn_from_trace(test, bounds, sections) == kmn_oracle(test, low, high, sections)
            nbc, snac = corner_oracle(test, low, high)
            assert nbc_from_trace(test, bounds) == nbc
            assert snac_from_trace(test, bounds) == snac
            checks += 5
    detail(f"{checks} exact comparisons")


# -- 6 -------------------------------------------------------------------------

@pytest.mark.criterion(6, "coverage boundary identities")
def test_boundary_identities(detail):
    rng = np.random.default_rng(6)
    for _ in range(20):
        layers = tuple(LayerSpec(int(rng.integers(1, 21)), str(rng.choice(ACTIVATIONS)))
                       for _ in range(int(rng.integers(1, 6))))
        model = init_model(ArchitectureSpec(64, layers), int(rng.integers(1 << 30)))
        trace = activation_trace(model, rng.choice([-1.0, 1.0], size=(25, 64)))
        bounds = bounds_from_trace(trace)
        assert nbc_from_trace(trace, bounds) == 0.0
        assert snac_from_trace(trace, bounds) == 0.0
        assert kmn_from_trace(trace, bounds, 1) == 1.0
        widest = max(l.width for l in layers)
        assert tknc_from_trace(trace, widest) == 1.0
    detail("20 random models")


# -- 7 -------------------------------------------------------------------------

@pytest.mark.criterion(7, "desk pipeline beats the mean predictor and MSE 0.5")
def test_baseline_beat(desk_runs, detail):
    run = desk_runs[str(DESK_SEEDS[0])]
    assert run["code"] == 0
    best = []
    for d in run_dirs(run["out"]):
        test = read_rows(d / "manifest.csv")[0]["test_mse"]
        best.append(float(test))
    detail(f"best-model test MSE per run {[round(v, 4) for v in best]}, {run['seconds']:.0f} s")
    assert len(best) == 3
    assert max(best) < MEAN_PREDICTOR_MSE
    assert max(best) < 0.5
    assert run["seconds"] < 15 * 60


# -- 8 -------------------------------------------------------------------------

def w_shape(per_t):
    grid = sorted(per_t)
    near_tc = min(grid, key=lambda t: abs(t - 2.3))
    floor = max(per_t[1.7], per_t[3.0])
    return all(per_t[t] > floor for t in (1.0, near_tc, 3.5))


@pytest.mark.criterion(8, "per-temperature MSE has the W shape")
def test_w_shape(desk_runs, detail):
    run = desk_runs[str(DESK_SEEDS[0])]
    assert run["code"] == 0
    shapes = []
    for d in run_dirs(run["out"]):
        per_t = {float(r["temperature"]): float(r["mse"]) for r in read_rows(d / "temp_mse.csv")}
        shapes.append(w_shape(per_t))
    detail(f"W shape in {sum(shapes)} of {len(shapes)} runs")
    assert sum(shapes) >= 2


# -- 9 -------------------------------------------------------------------------

@pytest.mark.criterion(9, "correlation signs: TKNC with temperature, NC spread with mean MSE")
def test_correlation_signs(desk_runs, detail):
    outcomes = []
    for seed in DESK_SEEDS:
        run = desk_runs[str(seed)]
        assert run["code"] == 0
        table = correlations(run["out"])
        tknc_t = float(table[("tknc", "temperature")]["pearson"])
        nc_std = float(table[("nc_std", "mse_mean")]["pearson"])
        outcomes.append((seed, tknc_t, nc_std, tknc_t > 0.5 and nc_std < 0))
    detail(", ".join(f"seed {s}: tknc~T {a:+.3f}, nc_std~mse {b:+.3f}" for s, a, b, _ in outcomes))
    assert sum(ok for *_, ok in outcomes) >= 2


# -- 10 ------------------------------------------------------------------------

@pytest.mark.criterion(10, "repeat desk run is byte-identical")
def test_determinism(desk_runs, detail):
    a, b = desk_runs[str(DESK_SEEDS[0])]["out"], desk_runs["repeat"]["out"]
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert files and files == sorted(p.relative_to(b) for p in b.rglob("*.csv"))
    differing = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    detail(f"{len(files)} CSV files compared")
    assert not differing, differing


# -- 11 ------------------------------------------------------------------------

@pytest.mark.criterion(11, "pearson and kendall_tau hand values")
def test_correlation_unit_values(detail):
    x = np.arange(1.0, 8.0)
    cases = [
        (pearson(x, 2 * x + 1), 1.0),
        (pearson(x, -x), -1.0),
        (pearson([1, 2, 3, 4], [1, 3, 2, 4]), 0.8),
        (kendall_tau(x, x ** 3), 1.0),
        (kendall_tau(x, x[::-1]), -1.0),
        (kendall_tau([1, 2, 3], [1, 3, 2]), 1 / 3),
    ]
    worst = max(abs(got - want) for got, want in cases)
    detail(f"max abs err {worst:.1e}")
    assert worst <= 1e-12
