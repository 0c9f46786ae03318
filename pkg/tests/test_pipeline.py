import json
from collections import Counter

import pytest

from isingnas.cli import main
from isingnas.lattice import SimulationParams, generate_dataset, read_dataset_csv, temperature_grid
from isingnas.mlp import TestDataLeakError, load_model
from isingnas.pipeline import (
    PipelineConfig,
    load_config,
    parse_config_text,
    profile_config,
    read_coverage_csv,
    read_population_manifest,
    run_pipeline,
    split_dataset,
    write_config,
)

TINY = {
    "simulation.lattice_size": 4,
    "simulation.tsteps": 3,
    "simulation.samples_per_temperature": 20,
    "simulation.equilibration_steps": 64,
    "split.train_size": 30,
    "split.val_size": 15,
    "split.test_size": 15,
    "train.epochs": 2,
    "train.batch_size": 10,
    "evolution.population_size": 3,
    "evolution.generations": 1,
    "pipeline.runs": 2,
}


@pytest.fixture(scope="module")
def full_scale_data():
    params = SimulationParams(8, temperature_grid(1.0, 3.5, 26), 2500, equilibration_steps=0,
                              decorrelation_steps=0, seed=1)
    return generate_dataset(params)


class TestSplit:
    def test_full_scale_sizes_stratified(self, full_scale_data):
        train, val, test = split_dataset(full_scale_data, (26000, 13000, 26000), seed=3)
        for part, per in ((train, 1000), (val, 500), (test, 1000)):
            counts = Counter(part.temperatures.tolist())
            assert len(counts) == 26 and set(counts.values()) == {per}
        assert (train.split, val.split, test.split) == ("train", "val", "test")

    def test_disjoint_and_deterministic(self):
        data = generate_dataset(SimulationParams(4, [1.0, 2.0], 30, 16, seed=0))
        parts = split_dataset(data, (20, 10, 30), seed=9)
        again = split_dataset(data, (20, 10, 30), seed=9)
        assert all(a == b for a, b in zip(parts, again))
        # sizes cover every row, so disjointness means the union is the source multiset
        def rows(d):
            return Counter((c.tobytes(), t) for c, t in zip(d.configurations, d.temperatures))
        assert rows(parts[0]) + rows(parts[1]) + rows(parts[2]) == rows(data)
        other = split_dataset(data, (20, 10, 30), seed=10)
        assert other[0] != parts[0]

    def test_rejects_bad_sizes(self):
        data = generate_dataset(SimulationParams(4, [1.0, 2.0], 5, 16, seed=0))
        with pytest.raises(ValueError):
            split_dataset(data, (3, 2, 2), seed=0)
        with pytest.raises(ValueError):
            split_dataset(data, (6, 4, 2), seed=0)


class TestConfig:
    def test_full_scale_profile_defaults(self):
        cfg = profile_config("paper")
        assert (cfg.lattice_size, cfg.tmin, cfg.tmax, cfg.tsteps) == (8, 1.0, 3.5, 26)
        assert cfg.samples_per_temperature == 5000
        assert (cfg.train_size, cfg.val_size, cfg.test_size) == (26000, 13000, 26000)
        assert (cfg.epochs, cfg.batch_size, cfg.learning_rate) == (10, 100, 0.001)
        assert (cfg.population_size, cfg.generations) == (50, 40)
        assert (cfg.max_layers, cfg.max_neurons) == (20, 20)
        assert cfg.runs == 30
        cfg.check_splits()

    def test_desk_profile(self):
        cfg = profile_config("desk")
        assert cfg.profile == "desk" and cfg.runs == 3
        cfg.check_splits()
        with pytest.raises(KeyError):
            profile_config("huge")

    def test_parse_and_override(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# comment\nevolution.generations = 7\n\ntrain.learning_rate=0.05  # inline\n")
        cfg = load_config(path, "desk", {"evolution.generations": "9"})
        assert cfg.generations == 9 and cfg.learning_rate == 0.05 and cfg.population_size == 8

    def test_profile_from_file(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("pipeline.profile = desk\n")
        assert load_config(path).runs == 3

    def test_errors(self):
        with pytest.raises(KeyError):
            PipelineConfig().with_flat({"evolution.colour": 1})
        with pytest.raises(ValueError):
            PipelineConfig().with_flat({"evolution.generations": "many"})
        with pytest.raises(ValueError):
            parse_config_text("no equals sign")
        with pytest.raises(ValueError):
            PipelineConfig(train_size=25).check_splits()

    def test_write_round_trip_and_hash(self, tmp_path):
        cfg = profile_config("desk").with_flat({"pipeline.seed": 5})
        write_config(cfg, tmp_path / "c.cfg")
        back = load_config(tmp_path / "c.cfg")
        assert back == cfg and back.hash() == cfg.hash()
        assert cfg.with_flat({"pipeline.seed": 6}).hash() != cfg.hash()
        assert cfg.with_flat({"pipeline.out": "elsewhere"}).hash() == cfg.hash()

    def test_bool_parsing(self):
        assert PipelineConfig().with_flat({"pipeline.shared_dataset": "false"}).shared_dataset is False


@pytest.fixture(scope="module")
def result(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = profile_config("desk").with_flat(TINY)
    return cfg, run_pipeline(cfg, out)


class TestRunPipeline:

    def test_artifacts(self, result):
        cfg, out = result
        for name in ("data.csv", "train.csv", "val.csv", "test.csv", "temp_stats.csv",
                     "correlations.csv", "mse_histogram.csv", "manifest.json"):
            assert (out / name).is_file(), name
        for r in range(2):
            run = out / f"run_{r:03d}"
            for name in ("evolution_log.csv", "manifest.csv", "best_model.json", "coverage.csv", "temp_mse.csv"):
                assert (run / name).is_file(), name
            assert len(list((run / "models").glob("rank_*.json"))) == 3

    def test_manifest_complete(self, result):
        cfg, out = result
        m = json.loads((out / "manifest.json").read_text())
        assert m["complete"] is True
        assert m["config_hash"] == cfg.hash()
        assert m["config"] == cfg.to_flat()
        assert len(m["runs"]) == 2 and len(m["seeds"]["runs"]) == 2
        assert m["stages"][:2] == ["config", "generate"] and m["stages"][-1] == "analyze"
        assert m["analysis"]["std_convention"] == "population"

    def test_splits_on_disk(self, result):
        _, out = result
        test = read_dataset_csv(out / "test.csv")
        assert len(test.y) == 15 and Counter(test.y.tolist()) == {1.0: 5, 2.25: 5, 3.5: 5}

    def test_population_manifest(self, result):
        _, out = result
        rows = read_population_manifest(out / "run_000" / "manifest.csv")
        fitness = [float(r["val_mse"]) for r in rows]
        assert fitness == sorted(fitness)
        best = load_model(out / "run_000" / "best_model.json")
        assert best.spec.widths == [int(w) for w in rows[0]["widths"].split("-")]

    def test_coverage_csv(self, result):
        _, out = result
        cov = read_coverage_csv(out / "run_001" / "coverage.csv")
        assert sorted(cov) == [1.0, 2.25, 3.5]
        assert all(0 <= r.nc <= 1 for r in cov.values())

    def test_separate_datasets(self, tmp_path):
        cfg = profile_config("desk").with_flat({**TINY, "pipeline.shared_dataset": "false", "pipeline.runs": 2})
        out = run_pipeline(cfg, tmp_path)
        a = (out / "run_000" / "data.csv").read_bytes()
        b = (out / "run_001" / "data.csv").read_bytes()
        assert a != b and not (out / "data.csv").exists()


def tiny_flags():
    return [f"--{k}={v}" for k, v in TINY.items() if k not in ("pipeline.runs",)]


class TestCLI:
    def test_stages_end_to_end(self, tmp_path):
        data = tmp_path / "data.csv"
        assert main(["generate", "--size", "4", "--tmin", "1.0", "--tmax", "3.5", "--tsteps", "3",
                     "--samples", "20", "--seed", "1", "--simulation.equilibration_steps=64", "--out", str(data)]) == 0
        assert len(read_dataset_csv(data).y) == 60

        splits = tmp_path / "splits"
        assert main(["split", "--data", str(data), "--sizes", "30,15,15", "--seed", "2", "--out", str(splits)]) == 0

        evo = tmp_path / "evo"
        assert main(["evolve", "--train", str(splits / "train.csv"), "--val", str(splits / "val.csv"),
                     "--test", str(splits / "test.csv"), "--evolution.population_size=3",
                     "--evolution.generations=1", "--train.epochs=2", "--out", str(evo)]) == 0
        assert (evo / "best_model.json").is_file()

        cov = tmp_path / "cov.csv"
        assert main(["coverage", "--model", str(evo / "best_model.json"), "--train", str(splits / "train.csv"),
                     "--test", str(splits / "test.csv"), "--coverage.top_k=2", "--out", str(cov)]) == 0
        assert read_coverage_csv(cov)[1.0].params.top_k == 2

        ana = tmp_path / "ana"
        assert main(["analyze", "--models", str(evo / "best_model.json"), str(evo / "best_model.json"),
                     "--coverage", str(cov), str(cov), "--test", str(splits / "test.csv"),
                     "--manifests", str(evo / "manifest.csv"), "--analysis.histogram_bins=5",
                     "--out", str(ana)]) == 0
        assert len((ana / "mse_histogram.csv").read_text().splitlines()) == 6
        assert (ana / "correlations.csv").is_file()

    def test_pipeline_command(self, tmp_path):
        assert main(["pipeline", "--profile", "desk", "--pipeline.runs=1", *tiny_flags(), "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "manifest.json").read_text())["complete"]

    def test_failure_names_stage(self, tmp_path, capsys):
        code = main(["split", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)])
        assert code != 0
        assert "stage split" in capsys.readouterr().err

    def test_bad_config_fails_fast(self, tmp_path, capsys):
        flags = [f for f in tiny_flags() if not f.startswith("--train.batch_size")]
        code = main(["pipeline", "--profile", "desk", "--pipeline.runs=1", *flags,
                     "--train.batch_size=0", "--out", str(tmp_path)])
        assert code != 0
        assert "stage config" in capsys.readouterr().err
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["failed_stage"] == "config" and not (tmp_path / "data.csv").exists()

    def test_stage_failure_recorded(self, tmp_path, capsys, monkeypatch):
        import isingnas.pipeline as pl

        def broken(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr(pl, "evolve", broken)
        code = main(["pipeline", "--profile", "desk", "--pipeline.runs=1", *tiny_flags(), "--out", str(tmp_path)])
        assert code != 0
        assert "stage evolve[0]" in capsys.readouterr().err
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["failed_stage"] == "evolve[0]" and "complete" not in m
        assert m["stages"] == ["config", "generate"]

    def test_full_scale_manifest_values(self, tmp_path, monkeypatch):
        import isingnas.pipeline as pl

        def stop(*args, **kwargs):
            raise RuntimeError("no full-scale simulation in a unit test")

        monkeypatch.setattr(pl, "generate_dataset", stop)
        assert main(["pipeline", "--profile", "paper", "--out", str(tmp_path)]) != 0
        config = json.loads((tmp_path / "manifest.json").read_text())["config"]
        table = {
            "evolution.max_layers": 20, "evolution.generations": 40,
            "evolution.max_neurons": 20, "evolution.population_size": 50,
            "train.epochs": 10, "split.train_size": 26000,
            "train.batch_size": 100, "split.val_size": 13000, "split.test_size": 26000,
            "simulation.lattice_size": 8, "simulation.samples_per_temperature": 5000,
            "simulation.equilibration_steps": 512, "simulation.coupling": 1.0,
            "simulation.tmin": 1.0, "simulation.tmax": 3.5, "simulation.tsteps": 26,
            "pipeline.runs": 30,
        }
        assert {k: config[k] for k in table} == table

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("nonsense.key = 1\n")
        assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path)]) != 0


class TestDataHygiene:
    def test_training_on_test_split_refused(self):
        from isingnas.mlp import ArchitectureSpec, TrainConfig, init_model, train

        data = generate_dataset(SimulationParams(4, [1.0, 2.0], 10, 16, seed=0))
        _, _, test = split_dataset(data, (10, 4, 6), seed=0)
        with pytest.raises(TestDataLeakError):
            train(init_model(ArchitectureSpec(16), 0), test.X, test.y, TrainConfig(), split=test.split)

    def test_test_file_read_as_test(self, tmp_path):
        # the evolve command tags its --test input so it can never reach training
        data = generate_dataset(SimulationParams(4, [1.0, 2.0], 10, 16, seed=0))
        from isingnas.lattice import write_dataset_csv

        write_dataset_csv(data, tmp_path / "d.csv")
        code = main(["evolve", "--train", str(tmp_path / "d.csv"), "--val", str(tmp_path / "d.csv"),
                     "--evolution.population_size=1", "--evolution.generations=0", "--train.epochs=1",
                     "--out", str(tmp_path / "o")])
        assert code == 0
        assert read_population_manifest(tmp_path / "o" / "manifest.csv")[0]["test_mse"] == "nan"
