import itertools

import numpy as np
import pytest

from molrc import experiment
from molrc.encode import write_idx
from molrc.experiment import ConfigError, ExperimentConfig
from molrc.molgraph import build_soft_graph, read_pdb

from conftest import pdb_line

ELEMENTS = ["N", "C", "C", "O", "C", "S"]


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    rng = np.random.default_rng(0)
    lines = []
    for k in range(60):
        x, y, z = rng.uniform(0, 12, 3)
        el = ELEMENTS[k % len(ELEMENTS)]
        lines.append(pdb_line(k + 1, f"{el}{k % 6}", "ALA", "A", k // 6 + 1, x, y, z, el))
    structure = root / "tiny.pdb"
    structure.write_text("\n".join(lines) + "\nEND\n")
    mnist = root / "mnist"
    mnist.mkdir()
    for split, n in (("train", 30), ("t10k", 20)):
        images = rng.integers(0, 256, (n, 28, 28), dtype=np.uint8)
        images[:, :, :10] = 0
        labels = (np.arange(n) % 10).astype(np.uint8)
        write_idx(mnist / f"{split}-images-idx3-ubyte", mnist / f"{split}-labels-idx1-ubyte", images, labels)
    return structure, mnist


def tiny_config(tiny_data, tmp_path, **kw):
    structure, mnist = tiny_data
    base = ExperimentConfig(
        structure=str(structure), mnist_dir=str(mnist), train_n=10, test_n=10,
        connectivity="soft", rho=4.0, encode_gain=60.0, weight_gain=10.0, input_pulse_gain=80.0,
        eta=1e-2, readout_gain=0.2, out_dir=str(tmp_path / "out"),
    )
    return base.replace(**kw)


# -- config ---------------------------------------------------------------

def test_ini_round_trip():
    cfg = ExperimentConfig(structure="a.pdb", rho=12.5, learner="regression", epochs=7, keep_water=True)
    again = ExperimentConfig.from_ini(cfg.to_ini())
    assert again == cfg
    assert again.hash() == cfg.hash()


def test_ini_partial_overrides_base():
    cfg = ExperimentConfig.from_ini("[learn]\neta = 0.5\n[run]\nrepeat = 3\n")
    assert cfg.eta == 0.5 and cfg.repeat == 3 and cfg.rho == ExperimentConfig().rho


@pytest.mark.parametrize("text, path", [
    ("[learn]\nbogus = 1\n", "learn.bogus"),
    ("[data]\neta = 1\n", "data.eta"),
    ("[run]\nrepeat = many\n", "run.repeat"),
    ("[data]\nkeep_water = perhaps\n", "data.keep_water"),
])
def test_ini_errors_name_the_field(text, path):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_ini(text)
    assert info.value.path == path


@pytest.mark.parametrize("change, path", [
    ({"repeat": 0}, "run.repeat"),
    ({"connectivity": "fuzzy"}, "reservoir.connectivity"),
    ({"connectivity": "soft", "rho": None}, "reservoir.rho"),
    ({"learner": "svm"}, "learn.learner"),
    ({"duration": 5.25}, "reservoir.duration"),
    ({"weight_gain": 0.0}, "reservoir.weight_gain"),
    ({"train_n": 0}, "data.train_n"),
])
def test_validation_errors_name_the_field(change, path):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(**change).validate(check_files=False)
    assert info.value.path == path


def test_validation_checks_files(tiny_data, tmp_path):
    cfg = tiny_config(tiny_data, tmp_path)
    cfg.validate()
    with pytest.raises(ConfigError) as info:
        cfg.replace(structure=str(tmp_path / "missing.pdb")).validate()
    assert info.value.path == "data.structure"
    with pytest.raises(ConfigError) as info:
        cfg.replace(mnist_dir=str(tmp_path)).validate()
    assert info.value.path == "data.mnist_dir"


def test_hash_identity():
    cfg = ExperimentConfig()
    assert cfg.hash() == ExperimentConfig().hash()
    assert cfg.replace(seed=1).hash() != cfg.hash()
    assert cfg.replace(out_dir="elsewhere", workers=4).hash() == cfg.hash()


def test_seed_derivation():
    assert ExperimentConfig(seed=7, repeat=10).seeds() == list(range(7, 17))


def test_desk_preset_is_valid():
    cfg = experiment.load_preset("desk")
    cfg.validate(check_files=False)
    assert cfg.train_n == 5000 and cfg.test_n == 1000
    with pytest.raises(ConfigError):
        experiment.preset_text("laptop")


# -- running --------------------------------------------------------------

def test_smoke_run_writes_artifacts(tiny_data, tmp_path):
    cfg = tiny_config(tiny_data, tmp_path, repeat=2, save_reservoir=True)
    report = experiment.run(cfg)
    h = cfg.hash()
    assert report.seeds == [0, 1] and len(report.accuracies) == 2
    assert report.confusion.total == 20
    for key in ("config", "metrics", "confusion", "adjacency", "model_r0", "model_r1", "raster_r0_0", "input_raster_0", "reservoir_r1"):
        assert report.artifacts[key].exists()
        assert h in report.artifacts[key].name
    lines = report.artifacts["metrics"].read_text().splitlines()
    assert lines[0] == "repeat,seed,accuracy,error_rate" and lines[-2].startswith("mean,")
    assert ExperimentConfig.from_file(report.artifacts["config"]) == cfg


def test_runs_are_byte_identical(tiny_data, tmp_path):
    a = experiment.run(tiny_config(tiny_data, tmp_path / "a"))
    b = experiment.run(tiny_config(tiny_data, tmp_path / "b"))
    assert a.artifacts["metrics"].read_bytes() == b.artifacts["metrics"].read_bytes()
    assert a.artifacts["confusion"].read_bytes() == b.artifacts["confusion"].read_bytes()


def test_distinct_configs_do_not_collide(tiny_data, tmp_path):
    a = experiment.run(tiny_config(tiny_data, tmp_path, seed=0))
    b = experiment.run(tiny_config(tiny_data, tmp_path, seed=5))
    assert a.artifacts["metrics"] != b.artifacts["metrics"]
    assert a.artifacts["metrics"].exists() and b.artifacts["metrics"].exists()


@pytest.mark.parametrize("connectivity", ["none", "hard"])
def test_baselines_run(tiny_data, tmp_path, connectivity):
    report = experiment.run(tiny_config(tiny_data, tmp_path, connectivity=connectivity), write=False)
    assert 0.0 <= report.mean_accuracy <= 1.0
    if connectivity == "none":
        assert report.edge_count == 0


def test_regression_learner(tiny_data, tmp_path):
    report = experiment.run(tiny_config(tiny_data, tmp_path, learner="regression", epochs=5), write=False)
    assert report.confusion.total == 10


def test_worker_pool_matches_serial(tiny_data, tmp_path):
    serial = experiment.run(tiny_config(tiny_data, tmp_path / "s", repeat=2))
    pooled = experiment.run(tiny_config(tiny_data, tmp_path / "p", repeat=2, workers=2))
    assert serial.artifacts["metrics"].read_bytes() == pooled.artifacts["metrics"].read_bytes()


def test_single_rho_sweep_matches_run(tiny_data, tmp_path):
    cfg = tiny_config(tiny_data, tmp_path, rho=5.0)
    points, csv_path = experiment.sweep_soft_distance(cfg, [5.0])
    report = experiment.run(cfg, write=False)
    assert points[0].report.accuracies == report.accuracies
    row = csv_path.read_text().splitlines()[1].split(",")
    assert float(row[0]) == 5.0 and float(row[1]) == pytest.approx(1 - report.mean_accuracy, abs=1e-6)


def brute_force_clustering(n, edges):
    adj = [set() for _ in range(n)]
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    total = 0.0
    for v in range(n):
        k = len(adj[v])
        if k >= 2:
            linked = sum(1 for a, b in itertools.combinations(sorted(adj[v]), 2) if b in adj[a])
            total += linked / (k * (k - 1) / 2)
    return total / n


def test_sweep_clustering_column(tiny_data, tmp_path):
    rhos = [6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0]
    cfg = tiny_config(tiny_data, tmp_path, train_n=5, test_n=5)
    points, csv_path = experiment.sweep_soft_distance(cfg, rhos)
    rows = [line.split(",") for line in csv_path.read_text().splitlines()[1:]]
    cs = [float(r[3]) for r in rows]
    assert cs == sorted(cs)
    atoms = read_pdb(tiny_data[0])
    for rho, c in zip(rhos, cs):
        g = build_soft_graph(atoms, rho)
        assert c == pytest.approx(brute_force_clustering(g.node_count, g.edges), abs=1e-6)


def test_empty_sweep_rejected(tiny_data, tmp_path):
    with pytest.raises(ConfigError):
        experiment.sweep_soft_distance(tiny_config(tiny_data, tmp_path), [])


# -- inspect --------------------------------------------------------------

def test_inspect_report(tiny_data, tmp_path):
    rep = experiment.inspect(tiny_data[0], rho=5.0, out_dir=tmp_path)
    assert rep.metrics.node_count == 60
    assert rep.inhibitory_fraction == pytest.approx(10 / 60)
    assert rep.adjacency_path.read_text().count("\n") == rep.metrics.edge_count
    text = rep.text()
    assert "[hard]" in text and "[soft rho=5]" in text and "inhibitory_fraction = 0.1667" in text
