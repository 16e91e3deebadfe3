"""Acceptance criteria 1-10, one PASS/FAIL line each.

Data locations come from the environment:

- ``MOLRC_DATA`` is the root (default ``/root/data``).
- ``MOLRC_STRUCTURE`` is the canonical verotoxin-1 B-pentamer PDB (default ``$MOLRC_DATA/1bov.pdb``).
- ``MOLRC_SURROGATE`` is the stand-in protein used for the classification criteria when the canonical file is missing.
- ``MOLRC_MNIST_DIR`` holds the four MNIST IDX files (default ``$MOLRC_DATA/mnist``).

Criteria whose inputs are missing are reported as FAIL with the reason, never skipped.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from molrc import experiment, molgraph, neuron
from molrc.experiment import ExperimentConfig
from molrc.learn import ResumeHyper, _with_bias, one_hot, regression_gradient, resume_update
from molrc.neuron import REGULAR_SPIKING

from conftest import random_graph_pairs
from test_learn import finite_difference, max_relative_error, toy_input, toy_solved, toy_spikes, TOY_TICKS
from test_molgraph import clustering_oracle, path_length_oracle
from test_neuron import fine_step_spike_count

pytestmark = pytest.mark.acceptance

DATA = Path(os.environ.get("MOLRC_DATA", "/root/data"))
STRUCTURE = Path(os.environ.get("MOLRC_STRUCTURE", DATA / "1bov.pdb"))
SURROGATE = Path(os.environ.get("MOLRC_SURROGATE", DATA / "surrogate" / "1US0.pdb"))
MNIST = Path(os.environ.get("MOLRC_MNIST_DIR", DATA / "mnist"))
SEEDS = 5
RESULTS: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def canonical_atoms():
    """Canonical structure, trying water-free first; None if the file is missing."""
    if not STRUCTURE.is_file():
        return None, None
    atoms = molgraph.read_pdb(STRUCTURE)
    if len(atoms) != 2992:
        wet = molgraph.read_pdb(STRUCTURE, keep_water=True)
        if len(wet) == 2992:
            return wet, True
    return atoms, False


def classification_structure():
    if STRUCTURE.is_file():
        return STRUCTURE, "canonical"
    if SURROGATE.is_file():
        return SURROGATE, f"surrogate {SURROGATE.name}; canonical file missing"
    return None, "no structure file"


def desk_config(tmp_path, **kw) -> ExperimentConfig:
    structure, _ = classification_structure()
    cfg = experiment.load_preset("desk").replace(
        structure=None if structure is None else str(structure), mnist_dir=str(MNIST), out_dir=str(tmp_path),
        keep_water=bool(STRUCTURE.is_file() and canonical_atoms()[1]),
    )
    return cfg.replace(**kw)


def inputs_missing():
    structure, why = classification_structure()
    if structure is None:
        return why
    if not (MNIST / "train-images-idx3-ubyte").is_file():
        return f"MNIST not found in {MNIST}"
    return None


# -- 1, 2: graph reproduction -----------------------------------------------

def test_criterion_01_hard_graph():
    if not STRUCTURE.is_file():
        record(1, False, f"canonical verotoxin structure not found at {STRUCTURE}")
    start = time.perf_counter()
    atoms, wet = canonical_atoms()
    g = molgraph.build_hard_graph(atoms)
    max_deg = int(g.degrees.max())
    elapsed = time.perf_counter() - start
    detail = f"nodes={g.node_count} edges={g.edge_count} max_degree={max_deg} water={'kept' if wet else 'dropped'} {elapsed:.2f}s"
    if g.node_count == 2992:
        ok = g.edge_count == 2831 and max_deg == 4
    else:
        # atom count differs: report delta, require degree <= 4 and near-forest sparsity
        ok = max_deg <= 4 and g.edge_count <= 1.1 * g.node_count
        detail += f" node_delta={g.node_count - 2992}"
    record(1, ok and elapsed < 5.0, detail)


@pytest.mark.parametrize("rho, c_ref, c_tol, l_ref, l_tol", [(10.0, 0.60, 0.05, 4.93, 0.5), (20.0, 0.69, 0.05, 1.88, 0.3)])
def test_criterion_02_small_world(rho, c_ref, c_tol, l_ref, l_tol):
    if not STRUCTURE.is_file():
        record(2, False, f"rho={rho:g}: canonical verotoxin structure not found at {STRUCTURE}")
    atoms, _ = canonical_atoms()
    start = time.perf_counter()
    m = molgraph.average_metrics(molgraph.build_soft_graph(atoms, rho))
    elapsed = time.perf_counter() - start
    ok = abs(m.average_clustering - c_ref) <= c_tol and abs(m.average_path_length - l_ref) <= l_tol and elapsed < 60
    record(2, ok, f"rho={rho:g}: C={m.average_clustering:.3f} (target {c_ref}±{c_tol}) "
                  f"L={m.average_path_length:.3f} (target {l_ref}±{l_tol}) {elapsed:.1f}s")


# -- 3-6: oracles and unit behaviour ------------------------------------------

def test_criterion_03_metric_oracles():
    mismatches = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 61))
        p = float(rng.uniform(0.02, 0.5))
        pairs = random_graph_pairs(rng, n, p)
        if len(pairs) == 0:
            pairs = np.array([[0, 1]])
        g = molgraph.MolecularGraph.from_pairs(n, pairs)
        local = molgraph.local_clustering(g)
        mean_path, _, disconnected = molgraph.path_length_stats(g)
        oracle_local = clustering_oracle(n, g.edges)
        oracle_mean, oracle_disconnected = path_length_oracle(n, g.edges)
        same = np.allclose(local, oracle_local, rtol=0, atol=1e-12) and disconnected == oracle_disconnected
        same = same and math.isclose(mean_path, oracle_mean, rel_tol=1e-12)
        mismatches += not same
    record(3, mismatches == 0, f"200 random graphs (2-60 nodes), mismatches={mismatches}")


def test_criterion_04_neuron_dynamics():
    ours = len(neuron.spike_times(REGULAR_SPIKING, 10.0, 1000.0))
    oracle = fine_step_spike_count(10.0)
    rng = np.random.default_rng(4)
    r = rng.random(1000)
    inhibitory = rng.random(1000) < 0.5
    exc, inh = neuron.sample_excitatory(r), neuron.sample_inhibitory(r)
    params = neuron.NeuronParams(*(np.where(inhibitory, getattr(inh, f), getattr(exc, f)) for f in "abcd"))
    state = neuron.rest_state(params)
    spikes = 0
    for _ in range(2000):
        state, fired = neuron.step(state, params, 0.0)
        spikes += int(fired.sum())
    ok = abs(ours - oracle) <= 1 and spikes == 0
    record(4, ok, f"I=10 over 1000 ms: {ours} spikes vs fine-step oracle {oracle}; "
                  f"zero-input spikes over 1000 draws x 1000 ms = {spikes}")


def test_criterion_05_resume_unit():
    h = ResumeHyper(eta=5e-3)
    train = [np.flatnonzero(toy_input()[:, 0]) * 0.5]
    teacher = [(TOY_TICKS - 1) * 0.5]
    w = np.zeros(1)
    epochs = None
    for epoch in range(201):
        spikes = toy_spikes(w[0])
        if toy_solved(spikes):
            epochs = epoch
            break
        w = resume_update(w, teacher, list(spikes * 0.5), train, h)
    rng = np.random.default_rng(5)
    trains = [np.sort(rng.uniform(0, 6, rng.integers(0, 5))) for _ in range(50)]
    same = [1.5, 3.0, 5.5]
    w0 = rng.uniform(-1, 1, 50)
    delta = resume_update(w0, same, same, trains, ResumeHyper(eta=0.7)) - w0
    ok = epochs is not None and epochs <= 200 and np.all(delta == 0.0)
    record(5, ok, f"toy task solved after {epochs} epochs (limit 200); identical-train update max |dw| = {np.abs(delta).max():g}")


def test_criterion_06_regression_gradient():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        n, f, k = rng.integers(2, 15), rng.integers(1, 21), rng.integers(2, 11)
        x = _with_bias(rng.normal(size=(n, f)))
        y = one_hot(rng.integers(0, k, n), k)
        theta = rng.normal(scale=0.5, size=(k, f + 1))
        worst = max(worst, max_relative_error(regression_gradient(theta, x, y), finite_difference(theta, x, y, "squared")))
    record(6, worst < 1e-5, f"100 random instances, max relative error {worst:.2e} (limit 1e-5)")


# -- 7-9: desk-scale classification -----------------------------------------------

@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    if inputs_missing():
        return None
    cfg = desk_config(tmp_path_factory.mktemp("prep"))
    return experiment.prepare(cfg)


def test_criterion_07_desk_classification(prepared, tmp_path):
    missing = inputs_missing()
    if missing:
        record(7, False, missing)
    _, label = classification_structure()
    start = time.perf_counter()
    cfg = desk_config(tmp_path)
    reg = experiment.run(cfg.replace(learner="regression"), prepared=experiment.prepare(cfg))
    res = experiment.run(cfg.replace(learner="resume"), prepared=prepared)
    elapsed = time.perf_counter() - start
    ok = reg.mean_accuracy >= 0.80 and res.mean_accuracy >= 0.65 and elapsed < 30 * 60
    record(7, ok, f"[{label}] soft rho={cfg.rho:g}, 5000/1000: regression {reg.mean_accuracy:.3f} (>=0.80), "
                  f"ReSuMe {res.mean_accuracy:.3f} (>=0.65), {elapsed / 60:.1f} min including encoding")


@pytest.fixture(scope="module")
def ablation(prepared, tmp_path_factory):
    if prepared is None:
        return None
    out = tmp_path_factory.mktemp("ablation")
    cfg = desk_config(out, repeat=SEEDS)
    means = {}
    for conn in ("none", "hard"):
        means[conn] = experiment.run(cfg.replace(connectivity=conn), prepared=prepared).mean_accuracy
    points, csv_path = experiment.sweep_soft_distance(cfg, experiment.DEFAULT_SWEEP_RHOS, prepared=prepared)
    return means, points, csv_path


def test_criterion_08_ablation_ordering(ablation):
    missing = inputs_missing()
    if missing:
        record(8, False, missing)
    _, label = classification_structure()
    means, points, _ = ablation
    best = max(points, key=lambda p: p.report.mean_accuracy)
    soft = best.report.mean_accuracy
    ok = means["none"] <= means["hard"] <= soft and soft - means["none"] >= 0.03
    record(8, ok, f"[{label}] {SEEDS}-seed ReSuMe means: none {means['none']:.3f}, hard {means['hard']:.3f}, "
                  f"best soft {soft:.3f} at {best.rho:g} A (gain over none {100 * (soft - means['none']):+.1f} points)")


def test_criterion_09_sweep_shape(ablation):
    missing = inputs_missing()
    if missing:
        record(9, False, missing)
    _, label = classification_structure()
    _, points, csv_path = ablation
    errors = [p.mean_error_rate for p in points]
    rhos = [p.rho for p in points]
    k = int(np.argmin(errors))
    interior = 0 < k < len(points) - 1
    ok = interior and 8.0 <= rhos[k] <= 12.0
    curve = " ".join(f"{r:g}:{e:.3f}" for r, e in zip(rhos, errors))
    record(9, ok, f"[{label}] mean error by rho {curve}; minimum at {rhos[k]:g} A ({csv_path.name})")


# -- 10: determinism ----------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    missing = inputs_missing()
    if missing:
        record(10, False, missing)
    cfg = desk_config(tmp_path, train_n=200, test_n=100, repeat=2, rho=6.0)
    a = experiment.run(cfg.replace(out_dir=str(tmp_path / "a")))
    b = experiment.run(cfg.replace(out_dir=str(tmp_path / "b")))
    same = all(a.artifacts[k].read_bytes() == b.artifacts[k].read_bytes() for k in ("metrics", "confusion", "confusion_r0", "confusion_r1"))
    record(10, same, f"two runs of config {a.config_hash}: metric and confusion files byte-identical = {same}")
