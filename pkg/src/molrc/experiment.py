"""Experiment runner: structure to graph to reservoir to readout, with sweeps and artifacts."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import encode, learn, molgraph, neuron, reservoir

CONNECTIVITIES = ("none", "hard", "soft")
LEARNERS = ("resume", "regression")
LOSSES = ("squared", "cross_entropy")
DEFAULT_SWEEP_RHOS = (6.0, 8.0, 9.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0)
PRESETS = ("desk",)
# fields that change where results go or how fast they arrive, not what they are
_UNHASHED = frozenset({"out_dir", "workers"})


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _f(section: str, default, kind: str, help: str = ""):
    return field(default=default, metadata={"section": section, "kind": kind, "help": help})


@dataclass(frozen=True)
class ExperimentConfig:
    structure: Optional[str] = _f("data", None, "path", "PDB structure file")
    mnist_dir: Optional[str] = _f("data", None, "path", "directory holding the four MNIST IDX files")
    keep_water: bool = _f("data", False, "bool", "keep water molecules as nodes")
    train_n: Optional[int] = _f("data", 5000, "optint", "first-N training images (none = all)")
    test_n: Optional[int] = _f("data", 1000, "optint", "first-N test images (none = all)")

    connectivity: str = _f("reservoir", "soft", "str", "none, hard or soft")
    rho: Optional[float] = _f("reservoir", 9.0, "optfloat", "soft distance in angstrom")
    inhibitory: str = _f("reservoir", "O,H", "str", "comma-separated inhibitory elements")
    weight_gain: float = _f("reservoir", reservoir.DEFAULT_WEIGHT_GAIN, "float", "internal synaptic gain")
    input_pulse_gain: Optional[float] = _f("reservoir", None, "optfloat", "gain of input-layer pulses (none = weight_gain)")
    encode_gain: float = _f("reservoir", encode.DEFAULT_INPUT_GAIN, "float", "pixel-to-current gain")
    duration: float = _f("reservoir", 6.0, "float", "presentation window T in ms")
    dt: float = _f("reservoir", neuron.DEFAULT_DT, "float", "time step in ms")
    substeps: int = _f("reservoir", neuron.DEFAULT_SUBSTEPS, "int", "voltage half-steps per tick")

    learner: str = _f("learn", "resume", "str", "resume or regression")
    eta: float = _f("learn", 1e-5, "float", "ReSuMe learning rate")
    a_plus: float = _f("learn", 1.0, "float", "")
    a_minus: float = _f("learn", 1.0, "float", "")
    tau_plus: float = _f("learn", 5.0, "float", "")
    tau_minus: float = _f("learn", 5.0, "float", "")
    readout_gain: Optional[float] = _f("learn", None, "optfloat", "gain of reservoir spikes onto output neurons (none = weight_gain)")
    resume_epochs: int = _f("learn", 1, "int", "ReSuMe epochs")
    regression_epochs: int = _f("learn", 60, "int", "regression epochs")
    epochs: Optional[int] = _f("learn", None, "optint", "epochs for whichever learner runs (overrides the two above)")
    lr: float = _f("learn", 0.5, "float", "regression learning rate")
    batch_size: int = _f("learn", 64, "int", "regression mini-batch size")
    loss: str = _f("learn", "squared", "str", "regression loss: squared or cross_entropy")

    seed: int = _f("run", 0, "int", "base seed; repeat k uses seed + k")
    repeat: int = _f("run", 1, "int", "number of seeds")
    raster_samples: int = _f("run", 1, "int", "test images whose rasters are written")
    save_reservoir: bool = _f("run", False, "bool", "write each reservoir definition")
    workers: int = _f("run", 1, "int", "worker processes for repeats and sweep points")
    out_dir: str = _f("run", "runs", "str", "artifact directory")

    # ---- validation ----------------------------------------------------

    def validate(self, check_files: bool = True) -> "ExperimentConfig":
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(path_of(name), msg)

        need(self.connectivity in CONNECTIVITIES, "connectivity", f"must be one of {', '.join(CONNECTIVITIES)}")
        need(self.learner in LEARNERS, "learner", f"must be one of {', '.join(LEARNERS)}")
        need(self.loss in LOSSES, "loss", f"must be one of {', '.join(LOSSES)}")
        if self.connectivity == "soft":
            need(self.rho is not None and self.rho > 0, "rho", "a positive soft distance is required for soft connectivity")
        for name in ("input_pulse_gain", "readout_gain"):
            need(getattr(self, name) is None or getattr(self, name) > 0, name, "must be positive")
        for name in ("weight_gain", "encode_gain", "duration", "dt", "lr", "tau_plus", "tau_minus"):
            need(getattr(self, name) > 0, name, "must be positive")
        for name in ("eta", "a_plus", "a_minus"):
            need(getattr(self, name) >= 0, name, "must be non-negative")
        need(abs(self.duration / self.dt - round(self.duration / self.dt)) < 1e-9, "duration", "must be a multiple of dt")
        need(self.substeps >= 1, "substeps", "must be >= 1")
        need(self.repeat >= 1, "repeat", "must be >= 1")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.workers >= 1, "workers", "must be >= 1")
        need(self.raster_samples >= 0, "raster_samples", "must be >= 0")
        for name in ("resume_epochs", "regression_epochs"):
            need(getattr(self, name) >= 0, name, "must be >= 0")
        need(self.epochs is None or self.epochs >= 0, "epochs", "must be >= 0")
        for name in ("train_n", "test_n"):
            need(getattr(self, name) is None or getattr(self, name) >= 1, name, "must be >= 1")
        need(bool(self.inhibitory_elements), "inhibitory", "at least one element symbol")
        if check_files:
            need(self.structure is not None, "structure", "no structure file given")
            need(Path(self.structure).is_file(), "structure", f"file not found: {self.structure}")
            need(self.mnist_dir is not None, "mnist_dir", "no MNIST directory given")
            for fname in encode.MNIST_FILES.values():
                for f in fname:
                    need((Path(self.mnist_dir) / f).is_file(), "mnist_dir", f"missing {f} in {self.mnist_dir}")
        return self

    @property
    def inhibitory_elements(self) -> frozenset:
        return frozenset(e.strip().upper() for e in self.inhibitory.split(",") if e.strip())

    @property
    def training_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return self.resume_epochs if self.learner == "resume" else self.regression_epochs

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # ---- identity ------------------------------------------------------

    def hash(self) -> str:
        items = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name not in _UNHASHED}
        blob = json.dumps(items, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.repeat)]

    # ---- text form -----------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for f in dataclasses.fields(self):
            section = f.metadata["section"]
            if not parser.has_section(section):
                parser.add_section(section)
            value = getattr(self, f.name)
            parser.set(section, f.name, "none" if value is None else str(value).lower() if isinstance(value, bool) else str(value))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        by_name = {f.name: f for f in dataclasses.fields(cls)}
        changes = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                path = f"{section}.{key}"
                f = by_name.get(key)
                if f is None or f.metadata["section"] != section:
                    raise ConfigError(path, "unknown setting")
                changes[key] = _coerce(f, raw, path)
        return dataclasses.replace(base or cls(), **changes)

    @classmethod
    def from_file(cls, path, base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text(), base)


def path_of(name: str) -> str:
    f = {f.name: f for f in dataclasses.fields(ExperimentConfig)}[name]
    return f"{f.metadata['section']}.{name}"


def _coerce(f, raw, path: str):
    kind = f.metadata["kind"]
    text = str(raw).strip()
    try:
        if kind.startswith("opt") or kind == "path":
            if text.lower() in ("", "none"):
                return None
            kind = {"optint": "int", "optfloat": "float"}.get(kind, kind)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return text
    except ValueError:
        raise ConfigError(path, f"cannot read {text!r} as {kind}") from None


def coerce_setting(name: str, raw) -> object:
    f = {f.name: f for f in dataclasses.fields(ExperimentConfig)}[name]
    return _coerce(f, raw, path_of(name))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}")
    return resources.files("molrc").joinpath("presets", f"{name}.ini").read_text()


def load_preset(name: str) -> ExperimentConfig:
    return ExperimentConfig.from_ini(preset_text(name))


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Prepared:
    """Inputs shared by every seed of a run: atoms, the two subsets and their encodings."""

    atoms: molgraph.AtomSet
    train: encode.ImageDataset
    test: encode.ImageDataset
    train_input: np.ndarray  # (batch, ticks, 784) bool
    test_input: np.ndarray


def prepare(config: ExperimentConfig) -> Prepared:
    atoms = molgraph.read_pdb(config.structure, keep_water=config.keep_water)
    train = encode.load_mnist_dir(config.mnist_dir, "train").head(config.train_n)
    test = encode.load_mnist_dir(config.mnist_dir, "test").head(config.test_n)
    kw = dict(duration=config.duration, dt=config.dt, gain=config.encode_gain, substeps=config.substeps)
    return Prepared(atoms, train, test, encode.encode_batch(train.images, **kw), encode.encode_batch(test.images, **kw))


def graph_for(config: ExperimentConfig, atoms: molgraph.AtomSet) -> molgraph.MolecularGraph:
    return molgraph.build_graph(atoms, config.connectivity, config.rho if config.connectivity == "soft" else None)


def resume_hyper(config: ExperimentConfig, seed: int) -> learn.ResumeHyper:
    return learn.ResumeHyper(
        eta=config.eta, a_plus=config.a_plus, a_minus=config.a_minus,
        tau_plus=config.tau_plus, tau_minus=config.tau_minus, duration=config.duration,
        epochs=config.training_epochs, seed=seed,
        readout_gain=config.weight_gain if config.readout_gain is None else config.readout_gain,
    )


@dataclass
class SeedResult:
    seed: int
    confusion: learn.ConfusionMatrix
    model: object
    reservoir: reservoir.Reservoir
    sample_rasters: list  # reservoir SpikeRasters for the first test images
    mean_spikes: float

    @property
    def accuracy(self) -> float:
        return self.confusion.accuracy


def run_seed(config: ExperimentConfig, prepared: Prepared, graph: molgraph.MolecularGraph, seed: int) -> SeedResult:
    rcfg = reservoir.ReservoirConfig(
        graph, inhibitory_elements=config.inhibitory_elements, seed=seed,
        weight_gain=config.weight_gain, input_gain=config.input_pulse_gain,
        dt=config.dt, substeps=config.substeps,
    )
    res = reservoir.build_reservoir(prepared.atoms, rcfg)
    train_fired = reservoir.simulate_batch(res, prepared.train_input)
    test_fired = reservoir.simulate_batch(res, prepared.test_input)
    if config.learner == "resume":
        model = learn.train_resume(train_fired, prepared.train.labels, resume_hyper(config, seed), dt=config.dt)
    else:
        model = learn.train_regression(
            reservoir.state_vectors(train_fired), prepared.train.labels,
            lr=config.lr, epochs=config.training_epochs, batch_size=config.batch_size, seed=seed, loss=config.loss,
        )
    cm = learn.evaluate(model, test_fired, prepared.test.labels)
    samples = [encode.SpikeRaster.from_dense(test_fired[k], config.dt) for k in range(min(config.raster_samples, len(test_fired)))]
    return SeedResult(seed, cm, model, res, samples, float(test_fired.sum() / max(len(test_fired), 1)))


# worker-pool plumbing: forked workers read the shared inputs from here
_SHARED: dict = {}


def _pool_task(task):
    config, seed = task
    return run_seed(config, _SHARED["prepared"], _SHARED["graphs"][config.hash()], seed)


def _run_tasks(tasks: Sequence[tuple[ExperimentConfig, int]], prepared: Prepared, graphs: dict, workers: int) -> list[SeedResult]:
    if workers <= 1 or len(tasks) <= 1:
        return [run_seed(cfg, prepared, graphs[cfg.hash()], seed) for cfg, seed in tasks]
    _SHARED.update(prepared=prepared, graphs=graphs)
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            return list(pool.map(_pool_task, tasks))
    finally:
        _SHARED.clear()


@dataclass
class RunReport:
    config: ExperimentConfig
    config_hash: str
    seeds: list[int]
    accuracies: list[float]
    confusion: learn.ConfusionMatrix  # summed over seeds
    wall_time: float
    artifacts: dict[str, Path] = field(default_factory=dict)
    node_count: int = 0
    edge_count: int = 0

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.accuracies))

    def metrics_csv(self) -> str:
        lines = ["repeat,seed,accuracy,error_rate"]
        for k, (s, a) in enumerate(zip(self.seeds, self.accuracies)):
            lines.append(f"{k},{s},{a:.6f},{1 - a:.6f}")
        lines.append(f"mean,,{self.mean_accuracy:.6f},{1 - self.mean_accuracy:.6f}")
        lines.append(f"std,,{self.std_accuracy:.6f},{self.std_accuracy:.6f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        cfg = self.config
        where = cfg.connectivity + (f" rho={cfg.rho:g}" if cfg.connectivity == "soft" else "")
        lines = [
            f"config {self.config_hash}: {where}, learner={cfg.learner}, train_n={cfg.train_n} test_n={cfg.test_n}",
            f"reservoir: {self.node_count} nodes, {self.edge_count} edges",
        ]
        lines += [f"  seed {s}: accuracy {a:.4f}" for s, a in zip(self.seeds, self.accuracies)]
        lines.append(f"mean accuracy {self.mean_accuracy:.4f} (std {self.std_accuracy:.4f}) in {self.wall_time:.1f} s")
        return "\n".join(lines)


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def _write_artifacts(config: ExperimentConfig, h: str, graph, prepared: Prepared, results: list[SeedResult], report: RunReport) -> dict:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = {
        "config": _write(out / f"config_{h}.ini", config.to_ini()),
        "metrics": _write(out / f"metrics_{h}.csv", report.metrics_csv()),
        "timing": _write(out / f"timing_{h}.txt", f"wall_time_s,{report.wall_time:.3f}\n"),
        "confusion": _write(out / f"confusion_{h}.csv", report.confusion.to_csv()),
        "adjacency": _write(out / f"adjacency_{h}.txt", molgraph.export_adjacency(graph)),
    }
    for k in range(min(config.raster_samples, len(prepared.test_input))):
        raster = encode.SpikeRaster.from_dense(prepared.test_input[k], config.dt)
        art[f"input_raster_{k}"] = _write(out / f"raster_{h}_input_test{k}.txt", raster.to_text())
    for r, res in enumerate(results):
        art[f"confusion_r{r}"] = _write(out / f"confusion_{h}_r{r}.csv", res.confusion.to_csv())
        model_path = out / f"model_{h}_r{r}.npz"
        learn.save_model(res.model, model_path, config_hash=h)
        art[f"model_r{r}"] = model_path
        for k, raster in enumerate(res.sample_rasters):
            art[f"raster_r{r}_{k}"] = _write(out / f"raster_{h}_r{r}_test{k}.txt", raster.to_text())
        if config.save_reservoir:
            path = out / f"reservoir_{h}_r{r}.npz"
            reservoir.save_reservoir(res.reservoir, path)
            art[f"reservoir_r{r}"] = path
    return art


def _report(config: ExperimentConfig, graph, results: list[SeedResult], wall: float) -> RunReport:
    total = results[0].confusion
    for r in results[1:]:
        total = total + r.confusion
    return RunReport(
        config, config.hash(), [r.seed for r in results], [r.accuracy for r in results], total, wall,
        node_count=graph.node_count, edge_count=graph.edge_count,
    )


def run(config: ExperimentConfig, prepared: Optional[Prepared] = None, write: bool = True) -> RunReport:
    """Run the full pipeline for every seed of ``config`` and write its artifacts."""
    config.validate()
    start = time.perf_counter()
    prepared = prepared or prepare(config)
    graph = graph_for(config, prepared.atoms)
    results = _run_tasks([(config, s) for s in config.seeds()], prepared, {config.hash(): graph}, config.workers)
    report = _report(config, graph, results, time.perf_counter() - start)
    if write:
        report.artifacts = _write_artifacts(config, report.config_hash, graph, prepared, results, report)
    return report


@dataclass
class SweepPoint:
    rho: float
    report: RunReport
    metrics: molgraph.GraphMetrics

    @property
    def mean_error_rate(self) -> float:
        return 1.0 - self.report.mean_accuracy


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    lines = ["rho,mean_error_rate,std,mean_C,mean_L"]
    for p in points:
        lines.append(
            f"{p.rho:g},{p.mean_error_rate:.6f},{p.report.std_accuracy:.6f},"
            f"{p.metrics.average_clustering:.6f},{p.metrics.average_path_length:.6f}"
        )
    return "\n".join(lines) + "\n"


def sweep_soft_distance(
    config: ExperimentConfig,
    rhos: Sequence[float] = DEFAULT_SWEEP_RHOS,
    prepared: Optional[Prepared] = None,
    write: bool = True,
) -> tuple[list[SweepPoint], Optional[Path]]:
    """Run ``config`` at every soft distance in ``rhos``; returns the points and the CSV path."""
    if not rhos:
        raise ConfigError("sweep.rhos", "at least one soft distance is required")
    configs = [config.replace(connectivity="soft", rho=float(r)).validate() for r in rhos]
    start = time.perf_counter()
    prepared = prepared or prepare(configs[0])
    graphs = {c.hash(): graph_for(c, prepared.atoms) for c in configs}
    tasks = [(c, s) for c in configs for s in c.seeds()]
    results = _run_tasks(tasks, prepared, graphs, config.workers)
    points = []
    per = config.repeat
    for k, c in enumerate(configs):
        g = graphs[c.hash()]
        chunk = results[k * per:(k + 1) * per]
        report = _report(c, g, chunk, time.perf_counter() - start)
        if write:
            report.artifacts = _write_artifacts(c, report.config_hash, g, prepared, chunk, report)
        points.append(SweepPoint(c.rho, report, molgraph.average_metrics(g)))
    csv_path = None
    if write:
        tag = hashlib.sha256((config.replace(connectivity="soft", rho=None).hash() + repr(list(rhos))).encode()).hexdigest()[:12]
        csv_path = Path(config.out_dir) / f"sweep_{tag}.csv"
        csv_path.write_text(sweep_csv(points))
    return points, csv_path


# ---------------------------------------------------------------------------
# structure inspection


@dataclass
class InspectReport:
    source: str
    metrics: molgraph.GraphMetrics
    hard_metrics: molgraph.GraphMetrics
    inhibitory_fraction: float
    element_counts: dict
    adjacency_path: Optional[Path]

    def text(self) -> str:
        lines = [
            f"structure = {self.source}",
            "elements = " + " ".join(f"{k}:{v}" for k, v in sorted(self.element_counts.items())),
            f"inhibitory_fraction = {self.inhibitory_fraction:.4f}",
            "[hard]",
            self.hard_metrics.report(),
        ]
        if self.metrics is not self.hard_metrics:
            lines += [f"[soft rho={self.metrics.soft_distance_angstrom:g}]", self.metrics.report()]
        if self.adjacency_path is not None:
            lines.append(f"adjacency = {self.adjacency_path}")
        return "\n".join(lines)


def inspect(
    structure,
    rho: Optional[float] = None,
    keep_water: bool = False,
    inhibitory=reservoir.DEFAULT_INHIBITORY,
    out_dir=None,
) -> InspectReport:
    """Graph metrics of a structure's hard graph and, with ``rho``, its soft graph."""
    atoms = molgraph.read_pdb(structure, keep_water=keep_water)
    hard = molgraph.build_hard_graph(atoms)
    hard_metrics = molgraph.average_metrics(hard)
    graph, metrics = hard, hard_metrics
    if rho is not None:
        graph = molgraph.build_soft_graph(atoms, rho)
        metrics = molgraph.average_metrics(graph)
    signs, _ = reservoir.assign_types(atoms, inhibitory)
    path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = hashlib.sha256(f"{Path(structure).resolve()}|{rho}|{keep_water}".encode()).hexdigest()[:12]
        path = out / f"adjacency_{tag}.txt"
        path.write_text(molgraph.export_adjacency(graph))
    return InspectReport(
        str(structure), metrics, hard_metrics, float(np.mean(signs < 0)), dict(atoms.element_counts()), path,
    )
