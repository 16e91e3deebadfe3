"""The molecular liquid: coupled Izhikevich neurons on a molecular graph."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse

from . import neuron
from .encode import INPUT_COUNT, SpikeRaster
from .molgraph import AtomSet, MolecularGraph
from .neuron import NeuronParams, NonFiniteState

FORMAT_VERSION = 1
DEFAULT_INHIBITORY = frozenset({"O", "H"})
WEIGHT_GAIN_CANDIDATES = (5.0, 10.0, 20.0, 40.0, 80.0)
# I_o from calibrate_weight_gain(); frozen here and re-derived in tests/test_reservoir.py
DEFAULT_WEIGHT_GAIN = 40.0


@dataclass(frozen=True)
class ReservoirConfig:
    graph: MolecularGraph
    inhibitory_elements: frozenset = DEFAULT_INHIBITORY
    seed: int = 0
    weight_gain: float = DEFAULT_WEIGHT_GAIN
    input_gain: Optional[float] = None  # input pulse gain; None uses weight_gain
    dt: float = neuron.DEFAULT_DT
    substeps: int = neuron.DEFAULT_SUBSTEPS
    input_count: int = INPUT_COUNT

    def __post_init__(self):
        if self.weight_gain <= 0 or (self.input_gain is not None and self.input_gain <= 0):
            raise ValueError("gains must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True, eq=False)
class Reservoir:
    params: NeuronParams
    signs: np.ndarray           # +1 excitatory, -1 inhibitory
    edges: np.ndarray           # (m, 2), i < j
    weights: np.ndarray         # (m,), shared by both directions
    input_map: np.ndarray       # node -> input-neuron index
    input_weights: np.ndarray   # node -> weight of its input pulse
    weight_gain: float = DEFAULT_WEIGHT_GAIN
    input_gain: float = DEFAULT_WEIGHT_GAIN
    dt: float = neuron.DEFAULT_DT
    substeps: int = neuron.DEFAULT_SUBSTEPS
    input_count: int = INPUT_COUNT
    meta: dict = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return len(self.signs)

    @property
    def inhibitory_fraction(self) -> float:
        return float(np.mean(self.signs < 0))

    @cached_property
    def coupling(self):
        """Matrix ``C`` with ``C[i, j] = sign_j * I_o * s_ij``, so ``C @ fired`` is the synaptic current."""
        n = self.node_count
        i, j = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        vals = np.concatenate([self.weights, self.weights]) * self.weight_gain * self.signs[cols]
        mat = sparse.csr_matrix((vals.astype(np.float32), (rows, cols)), shape=(n, n))
        if n and len(rows) / n > 200:
            return mat.toarray()
        return mat


def pulse_response(current: float, window: float = 6.0, dt: float = neuron.DEFAULT_DT, substeps: int = neuron.DEFAULT_SUBSTEPS) -> tuple[float, bool]:
    """Peak depolarization (mV) of a resting regular-spiking neuron after a one-tick pulse, and whether it fired."""
    state = neuron.rest_state(neuron.REGULAR_SPIKING)
    rest = state.v
    peak, fired_any = rest, False
    for k in range(int(round(window / dt))):
        state, fired = neuron.step(state, neuron.REGULAR_SPIKING, current if k == 0 else 0.0, dt, substeps)
        fired_any |= bool(fired)
        peak = max(peak, state.v)
    return peak - rest, fired_any


def calibrate_weight_gain(candidates=WEIGHT_GAIN_CANDIDATES, mean_weight: float = 0.5, min_effect: float = 1.0, window: float = 6.0, dt: float = neuron.DEFAULT_DT) -> float:
    """Largest gain whose mean-weight single spike moves a resting neuron by
    at least ``min_effect`` mV without making it fire within ``window``."""
    best = None
    for g in sorted(candidates):
        effect, fired = pulse_response(g * mean_weight, window, dt)
        if not fired and effect >= min_effect:
            best = g
    if best is None:
        raise ValueError("no candidate gain perturbs the neuron without firing it")
    return float(best)


def assign_types(atoms: AtomSet, inhibitory_elements=DEFAULT_INHIBITORY, seed=0) -> tuple[np.ndarray, NeuronParams]:
    """Signs and Izhikevich parameters per atom; O/H (by default) are inhibitory."""
    rng = np.random.default_rng(seed)
    inhib = np.array([el.upper() in {e.upper() for e in inhibitory_elements} for el in atoms.elements])
    r = rng.random(len(atoms))
    exc = neuron.sample_excitatory(r)
    inh = neuron.sample_inhibitory(r)
    params = NeuronParams(*(np.where(inhib, getattr(inh, f), getattr(exc, f)) for f in "abcd"))
    return np.where(inhib, -1, 1).astype(np.int8), params


def init_weights(graph: MolecularGraph, seed=0) -> np.ndarray:
    return np.random.default_rng(seed).random(graph.edge_count)


def wire_input(node_count: int, input_count: int = INPUT_COUNT, seed=0) -> np.ndarray:
    if input_count < 1:
        raise ValueError("input_count must be >= 1")
    return np.random.default_rng(seed).integers(0, input_count, size=node_count)


def build_reservoir(atoms: AtomSet, config: ReservoirConfig) -> Reservoir:
    if len(atoms) != config.graph.node_count:
        raise ValueError("graph does not match the atom set")
    ss_types, ss_weights, ss_map, ss_inw = np.random.SeedSequence(config.seed).spawn(4)
    signs, params = assign_types(atoms, config.inhibitory_elements, ss_types)
    return Reservoir(
        params=params,
        signs=signs,
        edges=config.graph.edges,
        weights=init_weights(config.graph, ss_weights),
        input_map=wire_input(len(atoms), config.input_count, ss_map),
        input_weights=np.random.default_rng(ss_inw).random(len(atoms)),
        weight_gain=config.weight_gain,
        input_gain=config.weight_gain if config.input_gain is None else config.input_gain,
        dt=config.dt,
        substeps=config.substeps,
        input_count=config.input_count,
        meta={
            "seed": config.seed,
            "graph_kind": config.graph.kind,
            "rho": config.graph.soft_distance_angstrom,
            "source": atoms.source_label,
        },
    )


def tick_currents(res: Reservoir, fired_prev: np.ndarray, input_prev: np.ndarray) -> np.ndarray:
    """Currents for the next tick from the previous tick's firings.

    ``fired_prev`` is ``(nodes, batch)`` and ``input_prev`` is ``(inputs, batch)``.
    """
    syn = res.coupling @ fired_prev.astype(np.float32)
    ext = input_prev[res.input_map].astype(np.float32) * (res.input_gain * res.input_weights)[:, None]
    return np.asarray(syn, dtype=np.float64) + ext


def simulate_batch(res: Reservoir, input_fired: np.ndarray, chunk: int = 512, record_voltage: bool = False):
    """Run the reservoir for a batch of encoded images.

    ``input_fired`` is boolean ``(batch, ticks, inputs)``; the result is
    boolean ``(batch, ticks, nodes)``. Each image starts from rest. With
    ``record_voltage`` the reported potentials ``(batch, ticks, nodes)`` are
    returned as a second value.
    """
    input_fired = np.asarray(input_fired, dtype=bool)
    batch, n_ticks, n_in = input_fired.shape
    if n_in != res.input_count:
        raise ValueError(f"expected {res.input_count} input trains, got {n_in}")
    n = res.node_count
    out = np.zeros((batch, n_ticks, n), dtype=bool)
    volts = np.zeros((batch, n_ticks, n), dtype=np.float32) if record_voltage else None
    a, b, c, d = (np.asarray(x, dtype=float)[:, None] for x in (res.params.a, res.params.b, res.params.c, res.params.d))
    for lo in range(0, batch, chunk):
        hi = min(batch, lo + chunk)
        width = hi - lo
        inp = input_fired[lo:hi].transpose(1, 2, 0)  # ticks, inputs, batch
        v = np.full((n, width), neuron.REST_POTENTIAL)
        u = b * v
        fired = np.zeros((n, width), dtype=bool)
        for k in range(n_ticks):
            if k == 0:
                current = np.zeros((n, width))
            else:
                current = tick_currents(res, fired, inp[k - 1])
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    fired = neuron.advance(v, u, a, b, c, d, current, res.dt, res.substeps)
            except NonFiniteState as exc:
                raise NonFiniteState("reservoir state diverged", exc.index // width) from None
            out[lo:hi, k, :] = fired.T
            if record_voltage:
                volts[lo:hi, k, :] = np.where(fired, neuron.THRESHOLD, v).T
    return (out, volts) if record_voltage else out


def simulate(res: Reservoir, input_raster: SpikeRaster, duration: Optional[float] = None) -> SpikeRaster:
    duration = input_raster.duration if duration is None else duration
    if abs(input_raster.dt - res.dt) > 1e-12:
        raise ValueError("input raster and reservoir use different dt")
    n_ticks = int(round(duration / res.dt))
    dense = input_raster.to_dense()
    if len(dense) < n_ticks:
        raise ValueError("input raster shorter than the simulation window")
    fired = simulate_batch(res, dense[None, :n_ticks])[0]
    return SpikeRaster.from_dense(fired, res.dt)


def state_vector(raster: SpikeRaster) -> np.ndarray:
    return raster.counts()


def state_vectors(fired: np.ndarray) -> np.ndarray:
    """Spike counts ``(batch, nodes)`` from a batched ``(batch, ticks, nodes)`` raster."""
    return fired.sum(axis=1, dtype=np.int32)


def save_reservoir(res: Reservoir, path) -> None:
    np.savez(
        path,
        format_version=FORMAT_VERSION,
        a=res.params.a, b=res.params.b, c=res.params.c, d=res.params.d,
        signs=res.signs, edges=res.edges, weights=res.weights,
        input_map=res.input_map, input_weights=res.input_weights,
        scalars=np.array([res.weight_gain, res.input_gain, res.dt, res.substeps, res.input_count], dtype=float),
    )


def load_reservoir(path) -> Reservoir:
    with np.load(path) as z:
        version = int(z["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported reservoir format version {version}")
        wg, ig, dt, sub, n_in = z["scalars"]
        return Reservoir(
            params=NeuronParams(z["a"], z["b"], z["c"], z["d"]),
            signs=z["signs"], edges=z["edges"], weights=z["weights"],
            input_map=z["input_map"], input_weights=z["input_weights"],
            weight_gain=float(wg), input_gain=float(ig), dt=float(dt), substeps=int(sub), input_count=int(n_in),
        )
