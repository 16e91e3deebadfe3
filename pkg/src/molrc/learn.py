"""Readout training: ReSuMe on a spiking output layer and sigmoid regression on spike counts."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from . import neuron
from .neuron import NeuronParams, REGULAR_SPIKING
from .reservoir import DEFAULT_WEIGHT_GAIN

N_CLASSES = 10
MODEL_FORMAT_VERSION = 1
# output neurons see reservoir spikes through the same synaptic gain I_o
DEFAULT_READOUT_GAIN = DEFAULT_WEIGHT_GAIN


class DivergenceDetected(RuntimeError):
    pass


@dataclass(frozen=True)
class ResumeHyper:
    eta: float = 1e-5
    a_plus: float = 1.0
    a_minus: float = 1.0
    tau_plus: float = 5.0
    tau_minus: float = 5.0
    duration: float = 6.0
    epochs: int = 1
    readout_gain: float = DEFAULT_READOUT_GAIN
    seed: int = 0

    def __post_init__(self):
        if self.a_plus < 0 or self.a_minus < 0:
            raise ValueError("window amplitudes must be non-negative")
        if self.tau_plus <= 0 or self.tau_minus <= 0:
            raise ValueError("window time constants must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def learning_window(s, hyper: ResumeHyper = ResumeHyper()):
    s = np.asarray(s, dtype=float)
    out = np.where(
        s >= 0,
        hyper.a_plus * np.exp(-np.clip(s, 0, None) / hyper.tau_plus),
        -hyper.a_minus * np.exp(np.clip(s, None, 0) / hyper.tau_minus),
    )
    return float(out) if out.ndim == 0 else out


def _event_factor(t: float, input_trains: Sequence[np.ndarray], hyper: ResumeHyper) -> np.ndarray:
    return np.array([1.0 + float(np.sum(learning_window(t - tr[tr <= t], hyper))) for tr in input_trains])


def resume_update(weights_row, desired, output, input_trains: Sequence[np.ndarray], hyper: ResumeHyper = ResumeHyper()) -> np.ndarray:
    """Event-driven ReSuMe update of one output neuron's incoming weights.

    Each desired spike at ``t`` adds ``eta * (1 + sum W(t - t_in))`` to every
    weight, summing over that presynaptic neuron's spikes with ``t_in <= t``;
    each actual output spike subtracts the same quantity. Weights are then
    clamped to ``[-1, 1]``.
    """
    w = np.array(weights_row, dtype=float)
    potentiation = np.zeros_like(w)
    depression = np.zeros_like(w)
    for t in desired:
        potentiation += _event_factor(t, input_trains, hyper)
    for t in output:
        depression += _event_factor(t, input_trains, hyper)
    return np.clip(w + hyper.eta * (potentiation - depression), -1.0, 1.0)


def presynaptic_traces(fired: np.ndarray, dt: float, hyper: ResumeHyper) -> np.ndarray:
    """``trace[k, j] = sum over spikes of j at ticks <= k of W(t_k - t_spike)``.

    ``fired`` is boolean ``(ticks, nodes)``.
    """
    decay = np.exp(-dt / hyper.tau_plus)
    trace = np.zeros(fired.shape, dtype=float)
    running = np.zeros(fired.shape[1])
    for k in range(fired.shape[0]):
        running = running * decay + fired[k]
        trace[k] = running
    return hyper.a_plus * trace


# ---------------------------------------------------------------------------
# spiking readout


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=float)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


@dataclass
class ReadoutSpiking:
    weights: np.ndarray  # (10, nodes), kept in [-1, 1]
    params: NeuronParams = field(default_factory=lambda: REGULAR_SPIKING.tile(N_CLASSES))
    gain: float = DEFAULT_READOUT_GAIN
    dt: float = neuron.DEFAULT_DT

    @classmethod
    def initial(cls, node_count: int, seed=0, gain: float = DEFAULT_READOUT_GAIN, dt: float = neuron.DEFAULT_DT, n_out: int = N_CLASSES) -> "ReadoutSpiking":
        rng = np.random.default_rng(seed)
        return cls(rng.random((n_out, node_count)), REGULAR_SPIKING.tile(n_out), gain, dt)

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


def readout_tick(readout: ReadoutSpiking, state: neuron.NeuronState, reservoir_fired) -> tuple[neuron.NeuronState, np.ndarray, np.ndarray]:
    """One output-layer tick driven by the given reservoir firings.

    Returns ``(state, fired, probabilities)`` where the probabilities are the
    softmax of the reported membrane potentials.
    """
    idx = np.asarray(sorted(reservoir_fired) if isinstance(reservoir_fired, (set, frozenset)) else reservoir_fired)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    current = readout.gain * readout.weights[:, idx].sum(axis=1) if len(idx) else np.zeros(readout.n_out)
    state, fired = neuron.step(state, readout.params, current, readout.dt)
    return state, fired, softmax(neuron.reported_potential(state, fired))


def run_readout(readout: ReadoutSpiking, reservoir_fired: np.ndarray, force_decision: bool = True) -> tuple[list[np.ndarray], int, np.ndarray]:
    """Drive the output layer with one image's reservoir raster.

    ``reservoir_fired`` is boolean ``(ticks, nodes)``. Reservoir spikes at
    tick ``k`` reach the output neurons at tick ``k + 1``. Returns the
    output spike ticks per neuron (including the forced decision spike of
    the argmax neuron at the final tick), the decision, and the final
    softmax probabilities. With ``force_decision=False`` only the neurons'
    own spikes are reported.
    """
    n_ticks = reservoir_fired.shape[0]
    state = neuron.rest_state(readout.params)
    state = neuron.NeuronState(np.array(state.v, dtype=float), np.array(state.u, dtype=float))
    spikes: list[list[int]] = [[] for _ in range(readout.n_out)]
    probs = np.full(readout.n_out, 1.0 / readout.n_out)
    prev = np.zeros(reservoir_fired.shape[1], dtype=bool)
    for k in range(n_ticks):
        state, fired, probs = readout_tick(readout, state, prev)
        for o in np.flatnonzero(fired):
            spikes[o].append(k)
        prev = reservoir_fired[k]
    decision = int(np.argmax(probs))
    if force_decision and (not spikes[decision] or spikes[decision][-1] != n_ticks - 1):
        spikes[decision].append(n_ticks - 1)
    return [np.asarray(s, dtype=np.int64) for s in spikes], decision, probs


def predict_spiking(readout: ReadoutSpiking, reservoir_fired: np.ndarray) -> np.ndarray:
    """Final-tick argmax decisions for a batch ``(batch, ticks, nodes)`` (vectorized over images)."""
    batch, n_ticks, _ = reservoir_fired.shape
    drive = np.zeros((batch, n_ticks, readout.n_out))
    drive[:, 1:, :] = readout.gain * (reservoir_fired[:, :-1, :].astype(np.float32) @ readout.weights.T.astype(np.float32))
    a, b, c, d = (np.broadcast_to(np.asarray(x, dtype=float), (batch, readout.n_out)) for x in (readout.params.a, readout.params.b, readout.params.c, readout.params.d))
    v = np.full((batch, readout.n_out), neuron.REST_POTENTIAL)
    u = b * v
    fired = np.zeros_like(v, dtype=bool)
    for k in range(n_ticks):
        fired = neuron.advance(v, u, a, b, c, d, drive[:, k, :], readout.dt, neuron.DEFAULT_SUBSTEPS)
    return np.argmax(np.where(fired, neuron.THRESHOLD, v), axis=1)


def train_resume(
    reservoir_fired: np.ndarray,
    labels: np.ndarray,
    hyper: ResumeHyper = ResumeHyper(),
    readout: Optional[ReadoutSpiking] = None,
    dt: float = neuron.DEFAULT_DT,
) -> ReadoutSpiking:
    """Train the spiking readout with ReSuMe.

    ``reservoir_fired`` holds precomputed reservoir rasters ``(batch, ticks,
    nodes)`` for the training images (the reservoir is fixed, so these do
    not change across epochs). The teacher for an image is a single spike
    of the true-label neuron at the last tick. Training order is reshuffled
    every epoch from ``hyper.seed``.
    """
    batch, n_ticks, n_nodes = reservoir_fired.shape
    if readout is None:
        readout = ReadoutSpiking.initial(n_nodes, seed=hyper.seed, gain=hyper.readout_gain, dt=dt)
    rng = np.random.default_rng(hyper.seed)
    last = n_ticks - 1
    for _ in range(hyper.epochs):
        for item in rng.permutation(batch):
            fired = reservoir_fired[item]
            out_spikes, _, _ = run_readout(readout, fired)
            target = int(labels[item])
            teacher = np.array([last])
            factor = None
            for o, ticks in enumerate(out_spikes):
                desired = teacher if o == target else ticks[:0]
                if np.array_equal(desired, ticks):
                    continue
                if factor is None:
                    factor = 1.0 + presynaptic_traces(fired, dt, hyper)  # (ticks, nodes)
                delta = factor[desired].sum(axis=0) - factor[ticks].sum(axis=0)
                row = readout.weights[o]
                row += hyper.eta * delta
                np.clip(row, -1.0, 1.0, out=row)
    return readout


# ---------------------------------------------------------------------------
# regression readout


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((len(x), 1)), x])


def one_hot(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    y = np.zeros((len(labels), n_classes))
    y[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    return y


def regression_cost(theta: np.ndarray, x: np.ndarray, y: np.ndarray, loss: str = "squared") -> float:
    """Cost over a design matrix ``x`` that already contains the bias column."""
    alpha = sigmoid(x @ theta.T)
    n = len(x)
    if loss == "squared":
        return float(np.sum((y - alpha) ** 2) / (2 * n))
    eps = 1e-12
    return float(-np.sum(y * np.log(alpha + eps) + (1 - y) * np.log(1 - alpha + eps)) / n)


def regression_gradient(theta: np.ndarray, x: np.ndarray, y: np.ndarray, loss: str = "squared") -> np.ndarray:
    alpha = sigmoid(x @ theta.T)
    err = y - alpha
    if loss == "squared":
        err = err * alpha * (1.0 - alpha)
    return -(err.T @ x) / len(x)


@dataclass
class RegressionModel:
    theta: np.ndarray          # (10, features + 1), bias first
    mean: np.ndarray
    scale: np.ndarray          # 0 marks a constant (dropped) feature
    loss: str = "squared"
    history: list = field(default_factory=list, repr=False)

    def transform(self, states) -> np.ndarray:
        x = np.asarray(states, dtype=float) - self.mean
        safe = np.where(self.scale > 0, self.scale, 1.0)
        return _with_bias(np.where(self.scale > 0, x / safe, 0.0))

    def activations(self, states) -> np.ndarray:
        return sigmoid(self.transform(states) @ self.theta.T)

    def predict(self, states) -> np.ndarray:
        return np.argmax(self.activations(states), axis=1)


def train_regression(
    states,
    labels,
    lr: float = 0.5,
    epochs: int = 60,
    batch_size: int = 64,
    seed=0,
    loss: Literal["squared", "cross_entropy"] = "squared",
    n_classes: int = N_CLASSES,
    patience: int = 10,
) -> RegressionModel:
    """Mini-batch gradient descent on z-scored state vectors.

    Raises :class:`DivergenceDetected` if the full-data cost rises for
    ``patience`` consecutive epochs.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    states = np.asarray(states, dtype=float)
    mean = states.mean(axis=0)
    scale = states.std(axis=0)
    model = RegressionModel(np.zeros((n_classes, states.shape[1] + 1)), mean, scale, loss)
    x = model.transform(states)
    y = one_hot(labels, n_classes)
    rng = np.random.default_rng(seed)
    prev = regression_cost(model.theta, x, y, loss)
    model.history.append(prev)
    rising = 0
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for lo in range(0, len(x), batch_size):
            idx = order[lo:lo + batch_size]
            model.theta -= lr * regression_gradient(model.theta, x[idx], y[idx], loss)
        cost = regression_cost(model.theta, x, y, loss)
        model.history.append(cost)
        if not np.isfinite(cost):
            raise DivergenceDetected("cost became non-finite")
        rising = rising + 1 if cost > prev else 0
        if rising >= patience:
            raise DivergenceDetected(f"cost increased for {patience} consecutive epochs")
        prev = cost
    return model


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows desired, columns predicted

    @classmethod
    def from_predictions(cls, desired, predicted, n_classes: int = N_CLASSES) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(desired, dtype=int), np.asarray(predicted, dtype=int)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def to_csv(self) -> str:
        n = len(self.counts)
        lines = ["desired\\predicted," + ",".join(str(k) for k in range(n))]
        lines += [f"{r}," + ",".join(str(int(c)) for c in row) for r, row in enumerate(self.counts)]
        lines.append(f"accuracy,{self.accuracy:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = [line.split(",")[1:] for line in text.strip().splitlines()[1:] if not line.startswith("accuracy")]
        return cls(np.array(rows, dtype=np.int64))


def evaluate(model, reservoir_fired: np.ndarray, labels) -> ConfusionMatrix:
    """Confusion matrix for a trained readout on precomputed reservoir rasters ``(batch, ticks, nodes)``."""
    if isinstance(model, ReadoutSpiking):
        predicted = predict_spiking(model, reservoir_fired)
    elif isinstance(model, RegressionModel):
        predicted = model.predict(reservoir_fired.sum(axis=1))
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    return ConfusionMatrix.from_predictions(labels, predicted)


# ---------------------------------------------------------------------------
# model files


def save_model(model, path, config_hash: str = "") -> None:
    if isinstance(model, ReadoutSpiking):
        np.savez(
            path, format_version=MODEL_FORMAT_VERSION, kind="resume", config_hash=config_hash,
            weights=model.weights, a=model.params.a, b=model.params.b, c=model.params.c, d=model.params.d,
            scalars=np.array([model.gain, model.dt]),
        )
    elif isinstance(model, RegressionModel):
        np.savez(
            path, format_version=MODEL_FORMAT_VERSION, kind="regression", config_hash=config_hash,
            theta=model.theta, mean=model.mean, scale=model.scale, loss=model.loss,
        )
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")


def load_model(path):
    with np.load(path) as z:
        if int(z["format_version"]) != MODEL_FORMAT_VERSION:
            raise ValueError("unsupported model format version")
        if str(z["kind"]) == "resume":
            gain, dt = z["scalars"]
            return ReadoutSpiking(z["weights"], NeuronParams(z["a"], z["b"], z["c"], z["d"]), float(gain), float(dt))
        return RegressionModel(z["theta"], z["mean"], z["scale"], str(z["loss"]))
