"""MNIST-style IDX loading and the spiking input layer."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import neuron
from .neuron import NeuronParams, REGULAR_SPIKING

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
IMAGE_SIDE = 28
INPUT_COUNT = IMAGE_SIDE * IMAGE_SIDE
N_CLASSES = 10

GAIN_CANDIDATES = (5.0, 10.0, 15.0, 20.0, 30.0)
# smallest of GAIN_CANDIDATES for which pixel 255 fires a regular-spiking
# neuron within 6 ms at dt = 0.5; see calibrate_input_gain
DEFAULT_INPUT_GAIN = 10.0


class IDXError(ValueError):
    pass


class BadMagic(IDXError):
    pass


class DimensionMismatch(IDXError):
    pass


class CountMismatch(IDXError):
    pass


@dataclass
class ImageDataset:
    images: np.ndarray  # (n, 28, 28) uint8
    labels: np.ndarray  # (n,) uint8
    split_name: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatch(f"{len(self.images)} images vs {len(self.labels)} labels")
        if len(self.labels) and int(self.labels.max()) >= N_CLASSES:
            raise IDXError(f"label {int(self.labels.max())} outside [0, {N_CLASSES})")

    def __len__(self) -> int:
        return len(self.labels)

    def head(self, n: Optional[int]) -> "ImageDataset":
        """First ``n`` items (deterministic slice)."""
        if n is None or n >= len(self):
            return self
        return ImageDataset(self.images[:n], self.labels[:n], self.split_name)


def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 * ndim:
        raise CountMismatch(f"{path}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagic(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    expected = int(np.prod(dims))
    if len(body) != expected:
        raise CountMismatch(f"{path}: header promises {expected} bytes, file has {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, split_name: Optional[str] = None) -> ImageDataset:
    """Read an IDX image/label file pair.

    Raises
    ------
    BadMagic
        Either file does not start with the expected magic number.
    DimensionMismatch
        Images are not 28x28.
    CountMismatch
        A file is truncated, or image and label counts differ.
    """
    images = _read_idx(images_path, IMAGE_MAGIC, 3)
    if images.shape[1:] != (IMAGE_SIDE, IMAGE_SIDE):
        raise DimensionMismatch(f"{images_path}: images are {images.shape[1]}x{images.shape[2]}, expected 28x28")
    labels = _read_idx(labels_path, LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images vs {len(labels)} labels")
    if split_name is None:
        split_name = "test" if "t10k" in Path(images_path).name or "test" in Path(images_path).name else "train"
    return ImageDataset(images, labels, split_name)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes())


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_mnist_dir(directory, split: str) -> ImageDataset:
    images, labels = MNIST_FILES[split]
    return load_idx(Path(directory) / images, Path(directory) / labels, split)


# ---------------------------------------------------------------------------
# rasters


@dataclass
class SpikeRaster:
    """Spike events on a fixed tick grid.

    Events are stored as parallel ``neurons``/``ticks`` arrays sorted by
    (tick, neuron); times in ms are ``tick * dt``.
    """

    neuron_count: int
    duration: float
    dt: float
    neurons: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ticks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.neurons = np.asarray(self.neurons, dtype=np.int64)
        self.ticks = np.asarray(self.ticks, dtype=np.int64)
        order = np.lexsort((self.neurons, self.ticks))
        self.neurons, self.ticks = self.neurons[order], self.ticks[order]
        if len(self.ticks):
            if self.ticks.min() < 0 or self.ticks.max() >= self.n_ticks:
                raise ValueError("spike time outside [0, duration)")
            if self.neurons.min() < 0 or self.neurons.max() >= self.neuron_count:
                raise ValueError("neuron index out of range")
            dup = (np.diff(self.ticks) == 0) & (np.diff(self.neurons) == 0)
            if dup.any():
                raise ValueError("duplicate spike event")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.ticks * self.dt

    def __len__(self) -> int:
        return len(self.ticks)

    @classmethod
    def from_dense(cls, fired: np.ndarray, dt: float) -> "SpikeRaster":
        """Build from a boolean ``(ticks, neurons)`` matrix."""
        ticks, neurons = np.nonzero(fired)
        return cls(fired.shape[1], fired.shape[0] * dt, dt, neurons, ticks)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_ticks, self.neuron_count), dtype=bool)
        out[self.ticks, self.neurons] = True
        return out

    def trains(self) -> list[np.ndarray]:
        """Per-neuron sorted spike-time arrays (ms)."""
        order = np.lexsort((self.ticks, self.neurons))
        n_sorted, t_sorted = self.neurons[order], self.ticks[order] * self.dt
        bounds = np.searchsorted(n_sorted, np.arange(self.neuron_count + 1))
        return [t_sorted[bounds[i]:bounds[i + 1]] for i in range(self.neuron_count)]

    def counts(self) -> np.ndarray:
        return np.bincount(self.neurons, minlength=self.neuron_count)

    def to_text(self) -> str:
        head = f"# duration_ms {self.duration:g}\n# neuron_count {self.neuron_count}\n# dt_ms {self.dt:g}\n"
        return head + "".join(f"{n} {t:g}\n" for n, t in zip(self.neurons, self.times))

    @classmethod
    def from_text(cls, text: str) -> "SpikeRaster":
        meta, neurons, times = {}, [], []
        for line in text.splitlines():
            if line.startswith("#"):
                key, value = line[1:].split()
                meta[key] = float(value)
            elif line.strip():
                n, t = line.split()
                neurons.append(int(n))
                times.append(float(t))
        dt = meta["dt_ms"]
        ticks = np.rint(np.asarray(times) / dt).astype(np.int64)
        return cls(int(meta["neuron_count"]), meta["duration_ms"], dt, neurons, ticks)


# ---------------------------------------------------------------------------
# input layer


def pixel_to_current(pixel, gain: float = DEFAULT_INPUT_GAIN):
    if gain <= 0:
        raise ValueError("gain must be positive")
    return np.asarray(pixel, dtype=float) / 255.0 * gain


def calibrate_input_gain(candidates: Iterable[float] = GAIN_CANDIDATES, window: float = 6.0, dt: float = neuron.DEFAULT_DT) -> float:
    """Smallest candidate gain at which pixel 255 fires a regular-spiking neuron within ``window`` ms."""
    for gain in sorted(candidates):
        if neuron.spike_times(REGULAR_SPIKING, float(pixel_to_current(255, gain)), window, dt):
            return float(gain)
    raise ValueError("no candidate gain reaches threshold within the window")


def _n_ticks(duration: float, dt: float) -> int:
    n = duration / dt
    if abs(n - round(n)) > 1e-9 or n < 1:
        raise ValueError("duration must be a positive multiple of dt")
    return int(round(n))


def encode_batch(
    images: np.ndarray,
    duration: float = 6.0,
    dt: float = neuron.DEFAULT_DT,
    gain: float = DEFAULT_INPUT_GAIN,
    params: Optional[NeuronParams] = None,
    substeps: int = neuron.DEFAULT_SUBSTEPS,
) -> np.ndarray:
    """Simulate the uncoupled input layer for a batch of images.

    Returns a boolean array of shape ``(batch, ticks, 784)``. Every input
    neuron starts from rest and receives a constant current proportional to
    its pixel for the whole window.
    """
    images = np.asarray(images)
    batch = images.reshape(len(images), -1).astype(float)
    if batch.shape[1] != INPUT_COUNT:
        raise DimensionMismatch("images must be 28x28")
    params = REGULAR_SPIKING if params is None else params
    n_ticks = _n_ticks(duration, dt)
    current = pixel_to_current(batch, gain)
    a, b, c, d = (np.broadcast_to(np.asarray(x, dtype=float), batch.shape) for x in (params.a, params.b, params.c, params.d))
    v = np.full(batch.shape, neuron.REST_POTENTIAL)
    u = b * v
    out = np.zeros((len(batch), n_ticks, INPUT_COUNT), dtype=bool)
    for k in range(n_ticks):
        out[:, k, :] = neuron.advance(v, u, a, b, c, d, current, dt, substeps)
    return out


def encode_image(image, params: Optional[NeuronParams] = None, duration: float = 6.0, dt: float = neuron.DEFAULT_DT, gain: float = DEFAULT_INPUT_GAIN) -> SpikeRaster:
    fired = encode_batch(np.asarray(image)[None], duration, dt, gain, params)[0]
    return SpikeRaster.from_dense(fired, dt)
