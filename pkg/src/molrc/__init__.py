"""Spiking reservoir computing on molecular graphs."""

from .encode import ImageDataset, SpikeRaster, encode_batch, encode_image, load_idx, load_mnist_dir
from .learn import (
    ConfusionMatrix,
    ReadoutSpiking,
    RegressionModel,
    ResumeHyper,
    evaluate,
    train_regression,
    train_resume,
)
from .molgraph import AtomSet, GraphMetrics, MolecularGraph, average_metrics, build_graph, read_pdb
from .neuron import NeuronParams, NeuronState, step
from .reservoir import Reservoir, ReservoirConfig, build_reservoir, simulate, simulate_batch

__version__ = "0.1.0"
