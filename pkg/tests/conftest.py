import os
from pathlib import Path

import numpy as np
import pytest


def pdb_line(serial, name, res_name, chain, res_seq, x, y, z, element="", record="ATOM", altloc=" ", icode=" "):
    # fixed-column ATOM/HETATM record
    name_field = name if len(name) == 4 else f" {name:<3}"
    return (
        f"{record:<6}{serial:>5} {name_field:<4}{altloc}{res_name:>3} {chain}{res_seq:>4}{icode}   "
        f"{x:>8.3f}{y:>8.3f}{z:>8.3f}{1.0:>6.2f}{20.0:>6.2f}          {element:>2}"
    )


def random_graph_pairs(rng, n, p):
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    return np.stack([iu[0][keep], iu[1][keep]], axis=1)


@pytest.fixture
def three_atom_pdb():
    return "\n".join([
        pdb_line(1, "N", "GLY", "A", 1, 0.0, 0.0, 0.0, "N"),
        pdb_line(2, "CA", "GLY", "A", 1, 1.45, 0.0, 0.0, "C"),
        pdb_line(3, "C", "GLY", "A", 1, 2.0, 1.4, 0.0, "C"),
    ]) + "\n"


def _data_dir():
    return Path(os.environ.get("MOLRC_DATA", "/root/data"))


@pytest.fixture(scope="session")
def mnist_dir():
    d = Path(os.environ.get("MOLRC_MNIST_DIR", _data_dir() / "mnist"))
    if not (d / "train-images-idx3-ubyte").exists():
        pytest.skip(f"MNIST IDX files not found in {d}")
    return d


def make_atoms(elements, positions=None, seed=0):
    from molrc.molgraph import Atom, AtomSet

    if positions is None:
        positions = np.random.default_rng(seed).uniform(0, 20, size=(len(elements), 3))
    return AtomSet(tuple(
        Atom(k + 1, el, el, tuple(map(float, p)), ("A", k + 1, "", "UNK"))
        for k, (el, p) in enumerate(zip(elements, positions))
    ), source_label="synthetic")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
