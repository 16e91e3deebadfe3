"""Molecular connectivity graphs built from PDB structures.

Atoms become nodes. Hard edges are covalent bonds perceived from
element-pair distance cutoffs (optionally merged with CONECT records);
soft edges join every pair of atoms closer than a radius ``rho``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Literal, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

WATER_RESIDUES = frozenset({"HOH", "WAT", "H2O", "DOD", "D2O", "TIP", "TIP3", "SOL"})

# Two-letter symbols that can appear left-justified in the atom-name field of
# HETATM records (ions and common cofactor metals).
_TWO_LETTER_ELEMENTS = frozenset(
    {"CL", "BR", "NA", "MG", "CA", "ZN", "FE", "MN", "CU", "CO", "NI", "CD", "HG", "SE", "LI", "AL", "SI", "AU", "AG", "PT"}
)

DEFAULT_BOND_CUTOFF = 1.9
DEFAULT_HYDROGEN_CUTOFF = 1.2


class StructureError(ValueError):
    pass


class MalformedRecord(StructureError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyStructure(StructureError):
    pass


class AllIsolated(ValueError):
    """Raised when a graph has no connected pair of nodes."""


@dataclass(frozen=True)
class Atom:
    serial: int
    name: str
    element: str
    position: tuple[float, float, float]
    residue_id: tuple[str, int, str, str]  # chain, resSeq, iCode, resName

    @property
    def is_hydrogen(self) -> bool:
        return self.element in ("H", "D")


@dataclass(frozen=True)
class AtomSet:
    atoms: tuple[Atom, ...]
    source_label: str = "<string>"
    conect: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not self.atoms:
            raise EmptyStructure(f"{self.source_label}: no atoms")

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.atoms], dtype=float)

    @cached_property
    def elements(self) -> tuple[str, ...]:
        return tuple(a.element for a in self.atoms)

    def element_counts(self) -> Counter:
        return Counter(self.elements)


def _element_from_name(name_field: str, record: str) -> str:
    if record == "HETATM" and name_field[:1].isalpha() and name_field[:2].upper() in _TWO_LETTER_ELEMENTS:
        return name_field[:2].upper().capitalize()
    for ch in name_field:
        if ch.isalpha():
            return ch.upper()
    return ""


def _normalize_element(sym: str) -> str:
    sym = sym.strip()
    if not sym:
        return ""
    sym = "".join(ch for ch in sym if ch.isalpha())
    return sym[:1].upper() + sym[1:].lower()


def parse_pdb(
    raw_text: str,
    source_label: str = "<string>",
    keep_water: bool = False,
    keep_hetatm: bool = True,
) -> AtomSet:
    """Parse fixed-column PDB text into an :class:`AtomSet`.

    Only the first MODEL is read. Alternate locations other than blank or
    ``'A'`` are dropped, and for a given (chain, residue, atom name) only the
    first accepted record is kept. Water residues are skipped unless
    ``keep_water`` is set.
    """
    atoms: list[Atom] = []
    seen_keys: set[tuple] = set()
    seen_serials: set[int] = set()
    conect: list[tuple[int, int]] = []

    for lineno, line in enumerate(raw_text.splitlines(), start=1):
        record = line[:6].strip()
        if record == "ENDMDL":
            break
        if record == "CONECT":
            conect.extend(_parse_conect(line, lineno))
            continue
        if record not in ("ATOM", "HETATM"):
            continue
        if record == "HETATM" and not keep_hetatm:
            continue
        line = line.ljust(80)
        altloc = line[16]
        if altloc not in (" ", "A"):
            continue
        res_name = line[17:20].strip()
        if not keep_water and res_name in WATER_RESIDUES:
            continue
        name_field = line[12:16]
        chain = line[21].strip()
        try:
            res_seq = int(line[22:26])
        except ValueError:
            raise MalformedRecord(lineno, f"bad residue number {line[22:26]!r}") from None
        icode = line[26].strip()
        key = (chain, res_seq, icode, name_field.strip())
        if key in seen_keys:
            continue
        try:
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError:
            raise MalformedRecord(lineno, f"unparseable coordinates {line[30:54]!r}") from None
        if not all(math.isfinite(c) for c in xyz):
            raise MalformedRecord(lineno, "non-finite coordinates")
        try:
            serial = int(line[6:11])
        except ValueError:
            raise MalformedRecord(lineno, f"bad atom serial {line[6:11]!r}") from None
        if serial in seen_serials:
            raise MalformedRecord(lineno, f"duplicate atom serial {serial}")
        element = _normalize_element(line[76:78]) or _element_from_name(name_field, record)
        if not element:
            raise MalformedRecord(lineno, f"cannot determine element for atom {name_field!r}")
        seen_keys.add(key)
        seen_serials.add(serial)
        atoms.append(Atom(serial, name_field.strip(), element, xyz, (chain, res_seq, icode, res_name)))

    if not atoms:
        raise EmptyStructure(f"{source_label}: no ATOM/HETATM records accepted")
    return AtomSet(tuple(atoms), source_label, tuple(conect))


def _parse_conect(line: str, lineno: int) -> list[tuple[int, int]]:
    line = line.rstrip()
    try:
        origin = int(line[6:11])
    except ValueError:
        raise MalformedRecord(lineno, "bad CONECT origin serial") from None
    pairs = []
    for start in range(11, 31, 5):
        chunk = line[start:start + 5].strip()
        if chunk:
            try:
                pairs.append((origin, int(chunk)))
            except ValueError:
                raise MalformedRecord(lineno, f"bad CONECT partner {chunk!r}") from None
    return pairs


def read_pdb(path: str | Path, **kwargs) -> AtomSet:
    path = Path(path)
    return parse_pdb(path.read_text(), source_label=str(path), **kwargs)


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class MolecularGraph:
    """Undirected simple graph over atom indices.

    ``edges`` is an ``(m, 2)`` integer array with ``i < j`` on every row,
    lexicographically sorted and free of duplicates.
    """

    node_count: int
    edges: np.ndarray
    kind: Literal["hard", "soft", "none"] = "hard"
    soft_distance_angstrom: Optional[float] = None

    def __post_init__(self):
        e = self.edges
        if e.ndim != 2 or e.shape[1] != 2:
            raise ValueError("edges must have shape (m, 2)")
        if len(e):
            if e.min() < 0 or e.max() >= self.node_count:
                raise ValueError("edge index out of range")
            if np.any(e[:, 0] >= e[:, 1]):
                raise ValueError("edges must satisfy i < j (no self-loops)")
            if len(np.unique(e, axis=0)) != len(e):
                raise ValueError("duplicate edges")
        if (self.kind == "soft") != (self.soft_distance_angstrom is not None):
            raise ValueError("soft_distance_angstrom is set iff kind == 'soft'")

    @classmethod
    def from_pairs(cls, node_count: int, pairs: Iterable, kind="hard", soft_distance_angstrom=None) -> "MolecularGraph":
        """Build a graph from arbitrary (possibly repeated, unordered) pairs; self-pairs are dropped."""
        arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64).reshape(-1, 2)
        arr = np.sort(arr, axis=1)
        arr = arr[arr[:, 0] != arr[:, 1]]
        arr = np.unique(arr, axis=0) if len(arr) else arr
        return cls(int(node_count), arr, kind, soft_distance_angstrom)

    @classmethod
    def empty(cls, node_count: int) -> "MolecularGraph":
        return cls(int(node_count), np.zeros((0, 2), dtype=np.int64), "none", None)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        n, e = self.node_count, self.edges
        data = np.ones(2 * len(e), dtype=np.int32)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.node_count)

    def neighbours(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]


def radius_pairs(positions: np.ndarray, radius: float) -> np.ndarray:
    """All index pairs ``i < j`` with ``0 < |p_i - p_j| <= radius``.

    Uses a uniform grid with cell size ``radius``; each atom is compared only
    against atoms in its own cell and the 13 forward neighbour cells.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)

    cells = np.floor((pos - pos.min(axis=0)) / radius).astype(np.int64) + 1
    dims = cells.max(axis=0) + 2
    keys = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    uniq, starts, counts = np.unique(sorted_keys, return_index=True, return_counts=True)

    offsets = [(0, 0, 0)] + [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) > (0, 0, 0)
    ]
    r2 = radius * radius
    found = []
    for dx, dy, dz in offsets:
        nkeys = keys + (dx * dims[1] + dy) * dims[2] + dz
        slot = np.searchsorted(uniq, nkeys)
        slot = np.minimum(slot, len(uniq) - 1)
        hit = uniq[slot] == nkeys
        src = np.nonzero(hit)[0]
        if not len(src):
            continue
        cnt = counts[slot[src]]
        first = starts[slot[src]]
        i = np.repeat(src, cnt)
        # position within each target cell block
        within = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        j = order[np.repeat(first, cnt) + within]
        if (dx, dy, dz) == (0, 0, 0):
            keep = i < j
            i, j = i[keep], j[keep]
        d = pos[i] - pos[j]
        dist2 = np.einsum("ij,ij->i", d, d)
        keep = (dist2 <= r2) & (dist2 > 0.0)
        found.append(np.stack([np.minimum(i[keep], j[keep]), np.maximum(i[keep], j[keep])], axis=1))
    if not found:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate(found)
    return np.unique(pairs, axis=0) if len(pairs) else pairs.reshape(0, 2)


def build_hard_graph(
    atoms: AtomSet,
    bond_cutoff: float = DEFAULT_BOND_CUTOFF,
    hydrogen_cutoff: float = DEFAULT_HYDROGEN_CUTOFF,
    use_conect: bool = False,
) -> MolecularGraph:
    """Covalent-bond graph from element-pair distance cutoffs.

    Pairs involving hydrogen are bonded at ``<= hydrogen_cutoff`` Å, all other
    pairs at ``<= bond_cutoff`` Å. With ``use_conect`` the CONECT records of
    the file are merged in as well.
    """
    if bond_cutoff <= 0 or hydrogen_cutoff <= 0:
        raise ValueError("bond cutoffs must be positive")
    pos = atoms.positions
    pairs = radius_pairs(pos, max(bond_cutoff, hydrogen_cutoff))
    if len(pairs):
        is_h = np.array([a.is_hydrogen for a in atoms.atoms])
        cut = np.where(is_h[pairs[:, 0]] | is_h[pairs[:, 1]], hydrogen_cutoff, bond_cutoff)
        dist = np.linalg.norm(pos[pairs[:, 0]] - pos[pairs[:, 1]], axis=1)
        pairs = pairs[dist <= cut]
    if use_conect and atoms.conect:
        index = {a.serial: k for k, a in enumerate(atoms.atoms)}
        extra = [(index[a], index[b]) for a, b in atoms.conect if a in index and b in index]
        if extra:
            pairs = np.concatenate([pairs, np.asarray(extra, dtype=np.int64).reshape(-1, 2)])
    return MolecularGraph.from_pairs(len(atoms), pairs, "hard")


def build_soft_graph(atoms: AtomSet | np.ndarray, rho: float) -> MolecularGraph:
    """Graph joining every atom pair with ``0 < distance <= rho`` Å."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    pos = atoms.positions if isinstance(atoms, AtomSet) else np.asarray(atoms, dtype=float)
    return MolecularGraph(len(pos), radius_pairs(pos, rho), "soft", float(rho))


def build_graph(atoms: AtomSet, connectivity: str, rho: Optional[float] = None, **hard_kwargs) -> MolecularGraph:
    if connectivity == "none":
        return MolecularGraph.empty(len(atoms))
    if connectivity == "hard":
        return build_hard_graph(atoms, **hard_kwargs)
    if connectivity == "soft":
        if rho is None:
            raise ValueError("soft connectivity needs rho")
        return build_soft_graph(atoms, rho)
    raise ValueError(f"unknown connectivity {connectivity!r}")


# ---------------------------------------------------------------------------
# metrics


def degree_distribution(g: MolecularGraph) -> dict[int, int]:
    values, counts = np.unique(g.degrees, return_counts=True)
    return {int(k): int(c) for k, c in zip(values, counts)}


def triangles(g: MolecularGraph) -> np.ndarray:
    """Number of triangles through each node."""
    a = g.adjacency.astype(np.float64)
    if g.node_count and g.edge_count / g.node_count > 64:
        dense = a.toarray()
        tri = np.einsum("ij,ij->i", dense @ dense, dense)
    else:
        tri = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel()
    return np.rint(tri / 2).astype(np.int64)


def local_clustering(g: MolecularGraph) -> np.ndarray:
    k = g.degrees.astype(float)
    tri = triangles(g).astype(float)
    out = np.zeros(g.node_count)
    ok = k >= 2
    out[ok] = 2.0 * tri[ok] / (k[ok] * (k[ok] - 1.0))
    return out


def _hop_sums_per_source(g: MolecularGraph, idx: np.ndarray) -> tuple[float, int]:
    dist = csgraph.shortest_path(g.adjacency, method="D", directed=False, unweighted=True, indices=idx)
    finite = np.isfinite(dist)
    finite[np.arange(len(idx)), idx] = False
    return float(dist[finite].sum()), int(finite.sum())


def _hop_sums_level_sync(dense_adj: np.ndarray, idx: np.ndarray) -> tuple[float, int]:
    # BFS from all sources in idx at once; one matmul per level.
    n = dense_adj.shape[0]
    reached = np.zeros((len(idx), n), dtype=bool)
    reached[np.arange(len(idx)), idx] = True
    frontier = reached.astype(np.float32)
    total, connected, level = 0.0, 0, 0
    while True:
        level += 1
        nxt = (frontier @ dense_adj) > 0
        nxt &= ~reached
        count = int(nxt.sum())
        if count == 0:
            return total, connected
        total += level * count
        connected += count
        reached |= nxt
        frontier = nxt.astype(np.float32)


def path_length_stats(g: MolecularGraph, block: int = 1024) -> tuple[float, int, int]:
    """Mean BFS hop count over connected ordered pairs.

    Returns ``(mean, connected_ordered_pairs, disconnected_unordered_pairs)``.
    Dense graphs (mean degree >= 16) run a level-synchronous BFS from a block
    of sources at a time; sparse graphs use one BFS per source.
    """
    n = g.node_count
    dense = n <= 10_000 and n > 0 and 2 * g.edge_count / n >= 16
    adj = g.adjacency.toarray().astype(np.float32) if dense else None
    total = 0.0
    connected = 0
    for start in range(0, n, block):
        idx = np.arange(start, min(n, start + block))
        if dense:
            t, c = _hop_sums_level_sync(adj, idx)
        else:
            t, c = _hop_sums_per_source(g, idx)
        total += t
        connected += c
    disconnected = (n * (n - 1) - connected) // 2
    if connected == 0:
        raise AllIsolated("no connected pair of nodes")
    return total / connected, connected, disconnected


@dataclass
class GraphMetrics:
    node_count: int
    edge_count: int
    degree_histogram: dict[int, int]
    local_clustering: np.ndarray = field(repr=False)
    average_clustering: float
    average_path_length: float
    disconnected_pairs: int
    kind: str = "hard"
    soft_distance_angstrom: Optional[float] = None

    @property
    def max_degree(self) -> int:
        return max(self.degree_histogram) if self.degree_histogram else 0

    def report(self) -> str:
        """Flat ``key = value`` text report."""
        rows = [
            ("kind", self.kind),
            ("soft_distance_angstrom", "" if self.soft_distance_angstrom is None else f"{self.soft_distance_angstrom:g}"),
            ("node_count", self.node_count),
            ("edge_count", self.edge_count),
            ("max_degree", self.max_degree),
            ("average_clustering", f"{self.average_clustering:.6f}"),
            ("average_path_length", f"{self.average_path_length:.6f}"),
            ("disconnected_pairs", self.disconnected_pairs),
            ("degree_histogram", " ".join(f"{k}:{v}" for k, v in sorted(self.degree_histogram.items()))),
        ]
        return "".join(f"{k} = {v}\n" for k, v in rows)

    CSV_HEADER = "rho,C,L,max_degree"

    def csv_row(self) -> str:
        rho = "" if self.soft_distance_angstrom is None else f"{self.soft_distance_angstrom:g}"
        return f"{rho},{self.average_clustering:.6f},{self.average_path_length:.6f},{self.max_degree}"


def average_metrics(g: MolecularGraph) -> GraphMetrics:
    local = local_clustering(g)
    mean_path, _, disconnected = path_length_stats(g)
    return GraphMetrics(
        node_count=g.node_count,
        edge_count=g.edge_count,
        degree_histogram=degree_distribution(g),
        local_clustering=local,
        average_clustering=float(local.mean()) if g.node_count else 0.0,
        average_path_length=mean_path,
        disconnected_pairs=disconnected,
        kind=g.kind,
        soft_distance_angstrom=g.soft_distance_angstrom,
    )


# ---------------------------------------------------------------------------
# adjacency text


def export_adjacency(g: MolecularGraph) -> str:
    return "".join(f"{i} {j}\n" for i, j in g.edges)


def import_adjacency(text: str, node_count: int, kind="hard", soft_distance_angstrom=None) -> MolecularGraph:
    pairs = [tuple(int(t) for t in line.split()) for line in text.splitlines() if line.strip()]
    return MolecularGraph.from_pairs(node_count, pairs, kind, soft_distance_angstrom)
