"""Graph data model: validated networks, sources, partitions, topology queries.

A Network is immutable after construction; every mutation-like operation
returns a new value, so instances are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    DuplicateEdgeError,
    NegativeConductivityError,
    NonpositiveLengthError,
    PartitionError,
    SelfLoopError,
    SourceCompatibilityError,
    UnknownVertexError,
)

SOURCE_BALANCE_TOL = 1e-12


@dataclass(frozen=True)
class Network:
    """Undirected graph with positions, edge lengths and conductivities.

    Edges are stored once under the canonical (min_id, max_id) key; the
    arrays `tail`/`head` hold vertex *indices* (row numbers), not ids.
    """

    vertex_ids: tuple
    positions: np.ndarray          # (n, 2)
    edges: tuple                   # ((i, j), ...) canonical id pairs
    lengths: np.ndarray            # (m,)
    conductivities: np.ndarray     # (m,)
    tail: np.ndarray = field(repr=False, default=None)  # (m,) vertex indices
    head: np.ndarray = field(repr=False, default=None)

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index_of(self, vertex_id) -> int:
        try:
            return self._id_to_index[vertex_id]
        except KeyError:
            raise UnknownVertexError(f"unknown vertex id {vertex_id!r}")

    @property
    def _id_to_index(self) -> dict:
        cache = self.__dict__.get("_id_index_cache")
        if cache is None:
            cache = {v: k for k, v in enumerate(self.vertex_ids)}
            object.__setattr__(self, "_id_index_cache", cache)
        return cache

    def edge_index(self, i, j) -> int:
        key = (i, j) if i <= j else (j, i)
        cache = self.__dict__.get("_edge_index_cache")
        if cache is None:
            cache = {e: k for k, e in enumerate(self.edges)}
            object.__setattr__(self, "_edge_index_cache", cache)
        if key not in cache:
            raise UnknownVertexError(f"no edge {key!r} in network")
        return cache[key]

    def adjacency_matrix(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency over vertex indices."""
        n, m = self.n_vertices, self.n_edges
        ones = np.ones(m)
        a = sp.coo_matrix(
            (np.concatenate([ones, ones]),
             (np.concatenate([self.tail, self.head]),
              np.concatenate([self.head, self.tail]))),
            shape=(n, n),
        )
        a = a.tocsr()
        a.data[:] = 1.0
        return a

    def with_conductivities(self, values) -> "Network":
        """Same topology with a replaced conductivity vector."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_edges,):
            raise NegativeConductivityError(
                f"conductivity vector has shape {values.shape}, "
                f"expected ({self.n_edges},)")
        if np.any(values < 0):
            raise NegativeConductivityError("negative conductivity in update")
        values = values.copy()
        values.setflags(write=False)
        return Network(self.vertex_ids, self.positions, self.edges,
                       self.lengths, values, self.tail, self.head)

    def without_edges(self, edge_keys) -> "Network":
        """Drop the given canonical edge pairs; vertices are kept."""
        drop = set(edge_keys)
        keep = [k for k, e in enumerate(self.edges) if e not in drop]
        keep = np.asarray(keep, dtype=int)
        edges = tuple(self.edges[k] for k in keep)
        lengths = self.lengths[keep].copy()
        conds = self.conductivities[keep].copy()
        lengths.setflags(write=False)
        conds.setflags(write=False)
        return Network(self.vertex_ids, self.positions, edges,
                       lengths, conds, self.tail[keep].copy(),
                       self.head[keep].copy())


def build_network(vertex_list, edge_list) -> Network:
    """Validate raw vertex/edge data and build a Network.

    Parameters
    ----------
    vertex_list : iterable of (id, x, y)
    edge_list : iterable of (i, j, length, conductivity)

    Raises the named error for self-loops, duplicate edges, nonpositive
    lengths, negative conductivities, or unknown endpoints.
    """
    vertex_list = list(vertex_list)
    ids = tuple(v[0] for v in vertex_list)
    if len(set(ids)) != len(ids):
        raise UnknownVertexError("duplicate vertex id")
    positions = np.asarray([[float(v[1]), float(v[2])] for v in vertex_list],
                           dtype=float).reshape(len(ids), 2)
    id_to_index = {v: k for k, v in enumerate(ids)}

    seen = set()
    edges, lengths, conds, tail, head = [], [], [], [], []
    for (i, j, length, cond) in edge_list:
        if i == j:
            raise SelfLoopError(f"self-loop at vertex {i!r}")
        if i not in id_to_index or j not in id_to_index:
            raise UnknownVertexError(f"edge ({i!r}, {j!r}) references unknown vertex")
        key = (i, j) if i <= j else (j, i)
        if key in seen:
            raise DuplicateEdgeError(f"duplicate edge {key!r}")
        seen.add(key)
        length = float(length)
        cond = float(cond)
        if not length > 0:
            raise NonpositiveLengthError(f"edge {key!r} has length {length}")
        if cond < 0:
            raise NegativeConductivityError(f"edge {key!r} has conductivity {cond}")
        edges.append(key)
        lengths.append(length)
        conds.append(cond)
        tail.append(id_to_index[key[0]])
        head.append(id_to_index[key[1]])

    lengths = np.asarray(lengths, dtype=float)
    conds = np.asarray(conds, dtype=float)
    positions.setflags(write=False)
    lengths.setflags(write=False)
    conds.setflags(write=False)
    return Network(ids, positions, tuple(edges), lengths, conds,
                   np.asarray(tail, dtype=int), np.asarray(head, dtype=int))


@dataclass(frozen=True)
class SourceVector:
    """Per-vertex source/sink strengths with zero total mass."""

    values: np.ndarray

    def __init__(self, values, balance: bool = False):
        values = np.asarray(values, dtype=float).copy()
        if balance and values.size:
            # Subtract the mean, then absorb the remaining rounding
            # residual into the largest-magnitude entry so the exactly
            # summed total is zero to within a few ulps.
            values -= math.fsum(values) / values.size
            k = int(np.argmax(np.abs(values)))
            values[k] -= math.fsum(values)
        total = math.fsum(values)
        if abs(total) > SOURCE_BALANCE_TOL:
            raise SourceCompatibilityError(
                f"sources sum to {total:.3e}, exceeds {SOURCE_BALANCE_TOL:.0e}; "
                "pass balance=True to subtract the mean")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def total(self) -> float:
        return math.fsum(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class CutPartition:
    """Disjoint cover (set1, set2) of the vertex ids and its cut edges."""

    set1: frozenset
    set2: frozenset
    cut_edges: tuple  # edge indices with one endpoint in each set

    @staticmethod
    def from_sets(network: Network, set1, set2=None) -> "CutPartition":
        set1 = frozenset(set1)
        all_ids = frozenset(network.vertex_ids)
        if set2 is None:
            set2 = all_ids - set1
        else:
            set2 = frozenset(set2)
        if set1 & set2:
            raise PartitionError("partition sets overlap")
        if (set1 | set2) != all_ids:
            raise PartitionError("partition does not cover all vertices")
        if not set1 <= all_ids or not set2 <= all_ids:
            raise PartitionError("partition references unknown vertices")
        cut = tuple(
            k for k, (i, j) in enumerate(network.edges)
            if (i in set1) != (j in set1)
        )
        return CutPartition(set1, set2, cut)


def cut_flux(network: Network, partition: CutPartition, sources: SourceVector) -> float:
    """Net source strength of partition.set1 (equals minus that of set2)."""
    idx = [network.index_of(v) for v in partition.set1]
    return math.fsum(sources.values[idx])


def _active_edge_mask(network: Network, threshold: float) -> np.ndarray:
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    return network.conductivities > threshold


def _component_labels(network: Network, mask: np.ndarray) -> np.ndarray:
    """Connected-component labels of the subgraph with the masked edges."""
    n = network.n_vertices
    if not mask.any():
        return np.arange(n)
    t, h = network.tail[mask], network.head[mask]
    ones = np.ones(t.size)
    a = sp.coo_matrix((ones, (t, h)), shape=(n, n))
    _, labels = sp.csgraph.connected_components(a, directed=False)
    return labels


def active_components(network: Network, threshold: float = 0.0):
    """Connected components of the subgraph with conductivity > threshold.

    Vertices touching no active edge appear as singleton components.
    Returns a list of vertex-id sets.
    """
    labels = _component_labels(network, _active_edge_mask(network, threshold))
    groups = {}
    for idx, lab in enumerate(labels):
        groups.setdefault(lab, set()).add(network.vertex_ids[idx])
    return list(groups.values())


def cycle_count(network: Network, threshold: float = 0.0) -> int:
    """Independent cycles of the active subgraph (0 iff it is a forest)."""
    mask = _active_edge_mask(network, threshold)
    m_active = int(mask.sum())
    if m_active == 0:
        return 0
    touched = np.unique(np.concatenate([network.tail[mask], network.head[mask]]))
    labels = _component_labels(network, mask)
    n_components = len(set(labels[touched]))
    return m_active - touched.size + n_components


def write_network(network: Network, path) -> None:
    """Write the vertex table and the edge table to one CSV-style file.

    Two comma-separated tables separated by a blank line, each with a
    one-line header: (id, x, y) then (i, j, L, C).
    """
    with open(path, "w") as f:
        f.write("id,x,y\n")
        for vid, (x, y) in zip(network.vertex_ids, network.positions):
            f.write(f"{vid},{float(x)!r},{float(y)!r}\n")
        f.write("\n")
        f.write("i,j,L,C\n")
        for (i, j), length, cond in zip(network.edges, network.lengths,
                                        network.conductivities):
            f.write(f"{i},{j},{float(length)!r},{float(cond)!r}\n")


def read_network(path) -> Network:
    """Read a network written by write_network."""
    with open(path) as f:
        text = f.read()
    vertex_block, edge_block = text.split("\n\n", 1)
    vertices = []
    for line in vertex_block.strip().splitlines()[1:]:
        vid, x, y = line.split(",")
        vertices.append((int(vid), float(x), float(y)))
    edges = []
    edge_lines = edge_block.strip().splitlines()[1:]
    for line in edge_lines:
        i, j, length, cond = line.split(",")
        edges.append((int(i), int(j), float(length), float(cond)))
    return build_network(vertices, edges)
