import math

import numpy as np
import pytest

from netadapt.errors import (
    DuplicateEdgeError,
    NegativeConductivityError,
    NonpositiveLengthError,
    PartitionError,
    SelfLoopError,
    SourceCompatibilityError,
)
from netadapt.graph import (
    CutPartition,
    SourceVector,
    active_components,
    build_network,
    cut_flux,
    cycle_count,
    read_network,
    write_network,
)

from conftest import random_connected_network


def triangle(c=(1.0, 1.0, 1.0)):
    return build_network(
        [(1, 0.0, 0.0), (2, 1.0, 0.0), (3, 0.5, 1.0)],
        [(1, 2, 1.0, c[0]), (2, 3, 1.0, c[1]), (1, 3, 1.0, c[2])],
    )


class TestBuildNetwork:
    def test_smallest_legal_graph(self):
        net = build_network([(1, 0, 0), (2, 1, 0)], [(1, 2, 1.0, 1.0)])
        assert net.n_vertices == 2
        assert net.n_edges == 1
        assert net.edges == ((1, 2),)

    def test_self_loop_rejected(self):
        with pytest.raises(SelfLoopError):
            build_network([(1, 0, 0), (2, 1, 0)], [(1, 1, 1.0, 1.0)])

    def test_duplicate_undirected_edge_rejected(self):
        with pytest.raises(DuplicateEdgeError):
            build_network([(1, 0, 0), (2, 1, 0)],
                          [(1, 2, 1.0, 1.0), (2, 1, 1.0, 1.0)])

    def test_nonpositive_length_rejected(self):
        with pytest.raises(NonpositiveLengthError):
            build_network([(1, 0, 0), (2, 1, 0)], [(1, 2, 0.0, 1.0)])

    def test_negative_conductivity_rejected(self):
        with pytest.raises(NegativeConductivityError):
            build_network([(1, 0, 0), (2, 1, 0)], [(1, 2, 1.0, -0.5)])

    def test_adjacency_symmetric_binary(self):
        net = triangle()
        a = net.adjacency_matrix().toarray()
        assert np.array_equal(a, a.T)
        assert set(np.unique(a)) <= {0.0, 1.0}
        assert a.sum() == 6  # three undirected edges


class TestComponentsAndCycles:
    def test_triangle_single_component(self):
        assert len(active_components(triangle(), 0.0)) == 1

    def test_triangle_with_dead_edge_still_connected(self):
        comps = active_components(triangle((1.0, 1.0, 0.0)), 0.0)
        assert len(comps) == 1
        assert comps[0] == {1, 2, 3}

    def test_path_all_dead_gives_singletons(self):
        net = build_network(
            [(1, 0, 0), (2, 1, 0), (3, 2, 0)],
            [(1, 2, 1.0, 0.0), (2, 3, 1.0, 0.0)],
        )
        comps = active_components(net, 0.0)
        assert sorted(map(sorted, comps)) == [[1], [2], [3]]

    def test_triangle_cycles(self):
        assert cycle_count(triangle(), 0.0) == 1

    def test_spanning_tree_no_cycles(self, rng):
        net = random_connected_network(rng, 10, extra_edges=0)
        assert net.n_edges == 9
        assert cycle_count(net, 0.0) == 0

    def test_two_disjoint_triangles(self):
        net = build_network(
            [(i, float(i), 0.0) for i in range(1, 7)],
            [(1, 2, 1, 1), (2, 3, 1, 1), (1, 3, 1, 1),
             (4, 5, 1, 1), (5, 6, 1, 1), (4, 6, 1, 1)],
        )
        assert cycle_count(net, 0.0) == 2

    def test_cycle_count_invariant_under_relabeling(self, rng):
        net = random_connected_network(rng, 8, extra_edges=5)
        base = cycle_count(net, 0.0)
        perm = rng.permutation(8)
        relabel = {old: int(perm[k]) for k, old in enumerate(range(8))}
        vertices = [(relabel[i], x, y)
                    for i, (x, y) in zip(net.vertex_ids, net.positions)]
        edges = [(relabel[i], relabel[j], l, c)
                 for (i, j), l, c in zip(net.edges, net.lengths,
                                         net.conductivities)]
        assert cycle_count(build_network(vertices, edges), 0.0) == base

    def test_threshold_is_strict(self):
        net = triangle((0.5, 0.5, 0.5))
        assert cycle_count(net, 0.5) == 0  # strictly greater than threshold


class TestSourcesAndCuts:
    def test_balanced_vector_accepted(self):
        s = SourceVector([1.0, -1.0])
        assert s.total == 0.0

    def test_unbalanced_rejected(self):
        with pytest.raises(SourceCompatibilityError):
            SourceVector([1.0, -0.5])

    def test_balance_handles_large_scale(self):
        rng = np.random.default_rng(0)
        s = SourceVector(rng.uniform(0, 1e4, size=80), balance=True)
        assert abs(math.fsum(s.values)) <= 1e-12

    def test_cut_flux_two_nodes(self):
        net = build_network([(1, 0, 0), (2, 1, 0)], [(1, 2, 1.0, 1.0)])
        s = SourceVector([1.0, -1.0])
        p1 = CutPartition.from_sets(net, {1})
        p2 = CutPartition.from_sets(net, {2})
        assert cut_flux(net, p1, s) == 1.0
        assert cut_flux(net, p2, s) == -1.0

    def test_cut_flux_direct_sum(self):
        net = build_network(
            [(1, 0, 0), (2, 1, 0), (3, 2, 0)],
            [(1, 2, 1, 1), (2, 3, 1, 1)],
        )
        s = SourceVector([2.0, -1.0, -1.0])
        p = CutPartition.from_sets(net, {1, 2})
        assert cut_flux(net, p, s) == 1.0

    def test_cut_antisymmetry_random(self, rng):
        net = random_connected_network(rng, 9)
        s = SourceVector(rng.normal(size=9), balance=True)
        ids = list(net.vertex_ids)
        half = set(ids[:4])
        p = CutPartition.from_sets(net, half)
        q = CutPartition.from_sets(net, set(ids) - half)
        assert cut_flux(net, p, s) == pytest.approx(-cut_flux(net, q, s), abs=1e-12)

    def test_partition_must_cover(self):
        net = triangle()
        with pytest.raises(PartitionError):
            CutPartition.from_sets(net, {1}, {2})

    def test_cut_edges_identified(self):
        net = triangle()
        p = CutPartition.from_sets(net, {1})
        cut_pairs = {net.edges[k] for k in p.cut_edges}
        assert cut_pairs == {(1, 2), (1, 3)}


class TestNetworkFile:
    def test_round_trip(self, tmp_path, rng):
        net = random_connected_network(rng, 7)
        path = tmp_path / "net.csv"
        write_network(net, path)
        back = read_network(path)
        assert back.vertex_ids == net.vertex_ids
        assert back.edges == net.edges
        np.testing.assert_array_equal(back.lengths, net.lengths)
        np.testing.assert_array_equal(back.conductivities, net.conductivities)
        np.testing.assert_array_equal(back.positions, net.positions)
