import numpy as np
import pytest

from netadapt.errors import DisconnectedSupportError, SourceCompatibilityError
from netadapt.graph import SourceVector, build_network
from netadapt.kirchhoff import assemble, compute_fluxes, solve_pressures

from conftest import random_connected_network, random_sources


def two_nodes(c=1.0, length=1.0):
    return build_network([(1, 0, 0), (2, 1, 0)], [(1, 2, length, c)])


class TestAssemble:
    def test_single_edge_m1(self):
        system = assemble(two_nodes(), length_exponent=1)
        np.testing.assert_allclose(system.matrix.toarray(),
                                   [[1.0, -1.0], [-1.0, 1.0]])

    def test_single_edge_m2_hand_value(self):
        # C / L^2 = 1 / 0.25 = 4
        system = assemble(two_nodes(length=0.5), length_exponent=2)
        np.testing.assert_allclose(system.matrix.toarray(),
                                   [[4.0, -4.0], [-4.0, 4.0]])

    def test_triangle_diagonal(self):
        net = build_network(
            [(1, 0, 0), (2, 1, 0), (3, 0, 1)],
            [(1, 2, 1, 1), (2, 3, 1, 1), (1, 3, 1, 1)],
        )
        m = assemble(net, 1).matrix.toarray()
        np.testing.assert_allclose(np.diag(m), [2.0, 2.0, 2.0])

    def test_zero_row_sums(self, rng):
        net = random_connected_network(rng, 8)
        for m in (1, 2):
            mat = assemble(net, m).matrix
            np.testing.assert_allclose(mat @ np.ones(8), 0.0, atol=1e-12)


class TestSolve:
    def test_two_node_unit_flow(self):
        net = two_nodes()
        state = solve_pressures(net, SourceVector([1.0, -1.0]),
                                length_exponent=1, ground=2)
        np.testing.assert_allclose(state.pressures, [1.0, 0.0], atol=1e-12)
        assert abs(state.fluxes[0]) == pytest.approx(1.0, abs=1e-12)

    def test_series_path(self):
        net = build_network(
            [(1, 0, 0), (2, 1, 0), (3, 2, 0)],
            [(1, 2, 1, 1), (2, 3, 1, 1)],
        )
        state = solve_pressures(net, SourceVector([1.0, 0.0, -1.0]),
                                length_exponent=1, ground=3)
        np.testing.assert_allclose(state.pressures, [2.0, 1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(np.abs(state.fluxes), [1.0, 1.0], atol=1e-12)

    def test_m2_pressure_drop(self):
        net = two_nodes(length=0.5)
        state = solve_pressures(net, SourceVector([1.0, -1.0]),
                                length_exponent=2, ground=2)
        # drop = S L^2 / C = 0.25
        assert state.pressures[0] - state.pressures[1] == pytest.approx(0.25)

    def test_node_balance_random(self, rng):
        net = random_connected_network(rng, 8)
        s = random_sources(rng, 8)
        state = solve_pressures(net, s, length_exponent=1)
        # outgoing flux summed at each vertex must equal -S there
        balance = np.zeros(8)
        for k, (i, j) in enumerate(net.edges):
            balance[net.index_of(i)] += state.fluxes[k]
            balance[net.index_of(j)] -= state.fluxes[k]
        np.testing.assert_allclose(balance, -s.values, atol=1e-10)

    def test_gauge_invariance(self, rng):
        net = random_connected_network(rng, 6)
        s = random_sources(rng, 6)
        state = solve_pressures(net, s)
        shifted = compute_fluxes(net, state.pressures + 3.7)
        np.testing.assert_allclose(shifted, compute_fluxes(net, state.pressures),
                                   rtol=0, atol=1e-12)

    def test_grounded_matches_lsq_fluxes(self, rng):
        for n in (4, 7, 10):
            net = random_connected_network(rng, n)
            s = random_sources(rng, n)
            direct = solve_pressures(net, s, method="direct")
            lsq = solve_pressures(net, s, method="lsq")
            np.testing.assert_allclose(direct.fluxes, lsq.fluxes, atol=1e-7)
            shift = direct.pressures - lsq.pressures
            np.testing.assert_allclose(shift, shift.mean(), atol=1e-7)

    def test_cg_backend(self, rng):
        net = random_connected_network(rng, 10)
        s = random_sources(rng, 10)
        direct = solve_pressures(net, s, method="direct")
        cg = solve_pressures(net, s, method="cg")
        np.testing.assert_allclose(cg.fluxes, direct.fluxes, atol=1e-7)

    def test_disconnected_support_rejected(self):
        net = build_network(
            [(1, 0, 0), (2, 1, 0), (3, 2, 0), (4, 3, 0)],
            [(1, 2, 1, 1), (2, 3, 1, 0.0), (3, 4, 1, 1)],
        )
        with pytest.raises(DisconnectedSupportError):
            solve_pressures(net, SourceVector([1.0, 0.0, 0.0, -1.0]))

    def test_unbalanced_sources_rejected(self):
        net = two_nodes()
        bad = SourceVector.__new__(SourceVector)
        object.__setattr__(bad, "values", np.array([1.0, -0.5]))
        with pytest.raises(SourceCompatibilityError):
            solve_pressures(net, bad)

    def test_zero_conductivity_edge_carries_no_flux(self):
        net = build_network(
            [(1, 0, 0), (2, 1, 0), (3, 2, 0)],
            [(1, 2, 1, 1), (2, 3, 1, 1), (1, 3, 1, 0.0)],
        )
        state = solve_pressures(net, SourceVector([1.0, 0.0, -1.0]))
        assert state.fluxes[net.edge_index(1, 3)] == 0.0


class TestComputeFluxes:
    def test_direct_formula(self):
        net = build_network([(1, 0, 0), (2, 1, 0)], [(1, 2, 1.0, 2.0)])
        fluxes = compute_fluxes(net, np.array([0.0, 3.0]))
        assert fluxes[0] == pytest.approx(6.0)

    def test_zero_conductivity(self):
        net = two_nodes(c=0.0)
        assert compute_fluxes(net, np.array([5.0, -1.0]))[0] == 0.0
