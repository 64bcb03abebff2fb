import numpy as np
import pytest

from netadapt.energy import (
    EnergyParams,
    discrete_energy,
    dissipation_rate,
    energy_gradient,
    weighted_energy,
)
from netadapt.errors import GradientSingularityError
from netadapt.graph import SourceVector, build_network
from netadapt.kirchhoff import solve_pressures

from conftest import random_connected_network, random_sources


def single_edge(c, length=1.0):
    return build_network([(1, 0, 0), (2, 1, 0)], [(1, 2, length, c)])


def fd_gradient(network, sources, params, step=1e-6, length_exponent=1):
    """Central differences of the total energy with a re-solve per probe."""
    grad = np.zeros(network.n_edges)
    for k in range(network.n_edges):
        c_plus = network.conductivities.copy()
        c_minus = network.conductivities.copy()
        c_plus[k] += step
        c_minus[k] -= step
        e_plus = discrete_energy(network.with_conductivities(c_plus), sources,
                                 params, length_exponent=length_exponent).total
        e_minus = discrete_energy(network.with_conductivities(c_minus), sources,
                                  params, length_exponent=length_exponent).total
        grad[k] = (e_plus - e_minus) / (2 * step)
    return grad


class TestEnergyParams:
    def test_alpha_defaults_to_hu_cai_choice(self):
        assert EnergyParams(gamma=0.5).alpha == 1.5

    def test_alpha_constraint(self):
        with pytest.raises(ValueError):
            EnergyParams(gamma=0.5, alpha=0.5)

    def test_prefactor_forms(self):
        assert EnergyParams(gamma=0.5, nu=1.0).metabolic_coefficient == 2.0
        assert EnergyParams(gamma=0.5, nu=1.0,
                            metabolic_prefactor="nu").metabolic_coefficient == 1.0


class TestDiscreteEnergy:
    def test_single_edge_direct_substitution(self):
        # |Q| = 1 forced by the unit source; gamma=0.5, nu=1:
        # pumping 1, metabolic (nu/gamma) C^gamma L = 2
        net = single_edge(1.0)
        e = discrete_energy(net, SourceVector([1.0, -1.0]),
                            EnergyParams(gamma=0.5))
        assert e.pumping == pytest.approx(1.0)
        assert e.metabolic == pytest.approx(2.0)
        assert e.total == pytest.approx(3.0)

    def test_zero_sources_pumping_free(self, rng):
        net = random_connected_network(rng, 6, extra_edges=0)
        s = SourceVector(np.zeros(6))
        e = discrete_energy(net, s, EnergyParams(gamma=0.5))
        assert e.pumping == 0.0
        assert e.total == e.metabolic

    def test_matches_independent_recomputation(self, rng):
        net = random_connected_network(rng, 8)
        s = random_sources(rng, 8)
        params = EnergyParams(gamma=0.5)
        e = discrete_energy(net, s, params)
        state = solve_pressures(net, s)
        manual = 0.0
        for k in range(net.n_edges):
            c, ell = net.conductivities[k], net.lengths[k]
            manual += (state.fluxes[k] ** 2 / c + 2.0 * c ** 0.5) * ell
        assert e.total == pytest.approx(manual, rel=1e-12)

    def test_parts_nonnegative(self, rng):
        for _ in range(5):
            net = random_connected_network(rng, 7)
            s = random_sources(rng, 7)
            e = discrete_energy(net, s, EnergyParams(gamma=1.5))
            assert e.pumping >= 0.0
            assert e.metabolic >= 0.0


class TestGradient:
    def test_single_edge_steady_state_zero(self):
        params = EnergyParams(gamma=0.5, nu=1.0)
        c_star = (1.0 / 1.0) ** (1.0 / 1.5)
        net = single_edge(c_star)
        g = energy_gradient(net, SourceVector([1.0, -1.0]), params)
        assert abs(g[0]) < 1e-12

    def test_single_edge_hand_value(self):
        # -(Q^2/C^2 - nu C^(gamma-1)) L at C=2, |Q|=1: -(0.25 - 2^-0.5)
        net = single_edge(2.0)
        g = energy_gradient(net, SourceVector([1.0, -1.0]),
                            EnergyParams(gamma=0.5))
        assert g[0] == pytest.approx(-(0.25 - 2 ** -0.5), rel=1e-12)

    def test_gradient_sign(self, rng):
        net = random_connected_network(rng, 6)
        s = random_sources(rng, 6)
        params = EnergyParams(gamma=0.5)
        g = energy_gradient(net, s, params)
        state = solve_pressures(net, s)
        c = net.conductivities
        sign = np.sign(params.nu * c ** (params.gamma - 1)
                       - state.fluxes ** 2 / c ** 2)
        nonzero = sign != 0
        assert np.all(np.sign(g[nonzero]) == sign[nonzero])

    def test_matches_finite_differences(self, rng):
        for _ in range(5):
            n = int(rng.integers(5, 13))
            net = random_connected_network(rng, n)
            s = random_sources(rng, n)
            params = EnergyParams(gamma=0.5)
            exact = energy_gradient(net, s, params)
            approx = fd_gradient(net, s, params)
            err = np.abs(exact - approx) / np.maximum(np.abs(exact), 1e-10)
            assert err.max() <= 1e-5

    def test_singularity_error(self):
        net = single_edge(0.0)
        with pytest.raises(GradientSingularityError):
            energy_gradient(net, SourceVector([0.0, 0.0]),
                            EnergyParams(gamma=0.5))


class TestDissipation:
    def test_steady_state_zero(self):
        net = single_edge(1.0)
        d = dissipation_rate(net, SourceVector([1.0, -1.0]),
                             EnergyParams(gamma=0.5, nu=1.0))
        assert d == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        # -(Q^2/C - nu C^gamma)^2 C^(alpha-2) L^2 at C=0.5, |Q|=1,
        # gamma=0.5, alpha=1.5: -(2 - 2^-0.5)^2 * 0.5^-0.5
        net = single_edge(0.5)
        d = dissipation_rate(net, SourceVector([1.0, -1.0]),
                             EnergyParams(gamma=0.5, nu=1.0, alpha=1.5))
        expected = -((2.0 - 2 ** -0.5) ** 2) * 0.5 ** -0.5
        assert d == pytest.approx(expected, rel=1e-12)

    def test_always_nonpositive(self, rng):
        for _ in range(10):
            net = random_connected_network(rng, 7)
            s = random_sources(rng, 7)
            assert dissipation_rate(net, s, EnergyParams(gamma=1.5)) <= 0.0

    def test_equals_gradient_dot_flow(self, rng):
        net = random_connected_network(rng, 8)
        s = random_sources(rng, 8)
        params = EnergyParams(gamma=0.5, alpha=1.5)
        g = energy_gradient(net, s, params)
        state = solve_pressures(net, s)
        c = net.conductivities
        rhs = ((state.fluxes ** 2 / c ** 2
                - params.metabolic_derivative(c))
               * c ** params.alpha * net.lengths)
        d = dissipation_rate(net, s, params)
        assert d == pytest.approx(float(np.dot(g, rhs)), rel=1e-10)


class TestWeightedEnergy:
    def test_w_one_matches_unit_lengths(self, rng):
        net = random_connected_network(rng, 6, l_range=(1.0, 1.0))
        s = random_sources(rng, 6)
        params = EnergyParams(gamma=0.5)
        assert weighted_energy(net, s, params, 1.0, 1) == pytest.approx(
            discrete_energy(net, s, params).total)

    def test_doubling_weight_homogeneity(self, rng):
        net = random_connected_network(rng, 6)
        s = random_sources(rng, 6)
        params = EnergyParams(gamma=1.5)
        e1 = weighted_energy(net, s, params, 1.0, 2)
        e2 = weighted_energy(net, s, params, 2.0, 2)
        assert e2 == pytest.approx(4.0 * e1)

    def test_uniform_grid_equals_length_weighted(self, rng):
        # 1D chain with spacing 0.1: weight h, dimension 1
        h = 0.1
        n = 6
        vertices = [(i, i * h, 0.0) for i in range(n)]
        edges = [(i, i + 1, h, float(rng.uniform(0.5, 2.0)))
                 for i in range(n - 1)]
        net = build_network(vertices, edges)
        s = random_sources(rng, n)
        params = EnergyParams(gamma=0.5)
        assert weighted_energy(net, s, params, h, 1) == pytest.approx(
            discrete_energy(net, s, params).total, rel=1e-12)
