"""Network energy: pumping plus metabolic cost, its gradient, dissipation.

The metabolic term is coeff * C**gamma * L per edge, where coeff is
either nu/gamma or nu. Both prefactor conventions appear in practice, so
the choice is a first-class parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GradientSingularityError
from .graph import Network, SourceVector
from .kirchhoff import solve_pressures


@dataclass(frozen=True)
class EnergyParams:
    """Exponents and coefficients of the adaptation energy.

    alpha is the gradient-flow metric exponent; alpha = 2 - gamma
    recovers the classical adaptation dynamics. The modeling constraint
    alpha > 1 - gamma (metabolic decay speed increasing in C) is enforced.
    """

    gamma: float
    nu: float = 1.0
    alpha: float = None
    metabolic_prefactor: str = "nu_over_gamma"   # or "nu"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 2.0 - self.gamma)
        if self.alpha <= 1.0 - self.gamma:
            raise ValueError("alpha must exceed 1 - gamma")
        if self.metabolic_prefactor not in ("nu_over_gamma", "nu"):
            raise ValueError("metabolic_prefactor must be 'nu_over_gamma' or 'nu'")

    @property
    def metabolic_coefficient(self) -> float:
        """Coefficient of C**gamma in the energy."""
        if self.metabolic_prefactor == "nu_over_gamma":
            return self.nu / self.gamma
        return self.nu

    def metabolic_derivative(self, c: np.ndarray) -> np.ndarray:
        """d/dC of the metabolic density, coeff * gamma * C**(gamma-1)."""
        c = np.asarray(c, dtype=float)
        k = self.metabolic_coefficient * self.gamma
        with np.errstate(divide="ignore"):
            out = k * np.power(c, self.gamma - 1.0)
        if self.gamma > 1.0:
            out = np.where(c == 0.0, 0.0, out)
        elif self.gamma == 1.0:
            out = np.full_like(c, k)
        return out


@dataclass(frozen=True)
class EnergyBreakdown:
    pumping: float
    metabolic: float

    @property
    def total(self) -> float:
        return self.pumping + self.metabolic


def _solved_fluxes(network, sources, length_exponent, active_threshold):
    state = solve_pressures(network, sources, length_exponent=length_exponent,
                            active_threshold=active_threshold)
    return state.fluxes


def pumping_metabolic_terms(network: Network, params: EnergyParams,
                            fluxes: np.ndarray,
                            active_threshold: float = 0.0):
    """Per-edge pumping and metabolic contributions for given fluxes."""
    c = network.conductivities
    length = network.lengths
    active = c > active_threshold
    with np.errstate(divide="ignore", invalid="ignore"):
        pump = np.where(active, fluxes ** 2 / np.where(active, c, 1.0), 0.0)
    pump = pump * length
    metab = params.metabolic_coefficient * np.power(c, params.gamma) * length
    return pump, metab


def discrete_energy(network: Network, sources: SourceVector,
                    params: EnergyParams, length_exponent: int = 1,
                    active_threshold: float = 0.0,
                    fluxes: np.ndarray = None) -> EnergyBreakdown:
    """Total energy sum over edges of (Q^2/C + coeff C^gamma) L.

    Fluxes come from a fresh pressure solve unless supplied. Edges at or
    below the active threshold carry no flow and contribute only their
    stored metabolic cost.
    """
    if fluxes is None:
        fluxes = _solved_fluxes(network, sources, length_exponent, active_threshold)
    pump, metab = pumping_metabolic_terms(network, params, fluxes, active_threshold)
    return EnergyBreakdown(math.fsum(pump), math.fsum(metab))


def energy_gradient(network: Network, sources: SourceVector,
                    params: EnergyParams, length_exponent: int = 1,
                    active_threshold: float = 0.0,
                    fluxes: np.ndarray = None) -> np.ndarray:
    """Exact per-edge derivative of the energy with respect to C_ij.

    Equals -(Q^2/C^2 - coeff*gamma*C^(gamma-1)) L; the flux sensitivity
    cancels through the mass-balance constraint, so only the direct terms
    survive.
    """
    c = network.conductivities
    if params.gamma < 1.0 and np.any(c == 0.0):
        raise GradientSingularityError(
            "gradient singular at zero conductivity for gamma < 1")
    if fluxes is None:
        fluxes = _solved_fluxes(network, sources, length_exponent, active_threshold)
    with np.errstate(divide="ignore", invalid="ignore"):
        q2c2 = np.where(c > 0, fluxes ** 2 / np.where(c > 0, c, 1.0) ** 2, 0.0)
    return -(q2c2 - params.metabolic_derivative(c)) * network.lengths


def dissipation_rate(network: Network, sources: SourceVector,
                     params: EnergyParams, length_exponent: int = 1,
                     active_threshold: float = 0.0) -> float:
    """Instantaneous energy decay along the adaptation flow; always <= 0."""
    c = network.conductivities
    fluxes = _solved_fluxes(network, sources, length_exponent, active_threshold)
    with np.errstate(divide="ignore", invalid="ignore"):
        q2c = np.where(c > 0, fluxes ** 2 / np.where(c > 0, c, 1.0), 0.0)
    decay = params.metabolic_coefficient * params.gamma * np.power(c, params.gamma)
    bracket = q2c - decay
    weight = np.power(np.where(c > 0, c, 1.0), params.alpha - 2.0)
    weight = np.where(c > 0, weight, 0.0)
    total = -math.fsum(bracket ** 2 * weight * network.lengths ** 2)
    return min(total, 0.0)


def weighted_energy(network: Network, sources: SourceVector,
                    params: EnergyParams, weight, dimension: int,
                    length_exponent: int = 1,
                    fluxes: np.ndarray = None) -> float:
    """Energy with abstract edge weights W**d in place of the lengths.

    `weight` is a positive scalar (uniform) or a per-edge array; the
    per-edge form exists to demonstrate what breaks without uniformity.
    """
    w = np.asarray(weight, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if fluxes is None:
        fluxes = _solved_fluxes(network, sources, length_exponent, 0.0)
    c = network.conductivities
    with np.errstate(divide="ignore", invalid="ignore"):
        pump = np.where(c > 0, fluxes ** 2 / np.where(c > 0, c, 1.0), 0.0)
    metab = params.metabolic_coefficient * np.power(c, params.gamma)
    return math.fsum((pump + metab) * w ** dimension)
