"""Constrained gradient-flow time stepping with pruning and termination.

Two step modes are available. The explicit mode integrates the flow
dC/dt = (Q^2/C - decay) C^(alpha-1) L directly. The proximal mode solves,
per edge, the frozen-pressure subproblem

    minimize (c - cbar)^2 / (2 tau w) - q c + k c^gamma L   over c >= 0,

with q = (dP)^2 / L the exact descent coefficient of the pumping energy
under the mass-balance constraint and w a metric weight (1 for the plain
Euclidean step, cbar^alpha to match the alpha-weighted flow). Both modes
are wrapped in a backtracking line search on the re-solved true energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BoundNotApplicableError,
    ConfigError,
    ConnectivityViolationError,
    NonFiniteFieldError,
    StepFailureError,
)
from .graph import CutPartition, Network, SourceVector, _component_labels, cut_flux, cycle_count
from .energy import EnergyBreakdown, EnergyParams, discrete_energy
from .kirchhoff import PressureState, solve_pressures

TAU_UNDERFLOW = 1e-14


@dataclass(frozen=True)
class DynamicsConfig:
    """Time-stepping parameters for the adaptation loop."""

    params: EnergyParams
    tau: float = 0.025
    tol: float = 1e-6
    prune_threshold: float = 1e-12
    max_iters: int = 10000
    step_mode: str = "proximal"              # or "explicit"
    proximal_metric: str = "euclidean"       # or "alpha"
    armijo_shrink: float = 0.5
    armijo_decrease: float = 0.01
    length_exponent: int = 2
    energy_comparison: str = "resolved"      # or "frozen"
    max_dc_tol: float = None                 # optional secondary stop criterion
    record_every: int = 1

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.prune_threshold < 0:
            raise ConfigError("prune_threshold must be nonnegative")
        if not 0 < self.armijo_shrink < 1:
            raise ConfigError("armijo_shrink must be in (0, 1)")
        if not 0 < self.armijo_decrease < 1:
            raise ConfigError("armijo_decrease must be in (0, 1)")
        if self.step_mode not in ("explicit", "proximal"):
            raise ConfigError("step_mode must be 'explicit' or 'proximal'")
        if self.proximal_metric not in ("euclidean", "alpha"):
            raise ConfigError("proximal_metric must be 'euclidean' or 'alpha'")
        if self.energy_comparison not in ("resolved", "frozen"):
            raise ConfigError("energy_comparison must be 'resolved' or 'frozen'")


@dataclass(frozen=True)
class CutBound:
    """Lower bound on the summed conductivity across a tracked cut."""

    kappa1: float
    kappa2: float
    u0: float
    bound: float


@dataclass
class Trajectory:
    """Recorded history of one adaptation run.

    Conductivity snapshots are aligned with `edges` (the initial edge
    set); pruned edges hold 0.0 from their removal onward.
    """

    edges: tuple
    iterations: list = field(default_factory=list)
    conductivities: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    taus: list = field(default_factory=list)
    cut_sums: list = field(default_factory=list)   # per snapshot, per tracked cut
    pruning_events: list = field(default_factory=list)  # (iteration, edge pair)
    termination: str = "max-iters"
    error_detail: str = None
    final_network: Network = None

    def energy_totals(self) -> np.ndarray:
        return np.array([e.total for e in self.energies])

    def to_csv(self, path, prune_threshold: float = 0.0) -> None:
        """Write the per-iteration summary table.

        Columns: iter, E_total, E_pumping, E_metabolic, tau_accepted,
        n_active_edges, n_cycles.
        """
        base = _aligned_network(self.final_network, self.edges,
                                np.zeros(len(self.edges)))
        with open(path, "w") as f:
            f.write("iter,E_total,E_pumping,E_metabolic,tau_accepted,"
                    "n_active_edges,n_cycles\n")
            for it, c, e, tau in zip(self.iterations, self.conductivities,
                                     self.energies, self.taus):
                net = base.with_conductivities(c)
                n_active = int(np.sum(c > prune_threshold))
                ncyc = cycle_count(net, prune_threshold)
                f.write(f"{it},{e.total!r},{e.pumping!r},{e.metabolic!r},"
                        f"{tau!r},{n_active},{ncyc}\n")


def _aligned_network(reference: Network, edges, conds) -> Network:
    """Rebuild a network over the original edge list with snapshot values."""
    lengths = dict(zip(reference.edges, reference.lengths))
    # Edges pruned from the reference keep a placeholder length of 1;
    # their conductivity is 0 in the snapshot so nothing depends on it.
    from .graph import build_network
    vertices = [(vid, x, y) for vid, (x, y) in
                zip(reference.vertex_ids, reference.positions)]
    edge_rows = [(i, j, lengths.get((i, j), 1.0), c)
                 for (i, j), c in zip(edges, conds)]
    return build_network(vertices, edge_rows)


# ---------------------------------------------------------------------------
# Single steps


def _metric_weights(c: np.ndarray, config: DynamicsConfig) -> np.ndarray:
    if config.step_mode == "proximal" and config.proximal_metric == "euclidean":
        return np.ones_like(c)
    return np.power(np.maximum(c, 0.0), config.params.alpha)


def explicit_step(network: Network, sources: SourceVector,
                  config: DynamicsConfig, tau: float = None,
                  pressures: PressureState = None) -> Network:
    """One forward-Euler step of the alpha-weighted flow, clamped at 0."""
    tau = config.tau if tau is None else tau
    if pressures is None:
        pressures = solve_pressures(
            network, sources, length_exponent=config.length_exponent,
            active_threshold=config.prune_threshold)
    c = network.conductivities
    active = c > config.prune_threshold
    q2c2 = np.zeros_like(c)
    q2c2[active] = (pressures.fluxes[active] / c[active]) ** 2
    rhs = (q2c2 - config.params.metabolic_derivative(np.where(active, c, 1.0)))
    rhs = rhs * np.power(np.where(active, c, 1.0), config.params.alpha) \
        * network.lengths
    new_c = np.where(active, np.maximum(0.0, c + tau * rhs), c)
    return network.with_conductivities(new_c)


def _prox_minimize(cbar, tau_eff, q, kg, m, gamma, iters: int = 90):
    """Vectorized minimizer of (c-cbar)^2/(2 te) - q c + m c^gamma, c >= 0.

    kg = m * gamma is the coefficient of c^(gamma-1) in the derivative.
    Root finding is bisection with Newton acceleration, safeguarded by the
    bracket, run to machine precision (stationarity far below 1e-10).
    """
    cbar = np.asarray(cbar, dtype=float)
    if gamma == 1.0:
        return np.maximum(0.0, cbar + tau_eff * (q - kg))

    hi = cbar + tau_eff * np.maximum(q, 0.0)
    if gamma > 1.0:
        # Convex objective, interior minimizer whenever cbar > 0 or q > 0.
        lo = np.zeros_like(cbar)
    else:
        # Nonconvex: the derivative dips below zero only past the
        # inflection point; c = 0 is always a boundary local minimum.
        c_infl = np.power(kg * (1.0 - gamma) * tau_eff, 1.0 / (2.0 - gamma))
        lo = c_infl
        hi = np.maximum(hi, c_infl * (1.0 + 1e-12))

    def fprime(c):
        with np.errstate(divide="ignore"):
            met = kg * np.power(np.maximum(c, 0.0), gamma - 1.0)
        met = np.where(c <= 0.0, 0.0 if gamma > 1.0 else np.inf, met)
        return (c - cbar) / tau_eff - q + met

    solvable = fprime(hi) > 0.0
    if gamma < 1.0:
        solvable &= fprime(lo) < 0.0   # otherwise global minimum is 0
    lo = np.where(solvable, lo, 0.0)
    hi = np.where(solvable, hi, 0.0)
    c = 0.5 * (lo + hi)
    for _ in range(iters):
        fc = fprime(c)
        pos = fc > 0.0
        hi = np.where(pos, c, hi)
        lo = np.where(pos, lo, c)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            fpp = 1.0 / tau_eff + kg * (gamma - 1.0) * np.power(
                np.maximum(c, 1e-300), gamma - 2.0)
            newton = c - fc / fpp
        good = (np.isfinite(fpp) & np.isfinite(newton)
                & (newton > lo) & (newton < hi) & (fpp > 0.0))
        c = np.where(good, newton, 0.5 * (lo + hi))
        if np.all(hi - lo <= 1e-16 * np.maximum(1.0, hi)):
            break
    c = np.where(solvable, np.maximum(c, 0.0), 0.0)

    if gamma < 1.0:
        # Keep the interior point only where it beats the boundary.
        fval_c = (c - cbar) ** 2 / (2.0 * tau_eff) - q * c \
            + m * np.power(c, gamma)
        fval_0 = cbar ** 2 / (2.0 * tau_eff)
        c = np.where(fval_c <= fval_0, c, 0.0)
    return c


def _prox_scalar(cbar: float, tau_eff: float, q: float, k_energy: float,
                 gamma: float, length: float) -> float:
    """Scalar convenience wrapper around the vectorized subproblem."""
    m = k_energy * length
    out = _prox_minimize(np.array([cbar]), np.array([tau_eff]),
                         np.array([q]), m * gamma, m, gamma)
    return float(out[0])


def proximal_step(network_prev: Network, pressures: PressureState,
                  config: DynamicsConfig, tau: float = None) -> Network:
    """Per-edge proximal update with the pressures frozen at network_prev."""
    tau = config.tau if tau is None else tau
    if not np.all(np.isfinite(pressures.pressures)):
        raise NonFiniteFieldError("non-finite pressures in proximal step")
    c = network_prev.conductivities
    active = c > config.prune_threshold
    dp = (pressures.pressures[network_prev.head]
          - pressures.pressures[network_prev.tail])
    q = dp ** 2 / network_prev.lengths
    weights = _metric_weights(c, config)
    params = config.params
    m = params.metabolic_coefficient * network_prev.lengths
    tau_eff = np.maximum(tau * weights, 1e-300)
    new_c = _prox_minimize(c, tau_eff, q, m * params.gamma, m, params.gamma)
    new_c = np.where(active, new_c, c)
    return network_prev.with_conductivities(new_c)


@dataclass(frozen=True)
class ArmijoResult:
    tau: float
    network: Network
    pressures: PressureState
    energy: EnergyBreakdown
    backtracks: int


def armijo_select_tau(network: Network, sources: SourceVector,
                      config: DynamicsConfig, tau_init: float = None,
                      pressures: PressureState = None,
                      energy: EnergyBreakdown = None) -> ArmijoResult:
    """Backtrack tau until the re-solved energy decreases sufficiently.

    Acceptance requires E_new <= E_old - decrease * ||dC||_w^2 / tau with
    the step's metric norm. Raises StepFailureError if tau underflows.
    """
    tau = config.tau if tau_init is None else tau_init
    if tau <= 0:
        raise ConfigError("tau_init must be positive")
    if pressures is None:
        pressures = solve_pressures(
            network, sources, length_exponent=config.length_exponent,
            active_threshold=config.prune_threshold)
    if energy is None:
        energy = discrete_energy(
            network, sources, config.params,
            length_exponent=config.length_exponent,
            active_threshold=config.prune_threshold, fluxes=pressures.fluxes)
    weights = _metric_weights(network.conductivities, config)
    sigma = config.armijo_decrease

    backtracks = 0
    while True:
        if config.step_mode == "explicit":
            candidate = explicit_step(network, sources, config, tau=tau,
                                      pressures=pressures)
        else:
            candidate = proximal_step(network, pressures, config, tau=tau)
        dc = candidate.conductivities - network.conductivities
        active = network.conductivities > config.prune_threshold
        w = np.where(weights > 0, weights, 1.0)
        decrease_measure = float(np.sum(np.where(active, dc * dc / w, 0.0))) / tau
        new_pressures = solve_pressures(
            candidate, sources, length_exponent=config.length_exponent,
            active_threshold=config.prune_threshold)
        new_energy = discrete_energy(
            candidate, sources, config.params,
            length_exponent=config.length_exponent,
            active_threshold=config.prune_threshold,
            fluxes=new_pressures.fluxes)
        if new_energy.total <= energy.total - sigma * decrease_measure:
            return ArmijoResult(tau, candidate, new_pressures, new_energy,
                                backtracks)
        tau *= config.armijo_shrink
        backtracks += 1
        if tau < TAU_UNDERFLOW:
            raise StepFailureError(
                f"line search underflowed below {TAU_UNDERFLOW:.0e} "
                f"after {backtracks} backtracks")


# ---------------------------------------------------------------------------
# Pruning and the main loop


def prune_edges(network: Network, prune_threshold: float,
                sources: SourceVector = None):
    """Remove edges with conductivity at or below the threshold.

    Returns (network, removed edge list). If a source vector is given and
    the removal would scatter the nonzero-source vertices over several
    components, raises ConnectivityViolationError.
    """
    mask = network.conductivities <= prune_threshold
    removed = [network.edges[k] for k in np.nonzero(mask)[0]]
    if not removed:
        return network, []
    pruned = network.without_edges(removed)
    if sources is not None:
        labels = _component_labels(
            pruned, pruned.conductivities > prune_threshold)
        carrying = np.nonzero(np.asarray(sources.values) != 0.0)[0]
        if carrying.size and len(set(labels[carrying])) > 1:
            raise ConnectivityViolationError(
                f"pruning {len(removed)} edges disconnects the source "
                "support; threshold is too aggressive")
    return pruned, removed


def cut_bound(network: Network, partition: CutPartition,
              sources: SourceVector, params: EnergyParams) -> CutBound:
    """Guaranteed lower bound on the summed cut conductivity.

    Valid in the regime 0 < gamma + alpha - 1 < 1 with nonzero net flux
    across the cut.
    """
    regime = params.gamma + params.alpha - 1.0
    if not 0.0 < regime < 1.0:
        raise BoundNotApplicableError(
            f"gamma + alpha - 1 = {regime:.3f} outside (0, 1)")
    delta_s = cut_flux(network, partition, sources)
    if delta_s == 0.0:
        raise BoundNotApplicableError("zero net flux across the partition")
    if not partition.cut_edges:
        raise BoundNotApplicableError("partition has no cut edges")
    cut = np.asarray(partition.cut_edges, dtype=int)
    lengths = network.lengths[cut]
    kappa1 = delta_s ** 2 / len(cut) ** 2 * float(lengths.min())
    kappa2 = params.nu * float(lengths.sum())
    u0 = float(network.conductivities[cut].sum())
    bound = min(u0, (kappa1 / kappa2) ** (1.0 / (params.gamma + 1.0)))
    return CutBound(kappa1, kappa2, u0, bound)


def _snapshot_aligned(edges, network: Network) -> np.ndarray:
    values = dict(zip(network.edges, network.conductivities))
    return np.array([values.get(e, 0.0) for e in edges])


def run_to_steady_state(network: Network, sources: SourceVector,
                        config: DynamicsConfig,
                        partitions=None) -> Trajectory:
    """Iterate pressure solve, conductivity step, prune, until converged.

    Parameters
    ----------
    network : initial state; must be connected on its active support.
    sources : balanced source vector.
    config : DynamicsConfig; `tol` stops the loop once the energy change
        between accepted iterates falls to or below it.
    partitions : optional list of CutPartition to track; the summed
        conductivity across each cut is recorded per snapshot.

    Returns a Trajectory whose recorded energies are exactly the values
    compared by the line search, so they are non-increasing by
    construction.
    """
    partitions = list(partitions or [])
    traj = Trajectory(edges=tuple(network.edges))
    current = network
    pressures = solve_pressures(
        current, sources, length_exponent=config.length_exponent,
        active_threshold=config.prune_threshold)
    energy = discrete_energy(
        current, sources, config.params,
        length_exponent=config.length_exponent,
        active_threshold=config.prune_threshold, fluxes=pressures.fluxes)

    def record(it, tau):
        traj.iterations.append(it)
        traj.conductivities.append(_snapshot_aligned(traj.edges, current))
        traj.energies.append(energy)
        traj.taus.append(tau)
        if partitions:
            sums = []
            for p in partitions:
                live = [k for k, e in enumerate(current.edges)
                        if ((e[0] in p.set1) != (e[1] in p.set1))]
                sums.append(float(current.conductivities[live].sum()))
            traj.cut_sums.append(sums)

    record(0, 0.0)
    termination = "max-iters"
    for it in range(1, config.max_iters + 1):
        try:
            result = armijo_select_tau(current, sources, config,
                                       pressures=pressures, energy=energy)
        except StepFailureError as err:
            termination = "error"
            traj.error_detail = f"iteration {it}: {err}"
            break
        prev_energy = energy
        prev_conds = _snapshot_aligned(traj.edges, current)
        stepped = result.network
        pruned, removed = prune_edges(stepped, config.prune_threshold, sources)
        if removed:
            traj.pruning_events.extend((it, e) for e in removed)
            pressures = solve_pressures(
                pruned, sources, length_exponent=config.length_exponent,
                active_threshold=config.prune_threshold)
            energy = discrete_energy(
                pruned, sources, config.params,
                length_exponent=config.length_exponent,
                active_threshold=config.prune_threshold,
                fluxes=pressures.fluxes)
            current = pruned
        else:
            current = stepped
            pressures = result.pressures
            energy = result.energy
        if it % config.record_every == 0 or it == config.max_iters:
            record(it, result.tau)
        de = abs(prev_energy.total - energy.total)
        if config.energy_comparison == "frozen":
            # Literal regularized comparison: previous energy plus the
            # proximal penalty of the accepted move.
            dc = _snapshot_aligned(traj.edges, current) - prev_conds
            de = abs(prev_energy.total
                     + float(np.sum(dc * dc)) / (2.0 * result.tau)
                     - energy.total)
        stop = de <= config.tol
        if config.max_dc_tol is not None:
            dc = _snapshot_aligned(traj.edges, current) - prev_conds
            stop = stop and float(np.abs(dc).max(initial=0.0)) / result.tau \
                <= config.max_dc_tol
        if stop:
            termination = "energy-converged"
            if traj.iterations[-1] != it:
                record(it, result.tau)
            break

    traj.termination = termination
    traj.final_network = current
    return traj
