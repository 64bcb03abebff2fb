"""Conductivity-weighted Laplacian assembly and pressure/flux solves.

All functions are pure: they read the network and return new values, so
independent solves may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DisconnectedSupportError, SolverError, SourceCompatibilityError
from .graph import Network, SourceVector, _component_labels

DEFAULT_SOLVE_TOL = 1e-8


@dataclass(frozen=True)
class LaplacianSystem:
    """Full (ungrounded) weighted Laplacian with zero row sums.

    Off-diagonal entries are -C_ij / L_ij**m on edges; the diagonal holds
    the negated row sum, so the matrix annihilates constants.
    """

    matrix: sp.csr_matrix
    length_exponent: int
    grounded_vertex: object = None   # vertex id, or None for mean-zero gauge


@dataclass(frozen=True)
class PressureState:
    """Solved pressures, per-edge fluxes, and the node-balance residual."""

    pressures: np.ndarray   # (n,), aligned with network.vertex_ids
    fluxes: np.ndarray      # (m,), canonical orientation tail -> head
    residual: float


def _edge_weights(network: Network, length_exponent: int,
                  active_threshold: float) -> np.ndarray:
    if length_exponent not in (1, 2):
        raise ValueError("length_exponent must be 1 or 2")
    w = network.conductivities / network.lengths ** length_exponent
    w = np.where(network.conductivities > active_threshold, w, 0.0)
    return w


def assemble(network: Network, length_exponent: int = 1,
             active_threshold: float = 0.0) -> LaplacianSystem:
    """Assemble the sparse symmetric system for the given length exponent.

    Edges at or below `active_threshold` are excluded, matching the
    dynamics convention that near-vanished edges carry no flow.
    """
    n = network.n_vertices
    w = _edge_weights(network, length_exponent, active_threshold)
    t, h = network.tail, network.head
    rows = np.concatenate([t, h, t, h])
    cols = np.concatenate([h, t, t, h])
    vals = np.concatenate([-w, -w, w, w])
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return LaplacianSystem(matrix, length_exponent)


def compute_fluxes(network: Network, pressures: np.ndarray) -> np.ndarray:
    """Per-edge flux C_ij (P_j - P_i) / L_ij in canonical orientation."""
    pressures = np.asarray(pressures, dtype=float)
    dp = pressures[network.head] - pressures[network.tail]
    return network.conductivities * dp / network.lengths


def _solve_component(matrix: sp.csr_matrix, rhs: np.ndarray, ground: int,
                     method: str, tol: float) -> np.ndarray:
    """Solve the singular system on one component with the given gauge."""
    n = matrix.shape[0]
    if method == "lsq":
        # Least-squares on the system with the ground row/column removed,
        # mirroring the (n-1) x (n-1) truncated formulation.
        keep = np.arange(n) != ground
        sub = matrix[keep][:, keep]
        x = np.zeros(n)
        if sub.shape[0]:
            sol = spla.lsqr(sub, rhs[keep], atol=1e-14, btol=1e-14)[0]
            x[keep] = sol
        return x
    keep = np.arange(n) != ground
    sub = matrix[keep][:, keep].tocsc()
    x = np.zeros(n)
    if sub.shape[0] == 0:
        return x
    b = rhs[keep]
    if method == "cg":
        diag = sub.diagonal()
        diag[diag <= 0] = 1.0
        precond = spla.LinearOperator(sub.shape, matvec=lambda v: v / diag)
        sol, info = spla.cg(sub, b, rtol=min(tol, 1e-10), atol=0.0,
                            M=precond, maxiter=20 * sub.shape[0])
        if info != 0:
            raise SolverError(f"conjugate gradient did not converge (info={info})")
    elif method == "direct":
        sol = spla.spsolve(sub, b)
        # One step of iterative refinement guards against loss of accuracy
        # on badly scaled conductivity ratios.
        r = b - sub @ sol
        if np.linalg.norm(r) > tol * max(np.linalg.norm(b), 1e-300):
            sol = sol + spla.spsolve(sub, r)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    x[keep] = sol
    return x


def solve_pressures(network: Network, sources: SourceVector,
                    length_exponent: int = 1,
                    solve_tolerance: float = DEFAULT_SOLVE_TOL,
                    ground=None, method: str = "direct",
                    active_threshold: float = 0.0) -> PressureState:
    """Solve the per-vertex mass balance for pressures and fluxes.

    Parameters
    ----------
    network, sources : the graph and its balanced source vector.
    length_exponent : 1 for C/L edge weights, 2 for C/L**2.
    solve_tolerance : required node-balance residual relative to ||S||.
    ground : vertex id pinned to pressure 0; default is the highest id in
        the component that carries the sources. Components without sources
        get pressure 0 everywhere.
    method : "direct" (sparse LU with one refinement step), "cg"
        (diagonally preconditioned conjugate gradient), or "lsq"
        (least squares on the ground-truncated system).

    The gauge does not affect fluxes. Raises DisconnectedSupportError when
    the nonzero sources straddle several active components, and
    SourceCompatibilityError when the sources do not sum to zero.
    """
    s = np.asarray(sources.values, dtype=float)
    if s.shape != (network.n_vertices,):
        raise SourceCompatibilityError(
            f"sources have length {s.shape[0]}, expected {network.n_vertices}")
    total = math.fsum(s)
    if abs(total) > max(1e-12, 1e-12 * float(np.abs(s).sum())):
        raise SourceCompatibilityError(f"sources sum to {total:.3e}")

    system = assemble(network, length_exponent, active_threshold)
    mask = network.conductivities > active_threshold
    labels = _component_labels(network, mask)

    carrying = np.nonzero(s != 0.0)[0]
    source_labels = set(labels[carrying]) if carrying.size else set()
    if len(source_labels) > 1:
        comps = [
            sorted(network.vertex_ids[k] for k in np.nonzero(labels == lab)[0])
            for lab in sorted(source_labels)
        ]
        raise DisconnectedSupportError(
            f"nonzero sources live on {len(source_labels)} disconnected "
            f"components", components=comps)

    pressures = np.zeros(network.n_vertices)
    if source_labels:
        lab = source_labels.pop()
        comp = np.nonzero(labels == lab)[0]
        if ground is not None:
            g_local = network.index_of(ground)
            if labels[g_local] != lab:
                raise DisconnectedSupportError(
                    "ground vertex is not in the source-carrying component")
        else:
            g_local = comp[np.argmax([network.vertex_ids[k] for k in comp])]
        sub = system.matrix[comp][:, comp]
        local_ground = int(np.nonzero(comp == g_local)[0][0])
        sol = _solve_component(sub.tocsr(), s[comp], local_ground, method,
                               solve_tolerance)
        pressures[comp] = sol

    residual_vec = system.matrix @ pressures - s
    residual = float(np.linalg.norm(residual_vec))
    s_norm = float(np.linalg.norm(s))
    if s_norm > 0 and residual > solve_tolerance * s_norm:
        raise SolverError(
            f"node-balance residual {residual:.3e} exceeds "
            f"{solve_tolerance:.1e} * ||S|| = {solve_tolerance * s_norm:.3e}")

    fluxes = compute_fluxes(network, pressures)
    fluxes = np.where(mask, fluxes, 0.0)
    return PressureState(pressures, fluxes, residual)
