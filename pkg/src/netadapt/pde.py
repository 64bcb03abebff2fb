"""Finite-difference solver for the regularized continuum adaptation system.

Layout: the pressure lives on grid nodes; each conductivity component
c^k lives on the midpoints of grid edges in direction k, so the grid
Poisson matrix coincides entrywise with the graph Laplacian of the
sampled network. The conductivity evolves under homogeneous Dirichlet
conditions; lattice points on the domain boundary are pinned to zero and
a zero ghost layer closes the stencil in the staggered directions.

Two steppers are provided:

* "explicit": forward Euler on
  dc/dt = D^2 lap(c) + (grad_k p)^2 - nu |c|^(gamma-2) c, clamped at 0,
  subject to the usual diffusion stability restriction.
* "variational" (default): implicit minimization step on the energy with
  the pumping term replaced by its tight flux majorizer. For gamma > 1
  the subproblem is convex, the iterate stays nonnegative through an
  M-matrix fixed point, and the scheme satisfies the discrete dissipation
  inequality E(t_n) + sum dt ||dc/dt||^2 <= E(0) by construction.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ConfigError,
    DegeneratePermeabilityError,
    DissipationViolationError,
    GridFieldError,
    NonFiniteFieldError,
    SolverError,
    SourceCompatibilityError,
    StabilityError,
)

POISSON_TOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid: box bounds and cell counts per axis (d = 1 or 2)."""

    bounds: tuple   # ((x0, x1),) or ((x0, x1), (y0, y1))
    cells: tuple    # (nx,) or (nx, ny)

    def __post_init__(self):
        if len(self.bounds) != len(self.cells):
            raise GridFieldError("bounds and cells must have equal length")
        if len(self.cells) not in (1, 2):
            raise GridFieldError("only 1D and 2D grids are supported")
        for (a, b), n in zip(self.bounds, self.cells):
            if not (b > a and n >= 2):
                raise GridFieldError("degenerate grid axis")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def spacings(self) -> tuple:
        return tuple((b - a) / n for (a, b), n in zip(self.bounds, self.cells))

    @property
    def weight(self) -> float:
        """Uniform quadrature weight W with W**d = product of spacings."""
        vol = math.prod(self.spacings)
        return vol ** (1.0 / self.dim)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacings)

    def node_axes(self):
        return tuple(a + np.arange(n + 1) * h
                     for (a, _), n, h in zip(self.bounds, self.cells,
                                             self.spacings))

    def node_shape(self) -> tuple:
        return tuple(n + 1 for n in self.cells)

    def component_shape(self, k: int) -> tuple:
        return tuple(n if l == k else n + 1 for l, n in enumerate(self.cells))

    def midpoint_axes(self, k: int):
        """Coordinate axes of direction-k edge midpoints."""
        out = []
        for l, ((a, _), n, h) in enumerate(zip(self.bounds, self.cells,
                                               self.spacings)):
            if l == k:
                out.append(a + (np.arange(n) + 0.5) * h)
            else:
                out.append(a + np.arange(n + 1) * h)
        return tuple(out)


def _boundary_pin_mask(grid: GridSpec, k: int) -> np.ndarray:
    """True where a direction-k midpoint lies on the domain boundary."""
    shape = grid.component_shape(k)
    mask = np.zeros(shape, dtype=bool)
    for axis in range(grid.dim):
        if axis == k:
            continue
        sl_lo = [slice(None)] * grid.dim
        sl_hi = [slice(None)] * grid.dim
        sl_lo[axis] = 0
        sl_hi[axis] = -1
        mask[tuple(sl_lo)] = True
        mask[tuple(sl_hi)] = True
    return mask


@dataclass(frozen=True)
class DiagonalTensorField:
    """Diagonal conductivity components plus isotropic background r.

    Components are stored at the direction-k edge midpoints. The
    background is stored at the same locations; during time stepping it
    must be bounded below by a positive constant so the pressure problem
    stays uniformly elliptic.
    """

    grid: GridSpec
    components: tuple
    background: tuple

    @staticmethod
    def create(grid: GridSpec, components=None, background=0.0):
        comps = []
        for k in range(grid.dim):
            shape = grid.component_shape(k)
            if components is None:
                comps.append(np.zeros(shape))
            else:
                arr = np.asarray(components[k], dtype=float).copy()
                if arr.shape != shape:
                    raise GridFieldError(
                        f"component {k} has shape {arr.shape}, expected {shape}")
                comps.append(arr)
        backs = []
        for k in range(grid.dim):
            shape = grid.component_shape(k)
            if np.isscalar(background):
                backs.append(np.full(shape, float(background)))
            else:
                arr = np.asarray(background[k], dtype=float).copy()
                if arr.shape != shape:
                    raise GridFieldError(
                        f"background {k} has shape {arr.shape}, expected {shape}")
                backs.append(arr)
        for c in comps:
            if np.any(c < 0):
                raise GridFieldError("conductivity components must be nonnegative")
            if not np.all(np.isfinite(c)):
                raise NonFiniteFieldError("non-finite conductivity component")
        for r in backs:
            if np.any(r < 0):
                raise DegeneratePermeabilityError("background must be nonnegative")
        for arr in comps + backs:
            arr.setflags(write=False)
        return DiagonalTensorField(grid, tuple(comps), tuple(backs))

    def with_components(self, new_components) -> "DiagonalTensorField":
        return DiagonalTensorField.create(self.grid, new_components,
                                          [r for r in self.background])

    def min_component(self) -> float:
        return min(float(c.min()) for c in self.components)

    def sample(self, funcs) -> "DiagonalTensorField":
        """Fill components by evaluating callables at the midpoints."""
        comps = []
        for k in range(self.grid.dim):
            axes = self.grid.midpoint_axes(k)
            mesh = np.meshgrid(*axes, indexing="ij")
            comps.append(funcs[k](*mesh))
        return self.with_components(comps)


@dataclass(frozen=True)
class PressureField:
    values: np.ndarray     # node array, zero mean
    residual: float


@dataclass(frozen=True)
class PDEConfig:
    """Parameters of the continuum run."""

    diffusivity_sq: float
    nu: float
    gamma: float
    dt: float
    t_final: float
    scheme: str = "variational"       # or "explicit"
    poisson_tol: float = POISSON_TOL
    record_every: int = 1
    check_dissipation: bool = True
    dissipation_slack: float = 1e-8   # relative to E(0)

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise ConfigError("gamma must exceed 1 for the continuum model")
        if self.diffusivity_sq < 0:
            raise ConfigError("diffusivity_sq must be nonnegative")
        if self.nu <= 0:
            raise ConfigError("nu must be positive")
        if self.dt <= 0 or self.t_final <= 0:
            raise ConfigError("dt and t_final must be positive")
        if self.scheme not in ("variational", "explicit"):
            raise ConfigError("scheme must be 'variational' or 'explicit'")


def stability_limit(grid: GridSpec, diffusivity_sq: float) -> float:
    """Largest explicit-Euler dt for the diffusion term (h^2/(4 D^2) in 2D)."""
    if diffusivity_sq == 0:
        return np.inf
    return 1.0 / (2.0 * diffusivity_sq * sum(1.0 / h ** 2
                                             for h in grid.spacings))


# ---------------------------------------------------------------------------
# Poisson solve


def node_sources(grid: GridSpec, fn, balance: bool = True) -> np.ndarray:
    """Sample a source density at the nodes, optionally mean-subtracted."""
    mesh = np.meshgrid(*grid.node_axes(), indexing="ij")
    s = np.asarray(fn(*mesh), dtype=float)
    if balance:
        s = s - s.mean()
    return s


def _node_index(grid: GridSpec):
    shape = grid.node_shape()
    return np.arange(math.prod(shape)).reshape(shape)


def _face_weights(grid: GridSpec, k: int) -> np.ndarray:
    """Transverse-length fraction of each direction-k face (1/2 on walls).

    The no-flux control volumes of boundary nodes are halved, so the
    faces lying on a wall carry half their transverse extent.
    """
    shape = grid.component_shape(k)
    phi = np.ones(shape)
    for axis in range(grid.dim):
        if axis == k:
            continue
        sl = [slice(None)] * grid.dim
        sl[axis] = 0
        phi[tuple(sl)] *= 0.5
        sl[axis] = -1
        phi[tuple(sl)] *= 0.5
    return phi


def _volume_fractions(grid: GridSpec) -> np.ndarray:
    """Control-volume fraction of each node (1, 1/2 faces, 1/4 corners)."""
    frac = np.ones(grid.node_shape())
    for axis in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[axis] = 0
        frac[tuple(sl)] *= 0.5
        sl[axis] = -1
        frac[tuple(sl)] *= 0.5
    return frac


def _poisson_matrix(cfield: DiagonalTensorField,
                    closure: str = "fv") -> sp.csr_matrix:
    grid = cfield.grid
    idx = _node_index(grid)
    n = idx.size
    rows, cols, vals = [], [], []
    for k in range(grid.dim):
        h = grid.spacings[k]
        coeff = (cfield.background[k] + cfield.components[k]) / h ** 2
        if closure == "fv":
            coeff = coeff * _face_weights(grid, k)
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        left = idx[tuple(lo)].ravel()
        right = idx[tuple(hi)].ravel()
        w = coeff.ravel()
        rows.extend([left, right, left, right])
        cols.extend([right, left, left, right])
        vals.extend([-w, -w, w, w])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def solve_poisson_grid(cfield: DiagonalTensorField, sources,
                       grid: GridSpec = None,
                       tol: float = POISSON_TOL,
                       closure: str = "fv") -> PressureField:
    """Solve the variable-coefficient Poisson problem with no-flux walls.

    The flux-form stencil uses the midpoint coefficients r + c^k; at the
    walls the missing neighbor terms implement the zero normal flux. The
    default "fv" closure weights boundary faces and control volumes by
    their geometric fractions (second order on smooth data); the "graph"
    closure uses the bare sampled-network Laplacian rows (first order at
    the walls). The returned pressure has zero mean. Sources must be
    compatible; the right-hand side is projected onto the solvable space
    before the solve.
    """
    grid = grid or cfield.grid
    if grid is not cfield.grid and grid != cfield.grid:
        raise GridFieldError("grid does not match the field's grid")
    if closure not in ("fv", "graph"):
        raise ConfigError("closure must be 'fv' or 'graph'")
    s = np.asarray(sources, dtype=float)
    if s.shape != grid.node_shape():
        raise GridFieldError(
            f"sources have shape {s.shape}, expected {grid.node_shape()}")
    for k in range(grid.dim):
        total = cfield.background[k] + cfield.components[k]
        if float(total.min()) <= 0.0:
            raise DegeneratePermeabilityError(
                f"permeability component {k} not uniformly positive "
                f"(min {float(total.min()):.3e})")

    svec = s.ravel()
    scale = float(np.abs(svec).sum()) * grid.cell_volume
    imbalance = abs(math.fsum(svec)) * grid.cell_volume
    if imbalance > max(1e-9, 1e-9 * scale):
        raise SourceCompatibilityError(
            f"weighted source sum {imbalance:.3e} violates compatibility")
    if closure == "fv":
        frac = _volume_fractions(grid).ravel()
        rhs = svec * frac
        rhs = rhs - (rhs.sum() / frac.sum()) * frac
    else:
        rhs = svec - svec.mean()

    matrix = _poisson_matrix(cfield, closure)
    n = matrix.shape[0]
    keep = np.arange(n) != 0
    sub = matrix[keep][:, keep].tocsc()
    sol = np.zeros(n)
    sol[keep] = spla.spsolve(sub, rhs[keep])
    resid = rhs - matrix @ sol
    s_norm = float(np.linalg.norm(rhs))
    if s_norm > 0 and np.linalg.norm(resid) > tol * s_norm:
        sol[keep] += spla.spsolve(sub, resid[keep])
        resid = rhs - matrix @ sol
        if np.linalg.norm(resid) > tol * s_norm:
            raise SolverError(
                f"grid Poisson residual {np.linalg.norm(resid):.3e} "
                f"exceeds {tol:.1e} * ||S||")
    p = sol.reshape(grid.node_shape())
    p = p - p.mean()
    return PressureField(p, float(np.linalg.norm(resid)))


def pressure_gradients(grid: GridSpec, p: np.ndarray):
    """Directional derivative of p at the direction-k midpoints, per k."""
    grads = []
    for k in range(grid.dim):
        h = grid.spacings[k]
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        grads.append((p[tuple(hi)] - p[tuple(lo)]) / h)
    return tuple(grads)


# ---------------------------------------------------------------------------
# Discrete energy and its operators


def _padded_gradient_sq_sum(u: np.ndarray, spacings) -> float:
    """Sum of squared lattice differences including zero ghost faces."""
    total = 0.0
    for axis, h in enumerate(spacings):
        pad = [(0, 0)] * u.ndim
        pad[axis] = (1, 1)
        v = np.pad(u, pad)
        d = np.diff(v, axis=axis) / h
        total += float(np.sum(d * d))
    return total


def _lattice_laplacian(u: np.ndarray, spacings) -> np.ndarray:
    """5-point (3-point in 1D) Laplacian with a zero ghost layer."""
    out = np.zeros_like(u)
    for axis, h in enumerate(spacings):
        pad = [(0, 0)] * u.ndim
        pad[axis] = (1, 1)
        v = np.pad(u, pad)
        lo = [slice(None)] * u.ndim
        hi = [slice(None)] * u.ndim
        mid = [slice(None)] * u.ndim
        lo[axis] = slice(0, -2)
        mid[axis] = slice(1, -1)
        hi[axis] = slice(2, None)
        out += (v[tuple(hi)] - 2.0 * v[tuple(mid)] + v[tuple(lo)]) / h ** 2
    return out


def continuum_energy(cfield: DiagonalTensorField, pressure: PressureField,
                     config: PDEConfig, grid: GridSpec = None) -> float:
    """Midpoint-rule quadrature of the regularized adaptation energy.

    Integrand: D^2/2 |grad_h c|^2 + grad_h p . (r I + c) grad_h p
    + (nu/gamma) |c|^gamma, with weight W^d per lattice point.
    """
    grid = grid or cfield.grid
    w = grid.cell_volume
    p = np.asarray(pressure.values, dtype=float)
    grads = pressure_gradients(grid, p)
    total = 0.0
    for k in range(grid.dim):
        c = cfield.components[k]
        r = cfield.background[k]
        phi = _face_weights(grid, k)
        total += float(np.sum(phi * (r + c) * grads[k] ** 2)) * w
        total += config.nu / config.gamma * float(np.sum(c ** config.gamma)) * w
        if config.diffusivity_sq > 0:
            total += 0.5 * config.diffusivity_sq \
                * _padded_gradient_sq_sum(c, grid.spacings) * w
    return total


# ---------------------------------------------------------------------------
# Time stepping


def step_conductivity_field(cfield: DiagonalTensorField,
                            pressure: PressureField, config: PDEConfig,
                            grid: GridSpec = None) -> DiagonalTensorField:
    """One explicit Euler step, clamped at zero, boundary pinned to zero."""
    grid = grid or cfield.grid
    limit = stability_limit(grid, config.diffusivity_sq)
    if config.dt > limit:
        raise StabilityError(
            f"dt = {config.dt:.3e} exceeds the explicit stability limit "
            f"{limit:.3e}")
    grads = pressure_gradients(grid, np.asarray(pressure.values))
    new_comps = []
    for k in range(grid.dim):
        c = cfield.components[k]
        decay = config.nu * np.power(c, config.gamma - 1.0)
        update = c + config.dt * (
            config.diffusivity_sq * _lattice_laplacian(c, grid.spacings)
            + grads[k] ** 2 - decay)
        update = np.maximum(update, 0.0)
        update[_boundary_pin_mask(grid, k)] = 0.0
        if not np.all(np.isfinite(update)):
            raise NonFiniteFieldError("non-finite conductivity after step")
        new_comps.append(update)
    return cfield.with_components(new_comps)


def _component_operator(grid: GridSpec, k: int) -> sp.csr_matrix:
    """Sparse negative Laplacian on the k-th component lattice."""
    shape = grid.component_shape(k)
    mats = []
    for axis, (n, h) in enumerate(zip(shape, grid.spacings)):
        main = np.full(n, 2.0 / h ** 2)
        off = np.full(n - 1, -1.0 / h ** 2)
        mats.append(sp.diags([off, main, off], [-1, 0, 1], format="csr"))
    if grid.dim == 1:
        return mats[0]
    eye0 = sp.identity(shape[0], format="csr")
    eye1 = sp.identity(shape[1], format="csr")
    return (sp.kron(mats[0], eye1) + sp.kron(eye0, mats[1])).tocsr()


def _monotone_root(u0, dt, a_lin, b_const, nu, gamma, sv, rv,
                   iters: int = 80) -> np.ndarray:
    """Vectorized root of the increasing scalar map on u >= 0:

        (u - u0)/dt + a_lin u + b_const + nu u^(gamma-1) - sv/(rv+u)^2 = 0

    with u0, sv >= 0, b_const <= 0, rv > 0, gamma > 1. The value at 0 is
    nonpositive, so the root is nonnegative and unique.
    """
    def phi(u):
        return ((u - u0) / dt + a_lin * u + b_const
                + nu * np.power(u, gamma - 1.0) - sv / (rv + u) ** 2)

    lo = np.zeros_like(u0)
    hi = u0 + dt * (np.maximum(-b_const, 0.0) + sv / rv ** 2) + 1e-300
    u = 0.5 * (lo + hi)
    for _ in range(iters):
        f = phi(u)
        pos = f > 0.0
        hi = np.where(pos, u, hi)
        lo = np.where(pos, lo, u)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            fp = (1.0 / dt + a_lin
                  + nu * (gamma - 1.0) * np.power(np.maximum(u, 1e-300),
                                                  gamma - 2.0)
                  + 2.0 * sv / (rv + u) ** 3)
            newton = u - f / fp
        good = (np.isfinite(fp) & np.isfinite(newton)
                & (newton > lo) & (newton < hi))
        u = np.where(good, newton, 0.5 * (lo + hi))
        if np.all(hi - lo <= 1e-16 * np.maximum(1.0, hi)):
            break
    return np.maximum(u, 0.0)


def variational_conductivity_step(cfield: DiagonalTensorField,
                                  pressure: PressureField,
                                  config: PDEConfig,
                                  grid: GridSpec = None,
                                  gtol: float = 1e-11,
                                  max_sweeps: int = 400) -> DiagonalTensorField:
    """Implicit minimization step with the pumping term majorized.

    Per component solves

        min_u ||u - u0||^2/(2 dt) + D^2/2 |grad_h u|^2
              + (nu/gamma) sum u^gamma + sum qbar^2 / (r + u)

    over the free lattice points, where qbar^2 is the face-weighted
    squared flux (r + u0)^2 (grad_k p)^2 of the current state. Each sweep
    solves the pointwise nonlinearity exactly with the Laplacian
    off-diagonal lagged (Jacobi style), which keeps iterates nonnegative
    and converges by diagonal dominance.
    """
    grid = grid or cfield.grid
    dt = config.dt
    grads = pressure_gradients(grid, np.asarray(pressure.values))
    new_comps = []
    for k in range(grid.dim):
        c0 = cfield.components[k]
        r = cfield.background[k]
        qbar_sq = _face_weights(grid, k) * ((r + c0) * grads[k]) ** 2
        pin = _boundary_pin_mask(grid, k)
        free = ~pin.ravel()
        nu, gamma, d2 = config.nu, config.gamma, config.diffusivity_sq

        op_ff = None
        diag = None
        if d2 > 0:
            op = _component_operator(grid, k)
            op_ff = op[free][:, free].tocsr()
            diag = op_ff.diagonal()
            off = op_ff - sp.diags(diag)

        u0 = c0.ravel()[free]
        rv = r.ravel()[free]
        sv = qbar_sq.ravel()[free]

        def residual(u):
            g = (u - u0) / dt + nu * np.power(u, gamma - 1.0) \
                - sv / (rv + u) ** 2
            if d2 > 0:
                g = g + d2 * (op_ff @ u)
            return g

        u = u0.copy()
        g_scale = max(1.0, float(np.abs(residual(np.maximum(u, 1e-30))).max()))
        eps = np.finfo(float).eps
        # Rounding in (u - u0)/dt bounds the attainable stationarity.
        floor = 64.0 * eps * (float(np.abs(u0).max(initial=0.0)) + 1.0) / dt
        converged = False
        for _ in range(max_sweeps):
            if d2 > 0:
                a_lin = d2 * diag
                b_const = d2 * (off @ u)   # nonpositive: -sum of neighbors
            else:
                a_lin = 0.0
                b_const = np.zeros_like(u)
            u = _monotone_root(u0, dt, a_lin, b_const, nu, gamma, sv, rv)
            if float(np.abs(residual(u)).max()) <= gtol * g_scale + floor:
                converged = True
                break
            if d2 == 0:
                converged = True   # single sweep is exact without coupling
                break
        if not converged:
            raise SolverError("variational step did not reach stationarity")
        if np.any(u < 0):
            raise SolverError("variational step produced negative values")
        full = np.zeros(c0.size)
        full[free] = u
        new_comps.append(full.reshape(c0.shape))
    return cfield.with_components(new_comps)


@dataclass
class PDETrace:
    """Recorded times, energies, dissipation and extrema of one run."""

    grid: GridSpec
    times: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    cumulative_dissipation: list = field(default_factory=list)
    min_component: list = field(default_factory=list)
    final_field: DiagonalTensorField = None
    final_pressure: PressureField = None
    snapshots: list = field(default_factory=list)   # (time, field, pressure)

    def dissipation_defect(self) -> float:
        """max over records of E(t) + cumulative - E(0); <= 0 when clean."""
        e0 = self.energies[0]
        vals = [e + c - e0 for e, c in
                zip(self.energies, self.cumulative_dissipation)]
        return max(vals)


def run_pde(config: PDEConfig, grid: GridSpec,
            initial_cfield: DiagonalTensorField, sources,
            keep_snapshots: bool = False) -> PDETrace:
    """Alternate Poisson solves and conductivity steps up to t_final.

    Records the energy and the cumulative dissipation
    sum_n dt ||(c_{n+1} - c_n)/dt||^2 (W-weighted), verifies the
    dissipation inequality against E(0) within the configured slack, and
    checks nonnegativity. Deterministic: identical inputs give identical
    traces.
    """
    if initial_cfield.grid != grid:
        raise GridFieldError("initial field lives on a different grid")
    for k in range(grid.dim):
        pinned = initial_cfield.components[k][_boundary_pin_mask(grid, k)]
        if pinned.size and float(np.abs(pinned).max()) > 0.0:
            raise GridFieldError(
                "initial conductivity must vanish on the domain boundary")
    s = np.asarray(sources, dtype=float)
    n_steps = int(round(config.t_final / config.dt))
    trace = PDETrace(grid=grid)

    cfield = initial_cfield
    pressure = solve_poisson_grid(cfield, s, grid, tol=config.poisson_tol)
    energy = continuum_energy(cfield, pressure, config, grid)
    e0 = energy
    cum = 0.0
    w = grid.cell_volume

    def record(t):
        trace.times.append(t)
        trace.energies.append(energy)
        trace.cumulative_dissipation.append(cum)
        trace.min_component.append(cfield.min_component())
        if keep_snapshots:
            trace.snapshots.append((t, cfield, pressure))

    record(0.0)
    for n in range(1, n_steps + 1):
        if config.scheme == "explicit":
            new_field = step_conductivity_field(cfield, pressure, config, grid)
        else:
            new_field = variational_conductivity_step(cfield, pressure,
                                                      config, grid)
        rate_sq = 0.0
        for k in range(grid.dim):
            d = new_field.components[k] - cfield.components[k]
            rate_sq += float(np.sum(d * d)) * w
        cum += rate_sq / config.dt
        cfield = new_field
        pressure = solve_poisson_grid(cfield, s, grid, tol=config.poisson_tol)
        energy = continuum_energy(cfield, pressure, config, grid)
        if cfield.min_component() < 0:
            raise SolverError("conductivity became negative")
        if config.check_dissipation:
            slack = config.dissipation_slack * max(abs(e0), 1e-300)
            if energy + cum > e0 + slack:
                raise DissipationViolationError(
                    f"dissipation inequality violated at t = {n * config.dt:.6g}: "
                    f"E + cum - E0 = {energy + cum - e0:.3e}")
        if n % config.record_every == 0 or n == n_steps:
            record(n * config.dt)
    trace.final_field = cfield
    trace.final_pressure = pressure
    return trace


# ---------------------------------------------------------------------------
# Snapshot export


def write_field_snapshots(out_dir, trace: PDETrace) -> None:
    """Plain-text matrices, one file per component per snapshot, plus a
    JSON manifest with the grid metadata."""
    os.makedirs(out_dir, exist_ok=True)
    grid = trace.grid
    entries = []
    snapshots = trace.snapshots or [
        (trace.times[-1], trace.final_field, trace.final_pressure)]
    for snap_idx, (t, cfield, pressure) in enumerate(snapshots):
        files = {}
        for k in range(grid.dim):
            name = f"c{k + 1}_{snap_idx:06d}.txt"
            np.savetxt(os.path.join(out_dir, name),
                       np.atleast_2d(cfield.components[k]))
            files[f"c{k + 1}"] = name
        pname = f"p_{snap_idx:06d}.txt"
        np.savetxt(os.path.join(out_dir, pname),
                   np.atleast_2d(pressure.values))
        files["p"] = pname
        entries.append({"time": t, "files": files})
    manifest = {
        "bounds": [list(b) for b in grid.bounds],
        "cells": list(grid.cells),
        "spacings": list(grid.spacings),
        "weight": grid.weight,
        "snapshots": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
