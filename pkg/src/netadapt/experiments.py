"""Scenario construction and execution: geometry, sources, initial data.

A scenario bundles a geometry preset (or network file), energy and
dynamics parameters, and an initialization rule. Runs write a trajectory
CSV, the final network file, a plot-data file (edge endpoints plus width
proportional to conductivity) and a JSON report into the output
directory. Everything is deterministic given the configuration seed.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import yaml

from .dynamics import DynamicsConfig, Trajectory, run_to_steady_state
from .energy import EnergyParams
from .errors import ConfigError, GraphValidationError, SourceCompatibilityError
from .graph import Network, SourceVector, build_network, cycle_count, read_network, write_network

SOURCE_PEAK = 1e4
SOURCE_X_CUTOFF = 0.1
PAPER_DIAMOND_COLUMNS = (6, 7, 7, 7, 8, 8, 8, 7, 7, 7, 6)
SMALL_DIAMOND_COLUMNS = (4, 5, 6, 5, 4)
DOMAIN_X = (0.0, 2.0)
DOMAIN_Y = (-1.5, 0.5)


# ---------------------------------------------------------------------------
# Geometry


def _diamond_columns(columns, x_range=(0.05, 1.95), y_center=-0.5,
                     dy=None) -> Network:
    """Triangulated diamond: vertical columns of vertices along x.

    Adjacent columns are joined by a monotone zigzag, which triangulates
    the strip between them (p + q - 1 cross edges for columns of p and q
    vertices). Column widths rise and fall, so the hull is diamond-like.
    """
    columns = tuple(int(c) for c in columns)
    if len(columns) < 2 or any(c < 1 for c in columns):
        raise ConfigError("need at least two columns of positive size")
    n_cols = len(columns)
    dx = (x_range[1] - x_range[0]) / (n_cols - 1)
    if dy is None:
        dy = 1.4 / (max(columns) - 1)
    vertices = []
    col_ids = []
    next_id = 0
    for k, height in enumerate(columns):
        x = x_range[0] + k * dx
        ys = (np.arange(height) - (height - 1) / 2.0) * dy + y_center
        ids = []
        for y in ys:
            vertices.append((next_id, float(x), float(y)))
            ids.append(next_id)
            next_id += 1
        col_ids.append(ids)

    pos = {vid: (x, y) for vid, x, y in vertices}

    def dist(a, b):
        (xa, ya), (xb, yb) = pos[a], pos[b]
        return math.hypot(xb - xa, yb - ya)

    edges = []
    for ids in col_ids:
        for a, b in zip(ids, ids[1:]):
            edges.append((a, b, dist(a, b), 0.0))
    for left, right in zip(col_ids, col_ids[1:]):
        a = b = 0
        edges.append((left[0], right[0], dist(left[0], right[0]), 0.0))
        while a < len(left) - 1 or b < len(right) - 1:
            if a == len(left) - 1:
                b += 1
            elif b == len(right) - 1:
                a += 1
            elif pos[left[a + 1]][1] <= pos[right[b + 1]][1]:
                a += 1
            else:
                b += 1
            edges.append((left[a], right[b], dist(left[a], right[b]), 0.0))
    return build_network(vertices, edges)


def generate_diamond(preset: str, columns=None) -> Network:
    """Diamond geometry presets inside (0, 2) x (-1.5, 0.5).

    "paper-diamond" has 78 vertices and 201 edges; "small-diamond" is a
    scaled-down analogue (about 25 vertices) for fast runs. Custom column
    profiles are accepted through `columns`.
    """
    if preset == "paper-diamond":
        columns = PAPER_DIAMOND_COLUMNS
        dy = 0.2
    elif preset == "small-diamond":
        columns = tuple(columns) if columns else SMALL_DIAMOND_COLUMNS
        dy = 1.4 / (max(columns) - 1)
    else:
        raise ConfigError(f"unknown diamond preset {preset!r}")
    net = _diamond_columns(columns, dy=dy)
    # generator self-check via the Euler relation
    expected_cycles = net.n_edges - net.n_vertices + 1
    full = net.with_conductivities(np.ones(net.n_edges))
    if cycle_count(full, 0.0) != expected_cycles:
        raise ConfigError("diamond triangulation failed its Euler check")
    for x, y in net.positions:
        if not (DOMAIN_X[0] < x < DOMAIN_X[1] and DOMAIN_Y[0] < y < DOMAIN_Y[1]):
            raise ConfigError("diamond vertex left the embedding domain")
    return net


# ---------------------------------------------------------------------------
# Sources and initial conductivities


def build_sources(network: Network) -> SourceVector:
    """Inflow concentrated near the left tip, uniform outflow elsewhere.

    Vertices with x <= 0.1 get a Gaussian-like positive strength peaking
    at (0, -0.5); every other vertex carries the constant negative value
    that balances the total exactly.
    """
    xs = network.positions[:, 0]
    ys = network.positions[:, 1]
    plus = xs <= SOURCE_X_CUTOFF
    if not plus.any():
        raise SourceCompatibilityError(
            "no vertex lies in the inflow region x <= 0.1")
    if plus.all():
        raise SourceCompatibilityError("no vertex left for the outflow side")
    sigma_plus = SOURCE_PEAK * np.exp(
        -10.0 * (50.0 * xs ** 2 + 10.0 * (ys + 0.5) ** 4))
    values = np.where(plus, sigma_plus, 0.0)
    values[~plus] = -values[plus].sum() / (~plus).sum()
    return SourceVector(values, balance=True)


@dataclass(frozen=True)
class InitSpec:
    """Initial-conductivity rule.

    kind "tree": spanning-tree edges at `delta`, the rest at
    `background`; `extra_loops` closes that many extra edges at `delta`
    and `epsilon` is added to every edge afterwards. kind "full": every
    edge at `delta`. kind "full-noise": `delta` plus uniform noise drawn
    from [0, noise) with the scenario seed.
    """

    kind: str = "tree"
    delta: float = 5.0
    background: float = 1e-10
    epsilon: float = 0.0
    extra_loops: int = 0
    noise: float = 1.0
    tree_edges: tuple = None

    def __post_init__(self):
        if self.kind not in ("tree", "full", "full-noise"):
            raise ConfigError(f"unknown init kind {self.kind!r}")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")


def spanning_tree_edges(network: Network, seed: int) -> tuple:
    """Deterministic random spanning tree (random weights, minimum tree)."""
    rng = np.random.default_rng(seed)
    weights = rng.uniform(1.0, 2.0, size=network.n_edges)
    n = network.n_vertices
    graph = sp.coo_matrix((weights, (network.tail, network.head)),
                          shape=(n, n)).tocsr()
    tree = sp.csgraph.minimum_spanning_tree(graph).tocoo()
    picked = set()
    for i, j in zip(tree.row, tree.col):
        a = network.vertex_ids[i]
        b = network.vertex_ids[j]
        picked.add((a, b) if a <= b else (b, a))
    return tuple(sorted(picked))


def init_conductivities(network: Network, spec: InitSpec,
                        seed: int = 0) -> Network:
    """Apply an InitSpec; reproducible for a fixed seed."""
    m = network.n_edges
    rng = np.random.default_rng(seed)
    if spec.kind == "full":
        values = np.full(m, spec.delta)
    elif spec.kind == "full-noise":
        values = spec.delta + rng.uniform(0.0, spec.noise, size=m)
    else:
        if spec.tree_edges is not None:
            tree = tuple(tuple(e) for e in spec.tree_edges)
            tree_set = set(tree)
            if len(tree_set) != network.n_vertices - 1:
                raise GraphValidationError(
                    "tree init needs exactly n_vertices - 1 edges")
            edge_set = set(network.edges)
            if not tree_set <= edge_set:
                raise GraphValidationError(
                    "tree init references edges absent from the network")
            probe = [(i, j, 1.0, 1.0 if (i, j) in tree_set else 0.0)
                     for (i, j) in network.edges]
            vertices = [(v, x, y) for v, (x, y) in
                        zip(network.vertex_ids, network.positions)]
            from .graph import active_components
            comps = active_components(build_network(vertices, probe), 0.0)
            if len(comps) != 1:
                raise GraphValidationError("tree init edges do not span")
        else:
            tree_set = set(spanning_tree_edges(network, seed))
        values = np.full(m, spec.background)
        on_tree = np.array([e in tree_set for e in network.edges])
        values[on_tree] = spec.delta
        if spec.extra_loops > 0:
            off = np.nonzero(~on_tree)[0]
            take = rng.choice(off, size=min(spec.extra_loops, off.size),
                              replace=False)
            values[take] = spec.delta
    values = values + spec.epsilon
    return network.with_conductivities(values)


# ---------------------------------------------------------------------------
# Scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    geometry: dict
    energy: EnergyParams
    dynamics: DynamicsConfig
    init: InitSpec
    seed: int = 0
    track_source_cut: bool = False

    @staticmethod
    def from_dict(raw: dict) -> "ScenarioConfig":
        raw = dict(raw)
        energy_kw = dict(raw.get("energy", {}))
        energy_kw.setdefault("gamma", 0.5)
        energy_kw.setdefault("nu", 1.0)
        params = EnergyParams(**energy_kw)
        dyn_kw = dict(raw.get("dynamics", {}))
        dyn_kw.setdefault("tau", 0.025)
        dyn_kw.setdefault("tol", 1e-6)
        dynamics = DynamicsConfig(params=params, **dyn_kw)
        init_kw = dict(raw.get("init", {"kind": "tree"}))
        if "tree_edges" in init_kw and init_kw["tree_edges"] is not None:
            init_kw["tree_edges"] = tuple(
                tuple(e) for e in init_kw["tree_edges"])
        init = InitSpec(**init_kw)
        geometry = dict(raw.get("geometry", {"preset": "small-diamond"}))
        return ScenarioConfig(
            name=str(raw.get("name", "scenario")),
            geometry=geometry,
            energy=params,
            dynamics=dynamics,
            init=init,
            seed=int(raw.get("seed", 0)),
            track_source_cut=bool(raw.get("track_source_cut", False)),
        )


def load_scenario_config(path) -> ScenarioConfig:
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise ConfigError("scenario config must be a mapping")
    return ScenarioConfig.from_dict(raw)


@dataclass
class Report:
    name: str
    classification: str
    n_cycles: int
    n_active_edges: int
    n_iterations: int
    termination: str
    final_energy: float
    wall_time_s: float
    out_dir: str = None
    error: str = None
    final_network: Network = None
    trajectory: Trajectory = None

    def summary_dict(self) -> dict:
        return {
            "name": self.name,
            "classification": self.classification,
            "n_cycles": self.n_cycles,
            "n_active_edges": self.n_active_edges,
            "n_iterations": self.n_iterations,
            "termination": self.termination,
            "final_energy": self.final_energy,
            "wall_time_s": self.wall_time_s,
            "out_dir": self.out_dir,
            "error": self.error,
        }


def scenario_network(config: ScenarioConfig) -> Network:
    geom = config.geometry
    if "file" in geom and geom["file"]:
        return read_network(geom["file"])
    preset = geom.get("preset", "small-diamond")
    return generate_diamond(preset, columns=geom.get("columns"))


def write_plot_data(network: Network, path) -> None:
    """Edge endpoints plus a width column proportional to conductivity."""
    with open(path, "w") as f:
        f.write("i,j,x1,y1,x2,y2,width\n")
        for (i, j), c in zip(network.edges, network.conductivities):
            x1, y1 = network.positions[network.index_of(i)]
            x2, y2 = network.positions[network.index_of(j)]
            f.write(f"{i},{j},{float(x1)!r},{float(y1)!r},"
                    f"{float(x2)!r},{float(y2)!r},{float(c)!r}\n")


def run_scenario(config: ScenarioConfig, out_dir=None) -> Report:
    """Build, run and classify one scenario; write artifacts if out_dir."""
    from .graph import CutPartition

    start = time.perf_counter()
    base = scenario_network(config)
    sources = build_sources(base)
    network = init_conductivities(base, config.init, seed=config.seed)

    partitions = None
    if config.track_source_cut:
        plus = {v for v, s in zip(network.vertex_ids, sources.values) if s > 0}
        partitions = [CutPartition.from_sets(network, plus)]

    traj = run_to_steady_state(network, sources, config.dynamics,
                               partitions=partitions)
    final = traj.final_network
    threshold = config.dynamics.prune_threshold
    ncyc = cycle_count(final, threshold)
    classification = "tree" if ncyc == 0 else f"network with {ncyc} cycles"
    n_active = int(np.sum(final.conductivities > threshold))
    wall = time.perf_counter() - start
    report = Report(
        name=config.name,
        classification=classification,
        n_cycles=ncyc,
        n_active_edges=n_active,
        n_iterations=traj.iterations[-1],
        termination=traj.termination,
        final_energy=traj.energies[-1].total,
        wall_time_s=wall,
        out_dir=str(out_dir) if out_dir else None,
        final_network=final,
        trajectory=traj,
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        traj.to_csv(os.path.join(out_dir, "trajectory.csv"),
                    prune_threshold=threshold)
        write_network(final, os.path.join(out_dir, "final_network.csv"))
        write_plot_data(final, os.path.join(out_dir, "plot_data.csv"))
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            json.dump(report.summary_dict(), f, indent=2)
    return report


def _run_scenario_entry(args):
    config, out_dir = args
    try:
        report = run_scenario(config, out_dir=out_dir)
        report.final_network = None    # keep results picklable and small
        report.trajectory = None
        return report
    except Exception as err:  # recorded, not raised: sweeps keep going
        return Report(
            name=config.name, classification="error", n_cycles=-1,
            n_active_edges=-1, n_iterations=0, termination="error",
            final_energy=float("nan"), wall_time_s=0.0,
            out_dir=str(out_dir) if out_dir else None,
            error=f"{type(err).__name__}: {err}",
        )


def sweep(configs, parallelism: int = 1, out_root=None):
    """Run scenarios independently; report order matches input order."""
    jobs = []
    for k, config in enumerate(configs):
        out_dir = None
        if out_root:
            out_dir = os.path.join(out_root, f"{k:03d}_{config.name}")
        jobs.append((config, out_dir))
    if parallelism <= 1:
        return [_run_scenario_entry(job) for job in jobs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_scenario_entry, jobs))
