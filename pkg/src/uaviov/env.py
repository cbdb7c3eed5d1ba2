"""Grid-world Markov game for UAV coverage and connectivity.

Coordinates are integer ``(x, y)`` cells with ``0 <= x < grid_w`` and
``0 <= y < grid_h``. Maps are indexed ``[y, x]``.
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .core import ConfigError

NUM_DIRECTIONS = 8
NUM_ACTIONS = NUM_DIRECTIONS + 1
STAY = NUM_DIRECTIONS
NUM_CHANNELS = 6
CHANNELS = ("local_location", "local_vehicles", "global_location",
            "global_team", "global_coverage", "global_vehicles")

HEADING_KEEP_PROB = 0.8


@dataclass
class EnvConfig:
    grid_h: int = 50
    grid_w: int = 50
    cell_size: float = 0.2
    n: int = 21
    uav_link_range: float = 3.0
    uav_cover_range: float = 1.6
    num_agents: int = 3
    vehicles_per_agent: Union[int, List[int]] = 10
    vehicle_speed: int = 1
    episode_length: int = 100
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> "EnvConfig":
        if self.grid_h < 2 or self.grid_w < 2:
            raise ConfigError("grid must be at least 2x2")
        if self.n % 2 == 0 or not (1 < self.n < min(self.grid_h, self.grid_w)):
            raise ConfigError(f"n must be odd with 1 < n < min(grid_h, grid_w), got n={self.n}")
        if self.episode_length < 1:
            raise ConfigError("episode_length must be >= 1")
        if not (self.cell_size > 0 and self.uav_link_range > 0 and self.uav_cover_range > 0):
            raise ConfigError("cell_size and ranges must be positive")
        if self.num_agents < 1:
            raise ConfigError("num_agents must be >= 1")
        if self.vehicle_speed < 0:
            raise ConfigError("vehicle_speed must be >= 0")
        counts = self.vehicle_counts
        if len(counts) != self.num_agents or any(c < 0 for c in counts):
            raise ConfigError("vehicles_per_agent must give a non-negative count per agent")
        if sum(counts) > self.grid_h * self.grid_w or self.num_agents > self.grid_h * self.grid_w:
            raise ConfigError("more vehicles or agents than grid cells")
        return self

    @property
    def vehicle_counts(self) -> List[int]:
        if isinstance(self.vehicles_per_agent, int):
            return [self.vehicles_per_agent] * self.num_agents
        return list(self.vehicles_per_agent)

    @property
    def num_vehicles(self) -> int:
        return sum(self.vehicle_counts)

    @property
    def obs_shape(self):
        return (NUM_CHANNELS, self.n, self.n)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class EnvState:
    uav_cells: np.ndarray          # (N, 2) int
    vehicle_cells: np.ndarray      # (V, 2) int
    assignment: np.ndarray         # (V,) int, vehicle -> agent
    vehicle_headings: np.ndarray   # (V,) int in [0, 8)
    step_counter: int = 0

    def copy(self) -> "EnvState":
        return EnvState(self.uav_cells.copy(), self.vehicle_cells.copy(), self.assignment.copy(),
                        self.vehicle_headings.copy(), self.step_counter)


@dataclass
class JointStep:
    actions: np.ndarray
    reward: float
    done: bool
    observations: np.ndarray
    coverage: float
    connectivity: int


def action_to_delta(k: int, K: int = NUM_DIRECTIONS) -> tuple:
    """Cell displacement of action ``k``; ids ``0..K-1`` move, ``K`` stays."""
    if not 0 <= k <= K:
        raise ValueError(f"action {k} outside 0..{K}")
    if k == K:
        return (0, 0)
    theta = 2.0 * math.pi * k / K
    return (int(round(math.cos(theta))), int(round(math.sin(theta))))


_DELTAS = np.array([action_to_delta(k) for k in range(NUM_ACTIONS)], dtype=np.int64)
_HEADING_OF_DELTA = {tuple(d): k for k, d in enumerate(_DELTAS[:NUM_DIRECTIONS])}


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.components = n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.components -= 1
        return True


def _cell_distances_km(a: np.ndarray, b: np.ndarray, cell_size: float) -> np.ndarray:
    diff = a[:, None, :].astype(float) - b[None, :, :].astype(float)
    return np.hypot(diff[..., 0], diff[..., 1]) * cell_size


def covered_mask(state: EnvState, config: EnvConfig) -> np.ndarray:
    """Per-vehicle flag: within cover range of its *assigned* UAV."""
    if len(state.vehicle_cells) == 0:
        return np.zeros(0, dtype=bool)
    own = state.uav_cells[state.assignment]
    d = np.hypot(*(state.vehicle_cells - own).T.astype(float)) * config.cell_size
    return d <= config.uav_cover_range + 1e-12


def compute_coverage(state: EnvState, config: EnvConfig) -> float:
    mask = covered_mask(state, config)
    if mask.size == 0:
        return 1.0
    return float(mask.mean())


def compute_connectivity(state: EnvState, config: EnvConfig) -> int:
    cells = state.uav_cells
    n = len(cells)
    if n <= 1:
        return 1
    d = _cell_distances_km(cells, cells, config.cell_size)
    uf = UnionFind(n)
    ii, jj = np.nonzero(np.triu(d <= config.uav_link_range + 1e-12, k=1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        uf.union(i, j)
    return int(uf.components == 1)


def compute_reward(coverage: float, connectivity: int) -> float:
    return (coverage - 1.0) + (connectivity - 1.0)


def tile_edges(size: int, n: int) -> np.ndarray:
    """Start index of each of ``n`` near-equal tiles covering ``size`` cells."""
    return np.floor(np.arange(n) * size / n).astype(np.int64)


def downsample(grid: np.ndarray, n: int, mode: str = "max") -> np.ndarray:
    """Pool an ``h x w`` map into ``n x n`` near-equal tiles (``max`` or ``mean``)."""
    h, w = grid.shape
    if n > h or n > w:
        raise ValueError(f"cannot downsample {h}x{w} to {n}x{n}")
    rows, cols = tile_edges(h, n), tile_edges(w, n)
    if mode == "max":
        return np.maximum.reduceat(np.maximum.reduceat(grid, rows, axis=0), cols, axis=1)
    if mode == "mean":
        sums = np.add.reduceat(np.add.reduceat(grid, rows, axis=0), cols, axis=1)
        rh = np.diff(np.append(rows, h))
        cw = np.diff(np.append(cols, w))
        return sums / np.outer(rh, cw)
    raise ValueError(f"unknown pooling mode {mode!r}")


def window_origin(center: int, n: int, size: int) -> int:
    return int(min(max(center - n // 2, 0), size - n))


def _disk_offsets(radius_cells: float) -> np.ndarray:
    r = int(math.floor(radius_cells + 1e-9))
    dx, dy = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1))
    keep = dx ** 2 + dy ** 2 <= radius_cells ** 2 + 1e-9
    return np.stack([dx[keep], dy[keep]], axis=1)


def full_maps(state: EnvState, agent: int, config: EnvConfig, disk: Optional[np.ndarray] = None):
    """The four ``h x w`` maps of ``agent``: own location, team, coverage, own vehicles."""
    h, w = config.grid_h, config.grid_w
    location = np.zeros((h, w))
    team = np.zeros((h, w))
    coverage = np.zeros((h, w))
    vehicles = np.zeros((h, w))
    x, y = state.uav_cells[agent]
    location[y, x] = 1.0
    others = np.delete(state.uav_cells, agent, axis=0)
    if len(others):
        team[others[:, 1], others[:, 0]] = 1.0
    if disk is None:
        disk = _disk_offsets(config.uav_cover_range / config.cell_size)
    pts = (state.uav_cells[:, None, :] + disk[None, :, :]).reshape(-1, 2)
    inside = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    pts = pts[inside]
    coverage[pts[:, 1], pts[:, 0]] = 1.0
    mine = state.vehicle_cells[state.assignment == agent]
    if len(mine):
        vehicles[mine[:, 1], mine[:, 0]] = 1.0
    return location, team, coverage, vehicles


def build_observations(state: EnvState, agent: int, config: EnvConfig,
                       disk: Optional[np.ndarray] = None) -> np.ndarray:
    """Reduced ``6 x n x n`` observation stack of one agent, values in [0, 1]."""
    n = config.n
    location, team, coverage, vehicles = full_maps(state, agent, config, disk)
    x, y = state.uav_cells[agent]
    r0 = window_origin(y, n, config.grid_h)
    c0 = window_origin(x, n, config.grid_w)
    obs = np.empty((NUM_CHANNELS, n, n))
    obs[0] = location[r0:r0 + n, c0:c0 + n]
    obs[1] = vehicles[r0:r0 + n, c0:c0 + n]
    obs[2] = downsample(location, n, "max")
    obs[3] = downsample(team, n, "max")
    obs[4] = downsample(coverage, n, "mean")
    obs[5] = downsample(vehicles, n, "max")
    return obs


def reflect(pos: np.ndarray, delta: np.ndarray, size_xy: np.ndarray):
    """Move ``pos`` by ``delta`` reflecting off the walls; returns (pos, delta)."""
    new = pos + delta
    hi = size_xy - 1
    for axis in range(2):
        over = new[:, axis] > hi[axis]
        under = new[:, axis] < 0
        new[over, axis] = 2 * hi[axis] - new[over, axis]
        new[under, axis] = -new[under, axis]
        flip = over | under
        delta[flip, axis] = -delta[flip, axis]
    # huge steps on tiny grids can bounce more than once
    return np.clip(new, 0, hi), delta


def move_vehicles(state: EnvState, rng: np.random.Generator, config: EnvConfig) -> np.ndarray:
    """Persistent-heading random walk with wall reflection; updates ``state`` in place."""
    v = len(state.vehicle_cells)
    if v == 0:
        return state.vehicle_cells
    resample = rng.random(v) >= HEADING_KEEP_PROB
    new_headings = rng.integers(0, NUM_DIRECTIONS, size=v)
    headings = np.where(resample, new_headings, state.vehicle_headings)
    if config.vehicle_speed == 0:
        state.vehicle_headings = headings
        return state.vehicle_cells
    delta = _DELTAS[headings] * config.vehicle_speed
    size_xy = np.array([config.grid_w, config.grid_h])
    cells, delta = reflect(state.vehicle_cells.copy(), delta, size_xy)
    unit = np.sign(delta)
    state.vehicle_headings = np.array([_HEADING_OF_DELTA[tuple(d)] for d in unit.tolist()], dtype=np.int64)
    state.vehicle_cells = cells
    return cells


class CoverageEnv:
    """Multi-agent UAV coverage/connectivity environment.

    ``reset`` and ``step`` return per-agent observation stacks of shape
    ``(N, 6, n, n)``. All agents share the scalar reward.
    """

    def __init__(self, config: EnvConfig, seed: Optional[int] = None):
        self.config = config.validate()
        self.rng = np.random.default_rng(config.seed if seed is None else seed)
        self.state: Optional[EnvState] = None
        self._disk = _disk_offsets(config.uav_cover_range / config.cell_size)

    @property
    def num_agents(self) -> int:
        return self.config.num_agents

    def seed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def sample_state(self) -> EnvState:
        """Vehicles clustered per agent, each UAV on its cluster's rounded centroid.

        Each cluster is drawn uniformly inside a disc of radius
        ``(cover_cells - 1) / 2`` around a uniform random center, which keeps
        every vehicle within cover range of the rounded centroid.
        """
        cfg = self.config
        rng = self.rng
        size_xy = np.array([cfg.grid_w, cfg.grid_h])
        radius = max((cfg.uav_cover_range / cfg.cell_size - 1.0) / 2.0, 0.0)
        uav_cells, vehicle_cells, assignment = [], [], []
        for agent, count in enumerate(cfg.vehicle_counts):
            center = rng.uniform([0, 0], size_xy - 1)
            if count:
                r = radius * np.sqrt(rng.random(count))
                phi = rng.uniform(0, 2 * np.pi, count)
                pts = center + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
                pts = np.clip(np.rint(pts), 0, size_xy - 1).astype(np.int64)
                uav = np.rint(pts.mean(axis=0)).astype(np.int64)
            else:
                pts = np.zeros((0, 2), dtype=np.int64)
                uav = np.rint(center).astype(np.int64)
            uav_cells.append(np.clip(uav, 0, size_xy - 1))
            vehicle_cells.append(pts)
            assignment.extend([agent] * count)
        return EnvState(
            uav_cells=np.array(uav_cells, dtype=np.int64),
            vehicle_cells=np.concatenate(vehicle_cells).astype(np.int64).reshape(-1, 2),
            assignment=np.array(assignment, dtype=np.int64),
            vehicle_headings=rng.integers(0, NUM_DIRECTIONS, size=cfg.num_vehicles),
        )

    def reset(self, seed: Optional[int] = None, state: Optional[EnvState] = None) -> np.ndarray:
        if seed is not None:
            self.seed(seed)
        self.state = state.copy() if state is not None else self.sample_state()
        self.state.step_counter = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        return np.stack([build_observations(self.state, i, self.config, self._disk)
                         for i in range(self.num_agents)])

    def move_uavs(self, actions: Sequence[int]) -> None:
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.num_agents,):
            raise ValueError(f"expected {self.num_agents} actions, got shape {actions.shape}")
        if np.any((actions < 0) | (actions >= NUM_ACTIONS)):
            raise ValueError(f"actions must lie in 0..{NUM_ACTIONS - 1}: {actions.tolist()}")
        hi = np.array([self.config.grid_w - 1, self.config.grid_h - 1])
        self.state.uav_cells = np.clip(self.state.uav_cells + _DELTAS[actions], 0, hi)

    def step(self, actions: Sequence[int]) -> JointStep:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if self.state.step_counter >= self.config.episode_length:
            raise RuntimeError("episode finished; call reset()")
        self.move_uavs(actions)
        move_vehicles(self.state, self.rng, self.config)
        self.state.step_counter += 1
        cov = compute_coverage(self.state, self.config)
        conn = compute_connectivity(self.state, self.config)
        done = self.state.step_counter == self.config.episode_length
        return JointStep(np.asarray(actions), compute_reward(cov, conn), done, self.observe(), cov, conn)

    def metrics(self):
        return compute_coverage(self.state, self.config), compute_connectivity(self.state, self.config)


def trajectory_record(t: int, state: EnvState, actions, reward: float) -> dict:
    return {"t": t, "uav_cells": state.uav_cells.tolist(), "vehicle_cells": state.vehicle_cells.tolist(),
            "actions": None if actions is None else [int(a) for a in actions], "reward": reward}


def write_trajectory(path, records) -> None:
    """Gzip-compressed JSON lines, one record per step (t=0 is the reset state)."""
    with gzip.open(path, "wt", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_trajectory(path) -> List[dict]:
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
