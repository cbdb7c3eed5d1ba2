"""Scenario configuration and random vehicle / UAV population generation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import ConfigError, NormalizationBounds, ScoringWeights, UavInfo, VehicleInfo, ZoneGrid, zone_of
from .env import EnvConfig
from .ppo import PpoHyperparams

Range = Tuple[float, float]


@dataclass
class ScenarioConfig:
    area: float = 50.0
    zone_tile: float = 10.0
    num_vehicles: int = 200
    uav_sweep: List[int] = field(default_factory=lambda: [20, 40, 60, 80, 100, 120, 140, 160])
    iterations: int = 5
    requested_bandwidth: Range = (1.0, 4.0)
    reputation: Range = (1.0, 100.0)
    pay_per_mbps: Range = (0.0, 7.0)
    available_bandwidth: Range = (0.0, 20.0)
    battery_level: Range = (1.0, 100.0)
    bounds: NormalizationBounds = field(default_factory=NormalizationBounds)
    weights: ScoringWeights = field(default_factory=ScoringWeights)
    env: EnvConfig = field(default_factory=EnvConfig)
    hp: PpoHyperparams = field(default_factory=PpoHyperparams)
    seed: int = 0

    def validate(self) -> "ScenarioConfig":
        if self.area <= 0 or self.zone_tile <= 0:
            raise ConfigError("area and zone_tile must be positive")
        if self.num_vehicles < 0 or self.iterations < 1:
            raise ConfigError("num_vehicles must be >= 0 and iterations >= 1")
        if not self.uav_sweep or any(int(n) < 1 for n in self.uav_sweep):
            raise ConfigError("uav_sweep must be a non-empty list of positive counts")
        for name in ("requested_bandwidth", "reputation", "pay_per_mbps", "available_bandwidth", "battery_level"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is empty: {(lo, hi)}")
        if self.requested_bandwidth[0] <= 0:
            raise ConfigError("requested bandwidth must be strictly positive")
        self.bounds.validate()
        self.weights.validate()
        self.env.validate()
        self.hp.validate()
        return self

    @property
    def zone_grid(self) -> ZoneGrid:
        return ZoneGrid(self.area, self.area, self.zone_tile)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = {"qou": list(self.weights.qou), "qov": list(self.weights.qov)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        if "bounds" in d:
            d["bounds"] = NormalizationBounds(**d["bounds"])
        if "weights" in d:
            d["weights"] = ScoringWeights(tuple(d["weights"]["qou"]), tuple(d["weights"]["qov"]))
        if "env" in d:
            d["env"] = EnvConfig(**d["env"])
        if "hp" in d:
            d["hp"] = PpoHyperparams(**d["hp"])
        for name in ("requested_bandwidth", "reputation", "pay_per_mbps", "available_bandwidth", "battery_level"):
            if name in d:
                d[name] = tuple(d[name])
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_population(cfg: ScenarioConfig, num_uavs: int, rng: np.random.Generator):
    """Uniform vehicles and UAVs over the area with uniform attributes."""
    grid = cfg.zone_grid
    vehicles, uavs = [], []
    for i in range(cfg.num_vehicles):
        pos = tuple(float(x) for x in rng.uniform(0, cfg.area, 2))
        vehicles.append(VehicleInfo(
            address=f"veh-{i:04d}", position=pos,
            pay_per_mbps=float(rng.uniform(*cfg.pay_per_mbps)),
            reputation=float(rng.uniform(*cfg.reputation)),
            requested_bandwidth=float(rng.uniform(*cfg.requested_bandwidth)),
            zone_id=zone_of(pos, grid)))
    for j in range(num_uavs):
        pos = tuple(float(x) for x in rng.uniform(0, cfg.area, 2))
        uavs.append(UavInfo(
            address=f"uav-{j:04d}", position=pos,
            reputation=float(rng.uniform(*cfg.reputation)),
            battery_level=float(rng.uniform(*cfg.battery_level)),
            available_bandwidth=float(rng.uniform(*cfg.available_bandwidth)),
            zone_id=zone_of(pos, grid)))
    return vehicles, uavs


def population_seed(seed: int, num_uavs: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, num_uavs, iteration])


def population_to_json(vehicles, uavs, meta: Optional[dict] = None) -> str:
    return json.dumps({"version": 1, "meta": meta or {},
                       "vehicles": [v.to_dict() for v in vehicles],
                       "uavs": [u.to_dict() for u in uavs]}, indent=1)


def population_from_json(text: str):
    d = json.loads(text)
    return ([VehicleInfo.from_dict(v) for v in d["vehicles"]], [UavInfo.from_dict(u) for u in d["uavs"]],
            d.get("meta", {}))


def desk_env(**overrides) -> EnvConfig:
    """Small coordination setting that trains in about an hour on one CPU core.

    25x25 cells, 2 agents with 5 vehicles each, 11x11 observations; the
    cover range is widened to 12 cells so a tracking policy can reach high
    coverage against vehicles moving one cell per step.
    """
    params = dict(grid_h=25, grid_w=25, n=11, num_agents=2, vehicles_per_agent=5,
                  uav_cover_range=2.4, uav_link_range=3.0, vehicle_speed=1)
    params.update(overrides)
    return EnvConfig(**params)
