"""Node records, normalization bounds and the QoU / QoV relay quality scores."""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence, Tuple

Position = Tuple[float, float]


class ConfigError(ValueError):
    """Invalid configuration values (bounds, weights, zone grid, env config)."""


class DomainError(ValueError):
    """Input lies outside the domain an operation is defined on."""


@dataclass(frozen=True)
class VehicleInfo:
    address: str
    position: Position
    pay_per_mbps: float
    reputation: float
    requested_bandwidth: float
    timestamp: int = 0
    zone_id: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["position"] = list(self.position)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleInfo":
        d = dict(d)
        d["position"] = tuple(d["position"])
        return cls(**d)


@dataclass(frozen=True)
class UavInfo:
    address: str
    position: Position
    reputation: float
    battery_level: float
    available_bandwidth: float
    altitude: float = 0.0
    timestamp: int = 0
    zone_id: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["position"] = list(self.position)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UavInfo":
        d = dict(d)
        d["position"] = tuple(d["position"])
        return cls(**d)


@dataclass(frozen=True)
class NormalizationBounds:
    """Maximum attribute values used to map each score term into [0, 1]."""

    max_AB: float = 20.0
    max_BL: float = 100.0
    max_Rep: float = 100.0
    max_distance: float = 3.0
    max_RB: float = 4.0
    max_PayPerMbps: float = 7.0

    def validate(self) -> "NormalizationBounds":
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"bound {f.name} must be a positive finite number, got {value!r}")
        return self


@dataclass(frozen=True)
class ScoringWeights:
    """Weights of the four QoU terms (``qou``) and the four QoV terms (``qov``).

    Term order is (bandwidth, battery/payment, reputation, proximity).
    """

    qou: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    qov: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)

    def validate(self) -> "ScoringWeights":
        for name in ("qou", "qov"):
            w = getattr(self, name)
            if len(w) != 4:
                raise ConfigError(f"{name} needs exactly 4 weights, got {len(w)}")
            if any(x < 0 for x in w):
                raise ConfigError(f"{name} weights must be non-negative: {w}")
            if abs(sum(w) - 1.0) > 1e-9:
                raise ConfigError(f"{name} weights must sum to 1, got {sum(w)!r}")
        return self


DEFAULT_BOUNDS = NormalizationBounds()
DEFAULT_WEIGHTS = ScoringWeights()


@lru_cache(maxsize=64)
def _checked(bounds: NormalizationBounds) -> NormalizationBounds:
    # bounds are frozen, so one successful validation per instance value suffices
    return bounds.validate()


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _proximity(distance: float, max_distance: float) -> float:
    # beyond max_distance the proximity term contributes nothing
    return 1.0 - min(distance / max_distance, 1.0)


def compute_qou(u: UavInfo, v: VehicleInfo, bounds: NormalizationBounds = DEFAULT_BOUNDS,
                weights: ScoringWeights = DEFAULT_WEIGHTS) -> float:
    """Quality of UAV ``u`` as seen by vehicle ``v``, on a 0-100 scale."""
    _checked(bounds)
    w1, w2, w3, w4 = weights.qou
    dist = euclidean_distance(u.position, v.position)
    return 100.0 * (w1 * u.available_bandwidth / bounds.max_AB
                    + w2 * u.battery_level / bounds.max_BL
                    + w3 * u.reputation / bounds.max_Rep
                    + w4 * _proximity(dist, bounds.max_distance))


def compute_qov(u: UavInfo, v: VehicleInfo, bounds: NormalizationBounds = DEFAULT_BOUNDS,
                weights: ScoringWeights = DEFAULT_WEIGHTS) -> float:
    """Quality of vehicle ``v`` as seen by UAV ``u``, on a 0-100 scale."""
    _checked(bounds)
    w5, w6, w7, w8 = weights.qov
    dist = euclidean_distance(u.position, v.position)
    return 100.0 * (w5 * v.requested_bandwidth / bounds.max_RB
                    + w6 * v.pay_per_mbps / bounds.max_PayPerMbps
                    + w7 * v.reputation / bounds.max_Rep
                    + w8 * _proximity(dist, bounds.max_distance))


@dataclass(frozen=True)
class ZoneGrid:
    """Uniform square tiling of a rectangular area into zones.

    Tiles are half-open ``[k*tile, (k+1)*tile)``; the far edge of the area
    belongs to the last tile. Zone ids are row-major: ``row * cols + col``.
    """

    width: float = 50.0
    height: float = 50.0
    tile: float = 10.0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.tile > 0):
            raise ConfigError(f"zone grid dimensions must be positive: {self}")

    @property
    def cols(self) -> int:
        return math.ceil(self.width / self.tile)

    @property
    def rows(self) -> int:
        return math.ceil(self.height / self.tile)

    @property
    def zone_ids(self) -> list:
        return list(range(self.rows * self.cols))

    def tile_of(self, position: Sequence[float]) -> Tuple[int, int]:
        x, y = position
        if not (0 <= x <= self.width and 0 <= y <= self.height):
            raise DomainError(f"position {tuple(position)} outside {self.width}x{self.height} area")
        col = min(int(x // self.tile), self.cols - 1)
        row = min(int(y // self.tile), self.rows - 1)
        return col, row


def zone_of(position: Sequence[float], zone_grid: ZoneGrid = ZoneGrid()) -> int:
    col, row = zone_grid.tile_of(position)
    return row * zone_grid.cols + col


def with_zone(node, zone_grid: ZoneGrid = ZoneGrid()):
    """Return a copy of a vehicle / UAV record with ``zone_id`` set from its position."""
    return replace(node, zone_id=zone_of(node.position, zone_grid))
