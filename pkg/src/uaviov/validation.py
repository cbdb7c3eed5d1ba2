"""Input validation helpers shared by the estimators and the ledger."""

from __future__ import annotations

import numbers
from typing import Iterable, List, Sequence

import numpy as np

from .core import DEFAULT_BOUNDS, NormalizationBounds, UavInfo, VehicleInfo


def check_vehicle(v: VehicleInfo, bounds: NormalizationBounds = DEFAULT_BOUNDS) -> VehicleInfo:
    if not isinstance(v, VehicleInfo):
        raise TypeError(f"expected VehicleInfo, got {type(v).__name__}")
    if not v.requested_bandwidth > 0:
        raise ValueError(f"{v.address}: requested bandwidth must be > 0")
    if not 1 <= v.reputation <= bounds.max_Rep:
        raise ValueError(f"{v.address}: reputation {v.reputation} outside [1, {bounds.max_Rep}]")
    if not 0 <= v.pay_per_mbps <= bounds.max_PayPerMbps:
        raise ValueError(f"{v.address}: pay_per_mbps {v.pay_per_mbps} outside [0, {bounds.max_PayPerMbps}]")
    return v


def check_uav(u: UavInfo, bounds: NormalizationBounds = DEFAULT_BOUNDS) -> UavInfo:
    if not isinstance(u, UavInfo):
        raise TypeError(f"expected UavInfo, got {type(u).__name__}")
    if not u.available_bandwidth >= 0:
        raise ValueError(f"{u.address}: available bandwidth must be >= 0")
    if not 1 <= u.battery_level <= bounds.max_BL:
        raise ValueError(f"{u.address}: battery level {u.battery_level} outside [1, {bounds.max_BL}]")
    if not 1 <= u.reputation <= bounds.max_Rep:
        raise ValueError(f"{u.address}: reputation {u.reputation} outside [1, {bounds.max_Rep}]")
    return u


def check_population(nodes: Iterable, kind: str, bounds: NormalizationBounds = DEFAULT_BOUNDS) -> List:
    """Validate each record and reject duplicate addresses."""
    check = {"vehicle": check_vehicle, "uav": check_uav}[kind]
    out, seen = [], set()
    for node in nodes:
        check(node, bounds)
        if node.address in seen:
            raise ValueError(f"duplicate {kind} address {node.address!r}")
        seen.add(node.address)
        out.append(node)
    return out


def check_observations(obs, shape: Sequence[int], dtype=np.float32) -> np.ndarray:
    """Coerce to a batch ``(B, *shape)`` of finite values in [0, 1]."""
    arr = np.asarray(obs, dtype=dtype)
    if arr.shape == tuple(shape):
        arr = arr[None]
    if arr.ndim != len(shape) + 1 or arr.shape[1:] != tuple(shape):
        raise ValueError(f"observation batch must have shape (B, {', '.join(map(str, shape))}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("observations contain NaN or Inf")
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValueError("observations must be normalized to [0, 1]")
    return arr


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, numbers.Integral) or value <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
