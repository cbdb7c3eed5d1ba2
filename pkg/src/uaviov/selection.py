"""Two-stage relay selection: vehicle proposals and per-UAV greedy allocation.

Also holds the nearest-neighbour-matching (NNM) baseline, the selection
quality metrics and a scikit-learn style ``RelaySelector`` wrapper.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from sklearn.base import BaseEstimator

from .core import (DEFAULT_BOUNDS, DEFAULT_WEIGHTS, NormalizationBounds, ScoringWeights, UavInfo,
                   VehicleInfo, compute_qou, compute_qov)
from .validation import check_population

MECHANISMS = ("proposed", "nnm")


@dataclass(frozen=True)
class ProposalRecord:
    vehicle_address: str
    qov: float
    requested_bandwidth: float

    def __post_init__(self):
        if not self.requested_bandwidth > 0:
            raise ValueError(f"requested bandwidth must be > 0, got {self.requested_bandwidth}")

    @property
    def rank_key(self) -> float:
        return self.qov / math.sqrt(self.requested_bandwidth)

    def to_dict(self) -> dict:
        return {"vehicle_address": self.vehicle_address, "qov": self.qov,
                "requested_bandwidth": self.requested_bandwidth, "rank_key": self.rank_key}


@dataclass
class SelectionOutcome:
    accepted: Dict[str, List[str]] = field(default_factory=dict)
    residual_bandwidth: Dict[str, float] = field(default_factory=dict)
    unmatched: List[str] = field(default_factory=list)
    zone_of_uav: Dict[str, int] = field(default_factory=dict)

    @property
    def selected_uavs(self) -> List[str]:
        return [u for u, vs in self.accepted.items() if vs]

    def pairs(self) -> List[Tuple[str, str]]:
        return [(u, v) for u, vs in self.accepted.items() for v in vs]

    def merge(self, other: "SelectionOutcome") -> "SelectionOutcome":
        self.accepted.update(other.accepted)
        self.residual_bandwidth.update(other.residual_bandwidth)
        self.unmatched.extend(other.unmatched)
        self.zone_of_uav.update(other.zone_of_uav)
        return self

    def to_records(self) -> List[dict]:
        return [{"zone": self.zone_of_uav.get(u), "uav": u, "vehicles": list(vs),
                 "residual_AB": self.residual_bandwidth[u]} for u, vs in self.accepted.items()]

    def to_json(self) -> str:
        return json.dumps({"version": 1, "selections": self.to_records(),
                           "unmatched": list(self.unmatched)}, indent=2)


def vehicle_propose(v: VehicleInfo, zone_uavs: Sequence[UavInfo],
                    bounds: NormalizationBounds = DEFAULT_BOUNDS,
                    weights: ScoringWeights = DEFAULT_WEIGHTS) -> Tuple[Optional[str], float]:
    """Pick the UAV of highest QoU; the first maximum in list order wins."""
    best_address, best_qou = None, 0.0
    for u in zone_uavs:
        qou = compute_qou(u, v, bounds, weights)
        if best_address is None or qou > best_qou:
            best_address, best_qou = u.address, qou
    return best_address, best_qou


def allocate_zone(zone_id, proposals: Mapping[str, Sequence[ProposalRecord]],
                  uavs: Sequence[UavInfo]) -> SelectionOutcome:
    """Greedy capacity-constrained acceptance, UAVs visited in list order.

    Each UAV's proposals are ranked by ``qov / sqrt(RB)`` (stable sort, so
    ties keep arrival order) and accepted while the requested bandwidth fits
    the remaining available bandwidth.
    """
    out = SelectionOutcome()
    for u in uavs:
        available = u.available_bandwidth
        accepted = []
        ranked = sorted(proposals.get(u.address, ()), key=lambda p: p.rank_key, reverse=True)
        for p in ranked:
            if p.requested_bandwidth <= available:
                accepted.append(p.vehicle_address)
                available -= p.requested_bandwidth
            else:
                out.unmatched.append(p.vehicle_address)
        out.accepted[u.address] = accepted
        out.residual_bandwidth[u.address] = available
        out.zone_of_uav[u.address] = zone_id
    return out


def group_by_zone(nodes: Iterable) -> Dict[int, list]:
    zones: Dict[int, list] = {}
    for node in nodes:
        zones.setdefault(node.zone_id, []).append(node)
    return zones


def propose_and_allocate(vehicles: Sequence[VehicleInfo], uavs: Sequence[UavInfo],
                         bounds: NormalizationBounds = DEFAULT_BOUNDS,
                         weights: ScoringWeights = DEFAULT_WEIGHTS) -> SelectionOutcome:
    """Run both selection stages over every zone of the population."""
    uavs_by_zone = group_by_zone(uavs)
    by_address = {u.address: u for u in uavs}
    proposals: Dict[str, List[ProposalRecord]] = {}
    out = SelectionOutcome()
    for v in vehicles:
        target, _ = vehicle_propose(v, uavs_by_zone.get(v.zone_id, ()), bounds, weights)
        if target is None:
            out.unmatched.append(v.address)
            continue
        qov = compute_qov(by_address[target], v, bounds, weights)
        proposals.setdefault(target, []).append(ProposalRecord(v.address, qov, v.requested_bandwidth))
    for zone in sorted(uavs_by_zone):
        out.merge(allocate_zone(zone, proposals, uavs_by_zone[zone]))
    return out


def nnm_baseline(vehicles: Sequence[VehicleInfo], uavs: Sequence[UavInfo],
                 bounds: NormalizationBounds = DEFAULT_BOUNDS,
                 weights: ScoringWeights = DEFAULT_WEIGHTS) -> SelectionOutcome:
    """Similarity matching: each vehicle, in registration order, takes the
    capacity-feasible UAV of its zone minimising ``|QoU - QoV|``."""
    out = SelectionOutcome()
    uavs_by_zone = group_by_zone(uavs)
    available = {u.address: u.available_bandwidth for u in uavs}
    for u in uavs:
        out.accepted[u.address] = []
        out.zone_of_uav[u.address] = u.zone_id
    for v in vehicles:
        best, best_gap = None, math.inf
        for u in uavs_by_zone.get(v.zone_id, ()):
            if v.requested_bandwidth > available[u.address]:
                continue
            gap = abs(compute_qou(u, v, bounds, weights) - compute_qov(u, v, bounds, weights))
            if gap < best_gap:
                best, best_gap = u.address, gap
        if best is None:
            out.unmatched.append(v.address)
            continue
        out.accepted[best].append(v.address)
        available[best] -= v.requested_bandwidth
    out.residual_bandwidth = available
    return out


@dataclass
class SelectionMetrics:
    vehicles_per_uav: float
    pct_uavs_selected: float
    mean_qou: float
    mean_qov: float
    matched_vehicles: int
    empty: bool = False


def selection_metrics(outcome: SelectionOutcome, vehicles: Sequence[VehicleInfo],
                      uavs: Sequence[UavInfo], bounds: NormalizationBounds = DEFAULT_BOUNDS,
                      weights: ScoringWeights = DEFAULT_WEIGHTS) -> SelectionMetrics:
    pairs = outcome.pairs()
    if not pairs:
        return SelectionMetrics(0.0, 0.0, 0.0, 0.0, 0, empty=True)
    vmap = {v.address: v for v in vehicles}
    umap = {u.address: u for u in uavs}
    selected = outcome.selected_uavs
    qous = [compute_qou(umap[u], vmap[v], bounds, weights) for u, v in pairs]
    qovs = [compute_qov(umap[u], vmap[v], bounds, weights) for u, v in pairs]
    return SelectionMetrics(
        vehicles_per_uav=len(pairs) / len(selected),
        pct_uavs_selected=100.0 * len(selected) / len(uavs),
        mean_qou=sum(qous) / len(qous),
        mean_qov=sum(qovs) / len(qovs),
        matched_vehicles=len(pairs),
    )


METRIC_FIELDS = ("seed", "num_uavs", "num_vehicles", "mechanism", "iteration", "vehicles_per_uav",
                 "pct_uavs_selected", "mean_qou", "mean_qov", "matched_vehicles", "empty")


def metrics_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k) for k in METRIC_FIELDS})
    return buf.getvalue()


def run_mechanism(mechanism: str, vehicles, uavs, bounds=DEFAULT_BOUNDS,
                  weights=DEFAULT_WEIGHTS) -> SelectionOutcome:
    if mechanism == "proposed":
        return propose_and_allocate(vehicles, uavs, bounds, weights)
    if mechanism == "nnm":
        return nnm_baseline(vehicles, uavs, bounds, weights)
    raise ValueError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")


class RelaySelector(BaseEstimator):
    """Estimator wrapper: ``fit`` on the UAV fleet, ``predict`` vehicle -> UAV.

    Parameters
    ----------
    mechanism : {"proposed", "nnm"}
    bounds : NormalizationBounds, optional
    weights : ScoringWeights, optional
    """

    def __init__(self, mechanism: str = "proposed", bounds: Optional[NormalizationBounds] = None,
                 weights: Optional[ScoringWeights] = None):
        self.mechanism = mechanism
        self.bounds = bounds
        self.weights = weights

    def _scoring(self):
        bounds = (self.bounds or DEFAULT_BOUNDS).validate()
        weights = (self.weights or DEFAULT_WEIGHTS).validate()
        return bounds, weights

    def fit(self, uavs: Sequence[UavInfo], y=None) -> "RelaySelector":
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        self.uavs_ = list(check_population(uavs, kind="uav", bounds=self._scoring()[0]))
        return self

    def select(self, vehicles: Sequence[VehicleInfo]) -> SelectionOutcome:
        if not hasattr(self, "uavs_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("RelaySelector is not fitted; call fit(uavs) first")
        bounds, weights = self._scoring()
        vehicles = check_population(vehicles, kind="vehicle", bounds=bounds)
        self.outcome_ = run_mechanism(self.mechanism, vehicles, self.uavs_, bounds, weights)
        return self.outcome_

    def predict(self, vehicles: Sequence[VehicleInfo]) -> List[Optional[str]]:
        """Assigned UAV address per vehicle (``None`` when unmatched)."""
        outcome = self.select(vehicles)
        owner = {v: u for u, v in outcome.pairs()}
        return [owner.get(v.address) for v in vehicles]

    def score(self, vehicles: Sequence[VehicleInfo], y=None) -> float:
        """Mean QoU over matched pairs."""
        outcome = self.select(vehicles)
        bounds, weights = self._scoring()
        return selection_metrics(outcome, vehicles, self.uavs_, bounds, weights).mean_qou
