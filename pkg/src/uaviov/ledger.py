"""In-memory replica of the relay-selection smart contract.

Every mutating call is a transaction: it is applied under a single writer
lock, gets the next sequence number (one logical block per transaction) and
is appended to the event log whether it succeeds or fails. Replaying the
log on an empty ledger rebuilds the state exactly.
"""

from __future__ import annotations

import copy
import hashlib
import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from .core import DEFAULT_BOUNDS, DEFAULT_WEIGHTS, NormalizationBounds, ScoringWeights, UavInfo, VehicleInfo, compute_qov
from .selection import ProposalRecord, SelectionOutcome, allocate_zone as select_zone
from .store import ModelStore

INITIAL_REPUTATION = 50.0
NOTIFY = "UAVNotified"


class TransactionRejected(Exception):
    pass


class NoModelError(LookupError):
    pass


@dataclass(frozen=True)
class ModelRegistryEntry:
    model_id: str
    content_hash: str
    agents: Tuple[int, int]
    vehicles: Tuple[int, int]

    def matches(self, num_agents: int, num_vehicles: int) -> bool:
        return self.agents[0] <= num_agents <= self.agents[1] and self.vehicles[0] <= num_vehicles <= self.vehicles[1]

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "content_hash": self.content_hash,
                "agents": list(self.agents), "vehicles": list(self.vehicles)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelRegistryEntry":
        return cls(d["model_id"], d["content_hash"], tuple(d["agents"]), tuple(d["vehicles"]))


@dataclass
class LedgerState:
    vehicle_list: List[str] = field(default_factory=list)
    uav_list: List[str] = field(default_factory=list)
    zones: List[int] = field(default_factory=list)
    vehicle_data: Dict[str, VehicleInfo] = field(default_factory=dict)
    uav_data: Dict[str, UavInfo] = field(default_factory=dict)
    uavs_in_zone: Dict[int, List[str]] = field(default_factory=dict)
    uav_proposal_list: Dict[str, List[ProposalRecord]] = field(default_factory=dict)
    uav_selection_list: Dict[str, List[str]] = field(default_factory=dict)
    selected_uavs: Dict[int, List[str]] = field(default_factory=dict)
    proposed_vehicles: Dict[str, str] = field(default_factory=dict)
    models: Dict[str, ModelRegistryEntry] = field(default_factory=dict)
    event_log: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "vehicle_list": list(self.vehicle_list),
            "uav_list": list(self.uav_list),
            "zones": list(self.zones),
            "vehicle_data": {k: v.to_dict() for k, v in self.vehicle_data.items()},
            "uav_data": {k: u.to_dict() for k, u in self.uav_data.items()},
            "uavs_in_zone": {str(k): list(v) for k, v in self.uavs_in_zone.items()},
            "uav_proposal_list": {k: [p.to_dict() for p in v] for k, v in self.uav_proposal_list.items()},
            "uav_selection_list": {k: list(v) for k, v in self.uav_selection_list.items()},
            "selected_uavs": {str(k): list(v) for k, v in self.selected_uavs.items()},
            "proposed_vehicles": dict(self.proposed_vehicles),
            "models": {k: m.to_dict() for k, m in self.models.items()},
            "event_log": list(self.event_log),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def integrity_violations(state: LedgerState) -> List[str]:
    """Referential-integrity problems in ``state`` (empty when consistent)."""
    problems = []
    vehicles, uavs = set(state.vehicle_list), set(state.uav_list)
    for k in state.vehicle_data:
        if k not in vehicles:
            problems.append(f"vehicle_data has unregistered {k}")
    for k in state.uav_data:
        if k not in uavs:
            problems.append(f"uav_data has unregistered {k}")
    seen = {}
    for zone, members in state.uavs_in_zone.items():
        if zone not in state.zones:
            problems.append(f"uavs_in_zone has unknown zone {zone}")
        for u in members:
            if u not in uavs:
                problems.append(f"zone {zone} lists unregistered uav {u}")
            if u in seen:
                problems.append(f"uav {u} listed in zones {seen[u]} and {zone}")
            seen[u] = zone
    for u, props in state.uav_proposal_list.items():
        if u not in uavs:
            problems.append(f"proposals for unregistered uav {u}")
        for p in props:
            if p.vehicle_address not in vehicles:
                problems.append(f"proposal from unregistered vehicle {p.vehicle_address}")
    for u, sel in state.uav_selection_list.items():
        if u not in uavs:
            problems.append(f"selection for unregistered uav {u}")
        for v in sel:
            if v not in vehicles:
                problems.append(f"selection of unregistered vehicle {v}")
    for zone, sel in state.selected_uavs.items():
        for u in sel:
            if u not in uavs:
                problems.append(f"selected unregistered uav {u} in zone {zone}")
    return problems


@dataclass
class Receipt:
    seq: int
    op: str
    status: str
    error: Optional[str] = None
    result: Any = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _vehicle(d) -> VehicleInfo:
    return d if isinstance(d, VehicleInfo) else VehicleInfo.from_dict(d)


def _uav(d) -> UavInfo:
    return d if isinstance(d, UavInfo) else UavInfo.from_dict(d)


class Ledger:
    """Transactional contract replica.

    Parameters
    ----------
    bounds, weights
        Scoring configuration used when QoV is computed ledger-side.
    initial_reputation
        Reputation assigned at registration; ``None`` keeps the submitted value.
    store
        Optional :class:`ModelStore` holding the bytes behind registry entries.
    """

    OPS = ("register_uav", "register_vehicle", "update_vehicle_info", "update_uav_info",
           "update_uav_zone", "submit_veh_selection", "allocate_zone", "reset_lists_for_zone",
           "reset_uav_submission", "register_model")

    def __init__(self, bounds: NormalizationBounds = DEFAULT_BOUNDS, weights: ScoringWeights = DEFAULT_WEIGHTS,
                 initial_reputation: Optional[float] = INITIAL_REPUTATION, store: Optional[ModelStore] = None):
        self.bounds = bounds.validate()
        self.weights = weights.validate()
        self.initial_reputation = initial_reputation
        self.store = store
        self.state = LedgerState()
        self._lock = threading.Lock()

    # -- transaction machinery -------------------------------------------------

    @property
    def clock(self) -> int:
        return len(self.state.event_log)

    def _log(self, op: str, caller: str, args: dict, status: str, error: Optional[str] = None) -> int:
        seq = len(self.state.event_log)
        record = {"seq": seq, "op": op, "caller": caller, "args": args, "status": status}
        if error is not None:
            record["error"] = error
        self.state.event_log.append(record)
        return seq

    def _transact(self, op: str, caller: str, args: dict) -> Receipt:
        with self._lock:
            handler = getattr(self, "_do_" + op)
            try:
                result = handler(**args)
            except TransactionRejected as exc:
                seq = self._log(op, caller, args, "failed", str(exc))
                return Receipt(seq, op, "failed", str(exc))
            seq = self._log(op, caller, args, "ok")
            if op == "allocate_zone":
                for uav, vehicles in result.accepted.items():
                    self._log(NOTIFY, "contract", {"uav": uav, "vehicles": list(vehicles)}, "emitted")
            return Receipt(seq, op, "ok", result=result)

    def snapshot(self) -> LedgerState:
        with self._lock:
            return copy.deepcopy(self.state)

    # -- public transactions ---------------------------------------------------

    def register_uav(self, info: UavInfo) -> Receipt:
        return self._transact("register_uav", info.address, {"info": info.to_dict()})

    def register_vehicle(self, info: VehicleInfo) -> Receipt:
        return self._transact("register_vehicle", info.address, {"info": info.to_dict()})

    def update_vehicle_info(self, info: VehicleInfo) -> Receipt:
        return self._transact("update_vehicle_info", info.address, {"info": info.to_dict()})

    def update_uav_info(self, info: UavInfo) -> Receipt:
        return self._transact("update_uav_info", info.address, {"info": info.to_dict()})

    def update_uav_zone(self, uav_id: str, zone_id: int) -> Receipt:
        return self._transact("update_uav_zone", uav_id, {"uav_id": uav_id, "zone_id": int(zone_id)})

    def submit_veh_selection(self, vehicle_id: str, uav_id: str, requested_bandwidth: float) -> Receipt:
        return self._transact("submit_veh_selection", vehicle_id,
                              {"vehicle_id": vehicle_id, "uav_id": uav_id,
                               "requested_bandwidth": float(requested_bandwidth)})

    def allocate_zone(self, zone_id: int, caller: str = "operator") -> Receipt:
        return self._transact("allocate_zone", caller, {"zone_id": int(zone_id)})

    def reset_lists_for_zone(self, zone_id: int, caller: str = "operator") -> Receipt:
        return self._transact("reset_lists_for_zone", caller, {"zone_id": int(zone_id)})

    def reset_uav_submission(self, uav_id: str) -> Receipt:
        return self._transact("reset_uav_submission", uav_id, {"uav_id": uav_id})

    def register_model(self, entry: ModelRegistryEntry, caller: str = "operator") -> Receipt:
        return self._transact("register_model", caller, {"entry": entry.to_dict()})

    # -- handlers --------------------------------------------------------------

    def _add_zone(self, zone_id: int) -> None:
        if zone_id not in self.state.zones:
            self.state.zones.append(zone_id)
            self.state.uavs_in_zone.setdefault(zone_id, [])

    def _do_register_uav(self, info) -> UavInfo:
        st = self.state
        u = _uav(info)
        if u.address in st.uav_data or u.address in st.vehicle_data:
            raise TransactionRejected(f"address {u.address} already registered")
        if u.available_bandwidth < 0:
            raise TransactionRejected("available bandwidth must be >= 0")
        rep = u.reputation if self.initial_reputation is None else self.initial_reputation
        u = replace(u, reputation=rep, timestamp=self.clock)
        st.uav_list.append(u.address)
        st.uav_data[u.address] = u
        self._add_zone(u.zone_id)
        st.uavs_in_zone[u.zone_id].append(u.address)
        return u

    def _do_register_vehicle(self, info) -> VehicleInfo:
        st = self.state
        v = _vehicle(info)
        if v.address in st.vehicle_data or v.address in st.uav_data:
            raise TransactionRejected(f"address {v.address} already registered")
        if not v.requested_bandwidth > 0:
            raise TransactionRejected("requested bandwidth must be > 0")
        rep = v.reputation if self.initial_reputation is None else self.initial_reputation
        v = replace(v, reputation=rep, timestamp=self.clock)
        st.vehicle_list.append(v.address)
        st.vehicle_data[v.address] = v
        self._add_zone(v.zone_id)
        return v

    def _do_update_vehicle_info(self, info) -> VehicleInfo:
        st = self.state
        v = _vehicle(info)
        old = st.vehicle_data.get(v.address)
        if old is None:
            raise TransactionRejected(f"vehicle {v.address} not registered")
        if not v.requested_bandwidth > 0:
            raise TransactionRejected("requested bandwidth must be > 0")
        # reputation is contract-managed
        v = replace(v, reputation=old.reputation, timestamp=self.clock)
        st.vehicle_data[v.address] = v
        self._add_zone(v.zone_id)
        return v

    def _do_update_uav_info(self, info) -> UavInfo:
        st = self.state
        u = _uav(info)
        old = st.uav_data.get(u.address)
        if old is None:
            raise TransactionRejected(f"uav {u.address} not registered")
        if u.available_bandwidth < 0:
            raise TransactionRejected("available bandwidth must be >= 0")
        u = replace(u, reputation=old.reputation, timestamp=self.clock)
        st.uav_data[u.address] = u
        if u.zone_id != old.zone_id:
            self._move_uav(u.address, u.zone_id)
        return u

    def _move_uav(self, uav_id: str, zone_id: int) -> None:
        st = self.state
        for members in st.uavs_in_zone.values():
            if uav_id in members:
                members.remove(uav_id)
        self._add_zone(zone_id)
        st.uavs_in_zone[zone_id].append(uav_id)

    def _do_update_uav_zone(self, uav_id: str, zone_id: int) -> UavInfo:
        st = self.state
        old = st.uav_data.get(uav_id)
        if old is None:
            raise TransactionRejected(f"uav {uav_id} not registered")
        self._move_uav(uav_id, zone_id)
        u = replace(old, zone_id=zone_id, timestamp=self.clock)
        st.uav_data[uav_id] = u
        return u

    def _do_submit_veh_selection(self, vehicle_id: str, uav_id: str, requested_bandwidth: float) -> ProposalRecord:
        st = self.state
        v = st.vehicle_data.get(vehicle_id)
        u = st.uav_data.get(uav_id)
        if v is None:
            raise TransactionRejected(f"vehicle {vehicle_id} not registered")
        if u is None:
            raise TransactionRejected(f"uav {uav_id} not registered")
        if not requested_bandwidth > 0:
            raise TransactionRejected("requested bandwidth must be > 0")
        if uav_id not in st.uavs_in_zone.get(v.zone_id, ()):
            raise TransactionRejected(f"uav {uav_id} is not in vehicle zone {v.zone_id}")
        if vehicle_id in st.proposed_vehicles:
            raise TransactionRejected(f"vehicle {vehicle_id} already proposed this round")
        v = replace(v, requested_bandwidth=requested_bandwidth)
        qov = compute_qov(u, v, self.bounds, self.weights)
        record = ProposalRecord(vehicle_id, qov, requested_bandwidth)
        st.uav_proposal_list.setdefault(uav_id, []).append(record)
        st.proposed_vehicles[vehicle_id] = uav_id
        return record

    def _do_allocate_zone(self, zone_id: int) -> SelectionOutcome:
        st = self.state
        if zone_id not in st.zones:
            raise TransactionRejected(f"unknown zone {zone_id}")
        uavs = [st.uav_data[a] for a in st.uavs_in_zone.get(zone_id, [])]
        outcome = select_zone(zone_id, st.uav_proposal_list, uavs)
        for u in uavs:
            st.uav_selection_list[u.address] = list(outcome.accepted[u.address])
        st.selected_uavs[zone_id] = [u.address for u in uavs if outcome.accepted[u.address]]
        return outcome

    def _do_reset_lists_for_zone(self, zone_id: int) -> None:
        st = self.state
        if zone_id not in st.zones:
            raise TransactionRejected(f"unknown zone {zone_id}")
        for u in st.uavs_in_zone.get(zone_id, []):
            st.uav_selection_list.pop(u, None)
        st.uavs_in_zone[zone_id] = []
        st.selected_uavs.pop(zone_id, None)

    def _do_reset_uav_submission(self, uav_id: str) -> None:
        st = self.state
        if uav_id not in st.uav_data:
            raise TransactionRejected(f"uav {uav_id} not registered")
        for p in st.uav_proposal_list.pop(uav_id, []):
            st.proposed_vehicles.pop(p.vehicle_address, None)
        st.uav_selection_list.pop(uav_id, None)
        for zone, sel in st.selected_uavs.items():
            if uav_id in sel:
                sel.remove(uav_id)

    def _do_register_model(self, entry) -> ModelRegistryEntry:
        e = entry if isinstance(entry, ModelRegistryEntry) else ModelRegistryEntry.from_dict(entry)
        if e.model_id in self.state.models:
            raise TransactionRejected(f"model {e.model_id} already registered")
        if e.agents[0] > e.agents[1] or e.vehicles[0] > e.vehicles[1]:
            raise TransactionRejected("empty applicability range")
        if self.store is not None and e.content_hash not in self.store:
            raise TransactionRejected(f"content {e.content_hash} not in model store")
        self.state.models[e.model_id] = e
        return e

    # -- views -----------------------------------------------------------------

    def get_zone_uavs(self, zone_id: int) -> List[UavInfo]:
        return [self.state.uav_data[a] for a in self.state.uavs_in_zone.get(zone_id, [])]

    def get_uav_info(self, uav_id: str) -> UavInfo:
        return self.state.uav_data[uav_id]

    def get_vehicle_info(self, vehicle_id: str) -> VehicleInfo:
        return self.state.vehicle_data[vehicle_id]

    def determine_mdrl_model(self, num_agents: int, num_vehicles: int) -> str:
        """Model whose ranges contain the query; narrowest agent range, then lowest id."""
        models = list(self.state.models.values())
        if not models:
            raise NoModelError("model registry is empty")
        hits = [m for m in models if m.matches(num_agents, num_vehicles)]
        if not hits:
            raise NoModelError(f"no model for {num_agents} agents and {num_vehicles} vehicles")
        best = min(hits, key=lambda m: (m.agents[1] - m.agents[0], m.model_id))
        return best.model_id

    def load_model(self, model_id: str) -> bytes:
        if self.store is None:
            raise NoModelError("ledger has no model store attached")
        return self.store.get(self.state.models[model_id].content_hash)

    # -- persistence -----------------------------------------------------------

    def save_log(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            for record in self.state.event_log:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        return path

    @staticmethod
    def read_log(path) -> List[dict]:
        with Path(path).open() as fh:
            return [json.loads(line) for line in fh if line.strip()]

    @classmethod
    def replay(cls, records: Iterable[dict], **kwargs) -> "Ledger":
        """Re-execute logged transactions in order on a fresh ledger.

        Derived notification records are skipped; they are re-emitted by the
        replayed allocations.
        """
        ledger = cls(**kwargs)
        for record in records:
            if record["status"] == "emitted":
                continue
            op = record["op"]
            if op not in cls.OPS:
                raise ValueError(f"unknown op {op!r} in log at seq {record.get('seq')}")
            receipt = ledger._transact(op, record["caller"], record["args"])
            if receipt.status != record["status"]:
                raise ValueError(f"replay diverged at seq {record['seq']}: {receipt.status} != {record['status']}")
        return ledger
