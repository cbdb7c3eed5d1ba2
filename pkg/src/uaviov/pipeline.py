"""End-to-end orchestration used by the command line: selection runs through
the ledger, sweeps, training with model registration, and evaluation."""

from __future__ import annotations

import csv
import io
import json
import platform
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .core import UavInfo, VehicleInfo
from .ledger import Ledger, ModelRegistryEntry
from .nn import deserialize, serialize
from .ppo import CURVE_FIELDS, EVAL_SEED_OFFSET, MDRLCoordinator, evaluate_greedy
from .scenario import ScenarioConfig, generate_population, population_seed
from .selection import (SelectionOutcome, nnm_baseline, run_mechanism, selection_metrics,
                        vehicle_propose)
from .store import ModelStore


def select_via_ledger(ledger: Ledger, vehicles: Sequence[VehicleInfo], uavs: Sequence[UavInfo]) -> SelectionOutcome:
    """Register everyone, let each vehicle propose to its best zone UAV, allocate every zone."""
    for u in uavs:
        ledger.register_uav(u)
    for v in vehicles:
        ledger.register_vehicle(v)
    for v in vehicles:
        stored = ledger.get_vehicle_info(v.address)
        target, _ = vehicle_propose(stored, ledger.get_zone_uavs(stored.zone_id), ledger.bounds, ledger.weights)
        if target is not None:
            ledger.submit_veh_selection(v.address, target, stored.requested_bandwidth)
    outcome = SelectionOutcome()
    proposed = set(ledger.state.proposed_vehicles)
    for zone in sorted(ledger.state.zones):
        receipt = ledger.allocate_zone(zone)
        outcome.merge(receipt.result)
    outcome.unmatched = [v.address for v in vehicles if v.address not in proposed] + outcome.unmatched
    return outcome


def selection_sweep(cfg: ScenarioConfig, mechanisms: Sequence[str] = ("proposed", "nnm"),
                    log_dir: Optional[Path] = None) -> Tuple[List[dict], Dict[str, SelectionOutcome]]:
    """Metrics rows for every (num_uavs, iteration, mechanism) of the sweep.

    The proposed mechanism runs through a fresh ledger per population whose
    event log is written to ``log_dir`` when given.
    """
    rows, outcomes = [], {}
    for num_uavs in cfg.uav_sweep:
        for it in range(cfg.iterations):
            vehicles, uavs = generate_population(cfg, num_uavs, population_seed(cfg.seed, num_uavs, it))
            for mech in mechanisms:
                if mech == "proposed":
                    ledger = Ledger(cfg.bounds, cfg.weights, initial_reputation=None)
                    outcome = select_via_ledger(ledger, vehicles, uavs)
                    if log_dir is not None:
                        ledger.save_log(Path(log_dir) / f"ledger_u{num_uavs}_i{it}.ndjson")
                else:
                    outcome = run_mechanism(mech, vehicles, uavs, cfg.bounds, cfg.weights)
                outcomes[f"{mech}_u{num_uavs}_i{it}"] = outcome
                m = selection_metrics(outcome, vehicles, uavs, cfg.bounds, cfg.weights)
                rows.append({"seed": cfg.seed, "num_uavs": num_uavs, "num_vehicles": len(vehicles),
                             "mechanism": mech, "iteration": it, **m.__dict__})
    return rows, outcomes


def sweep_means(rows: Sequence[dict], metric: str) -> Dict[str, Dict[int, float]]:
    """Per-mechanism mean of ``metric`` over iterations, keyed by UAV count."""
    acc: Dict[str, Dict[int, List[float]]] = {}
    for r in rows:
        acc.setdefault(r["mechanism"], {}).setdefault(int(r["num_uavs"]), []).append(float(r[metric]))
    return {m: {k: float(np.mean(v)) for k, v in sorted(d.items())} for m, d in acc.items()}


def curve_to_csv(curve: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CURVE_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in curve:
        w.writerow({k: row[k] for k in CURVE_FIELDS})
    return buf.getvalue()


def environment_info() -> dict:
    return {"package_version": __version__, "python": platform.python_version(), "numpy": np.__version__}


def train_and_register(cfg: ScenarioConfig, ledger: Ledger, store: ModelStore, model_id: str,
                       agents_range: Optional[Tuple[int, int]] = None,
                       vehicles_range: Optional[Tuple[int, int]] = None, callback=None):
    """Train a decentralized policy on ``cfg.env``, store the blob and register it.

    Returns ``(coordinator, entry, manifest)``.
    """
    hp = cfg.hp
    coord = MDRLCoordinator(total_steps=hp.total_steps, horizon=hp.horizon, epochs=hp.epochs,
                            minibatch_size=hp.minibatch_size, learning_rate=hp.learning_rate, gamma=hp.gamma,
                            gae_lambda=hp.gae_lambda, clip_eps=hp.clip_eps, entropy_coef=hp.entropy_coef,
                            eval_interval=hp.eval_interval, eval_steps=hp.eval_steps, seed=cfg.seed)
    coord.fit(cfg.env, callback=callback)
    blob = serialize(coord.policy_)
    key = store.put(blob)
    n_agents, n_veh = cfg.env.num_agents, cfg.env.num_vehicles
    entry = ModelRegistryEntry(model_id, key, agents_range or (n_agents, n_agents), vehicles_range or (n_veh, n_veh))
    receipt = ledger.register_model(entry)
    if not receipt.ok:
        raise RuntimeError(f"model registration failed: {receipt.error}")
    store.write_index([m.to_dict() for m in ledger.state.models.values()])
    tail = coord.curve_[-1] if coord.curve_ else None
    manifest = {
        "version": 1,
        "command": "train",
        "model_id": model_id,
        "content_hash": key,
        "config": cfg.to_dict(),
        "params": {k: v for k, v in coord.get_params(deep=False).items() if k != "architecture"},
        "param_count": coord.policy_.param_count(),
        "curve": coord.curve_,
        "curve_tail": tail,
        "curve_tail_seed": (cfg.seed + EVAL_SEED_OFFSET + tail["step"]) if tail else None,
        "environment": environment_info(),
    }
    return coord, entry, manifest


def evaluate_registered(ledger: Ledger, cfg: ScenarioConfig, num_steps: int, seed: int,
                        model_id: Optional[str] = None):
    model_id = model_id or ledger.determine_mdrl_model(cfg.env.num_agents, cfg.env.num_vehicles)
    policy = deserialize(ledger.load_model(model_id))
    metrics = evaluate_greedy(policy, cfg.env, num_steps, seed)
    return model_id, metrics
