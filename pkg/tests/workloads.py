"""Random transaction workloads for ledger tests (valid and invalid calls mixed)."""

import numpy as np

from uaviov.core import UavInfo, VehicleInfo, zone_of
from uaviov.ledger import ModelRegistryEntry


def _pos(rng):
    return tuple(float(x) for x in rng.uniform(0, 50, 2))


def random_workload(ledger, n_tx, seed=0, on_step=None):
    rng = np.random.default_rng(seed)
    vehicles, uavs = [], []
    ops = ["register_uav", "register_vehicle", "update_vehicle_info", "update_uav_info", "update_uav_zone",
           "submit_veh_selection", "allocate_zone", "reset_lists_for_zone", "reset_uav_submission",
           "register_model"]
    weights = np.array([3, 5, 1, 1, 1, 6, 2, 1, 1, 0.5])
    for i in range(n_tx):
        op = ops[rng.choice(len(ops), p=weights / weights.sum())]
        if op == "register_uav":
            # occasional duplicate address to exercise rejection
            addr = f"u{rng.integers(0, len(uavs) + 2)}"
            pos = _pos(rng)
            u = UavInfo(addr, pos, float(rng.uniform(1, 100)), float(rng.uniform(1, 100)),
                        float(rng.uniform(0, 20)), zone_id=zone_of(pos))
            if ledger.register_uav(u).ok:
                uavs.append(addr)
        elif op == "register_vehicle":
            addr = f"v{rng.integers(0, len(vehicles) + 2)}"
            pos = _pos(rng)
            v = VehicleInfo(addr, pos, float(rng.uniform(0, 7)), float(rng.uniform(1, 100)),
                            float(rng.uniform(1, 4)), zone_id=zone_of(pos))
            if ledger.register_vehicle(v).ok:
                vehicles.append(addr)
        elif op == "update_vehicle_info" and vehicles:
            old = ledger.get_vehicle_info(vehicles[rng.integers(len(vehicles))])
            pos = _pos(rng)
            ledger.update_vehicle_info(VehicleInfo(old.address, pos, old.pay_per_mbps, old.reputation,
                                                   float(rng.uniform(1, 4)), zone_id=zone_of(pos)))
        elif op == "update_uav_info" and uavs:
            old = ledger.get_uav_info(uavs[rng.integers(len(uavs))])
            ledger.update_uav_info(UavInfo(old.address, old.position, old.reputation,
                                           float(rng.uniform(1, 100)), float(rng.uniform(0, 20)),
                                           zone_id=old.zone_id))
        elif op == "update_uav_zone" and uavs:
            ledger.update_uav_zone(uavs[rng.integers(len(uavs))], int(rng.integers(0, 25)))
        elif op == "submit_veh_selection" and vehicles and uavs:
            v = ledger.get_vehicle_info(vehicles[rng.integers(len(vehicles))])
            zone_uavs = ledger.get_zone_uavs(v.zone_id)
            if zone_uavs and rng.random() < 0.8:
                target = zone_uavs[rng.integers(len(zone_uavs))].address
            else:
                target = uavs[rng.integers(len(uavs))]
            ledger.submit_veh_selection(v.address, target, v.requested_bandwidth)
        elif op == "allocate_zone":
            ledger.allocate_zone(int(rng.integers(0, 26)))
        elif op == "reset_lists_for_zone":
            ledger.reset_lists_for_zone(int(rng.integers(0, 25)))
        elif op == "reset_uav_submission" and uavs:
            ledger.reset_uav_submission(uavs[rng.integers(len(uavs))])
        elif op == "register_model":
            lo = int(rng.integers(1, 5))
            ledger.register_model(ModelRegistryEntry(f"m{rng.integers(0, 20)}", "0" * 64,
                                                     (lo, lo + int(rng.integers(0, 3))), (1, 100)))
        else:
            ledger.allocate_zone(int(rng.integers(0, 25)))
        if on_step is not None:
            on_step(i, ledger)
    return ledger
