import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from oracles import allocate_reference
from strategies import zone_population
from uaviov.core import UavInfo, VehicleInfo, compute_qou, compute_qov
from uaviov.selection import (METRIC_FIELDS, ProposalRecord, RelaySelector, allocate_zone, metrics_to_csv,
                              nnm_baseline, propose_and_allocate, run_mechanism, selection_metrics,
                              vehicle_propose)


def uav(addr, ab, pos=(5.0, 5.0), rep=50.0, bl=50.0, zone=0):
    return UavInfo(addr, pos, reputation=rep, battery_level=bl, available_bandwidth=ab, zone_id=zone)


def veh(addr, rb, pos=(5.0, 5.0), pay=3.0, rep=50.0, zone=0):
    return VehicleInfo(addr, pos, pay_per_mbps=pay, reputation=rep, requested_bandwidth=rb, zone_id=zone)


def test_propose_picks_best_and_first_on_tie():
    v = veh("v", 1.0)
    a, b, c = uav("a", 5), uav("b", 10), uav("c", 10)
    assert vehicle_propose(v, [a, b, c])[0] == "b"
    assert vehicle_propose(v, []) == (None, 0.0)


def test_allocation_ranks_by_qov_over_sqrt_rb():
    u = uav("u", ab=5.0)
    props = {"u": [ProposalRecord("v1", 60.0, 4.0),   # 30
                   ProposalRecord("v2", 40.0, 1.0),   # 40
                   ProposalRecord("v3", 45.0, 2.25)]}  # 30
    out = allocate_zone(0, props, [u])
    # v2 first, then v1 (ties keep arrival order), then v3 no longer fits
    assert out.accepted["u"] == ["v2", "v1"]
    assert out.unmatched == ["v3"]
    assert out.residual_bandwidth["u"] == pytest.approx(0.0)


def test_allocation_skips_and_continues():
    u = uav("u", ab=3.0)
    props = {"u": [ProposalRecord("big", 90.0, 4.0), ProposalRecord("small", 10.0, 1.0)]}
    out = allocate_zone(0, props, [u])
    assert out.accepted["u"] == ["small"]


def test_proposal_requires_positive_bandwidth():
    with pytest.raises(ValueError):
        ProposalRecord("v", 10.0, 0.0)


def _proposals_for(vs, us):
    by = {u.address: u for u in us}
    props, ref = {}, {}
    for v in vs:
        target, _ = vehicle_propose(v, us)
        q = compute_qov(by[target], v)
        props.setdefault(target, []).append(ProposalRecord(v.address, q, v.requested_bandwidth))
        ref.setdefault(target, []).append((v.address, q, v.requested_bandwidth))
    return props, ref


@settings(max_examples=200, deadline=None)
@given(zone_population())
def test_allocation_matches_reference(pop):
    vs, us = pop
    props, ref = _proposals_for(vs, us)
    out = allocate_zone(0, props, us)
    accepted, residual = allocate_reference(ref, us)
    assert out.accepted == accepted
    assert out.residual_bandwidth == residual


@settings(max_examples=200, deadline=None)
@given(zone_population(max_vehicles=30, max_uavs=6))
def test_capacity_and_uniqueness(pop):
    vs, us = pop
    out = propose_and_allocate(vs, us)
    rb = {v.address: v.requested_bandwidth for v in vs}
    ab = {u.address: u.available_bandwidth for u in us}
    for u, accepted in out.accepted.items():
        assert sum(rb[v] for v in accepted) <= ab[u] + 1e-9
        assert out.residual_bandwidth[u] >= -1e-9
    matched = [v for _, v in out.pairs()]
    assert len(matched) == len(set(matched))
    assert set(matched) | set(out.unmatched) == set(rb)


@settings(max_examples=100, deadline=None)
@given(zone_population(max_vehicles=20, max_uavs=5))
def test_nnm_capacity_and_coverage(pop):
    vs, us = pop
    out = nnm_baseline(vs, us)
    rb = {v.address: v.requested_bandwidth for v in vs}
    for u in us:
        assert sum(rb[v] for v in out.accepted[u.address]) <= u.available_bandwidth + 1e-9
    assert len(out.pairs()) + len(out.unmatched) == len(vs)


def test_nnm_picks_smallest_gap():
    v = veh("v", 1.0)
    near, far = uav("near", 10, pos=(5, 5)), uav("far", 10, pos=(6, 5))
    gaps = {u.address: abs(compute_qou(u, v) - compute_qov(u, v)) for u in (near, far)}
    out = nnm_baseline([v], [near, far])
    assert out.pairs() == [(min(gaps, key=gaps.get), "v")]


def test_cross_zone_vehicles_stay_unmatched():
    out = propose_and_allocate([veh("v", 1.0, zone=3)], [uav("u", 10, zone=0)])
    assert out.unmatched == ["v"]
    assert out.selected_uavs == []


def test_metrics_and_csv():
    vs = [veh("v1", 1.0), veh("v2", 1.0)]
    us = [uav("a", 10), uav("b", 0.5)]
    out = run_mechanism("proposed", vs, us)
    m = selection_metrics(out, vs, us)
    assert m.vehicles_per_uav == 2.0
    assert m.pct_uavs_selected == 50.0
    text = metrics_to_csv([{"mechanism": "proposed", "num_uavs": 2, **m.__dict__}])
    assert text.splitlines()[0].split(",") == list(METRIC_FIELDS)
    assert selection_metrics(run_mechanism("nnm", [], us), [], us).empty
    with pytest.raises(ValueError):
        run_mechanism("bogus", vs, us)


def test_outcome_json_is_versioned():
    out = propose_and_allocate([veh("v", 1.0)], [uav("u", 5)])
    doc = json.loads(out.to_json())
    assert doc["version"] == 1
    assert doc["selections"][0]["vehicles"] == ["v"]


def test_relay_selector_estimator():
    us = [uav("a", 10), uav("b", 2)]
    vs = [veh("v1", 1.0), veh("v2", 3.0)]
    sel = RelaySelector()
    with pytest.raises(NotFittedError):
        sel.predict(vs)
    assert sel.fit(us) is sel
    assert sel.predict(vs) == ["a", "a"]
    assert sel.get_params() == {"mechanism": "proposed", "bounds": None, "weights": None}
    other = clone(sel).set_params(mechanism="nnm").fit(us)
    assert len(other.predict(vs)) == 2
    assert 0 <= sel.score(vs) <= 100


def test_relay_selector_rejects_bad_input():
    with pytest.raises(ValueError):
        RelaySelector().fit([uav("a", 10), uav("a", 5)])
    with pytest.raises(ValueError):
        RelaySelector().fit([uav("a", 10)]).predict([veh("v", -1.0)])
    with pytest.raises(ValueError):
        RelaySelector(mechanism="x").fit([uav("a", 10)])
