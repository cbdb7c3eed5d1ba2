import gzip
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import connected_graph, naive_pool
from uaviov.core import ConfigError
from uaviov.env import (NUM_ACTIONS, STAY, CoverageEnv, EnvConfig, EnvState, UnionFind, action_to_delta,
                        build_observations, compute_connectivity, compute_coverage, compute_reward,
                        downsample, move_vehicles, read_trajectory, reflect, tile_edges,
                        trajectory_record, window_origin, write_trajectory)

SMALL = EnvConfig(grid_h=15, grid_w=15, n=5, num_agents=2, vehicles_per_agent=4, uav_cover_range=1.0,
                  uav_link_range=2.0, episode_length=10)


def state_of(uavs, vehicles, assignment, cfg=SMALL):
    return EnvState(np.array(uavs, dtype=np.int64).reshape(-1, 2), np.array(vehicles, dtype=np.int64).reshape(-1, 2),
                    np.array(assignment, dtype=np.int64), np.zeros(len(assignment), dtype=np.int64))


@pytest.mark.parametrize("k,delta", [(0, (1, 0)), (1, (1, 1)), (2, (0, 1)), (3, (-1, 1)), (4, (-1, 0)),
                                     (5, (-1, -1)), (6, (0, -1)), (7, (1, -1)), (8, (0, 0))])
def test_action_deltas(k, delta):
    assert action_to_delta(k) == delta


def test_action_out_of_range():
    with pytest.raises(ValueError):
        action_to_delta(9)
    env = CoverageEnv(SMALL)
    env.reset()
    with pytest.raises(ValueError):
        env.step([0, 9])
    with pytest.raises(ValueError):
        env.step([0])


@pytest.mark.parametrize("kwargs", [dict(n=4), dict(n=15), dict(n=1), dict(episode_length=0),
                                    dict(uav_cover_range=0), dict(num_agents=2, vehicles_per_agent=[1])])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        EnvConfig(grid_h=15, grid_w=15, **{"n": 5, **kwargs})


def test_coverage_is_assignment_based():
    # vehicle 0 sits on UAV 1 but belongs to agent 0, which is far away
    s = state_of([[0, 0], [10, 10]], [[10, 10], [10, 10]], [0, 1])
    assert compute_coverage(s, SMALL) == 0.5


def test_coverage_range_boundary():
    # 1.0 km cover range = 5 cells of 0.2 km
    inside = state_of([[0, 0]], [[3, 4]], [0], EnvConfig(grid_h=15, grid_w=15, n=5, num_agents=1,
                                                         vehicles_per_agent=1, uav_cover_range=1.0))
    assert compute_coverage(inside, EnvConfig(grid_h=15, grid_w=15, n=5, num_agents=1, vehicles_per_agent=1,
                                              uav_cover_range=1.0)) == 1.0


def test_connectivity_chain():
    # link range 2 km = 10 cells: chain of hops of 10 cells connects
    cfg = SMALL
    assert compute_connectivity(state_of([[0, 0], [10, 0]], [], []), cfg) == 1
    assert compute_connectivity(state_of([[0, 0], [11, 0]], [], []), cfg) == 0


def test_reward_equation():
    assert compute_reward(1.0, 1) == 0.0
    assert compute_reward(0.0, 0) == -2.0
    assert compute_reward(0.25, 1) == -0.75


def test_union_find():
    uf = UnionFind(5)
    assert uf.union(0, 1) and uf.union(3, 4) and not uf.union(1, 0)
    assert uf.components == 3
    assert uf.find(1) == uf.find(0) != uf.find(3)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 14), st.integers(0, 14)), min_size=1, max_size=6),
       st.floats(0.2, 3.0))
def test_union_find_matches_graph_oracle(cells, link):
    cfg = EnvConfig(grid_h=15, grid_w=15, n=5, num_agents=len(cells), vehicles_per_agent=0, uav_link_range=link)
    s = state_of(cells, [], [], cfg)
    assert compute_connectivity(s, cfg) == connected_graph(cells, link, cfg.cell_size)


@settings(max_examples=100, deadline=None)
@given(st.integers(5, 40), st.integers(5, 40), st.sampled_from([3, 5, 7, 11]), st.integers(0, 1000))
def test_downsample_matches_naive(h, w, n, seed):
    if n > min(h, w):
        return
    grid = np.random.default_rng(seed).random((h, w))
    for mode in ("max", "mean"):
        np.testing.assert_allclose(downsample(grid, n, mode), naive_pool(grid, n, mode))


def test_tile_edges_cover_everything():
    assert tile_edges(25, 11).tolist() == [0, 2, 4, 6, 9, 11, 13, 15, 18, 20, 22]
    with pytest.raises(ValueError):
        downsample(np.zeros((4, 4)), 5)


def test_window_origin_shifts_at_edges():
    assert window_origin(0, 5, 15) == 0
    assert window_origin(14, 5, 15) == 10
    assert window_origin(7, 5, 15) == 5


@pytest.mark.parametrize("corner", [(0, 0), (14, 0), (0, 14), (14, 14), (7, 0), (0, 7)])
def test_observations_at_corners(corner):
    s = state_of([corner, [7, 7]], [[1, 1], [13, 13], [7, 8], [2, 12]], [0, 0, 1, 1])
    obs = build_observations(s, 0, SMALL)
    assert obs.shape == (6, 5, 5)
    assert obs.min() >= 0 and obs.max() <= 1
    # own location is always visible in the local window
    assert obs[0].sum() == 1
    assert obs[2].sum() == 1


def test_observation_channels_content():
    s = state_of([[2, 3], [12, 12]], [[2, 4], [12, 11]], [0, 1])
    obs = build_observations(s, 0, SMALL)
    assert obs[1].sum() == 1           # own vehicle only
    assert obs[3].sum() == 1           # one teammate
    assert obs[5].sum() == 1
    assert 0 < obs[4].mean() < 1


def test_reflection():
    pos = np.array([[0, 5], [14, 14]])
    delta = np.array([[-1, 0], [1, 1]])
    new, d = reflect(pos.copy(), delta.copy(), np.array([15, 15]))
    assert new.tolist() == [[1, 5], [13, 13]]
    assert d.tolist() == [[1, 0], [-1, -1]]


def test_vehicles_stay_on_grid_and_move_one_step():
    cfg = EnvConfig(grid_h=15, grid_w=15, n=5, num_agents=1, vehicles_per_agent=50)
    env = CoverageEnv(cfg, seed=3)
    env.reset()
    for _ in range(100):
        before = env.state.vehicle_cells.copy()
        move_vehicles(env.state, env.rng, cfg)
        after = env.state.vehicle_cells
        assert after.min() >= 0 and after.max() <= 14
        assert np.abs(after - before).max() <= 1


def test_reset_gives_full_coverage():
    for seed in range(20):
        cfg = EnvConfig(grid_h=25, grid_w=25, n=11, num_agents=2, vehicles_per_agent=5, uav_cover_range=2.4)
        env = CoverageEnv(cfg, seed=seed)
        env.reset()
        assert env.metrics()[0] == 1.0


def test_episode_runs_and_terminates():
    env = CoverageEnv(SMALL, seed=0)
    obs = env.reset()
    assert obs.shape == (2, 6, 5, 5)
    rewards = []
    for t in range(SMALL.episode_length):
        js = env.step([STAY, t % NUM_ACTIONS])
        rewards.append(js.reward)
        assert js.done == (t == SMALL.episode_length - 1)
        assert -2.0 <= js.reward <= 0.0
    with pytest.raises(RuntimeError):
        env.step([STAY, STAY])


def test_seeded_determinism():
    def run(seed):
        env = CoverageEnv(SMALL, seed=seed)
        env.reset()
        return [env.step([k % 9, (k * 5) % 9]).reward for k in range(10)]
    assert run(4) == run(4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_reward_zero_iff_full_coverage_and_connected(seed):
    env = CoverageEnv(SMALL, seed=seed)
    env.reset()
    rng = np.random.default_rng(seed)
    for _ in range(SMALL.episode_length):
        js = env.step(rng.integers(0, NUM_ACTIONS, 2))
        assert (js.reward == 0.0) == (js.coverage == 1.0 and js.connectivity == 1)


def test_trajectory_roundtrip(tmp_path):
    env = CoverageEnv(SMALL, seed=3)
    env.reset()
    recs = [trajectory_record(0, env.state, None, None)]
    js = env.step([0, STAY])
    recs.append(trajectory_record(1, env.state, js.actions, js.reward))
    path = tmp_path / "t.jsonl.gz"
    write_trajectory(path, recs)
    assert read_trajectory(path) == json.loads(json.dumps(recs))
    assert gzip.open(path).read().count(b"\n") == 2
