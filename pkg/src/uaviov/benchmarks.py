"""Baselines for the coordination task: centralized joint-action PPO,
particle-swarm static placement and a uniform random policy."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .env import (NUM_ACTIONS, STAY, CoverageEnv, EnvConfig, EnvState, compute_connectivity,
                  compute_coverage)
from .nn import ActorCritic, Architecture, count_parameters
from .ppo import (CentralizedAdapter, EvalMetrics, MDRLCoordinator, PpoHyperparams, architecture_for,
                  decode_joint_action, evaluate_greedy, random_actor, run_episodes, train)

MAX_CENTRAL_AGENTS = 5


class CombinatorialBlowup(ValueError):
    """Joint action space too large to build a centralized policy head."""


def check_central_agents(num_agents: int) -> int:
    if num_agents > MAX_CENTRAL_AGENTS:
        raise CombinatorialBlowup(f"centralized head needs 9**{num_agents} = {NUM_ACTIONS ** num_agents} "
                                  f"outputs; refusing N > {MAX_CENTRAL_AGENTS}")
    return num_agents


def central_head_width(num_agents: int) -> int:
    return NUM_ACTIONS ** check_central_agents(num_agents)


def central_architecture(num_agents: int, base: Architecture = Architecture()) -> Architecture:
    check_central_agents(num_agents)
    return replace(base, in_channels=base.in_channels * num_agents, actions=NUM_ACTIONS ** num_agents)


def centralized_param_count(num_agents: int, base: Architecture = Architecture()) -> int:
    arch = central_architecture(num_agents, base)
    return count_parameters(arch, arch.actions) + count_parameters(arch, 1)


def decentralized_param_count(num_agents: int, base: Architecture = Architecture()) -> int:
    # the shared policy sees one 6-channel stack whatever the team size
    return count_parameters(base, base.actions) + count_parameters(base, 1)


def centralized_train(env_config: EnvConfig, hp: PpoHyperparams = PpoHyperparams(), seed: int = 0,
                      base: Optional[Architecture] = None, callback=None):
    check_central_agents(env_config.num_agents)
    adapter = CentralizedAdapter(env_config.num_agents)
    arch = architecture_for(env_config, centralized=True, base=base)
    return train(env_config, hp, seed, adapter=adapter, arch=arch, callback=callback)


class CentralizedCoordinator(MDRLCoordinator):
    """One agent observing every stack and choosing among ``9**N`` joint actions."""

    centralized = True

    def _adapter(self, env_config: EnvConfig):
        check_central_agents(env_config.num_agents)
        return CentralizedAdapter(env_config.num_agents)

    def predict(self, obs) -> np.ndarray:
        """Per-agent actions decoded from the greedy joint action.

        ``obs`` is one team observation ``(N, 6, n, n)``.
        """
        self._check_fitted()
        obs = np.asarray(obs, dtype=np.float32)
        adapter = self._adapter(self.env_config_)
        joint = self.policy_.actor_forward(adapter.batch(obs)).probs.argmax(axis=1)
        return decode_joint_action(int(joint[0]), adapter.num_agents)

    def predict_proba(self, obs) -> np.ndarray:
        self._check_fitted()
        adapter = self._adapter(self.env_config_)
        return self.policy_.actor_forward(adapter.batch(np.asarray(obs, dtype=np.float32))).probs


@dataclass(frozen=True)
class SwarmParams:
    particles: int = 30
    iterations: int = 100
    inertia: float = 0.7298
    cognitive: float = 1.49618
    social: float = 1.49618
    seed: int = 0


def placement_score(positions: np.ndarray, state: EnvState, config: EnvConfig) -> float:
    """``coverage + connectivity`` with UAVs on the rounded ``positions``."""
    hi = np.array([config.grid_w - 1, config.grid_h - 1])
    cells = np.clip(np.rint(positions.reshape(-1, 2)), 0, hi).astype(np.int64)
    trial = EnvState(cells, state.vehicle_cells, state.assignment, state.vehicle_headings, state.step_counter)
    return compute_coverage(trial, config) + compute_connectivity(trial, config)


def static_placement(state: EnvState, config: EnvConfig, swarm: SwarmParams = SwarmParams()) -> np.ndarray:
    """Particle-swarm search for UAV cells maximising coverage + connectivity.

    The current UAV cells seed the first particle; the best cells found after
    the iteration budget are returned as an ``(N, 2)`` integer array.
    """
    rng = np.random.default_rng(swarm.seed)
    N = config.num_agents
    hi = np.tile([config.grid_w - 1, config.grid_h - 1], N).astype(float)
    pos = rng.uniform(0, hi, size=(swarm.particles, 2 * N))
    pos[0] = state.uav_cells.reshape(-1)
    vel = rng.uniform(-hi, hi, size=pos.shape) * 0.1
    score = np.array([placement_score(p, state, config) for p in pos])
    best_pos, best_score = pos.copy(), score.copy()
    g = int(np.argmax(best_score))
    g_pos, g_score = best_pos[g].copy(), best_score[g]
    for _ in range(swarm.iterations):
        r1 = rng.random(pos.shape)
        r2 = rng.random(pos.shape)
        vel = swarm.inertia * vel + swarm.cognitive * r1 * (best_pos - pos) + swarm.social * r2 * (g_pos - pos)
        vel = np.clip(vel, -hi / 2, hi / 2)
        pos = np.clip(pos + vel, 0, hi)
        score = np.array([placement_score(p, state, config) for p in pos])
        better = score > best_score
        best_pos[better], best_score[better] = pos[better], score[better]
        g = int(np.argmax(best_score))
        if best_score[g] > g_score:
            g_pos, g_score = best_pos[g].copy(), best_score[g]
    return np.clip(np.rint(g_pos.reshape(N, 2)), 0, hi[:2]).astype(np.int64)


class StaticPlacement(BaseEstimator):
    """PSO placement computed once from the initial vehicle layout, then frozen."""

    def __init__(self, particles: int = 30, iterations: int = 100, inertia: float = 0.7298,
                 cognitive: float = 1.49618, social: float = 1.49618, seed: int = 0):
        self.particles = particles
        self.iterations = iterations
        self.inertia = inertia
        self.cognitive = cognitive
        self.social = social
        self.seed = seed

    def swarm(self) -> SwarmParams:
        return SwarmParams(self.particles, self.iterations, self.inertia, self.cognitive, self.social, self.seed)

    def fit(self, state: EnvState, config: EnvConfig) -> "StaticPlacement":
        self.positions_ = static_placement(state, config, self.swarm())
        self.score_ = placement_score(self.positions_.astype(float), state, config)
        return self

    def predict(self, state: Optional[EnvState] = None) -> np.ndarray:
        if not hasattr(self, "positions_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("StaticPlacement is not fitted")
        return self.positions_.copy()

    def evaluate(self, config: EnvConfig, num_steps: int = 4000, seed: int = 0) -> EvalMetrics:
        """Episodes where each reset is followed by a fresh placement and UAVs never move."""
        def place(env: CoverageEnv):
            env.state.uav_cells = static_placement(env.state, config, self.swarm())

        def stay(env, obs):
            return np.full(env.num_agents, STAY)

        return run_episodes(config, stay, num_steps, seed, on_reset=place)


METHODS = ("decentralized", "centralized", "static", "random")
BENCH_FIELDS = ("scenario", "method", "coverage", "connectivity", "reward", "episodes", "paper_method")


@dataclass
class Scenario:
    name: str
    env: EnvConfig
    train_steps: int = 40_000
    eval_steps: int = 1_000
    seed: int = 0


def benchmark_suite(scenarios: Sequence[Scenario], hp: PpoHyperparams = PpoHyperparams(),
                    policies: Optional[Dict[str, Dict[str, ActorCritic]]] = None,
                    swarm: SwarmParams = SwarmParams(), methods: Sequence[str] = METHODS) -> List[dict]:
    """Evaluate every method on every scenario with shared evaluation seeds.

    ``policies[scenario][method]`` may hold already trained networks for the
    two learned methods; missing ones are trained with ``hp`` for the
    scenario's ``train_steps``. The random policy is not a paper method and
    is labelled as such.
    """
    policies = policies or {}
    rows = []
    for sc in scenarios:
        hp_sc = replace(hp, total_steps=sc.train_steps, eval_interval=max(sc.train_steps, 1))
        given = policies.get(sc.name, {})
        eval_seed = sc.seed + 50_000
        for method in methods:
            if method == "decentralized":
                pol = given.get(method) or train(sc.env, hp_sc, sc.seed)[0]
                m = evaluate_greedy(pol, sc.env, sc.eval_steps, eval_seed)
            elif method == "centralized":
                pol = given.get(method) or centralized_train(sc.env, hp_sc, sc.seed)[0]
                m = evaluate_greedy(pol, sc.env, sc.eval_steps, eval_seed, CentralizedAdapter(sc.env.num_agents))
            elif method == "static":
                m = StaticPlacement(**{k: getattr(swarm, k) for k in
                                       ("particles", "iterations", "inertia", "cognitive", "social", "seed")}
                                    ).evaluate(sc.env, sc.eval_steps, eval_seed)
            elif method == "random":
                m = run_episodes(sc.env, random_actor(sc.seed), sc.eval_steps, eval_seed)
            else:
                raise ValueError(f"unknown method {method!r}")
            rows.append({"scenario": sc.name, "method": method, "coverage": m.mean_coverage,
                         "connectivity": m.connectivity_fraction, "reward": m.mean_episode_reward,
                         "episodes": m.episodes, "paper_method": method != "random"})
    return rows


def bench_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k) for k in BENCH_FIELDS})
    return buf.getvalue()


def bench_plot_data(rows: Sequence[dict]) -> dict:
    """One series per method, x = scenario order."""
    scenarios = list(dict.fromkeys(r["scenario"] for r in rows))
    series = {}
    for r in rows:
        s = series.setdefault(r["method"], {"label": r["method"], "points": []})
        s["points"].append({"x": scenarios.index(r["scenario"]), "scenario": r["scenario"],
                            "coverage": r["coverage"], "connectivity": r["connectivity"], "reward": r["reward"]})
    return {"version": 1, "x_axis": {"label": "scenario", "ticks": scenarios},
            "series": list(series.values())}
