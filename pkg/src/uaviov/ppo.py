"""PPO with centralized learning and decentralized execution (CLDE).

One shared actor/critic pair is trained from the experience of every agent;
at execution time each agent runs its own copy on its own observations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .env import NUM_ACTIONS, CoverageEnv, EnvConfig, trajectory_record
from .nn import ActionDistribution, ActorCritic, Architecture, log_softmax, sample_action
from .validation import check_observations

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PpoHyperparams:
    entropy_coef: float = 0.01
    learning_rate: float = 3e-4
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 20
    gamma: float = 0.99
    horizon: int = 4000
    minibatch_size: int = 250
    total_steps: int = 1_000_000
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_values: bool = True
    eval_interval: int = 40_000
    eval_steps: int = 4_000

    def validate(self) -> "PpoHyperparams":
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be > 0")
        if self.horizon % self.minibatch_size:
            raise ValueError("horizon must be divisible by minibatch_size")
        if self.epochs < 1 or self.total_steps < 1:
            raise ValueError("epochs and total_steps must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adaptive-moment optimizer over a fixed list of parameter arrays (updated in place)."""

    def __init__(self, params: List[np.ndarray], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_grad_norm(grads: List[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            g *= scale
    return norm


class RunningMoments:
    """Streaming mean / variance (parallel-merge form) of the value targets."""

    def __init__(self):
        self.count, self.mean, self.var = 0, 0.0, 0.0

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64).ravel()
        if not len(x):
            return
        n, m, v = len(x), float(x.mean()), float(x.var())
        total = self.count + n
        delta = m - self.mean
        self.var = (self.var * self.count + v * n + delta ** 2 * self.count * n / total) / total
        self.mean += delta * n / total
        self.count = total

    @property
    def std(self) -> float:
        return max(math.sqrt(self.var), 1e-4)


class DecentralizedAdapter:
    """Each agent is one actor sample: observation ``(6, n, n)``, one of 9 actions."""

    centralized = False

    def __init__(self, num_agents: int):
        self.num_agents = num_agents
        self.actors_per_step = num_agents

    def batch(self, obs: np.ndarray) -> np.ndarray:
        return obs

    def env_actions(self, actions: np.ndarray) -> np.ndarray:
        return actions


class CentralizedAdapter:
    """A single actor sees all stacks concatenated and picks one of ``9**N`` joint actions."""

    centralized = True

    def __init__(self, num_agents: int):
        self.num_agents = num_agents
        self.actors_per_step = 1

    def batch(self, obs: np.ndarray) -> np.ndarray:
        n_agents, c, h, w = obs.shape
        return obs.reshape(1, n_agents * c, h, w)

    def env_actions(self, actions: np.ndarray) -> np.ndarray:
        return decode_joint_action(int(actions[0]), self.num_agents)


def encode_joint_action(actions, num_actions: int = NUM_ACTIONS) -> int:
    """Mixed-radix id, agent 0 most significant."""
    joint = 0
    for a in actions:
        joint = joint * num_actions + int(a)
    return joint


def decode_joint_action(joint: int, num_agents: int, num_actions: int = NUM_ACTIONS) -> np.ndarray:
    if not 0 <= joint < num_actions ** num_agents:
        raise ValueError(f"joint action {joint} outside [0, {num_actions ** num_agents})")
    out = np.empty(num_agents, dtype=np.int64)
    for i in range(num_agents - 1, -1, -1):
        joint, out[i] = divmod(joint, num_actions)
    return out


@dataclass
class TrajectoryBuffer:
    """Rollout storage; per-actor arrays are ``(T, M)``, shared ones ``(T,)``."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    coverage: np.ndarray
    connectivity: np.ndarray
    episode_returns: List[float] = field(default_factory=list)
    param_digests: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def terminations(self) -> int:
        return int(self.dones.sum())


class Rollout:
    """Keeps an environment running across successive ``collect`` calls."""

    def __init__(self, env: CoverageEnv, adapter=None):
        self.env = env
        self.adapter = adapter or DecentralizedAdapter(env.num_agents)
        self.obs = None
        self.episode_return = 0.0

    def _ensure_started(self):
        st = self.env.state
        if self.obs is None or st is None or st.step_counter >= self.env.config.episode_length:
            self.obs = self.env.reset()
            self.episode_return = 0.0

    def collect(self, policy: ActorCritic, horizon: int, rng: np.random.Generator,
                track_digests: bool = False) -> TrajectoryBuffer:
        self._ensure_started()
        ad = self.adapter
        m = ad.actors_per_step
        shape = policy.obs_shape
        obs_buf = np.empty((horizon, m) + shape, dtype=np.float32)
        actions = np.empty((horizon, m), dtype=np.int64)
        logps = np.empty((horizon, m))
        values = np.empty((horizon, m))
        rewards = np.empty(horizon)
        dones = np.zeros(horizon)
        cov = np.empty(horizon)
        conn = np.empty(horizon)
        returns, digests = [], []
        for t in range(horizon):
            batch = ad.batch(self.obs)
            if track_digests:
                digests.append(policy.digest())
            a, lp = policy.act(batch, rng)
            obs_buf[t] = batch
            actions[t] = a
            logps[t] = lp
            values[t] = policy.critic_forward(batch)
            js = self.env.step(ad.env_actions(a))
            rewards[t] = js.reward
            cov[t], conn[t] = js.coverage, js.connectivity
            self.episode_return += js.reward
            if js.done:
                dones[t] = 1.0
                returns.append(self.episode_return)
                self.obs = self.env.reset()
                self.episode_return = 0.0
            else:
                self.obs = js.observations
        last_values = policy.critic_forward(ad.batch(self.obs))
        return TrajectoryBuffer(obs_buf, actions, logps, values, rewards, dones, last_values,
                                cov, conn, returns, digests)


def collect_rollouts(env: CoverageEnv, policy: ActorCritic, hp: PpoHyperparams,
                     rng: np.random.Generator, adapter=None) -> TrajectoryBuffer:
    """Fresh-start collection of ``hp.horizon`` environment steps."""
    env.state = None
    return Rollout(env, adapter).collect(policy, hp.horizon, rng)


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float):
    """Generalized advantage estimates with episode-boundary masking.

    ``rewards`` and ``dones`` are ``(T,)`` and shared by every actor column of
    ``values`` (``(T,)`` or ``(T, M)``). ``dones[t]`` marks that the episode
    ended after step ``t``, so ``values`` of the next row are not bootstrapped.
    """
    values = np.asarray(values, dtype=np.float64)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = len(rewards)
    next_values = np.vstack([values[1:], np.reshape(np.asarray(last_values, dtype=np.float64), (1, -1))])
    adv = np.zeros_like(values)
    running = np.zeros(values.shape[1])
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values[t] * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    returns = adv + values
    if squeeze:
        return adv[:, 0], returns[:, 0]
    return adv, returns


def ppo_loss_and_grads(policy: ActorCritic, obs, actions, old_log_probs, advantages, returns,
                       hp: PpoHyperparams, normalize: bool = True) -> Dict[str, float]:
    """Evaluate the PPO loss on one minibatch and leave its gradients in the layers.

    The loss minimised is ``-clip_surrogate - c2 * entropy + value_coef * mse``.
    """
    adv = np.asarray(advantages, dtype=np.float64)
    if normalize and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    B = len(actions)
    x = policy._prep(obs)
    idx = np.arange(B)

    policy.actor.zero_grad()
    logits = policy.actor.forward(x).astype(np.float64)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    logp = logp_all[idx, actions]
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1 - hp.clip_eps, 1 + hp.clip_eps)
    surrogate = np.minimum(ratio * adv, clipped * adv)
    entropy = -(probs * logp_all).sum(axis=1)
    # the unclipped branch carries gradient whenever it is the active minimum
    active = (ratio * adv <= clipped * adv).astype(np.float64)
    dlogp = -(active * adv * ratio) / B
    dlogits = probs * -dlogp[:, None]
    dlogits[idx, actions] += dlogp
    # d(-c2 * mean H)/dlogits = c2 * p * (log p + H) / B
    dlogits += hp.entropy_coef * probs * (logp_all + entropy[:, None]) / B
    policy.actor.backward(dlogits.astype(x.dtype))

    policy.critic.zero_grad()
    v = policy.critic.forward(x)[:, 0].astype(np.float64)
    err = v - np.asarray(returns, dtype=np.float64)
    dv = (hp.value_coef * 2.0 * err / B)[:, None]
    policy.critic.backward(dv.astype(x.dtype))

    policy_loss = -surrogate.mean()
    value_loss = float((err ** 2).mean())
    ent = float(entropy.mean())
    return {
        "loss": float(policy_loss - hp.entropy_coef * ent + hp.value_coef * value_loss),
        "policy_loss": float(policy_loss),
        "value_loss": value_loss,
        "entropy": ent,
        "clip_fraction": float(np.mean(np.abs(ratio - 1) > hp.clip_eps)),
        "approx_kl": float(np.mean(old_log_probs - logp)),
    }


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, state: dict):
        super().__init__(message)
        self.state = state


class PpoLearner:
    """Holds the optimizers so their moments persist across updates."""

    def __init__(self, policy: ActorCritic, hp: PpoHyperparams):
        self.policy = policy
        self.hp = hp.validate()
        self.actor_opt = Adam(policy.actor.parameters(), lr=hp.learning_rate)
        self.critic_opt = Adam(policy.critic.parameters(), lr=hp.learning_rate)
        self.return_moments = RunningMoments()

    def update(self, buffer: TrajectoryBuffer, rng: np.random.Generator) -> Dict[str, float]:
        hp, policy = self.hp, self.policy
        adv, ret = compute_gae(buffer.rewards, buffer.values, buffer.dones, buffer.last_values,
                               hp.gamma, hp.gae_lambda)
        obs = buffer.obs.reshape((-1,) + buffer.obs.shape[2:])
        actions = buffer.actions.reshape(-1)
        old_logp = buffer.log_probs.reshape(-1)
        adv = adv.reshape(-1)
        ret = ret.reshape(-1)
        if hp.normalize_values:
            self.return_moments.update(ret)
            policy.rescale_values(self.return_moments.mean, self.return_moments.std)
        # the critic regresses onto targets in its own normalized units
        ret = (ret - policy.value_mean) / policy.value_std
        n = len(actions)
        mb = min(hp.minibatch_size, n)

        # recomputed log-probs must match the stored ones before any step
        fresh = policy.actor_forward(obs[:mb]).log_probs[np.arange(min(mb, n)), actions[:mb]]
        diag = {"initial_ratio_max_dev": float(np.max(np.abs(np.exp(fresh - old_logp[:mb]) - 1.0)))}

        epoch_losses = []
        for epoch in range(hp.epochs):
            order = rng.permutation(n)
            losses = []
            for start in range(0, n, mb):
                sel = order[start:start + mb]
                stats = ppo_loss_and_grads(policy, obs[sel], actions[sel], old_logp[sel], adv[sel], ret[sel], hp)
                if not math.isfinite(stats["loss"]):
                    raise TrainingDiverged(f"non-finite PPO loss at epoch {epoch}",
                                           {"epoch": epoch, "stats": stats, "minibatch": sel.tolist(),
                                            "param_digest": policy.digest()})
                a_grads = policy.actor.gradients()
                c_grads = policy.critic.gradients()
                # one norm over both networks
                clip_grad_norm(a_grads + c_grads, hp.max_grad_norm)
                self.actor_opt.step(a_grads)
                self.critic_opt.step(c_grads)
                losses.append(stats)
            epoch_losses.append({k: float(np.mean([s[k] for s in losses])) for k in losses[0]})
        diag.update({k: epoch_losses[-1][k] for k in epoch_losses[-1]})
        diag["epoch_losses"] = epoch_losses
        return diag


def ppo_update(buffer: TrajectoryBuffer, policy: ActorCritic, hp: PpoHyperparams,
               rng: np.random.Generator, learner: Optional[PpoLearner] = None) -> Dict[str, float]:
    learner = learner or PpoLearner(policy, hp)
    return learner.update(buffer, rng)


@dataclass
class EvalMetrics:
    mean_episode_reward: float
    mean_coverage: float
    connectivity_fraction: float
    episodes: int

    def to_dict(self) -> dict:
        return asdict(self)


ActFn = Callable[[CoverageEnv, np.ndarray], np.ndarray]


def run_episodes(env_config: EnvConfig, act: ActFn, num_steps: int, seed: int,
                 on_reset: Optional[Callable[[CoverageEnv], None]] = None) -> EvalMetrics:
    """Roll out ``act`` for ``num_steps`` steps; episodes cut off by the budget are dropped."""
    env = CoverageEnv(env_config, seed=seed)
    rewards, covs, conns = [], [], []
    steps = 0
    while steps + env_config.episode_length <= num_steps:
        obs = env.reset()
        if on_reset is not None:
            on_reset(env)
        total, cov, conn = 0.0, 0.0, 0.0
        for _ in range(env_config.episode_length):
            js = env.step(act(env, obs))
            obs = js.observations
            total += js.reward
            cov += js.coverage
            conn += js.connectivity
        steps += env_config.episode_length
        rewards.append(total)
        covs.append(cov / env_config.episode_length)
        conns.append(conn / env_config.episode_length)
    if not rewards:
        raise ValueError("num_steps shorter than one episode")
    return EvalMetrics(float(np.mean(rewards)), float(np.mean(covs)), float(np.mean(conns)), len(rewards))


def record_episode(env_config: EnvConfig, act: ActFn, seed: int) -> List[dict]:
    """One full episode as trajectory records, starting with the reset state."""
    env = CoverageEnv(env_config, seed=seed)
    obs = env.reset()
    records = [trajectory_record(0, env.state, None, None)]
    for t in range(1, env_config.episode_length + 1):
        js = env.step(act(env, obs))
        obs = js.observations
        records.append(trajectory_record(t, env.state, js.actions, js.reward))
    return records


def greedy_actor(policy: ActorCritic, adapter=None) -> ActFn:
    def act(env: CoverageEnv, obs: np.ndarray) -> np.ndarray:
        ad = adapter or DecentralizedAdapter(env.num_agents)
        actions, _ = policy.act(ad.batch(obs), greedy=True)
        return ad.env_actions(actions)
    return act


def random_actor(seed: int = 0) -> ActFn:
    rng = np.random.default_rng(seed)

    def act(env: CoverageEnv, obs: np.ndarray) -> np.ndarray:
        return rng.integers(0, NUM_ACTIONS, size=env.num_agents)
    return act


def evaluate_greedy(policy: ActorCritic, env_config: EnvConfig, num_steps: int = 4000, seed: int = 0,
                    adapter=None) -> EvalMetrics:
    return run_episodes(env_config, greedy_actor(policy, adapter), num_steps, seed)


def architecture_for(env_config: EnvConfig, centralized: bool = False, base: Optional[Architecture] = None) -> Architecture:
    base = base or Architecture()
    if centralized:
        return replace(base, n=env_config.n, in_channels=base.in_channels * env_config.num_agents,
                       actions=NUM_ACTIONS ** env_config.num_agents)
    return replace(base, n=env_config.n)


EVAL_SEED_OFFSET = 10_000


def train(env_config: EnvConfig, hp: PpoHyperparams = PpoHyperparams(), seed: int = 0,
          policy: Optional[ActorCritic] = None, adapter=None, arch: Optional[Architecture] = None,
          callback: Optional[Callable[[int, dict], None]] = None):
    """Alternate rollout collection and PPO updates for ``hp.total_steps`` env steps.

    Every ``hp.eval_interval`` steps the greedy policy is run for
    ``hp.eval_steps`` steps on a separate environment and a curve row
    ``{step, reward, coverage, connectivity}`` is appended.
    Returns ``(policy, curve)``.
    """
    hp = hp.validate()
    adapter = adapter or DecentralizedAdapter(env_config.num_agents)
    if policy is None:
        policy = ActorCritic(arch or architecture_for(env_config, adapter.centralized), seed=seed)
    rng = np.random.default_rng(seed)
    env = CoverageEnv(env_config, seed=seed)
    rollout = Rollout(env, adapter)
    learner = PpoLearner(policy, hp)
    curve = []
    done_steps = 0
    next_eval = hp.eval_interval
    while done_steps < hp.total_steps:
        horizon = min(hp.horizon, hp.total_steps - done_steps)
        buffer = rollout.collect(policy, horizon, rng)
        done_steps += horizon
        if len(buffer) * adapter.actors_per_step >= 2:
            diag = learner.update(buffer, rng)
        else:
            diag = {}
        if buffer.episode_returns:
            diag["train_episode_reward"] = float(np.mean(buffer.episode_returns))
        if callback is not None:
            callback(done_steps, diag)
        log.info("step %d reward %s", done_steps, diag.get("train_episode_reward"))
        while done_steps >= next_eval:
            m = evaluate_greedy(policy, env_config, hp.eval_steps, seed + EVAL_SEED_OFFSET + next_eval, adapter)
            curve.append({"step": next_eval, "reward": m.mean_episode_reward,
                          "coverage": m.mean_coverage, "connectivity": m.connectivity_fraction})
            next_eval += hp.eval_interval
    return policy, curve


CURVE_FIELDS = ("step", "reward", "coverage", "connectivity")


class MDRLCoordinator(BaseEstimator):
    """Decentralized UAV coordination policy trained with CLDE PPO.

    ``fit`` takes an :class:`EnvConfig`; ``predict`` maps a batch of
    per-agent observation stacks to greedy actions.
    """

    def __init__(self, total_steps: int = 1_000_000, horizon: int = 4000, epochs: int = 20,
                 minibatch_size: int = 250, learning_rate: float = 3e-4, gamma: float = 0.99,
                 gae_lambda: float = 0.95, clip_eps: float = 0.2, entropy_coef: float = 0.01,
                 eval_interval: int = 40_000, eval_steps: int = 4_000,
                 architecture: Optional[Architecture] = None, seed: int = 0):
        self.total_steps = total_steps
        self.horizon = horizon
        self.epochs = epochs
        self.minibatch_size = minibatch_size
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.clip_eps = clip_eps
        self.entropy_coef = entropy_coef
        self.eval_interval = eval_interval
        self.eval_steps = eval_steps
        self.architecture = architecture
        self.seed = seed

    centralized = False

    def hyperparams(self) -> PpoHyperparams:
        return PpoHyperparams(
            entropy_coef=self.entropy_coef, learning_rate=self.learning_rate, gae_lambda=self.gae_lambda,
            clip_eps=self.clip_eps, epochs=self.epochs, gamma=self.gamma, horizon=self.horizon,
            minibatch_size=self.minibatch_size, total_steps=self.total_steps,
            eval_interval=self.eval_interval, eval_steps=self.eval_steps).validate()

    def _adapter(self, env_config: EnvConfig):
        return DecentralizedAdapter(env_config.num_agents)

    def fit(self, env_config: EnvConfig, y=None, callback=None) -> "MDRLCoordinator":
        env_config = env_config.validate()
        adapter = self._adapter(env_config)
        arch = architecture_for(env_config, adapter.centralized, self.architecture)
        self.policy_, self.curve_ = train(env_config, self.hyperparams(), self.seed, adapter=adapter,
                                          arch=arch, callback=callback)
        self.env_config_ = env_config
        return self

    def _check_fitted(self):
        if not hasattr(self, "policy_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def predict_proba(self, obs) -> np.ndarray:
        self._check_fitted()
        return self.policy_.actor_forward(check_observations(obs, self.policy_.obs_shape)).probs

    def predict(self, obs) -> np.ndarray:
        return self.predict_proba(obs).argmax(axis=1)

    def evaluate(self, env_config: Optional[EnvConfig] = None, num_steps: int = 4000, seed: int = 0) -> EvalMetrics:
        self._check_fitted()
        env_config = env_config or self.env_config_
        return evaluate_greedy(self.policy_, env_config, num_steps, seed, self._adapter(env_config))

    def score(self, env_config: Optional[EnvConfig] = None, y=None) -> float:
        """Mean greedy episodic reward (higher is better, 0 is perfect)."""
        return self.evaluate(env_config).mean_episode_reward
