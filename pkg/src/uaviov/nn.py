"""LeNet-style convolutional actor and critic with hand-written backprop.

Activations are kept channels-last (``B, H, W, C``) internally; the public
entry points take observation stacks as ``(B, C, n, n)``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .env import NUM_ACTIONS, NUM_CHANNELS


class Layer:
    params: Tuple[str, ...] = ()

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> Optional[np.ndarray]:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for name in self.params:
            setattr(self, "d" + name, np.zeros_like(getattr(self, name)))


RELU_GAIN = float(np.sqrt(2.0))


def orthogonal(fan_in: int, fan_out: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    """``(fan_in, fan_out)`` matrix with orthonormal rows or columns, scaled by ``gain``."""
    a = rng.normal(size=(max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return gain * (q if fan_in >= fan_out else q.T)


class Conv2D(Layer):
    """Stride-1 'same' convolution. Weight layout ``(in, k, k, out)``."""

    params = ("W", "b")

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator, dtype=np.float32,
                 gain: float = RELU_GAIN):
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, kernel
        self.pad = kernel // 2
        W = orthogonal(in_ch * kernel * kernel, out_ch, gain, rng)
        self.W = W.reshape(in_ch, kernel, kernel, out_ch).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.zero_grad()

    def forward(self, x):
        p, k = self.pad, self.k
        B, H, W, C = x.shape
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        # (B, H, W, C, k, k) -> rows of C*k*k patch values
        cols = sliding_window_view(xp, (k, k), axis=(1, 2)).reshape(B * H * W, C * k * k)
        self._cache = (cols, x.shape)
        y = cols @ self.W.reshape(-1, self.out_ch) + self.b
        return y.reshape(B, H, W, self.out_ch)

    def backward(self, dy, need_dx=True):
        cols, (B, H, W, C) = self._cache
        k, p = self.k, self.pad
        dy2 = dy.reshape(-1, self.out_ch)
        self.dW += (cols.T @ dy2).reshape(self.W.shape)
        self.db += dy2.sum(axis=0)
        if not need_dx:
            return None
        dcols = (dy2 @ self.W.reshape(-1, self.out_ch).T).reshape(B, H, W, C, k, k)
        dxp = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + H, j:j + W, :] += dcols[..., i, j]
        return dxp[:, p:p + H, p:p + W, :]


class MaxPool2D(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped."""

    def forward(self, x):
        B, H, W, C = x.shape
        H2, W2 = H // 2, W // 2
        blocks = x[:, :2 * H2, :2 * W2, :].reshape(B, H2, 2, W2, 2, C)
        blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(B, H2, W2, C, 4)
        idx = blocks.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy, need_dx=True):
        idx, (B, H, W, C) = self._cache
        H2, W2 = H // 2, W // 2
        onehot = np.zeros(idx.shape + (4,), dtype=dy.dtype)
        np.put_along_axis(onehot, idx[..., None], dy[..., None], axis=-1)
        blocks = onehot.reshape(B, H2, W2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, 2 * H2, 2 * W2, C)
        dx = np.zeros((B, H, W, C), dtype=dy.dtype)
        dx[:, :2 * H2, :2 * W2, :] = blocks
        return dx


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy, need_dx=True):
        return dy * self._mask


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, need_dx=True):
        return dy.reshape(self._shape)


class Dense(Layer):
    params = ("W", "b")

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32,
                 gain: float = RELU_GAIN):
        self.W = orthogonal(n_in, n_out, gain, rng).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, dy, need_dx=True):
        self.dW += self._x.T @ dy
        self.db += dy.sum(axis=0)
        return dy @ self.W.T if need_dx else None


class Sequential:
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for i in range(len(self.layers) - 1, -1, -1):
            dy = self.layers[i].backward(dy, need_dx=i > 0)
        return dy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self) -> List[np.ndarray]:
        return [getattr(l, name) for l in self.layers for name in l.params]

    def gradients(self) -> List[np.ndarray]:
        return [getattr(l, "d" + name) for l in self.layers for name in l.params]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))


@dataclass(frozen=True)
class Architecture:
    """Layer widths of both networks.

    Defaults put actor + critic at about 1.72M parameters for ``n = 21``.
    """

    in_channels: int = NUM_CHANNELS
    n: int = 21
    conv1: int = 16
    conv2: int = 64
    kernel: int = 5
    hidden1: int = 480
    hidden2: int = 128
    actions: int = NUM_ACTIONS

    @property
    def flat_size(self) -> int:
        side = (self.n // 2) // 2
        return self.conv2 * side * side

    def to_dict(self) -> dict:
        return asdict(self)


def build_trunk(arch: Architecture, rng, dtype) -> List[Layer]:
    return [
        Conv2D(arch.in_channels, arch.conv1, arch.kernel, rng, dtype), ReLU(), MaxPool2D(),
        Conv2D(arch.conv1, arch.conv2, arch.kernel, rng, dtype), ReLU(), MaxPool2D(),
        Flatten(),
        Dense(arch.flat_size, arch.hidden1, rng, dtype), ReLU(),
        Dense(arch.hidden1, arch.hidden2, rng, dtype), ReLU(),
    ]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class ActionDistribution:
    probs: np.ndarray
    log_probs: np.ndarray

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "ActionDistribution":
        logp = log_softmax(np.asarray(logits, dtype=np.float64))
        return cls(np.exp(logp), logp)

    def entropy(self) -> np.ndarray:
        return -(self.probs * self.log_probs).sum(axis=-1)


def sample_action(dist: ActionDistribution, rng: np.random.Generator, greedy: bool = False):
    """Draw one action per row (argmax if ``greedy``); returns ``(actions, log_probs)``."""
    probs = np.atleast_2d(dist.probs)
    logp = np.atleast_2d(dist.log_probs)
    if greedy:
        actions = probs.argmax(axis=-1)
    else:
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random(len(probs))[:, None] * cdf[:, -1:]
        actions = np.minimum((u >= cdf).sum(axis=-1), probs.shape[-1] - 1)
    return actions, logp[np.arange(len(actions)), actions]


class ActorCritic:
    """Two separate networks with identical trunks: a 9-way actor and a scalar critic."""

    def __init__(self, arch: Architecture = Architecture(), seed: int = 0, dtype=np.float32):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        # zero policy head: the untrained policy is exactly uniform
        self.actor = Sequential(build_trunk(arch, rng, dtype) + [Dense(arch.hidden2, arch.actions, rng, dtype, gain=0.0)])
        self.critic = Sequential(build_trunk(arch, rng, dtype) + [Dense(arch.hidden2, 1, rng, dtype, gain=1.0)])
        # critic output is in normalized units; value = raw * value_std + value_mean
        self.value_mean = 0.0
        self.value_std = 1.0

    @property
    def obs_shape(self):
        return (self.arch.in_channels, self.arch.n, self.arch.n)

    def _prep(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=self.dtype)
        if obs.ndim == 3:
            obs = obs[None]
        if obs.shape[1:] != self.obs_shape:
            raise ValueError(f"observation shape {obs.shape[1:]} does not match network input {self.obs_shape}")
        return np.ascontiguousarray(obs.transpose(0, 2, 3, 1))

    def actor_logits(self, obs) -> np.ndarray:
        return self.actor.forward(self._prep(obs))

    def actor_forward(self, obs) -> ActionDistribution:
        return ActionDistribution.from_logits(self.actor_logits(obs))

    def critic_forward(self, obs) -> np.ndarray:
        raw = self.critic.forward(self._prep(obs))[:, 0].astype(np.float64)
        return raw * self.value_std + self.value_mean

    def rescale_values(self, mean: float, std: float) -> None:
        """Change the value normalization while keeping critic outputs unchanged."""
        head = self.critic.layers[-1]
        head.W *= self.value_std / std
        head.b[...] = (head.b * self.value_std + self.value_mean - mean) / std
        self.value_mean, self.value_std = float(mean), float(std)

    def act(self, obs, rng=None, greedy: bool = False):
        dist = self.actor_forward(obs)
        return sample_action(dist, rng, greedy)

    def networks(self):
        return (self.actor, self.critic)

    def parameters(self) -> List[np.ndarray]:
        return self.actor.parameters() + self.critic.parameters()

    def param_count(self) -> int:
        return self.actor.param_count() + self.critic.param_count()

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.size != self.param_count():
            raise ValueError(f"expected {self.param_count()} parameters, got {flat.size}")
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def copy(self) -> "ActorCritic":
        clone = ActorCritic(self.arch, seed=0, dtype=self.dtype)
        clone.set_flat(self.get_flat())
        clone.value_mean, clone.value_std = self.value_mean, self.value_std
        return clone

    def digest(self) -> str:
        return hashlib.sha256(self.get_flat().astype("<f4").tobytes()).hexdigest()


def param_count(policy: ActorCritic) -> int:
    return policy.param_count()


def count_parameters(arch: Architecture, head: int = NUM_ACTIONS) -> int:
    """Closed-form size of one network with an output head of width ``head``."""
    k2 = arch.kernel * arch.kernel
    conv = (arch.in_channels * k2 + 1) * arch.conv1 + (arch.conv1 * k2 + 1) * arch.conv2
    dense = (arch.flat_size + 1) * arch.hidden1 + (arch.hidden1 + 1) * arch.hidden2
    return conv + dense + (arch.hidden2 + 1) * head


MAGIC = b"UAVPOL"
FORMAT_VERSION = 1


def serialize(policy: ActorCritic, kind: str = "decentralized") -> bytes:
    """``MAGIC | u16 version | u32 len | descriptor JSON | f32 LE params | sha256``."""
    descriptor = json.dumps({"kind": kind, "architecture": policy.arch.to_dict(),
                             "param_count": policy.param_count(),
                             "value_norm": [policy.value_mean, policy.value_std]}, sort_keys=True).encode()
    blob = policy.get_flat().astype("<f4").tobytes()
    body = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(descriptor)) + descriptor + blob
    return body + hashlib.sha256(body).digest()


class SerializationError(ValueError):
    pass


def deserialize(data: bytes) -> ActorCritic:
    if len(data) < len(MAGIC) + 6 + 32 or not data.startswith(MAGIC):
        raise SerializationError("not a policy blob")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise SerializationError("policy blob digest mismatch")
    version, dlen = struct.unpack_from("<HI", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise SerializationError(f"unsupported format version {version}")
    start = len(MAGIC) + 6
    descriptor = json.loads(body[start:start + dlen])
    arch = Architecture(**descriptor["architecture"])
    policy = ActorCritic(arch, seed=0)
    params = np.frombuffer(body[start + dlen:], dtype="<f4")
    policy.set_flat(params)
    policy.value_mean, policy.value_std = descriptor.get("value_norm", [0.0, 1.0])
    return policy
