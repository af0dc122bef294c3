"""Q-network, replay memory and the TD-loss update, in plain numpy (float64).

Layer chain for a batch of B states::

    frames (B, 3, 3, 20) -> conv1 2x2 stride (1, 2), 16 filters, ReLU -> (B, 16, 2, 10)
                         -> conv2 2x2 stride (1, 2), 32 filters, ReLU -> (B, 32, 1, 5)
                         -> flatten 160, concat 3 speed errors -> 163
                         -> fc1 500 ReLU -> fc2 100 ReLU -> head 4 (linear)
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .config import DqnConfig

N_ACTIONS = 4
IN_SHAPE = (3, 3, 20)

PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b",
               "fc2_w", "fc2_b", "head_w", "head_b")
PARAM_SHAPES = {
    "conv1_w": (16, 3, 2, 2), "conv1_b": (16,),
    "conv2_w": (32, 16, 2, 2), "conv2_b": (32,),
    "fc1_w": (500, 163), "fc1_b": (500,),
    "fc2_w": (100, 500), "fc2_b": (100,),
    "head_w": (4, 100), "head_b": (4,),
}


def _conv_out(h: int, w: int) -> tuple:
    return h - 1, (w - 2) // 2 + 1


def _shape_chain() -> list:
    chain = [IN_SHAPE]
    h, w = _conv_out(*IN_SHAPE[1:])
    chain.append((16, h, w))
    h, w = _conv_out(h, w)
    chain.append((32, h, w))
    flat = 32 * h * w
    chain += [(flat,), (flat + 3,), (500,), (100,), (N_ACTIONS,)]
    return chain


SHAPE_CHAIN = _shape_chain()
assert SHAPE_CHAIN == [(3, 3, 20), (16, 2, 10), (32, 1, 5), (160,), (163,), (500,), (100,), (4,)]
assert PARAM_SHAPES["fc1_w"][1] == SHAPE_CHAIN[4][0]


def _gather_matrix(channels: int, h: int, w: int) -> np.ndarray:
    """0/1 matrix taking a flattened (C, H, W) input to 2x2, stride-(1, 2) patches.

    Rows are ordered (out_row, out_col, channel, di, dj), so ``x @ G.T``
    reshaped to (oh, ow, C*4) lines up with ``weights.reshape(F, -1)``.
    """
    oh, ow = _conv_out(h, w)
    g = np.zeros((oh * ow * channels * 4, channels * h * w))
    r = 0
    for i in range(oh):
        for j in range(ow):
            for c in range(channels):
                for di in range(2):
                    for dj in range(2):
                        g[r, (c * h + i + di) * w + 2 * j + dj] = 1.0
                        r += 1
    return g


# conv1 reads the frames as (3, 3, 20); conv2 reads conv1's maps as (16, 2, 10)
_G1 = _gather_matrix(*IN_SHAPE)
_G2 = _gather_matrix(*SHAPE_CHAIN[1])


class QNetwork:
    """Online or target Q-function; ``params`` maps names in ``PARAM_ORDER`` to arrays."""

    def __init__(self, params: Optional[dict] = None, rng: Optional[np.random.Generator] = None):
        if params is None:
            params = init_params(rng if rng is not None else np.random.default_rng(0))
        for name in PARAM_ORDER:
            if params[name].shape != PARAM_SHAPES[name]:
                raise ValueError(f"{name}: expected {PARAM_SHAPES[name]}, got {params[name].shape}")
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_ORDER}

    @classmethod
    def zeros(cls) -> "QNetwork":
        return cls({k: np.zeros(s) for k, s in PARAM_SHAPES.items()})

    def copy(self) -> "QNetwork":
        return QNetwork({k: v.copy() for k, v in self.params.items()})

    def forward(self, grids, dv, cache: bool = False):
        grids = np.asarray(grids)
        dv = np.asarray(dv, dtype=np.float64)
        single = grids.ndim == 3
        if single:
            grids, dv = grids[None], dv[None]
        if grids.shape[1:] != IN_SHAPE or dv.shape != (grids.shape[0], 3):
            raise ValueError(f"malformed state: frames {grids.shape}, speed errors {dv.shape}")
        p = self.params
        x = grids.astype(np.float64)
        b = x.shape[0]
        cols1 = (x.reshape(b, -1) @ _G1.T).reshape(b, 20, 12)
        z1 = cols1 @ p["conv1_w"].reshape(16, -1).T + p["conv1_b"]      # (B, 2*10, 16)
        a1 = np.maximum(z1, 0.0).transpose(0, 2, 1).reshape(b, -1)      # (B, 16*2*10)
        cols2 = (a1 @ _G2.T).reshape(b, 5, 64)
        z2 = cols2 @ p["conv2_w"].reshape(32, -1).T + p["conv2_b"]      # (B, 1*5, 32)
        a2 = np.maximum(z2, 0.0).transpose(0, 2, 1)                      # (B, 32, 5)
        h0 = np.concatenate([a2.reshape(b, -1), dv], axis=1)            # (B, 163)
        z3 = h0 @ p["fc1_w"].T + p["fc1_b"]
        h1 = np.maximum(z3, 0.0)
        z4 = h1 @ p["fc2_w"].T + p["fc2_b"]
        h2 = np.maximum(z4, 0.0)
        q = h2 @ p["head_w"].T + p["head_b"]
        if cache:
            # conv intermediates in (B, C, H, W) / (B, H, W, C) layout
            return q, (cols1.reshape(b, 2, 10, 12), z1.reshape(b, 2, 10, 16),
                       a1.reshape(b, 16, 2, 10), cols2.reshape(b, 1, 5, 64),
                       z2.reshape(b, 1, 5, 32), h0, z3, h1, z4, h2)
        return q[0] if single else q

    def backward(self, dq: np.ndarray, memory) -> dict:
        """Parameter gradients given dLoss/dQ of shape (B, 4)."""
        cols1, z1, a1, cols2, z2, h0, z3, h1, z4, h2 = memory
        p = self.params
        g = {}
        g["head_w"] = dq.T @ h2
        g["head_b"] = dq.sum(0)
        dz4 = (dq @ p["head_w"]) * (z4 > 0)
        g["fc2_w"] = dz4.T @ h1
        g["fc2_b"] = dz4.sum(0)
        dz3 = (dz4 @ p["fc2_w"]) * (z3 > 0)
        g["fc1_w"] = dz3.T @ h0
        g["fc1_b"] = dz3.sum(0)
        dh0 = dz3 @ p["fc1_w"]
        b = dq.shape[0]
        z1, z2 = z1.reshape(b, 20, 16), z2.reshape(b, 5, 32)
        dz2 = dh0[:, :160].reshape(b, 32, 5).transpose(0, 2, 1) * (z2 > 0)   # (B, 5, 32)
        flat2 = dz2.reshape(-1, 32)
        g["conv2_w"] = (flat2.T @ cols2.reshape(-1, 64)).reshape(PARAM_SHAPES["conv2_w"])
        g["conv2_b"] = flat2.sum(0)
        dcols2 = (dz2 @ p["conv2_w"].reshape(32, -1)).reshape(b, -1)
        da1 = (dcols2 @ _G2).reshape(b, 16, 20)
        dz1 = da1.transpose(0, 2, 1) * (z1 > 0)                            # (B, 20, 16)
        flat1 = dz1.reshape(-1, 16)
        g["conv1_w"] = (flat1.T @ cols1.reshape(-1, 12)).reshape(PARAM_SHAPES["conv1_w"])
        g["conv1_b"] = flat1.sum(0)
        return g


def init_params(rng: np.random.Generator) -> dict:
    """Uniform weights in +-1/sqrt(fan_in), zero biases."""
    params = {}
    for name in PARAM_ORDER:
        shape = PARAM_SHAPES[name]
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def forward(net: QNetwork, state) -> np.ndarray:
    """Q-values for one ``AgentState`` (or anything with ``snapshots``/``dv_history``)."""
    return net.forward(state.snapshots, state.dv_history)


def select_actions(net: QNetwork, grids, dv, eps_exploit: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Batched epsilon-greedy choice; greedy ties go to the lowest action index."""
    n = len(grids)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    greedy = np.argmax(net.forward(grids, dv), axis=1)
    if eps_exploit >= 1.0:
        return greedy
    explore = rng.random(n) >= eps_exploit
    random_a = rng.integers(0, N_ACTIONS, size=n)
    return np.where(explore, random_a, greedy)


def select_action(net: QNetwork, state, eps_exploit: float, rng: np.random.Generator) -> int:
    a = select_actions(net, state.snapshots[None], np.asarray(state.dv_history)[None],
                       eps_exploit, rng)
    return int(a[0])


class Batch(NamedTuple):
    grids: np.ndarray
    dv: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_grids: np.ndarray
    next_dv: np.ndarray


@dataclass
class Experience:
    s: object       # AgentState
    a: int
    r: float
    s_next: object  # AgentState


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int = 2000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.grids = np.zeros((capacity,) + IN_SHAPE, dtype=np.uint8)
        self.dv = np.zeros((capacity, 3))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_grids = np.zeros((capacity,) + IN_SHAPE, dtype=np.uint8)
        self.next_dv = np.zeros((capacity, 3))
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def push(self, exp: Experience) -> None:
        if not np.isfinite(exp.r):
            raise ValueError("reward must be finite")
        self.push_batch(exp.s.snapshots[None], np.asarray(exp.s.dv_history)[None],
                        np.array([int(exp.a)]), np.array([float(exp.r)]),
                        exp.s_next.snapshots[None], np.asarray(exp.s_next.dv_history)[None])

    def push_batch(self, grids, dv, actions, rewards, next_grids, next_dv) -> None:
        n = len(actions)
        if n == 0:
            return
        if n > self.capacity:
            # only the newest ``capacity`` items would survive anyway
            sl = slice(n - self.capacity, n)
            grids, dv, actions, rewards = grids[sl], dv[sl], actions[sl], rewards[sl]
            next_grids, next_dv = next_grids[sl], next_dv[sl]
            self.head = (self.head + n - self.capacity) % self.capacity
            n = self.capacity
        pos = (self.head + np.arange(n)) % self.capacity
        self.grids[pos] = grids
        self.dv[pos] = dv
        self.actions[pos] = actions
        self.rewards[pos] = rewards
        self.next_grids[pos] = next_grids
        self.next_dv[pos] = next_dv
        self.head = (self.head + n) % self.capacity
        self.size = min(self.capacity, self.size + n)

    def take(self, idx: np.ndarray) -> Batch:
        return Batch(self.grids[idx], self.dv[idx], self.actions[idx], self.rewards[idx],
                     self.next_grids[idx], self.next_dv[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draws with replacement over the stored items.

        Any non-empty buffer can fill a batch since draws repeat; training
        waits for ``warmup`` items anyway.
        """
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        return self.take(rng.integers(0, self.size, size=batch_size))


def sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(batch_size, rng)


def td_loss(online: QNetwork, target: QNetwork, batch: Batch, gamma: float):
    """Mean squared TD error and its gradient w.r.t. the online parameters.

    The bootstrapped target is computed from ``target`` and held constant.
    """
    n = len(batch.actions)
    if n == 0:
        raise ValueError("empty batch")
    q_next = target.forward(batch.next_grids, batch.next_dv)
    y = batch.rewards + gamma * q_next.max(axis=1)
    q, memory = online.forward(batch.grids, batch.dv, cache=True)
    rows = np.arange(n)
    err = y - q[rows, batch.actions]
    loss = float(np.mean(err ** 2))
    dq = np.zeros_like(q)
    dq[rows, batch.actions] = -2.0 * err / n
    return loss, online.backward(dq, memory)


def sgd_step(net: QNetwork, grads: dict, lr: float) -> QNetwork:
    """In-place ``theta -= lr * grad``; returns ``net``."""
    for name in PARAM_ORDER:
        g = np.asarray(grads[name])
        if g.shape != net.params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {net.params[name].shape}")
    for name in PARAM_ORDER:
        net.params[name] -= lr * grads[name]
    return net


def clip_gradients(gradients: dict, max_norm: float) -> dict:
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        return gradients
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in gradients.values()))
    if norm <= max_norm:
        return gradients
    scale = max_norm / norm
    return {k: g * scale for k, g in gradients.items()}


def sync_target(online: QNetwork, target: QNetwork) -> QNetwork:
    for name in PARAM_ORDER:
        target.params[name] = online.params[name].copy()
    return target


# -- checkpoint file ---------------------------------------------------------
#
# b"CLDQN\0" | u32 version | u32 header length | UTF-8 JSON header | payload
# The header records the dqn config and every layer name and shape; the
# payload is each array in PARAM_ORDER as little-endian float64, C order.

MAGIC = b"CLDQN\0"
VERSION = 1


def save_checkpoint(net: QNetwork, path, config: Optional[DqnConfig] = None,
                    extra: Optional[dict] = None) -> None:
    header = {
        "format": "cooplane-qnetwork",
        "version": VERSION,
        "dqn_config": dataclasses.asdict(config) if config is not None else None,
        "layers": [[name, list(PARAM_SHAPES[name])] for name in PARAM_ORDER],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(net.params[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(QNetwork, header dict)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a Q-network checkpoint")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = len(MAGIC) + 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    params = {}
    for name, shape in header["layers"]:
        shape = tuple(shape)
        if name not in PARAM_SHAPES or PARAM_SHAPES[name] != shape:
            raise ValueError(f"{path}: layer {name} has shape {shape}, expected "
                             f"{PARAM_SHAPES.get(name)}")
        count = int(np.prod(shape))
        params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after parameters")
    return QNetwork(params), header
