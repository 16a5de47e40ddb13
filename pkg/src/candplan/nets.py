"""Small numpy networks with hand-written backpropagation.

Every network keeps its parameters in a ``dict[str, ndarray]`` and exposes
``forward`` (returning a cache) and ``backward`` (returning parameter
gradients plus the gradient w.r.t. its differentiable input). Arrays are
updated in place by the optimizer, so references stay valid.
"""
from __future__ import annotations

import math

import numpy as np

from .exceptions import ContractViolation

POS_SCALE = 10.0
TEMB_DIM = 16
N_SCORES = 6  # im, nc, dac, ep, ttc, comf


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def silu(x):
    return x * sigmoid(x)


def silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


HEADING_LIMIT = float(np.nextafter(math.pi, 0.0))


def squash_heading(logits):
    """``pi * tanh(logits)`` kept strictly inside (-pi, pi) even when tanh saturates."""
    return np.clip(math.pi * np.tanh(logits), -HEADING_LIMIT, HEADING_LIMIT)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=float)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def timestep_embedding(t, dim: int = TEMB_DIM) -> np.ndarray:
    """Sinusoidal embedding ``[sin(t w_k), cos(t w_k)]`` with geometric frequencies."""
    half = dim // 2
    freqs = np.exp(-math.log(1000.0) * np.arange(half) / half)
    arg = float(t) * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)])


class MLP:
    """Dense stack with SiLU between layers.

    ``act_last`` also applies SiLU after the final layer (used for shared
    trunks); ``zero_last`` zero-initializes the final layer.
    """

    def __init__(self, sizes, rng: np.random.Generator, zero_last=False, act_last=False):
        self.sizes = list(sizes)
        self.act_last = act_last
        self.params: dict[str, np.ndarray] = {}
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            if last and zero_last:
                W = np.zeros((a, b))
            else:
                W = rng.standard_normal((a, b)) * math.sqrt(1.0 / a)
            self.params[f"W{i}"] = W
            self.params[f"b{i}"] = np.zeros(b)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ContractViolation(f"input width {x.shape[-1]} != {self.sizes[0]}")
        cache = []
        h = x
        for i in range(self.n_layers):
            pre = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            act = i < self.n_layers - 1 or self.act_last
            cache.append((h, pre))
            h = silu(pre) if act else pre
        return h, cache

    def backward(self, cache, dy):
        grads = {}
        g = np.asarray(dy, dtype=float)
        for i in reversed(range(self.n_layers)):
            h, pre = cache[i]
            if i < self.n_layers - 1 or self.act_last:
                g = g * silu_grad(pre)
            grads[f"W{i}"] = h.reshape(-1, h.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[f"b{i}"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        return grads, g


def _broadcast_rows(z, rows: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return np.broadcast_to(z, (rows, z.size))
    if z.shape[0] != rows:
        raise ContractViolation(f"expected {rows} conditioning rows, got {z.shape[0]}")
    return z


class DenoiserNet:
    """Anchor-refinement network: shared trunk with a position head and a heading head.

    Input is ``concat(p_t / 10, z, temb(t))``; the position head emits
    ``delta_p`` in meters (scaled by 10), the heading head emits logits that
    are squashed to ``pi * tanh(.)``.
    """

    def __init__(self, n: int, d_z: int, hidden: int = 128, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n, self.d_z = n, d_z
        self.trunk = MLP([2 * n + d_z + TEMB_DIM, hidden, hidden], rng, act_last=True)
        self.delta_head = MLP([hidden, 2 * n], rng, zero_last=True)
        self.heading_head = MLP([hidden, n], rng, zero_last=True)

    def modules(self):
        return {"trunk": self.trunk, "delta": self.delta_head, "heading": self.heading_head}

    def _inputs(self, p_t, z, t):
        p_t = np.asarray(p_t, dtype=float)
        single = p_t.ndim == 2
        p = p_t[None] if single else p_t
        if p.shape[1:] != (self.n, 2):
            raise ContractViolation(f"p_t must be (..., {self.n}, 2), got {p_t.shape}")
        B = p.shape[0]
        zz = _broadcast_rows(z, B)
        if zz.shape[1] != self.d_z:
            raise ContractViolation(f"z must have {self.d_z} features, got {zz.shape[1]}")
        temb = np.broadcast_to(timestep_embedding(t), (B, TEMB_DIM))
        return np.concatenate([p.reshape(B, -1) / POS_SCALE, zz, temb], axis=1), single

    def forward(self, p_t, z, t):
        x, single = self._inputs(p_t, z, t)
        h, c_trunk = self.trunk.forward(x)
        d, c_delta = self.delta_head.forward(h)
        hl, c_head = self.heading_head.forward(h)
        delta = POS_SCALE * d.reshape(-1, self.n, 2)
        cache = (c_trunk, c_delta, c_head, single)
        if single:
            return delta[0], hl[0], cache
        return delta, hl, cache

    def backward(self, cache, d_delta=None, d_heading_logits=None):
        """Gradients for ``delta`` and heading-logit cotangents; returns (grads, d_p_t)."""
        c_trunk, c_delta, c_head, single = cache
        B = c_trunk[0][0].shape[0]
        hidden = self.trunk.sizes[-1]
        grads = {}
        dh = np.zeros((B, hidden))
        if d_delta is None:
            d_delta = np.zeros((B, self.n, 2))
        if d_heading_logits is None:
            d_heading_logits = np.zeros((B, self.n))
        g, dh_d = self.delta_head.backward(c_delta, POS_SCALE * np.asarray(d_delta).reshape(B, -1))
        grads.update({f"delta.{k}": v for k, v in g.items()})
        dh += dh_d
        g, dh_h = self.heading_head.backward(c_head, np.asarray(d_heading_logits).reshape(B, -1))
        grads.update({f"heading.{k}": v for k, v in g.items()})
        dh += dh_h
        g, dx = self.trunk.backward(c_trunk, dh)
        grads.update({f"trunk.{k}": v for k, v in g.items()})
        d_p = dx[:, :2 * self.n].reshape(B, self.n, 2) / POS_SCALE
        return grads, (d_p[0] if single else d_p)

    def predict_refinement(self, p_t, z, t) -> np.ndarray:
        return self.forward(p_t, z, t)[0]

    def predict_heading(self, p_t, z, t) -> np.ndarray:
        return squash_heading(self.forward(p_t, z, t)[1])


class RegressionRefiner:
    """Single-pass refiner: ``delta_p`` from the clean anchor, no noise and no loop.

    Reuses the denoiser network evaluated at ``t = 0``.
    """

    def __init__(self, net: DenoiserNet):
        self.net = net

    def refine(self, anchors, z):
        delta, hl, _ = self.net.forward(anchors, z, 0)
        return np.asarray(anchors) + delta, squash_heading(hl)


def candidate_features(cands) -> np.ndarray:
    c = np.asarray(cands, dtype=float)
    feats = np.concatenate([c[..., :2] / POS_SCALE, c[..., 2:3]], axis=-1)
    return feats.reshape(c.shape[0], -1)


class ScorerNet:
    """Scene-conditioned candidate scorer producing 6 logits per candidate."""

    def __init__(self, n: int, d_z: int, hidden: int = 128, rng=None):
        rng = np.random.default_rng(1) if rng is None else rng
        self.n, self.d_z = n, d_z
        self.mlp = MLP([3 * n + 2 * d_z, hidden, hidden, N_SCORES], rng)

    def modules(self):
        return {"mlp": self.mlp}

    def forward(self, cands, z, z_rollout):
        cands = np.asarray(cands, dtype=float)
        if cands.ndim != 3 or cands.shape[1:] != (self.n, 3):
            raise ContractViolation(f"candidates must be (M, {self.n}, 3), got {cands.shape}")
        M = cands.shape[0]
        x = np.concatenate([candidate_features(cands), _broadcast_rows(z, M),
                            np.asarray(z_rollout, dtype=float).reshape(M, self.d_z)], axis=1)
        logits, cache = self.mlp.forward(x)
        return logits, cache

    def backward(self, cache, d_logits):
        g, dx = self.mlp.backward(cache, d_logits)
        return {f"mlp.{k}": v for k, v in g.items()}, dx[:, -self.d_z:]


def scores_from_logits(logits) -> np.ndarray:
    """Imitation column as a softmax over candidates, the rest as sigmoids."""
    logits = np.asarray(logits, dtype=float)
    out = np.empty_like(logits)
    out[:, 0] = softmax(logits[:, 0])
    out[:, 1:] = sigmoid(logits[:, 1:])
    return out


class WorldModel:
    """Latent rollout ``z~ = f(z, traj)`` plus occupancy decoders.

    ``decoder`` maps a rolled-out latent to future occupancy logits; the
    ``bev`` and ``agent`` heads map the current features to current
    occupancy and agent-only logits.
    """

    def __init__(self, n: int, d_z: int, grid_size: int = 16, hidden: int = 64, rng=None):
        rng = np.random.default_rng(2) if rng is None else rng
        self.n, self.d_z, self.grid_size = n, d_z, grid_size
        cells = grid_size * grid_size
        self.rollout_net = MLP([d_z + 3 * n, hidden, d_z], rng)
        self.decoder = MLP([d_z, cells], rng)
        self.bev_head = MLP([d_z, cells], rng)
        self.agent_head = MLP([d_z, cells], rng)

    def modules(self):
        return {"rollout": self.rollout_net, "decoder": self.decoder,
                "bev": self.bev_head, "agent": self.agent_head}

    def rollout_forward(self, z, trajs):
        trajs = np.asarray(trajs, dtype=float)
        if trajs.ndim == 2:
            trajs = trajs[None]
        M = trajs.shape[0]
        x = np.concatenate([_broadcast_rows(z, M), candidate_features(trajs)], axis=1)
        return self.rollout_net.forward(x)

    def rollout_backward(self, cache, d_latent):
        g, _ = self.rollout_net.backward(cache, d_latent)
        return {f"rollout.{k}": v for k, v in g.items()}

    def rollout(self, z, traj) -> np.ndarray:
        out, _ = self.rollout_forward(z, traj)
        return out[0] if np.asarray(traj).ndim == 2 else out

    def decode_grid(self, latent) -> np.ndarray:
        """Per-cell occupancy probabilities, shape ``(..., G, G)``."""
        logits, _ = self.decoder.forward(np.atleast_2d(latent))
        probs = sigmoid(logits).reshape(-1, self.grid_size, self.grid_size)
        return probs[0] if np.asarray(latent).ndim == 1 else probs


class PlannerModel:
    """All trainable pieces: denoiser, scorer, world model and noise-adapter log-gains."""

    def __init__(self, n: int, d_z: int, hidden: int = 128, grid_size: int = 16,
                 wm_hidden: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.n, self.d_z, self.hidden, self.grid_size = n, d_z, hidden, grid_size
        self.denoiser = DenoiserNet(n, d_z, hidden, rng)
        self.scorer = ScorerNet(n, d_z, hidden, rng)
        self.world = WorldModel(n, d_z, grid_size, wm_hidden, rng)
        self.hatna_gain_log = np.zeros(n)

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in (("denoiser", self.denoiser), ("scorer", self.scorer), ("world", self.world)):
            for mname, mod in net.modules().items():
                for k, v in mod.params.items():
                    out[f"{prefix}.{mname}.{k}"] = v
        out["hatna.gain_log"] = self.hatna_gain_log
        return out

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(own) != set(params):
            raise ContractViolation("parameter names do not match the model layout")
        for k, v in params.items():
            if own[k].shape != np.shape(v):
                raise ContractViolation(f"{k}: shape {np.shape(v)} != {own[k].shape}")
            own[k][...] = v

    def score_candidates(self, cands, z) -> np.ndarray:
        """Score vectors ``(M, 6)`` for a candidate batch, whatever their source."""
        z_roll, _ = self.world.rollout_forward(z, cands)
        logits, _ = self.scorer.forward(cands, z, z_roll)
        return scores_from_logits(logits)
