"""Stiffness policy: observation construction, sinusoidal embeddings, and a
discrete-bin stochastic policy with a value head.

The network is a fixed topology (4-layer tanh feature extractor shared by a
5-layer policy head and a 5-layer value head) with reverse-mode gradients
implemented by hand; no learning framework is used. Actions are per-axis
categorical picks over stiffness bins (multiples of the bin step).
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .geometry import quat_canonical, quat_conj, quat_mul

EMBED_DIM = 8
CHECKPOINT_VERSION = 1


def sinusoidal_embedding(value: float, dim: int = EMBED_DIM) -> np.ndarray:
    """Interleaved (sin, cos) pairs at frequencies 1 / 10000^(2i/dim)."""
    if not np.isfinite(value):
        raise ValueError("embedding input must be finite")
    out = np.empty(dim)
    for i in range(dim // 2):
        arg = value / (10000.0 ** (2.0 * i / dim))
        out[2 * i] = np.sin(arg)
        out[2 * i + 1] = np.cos(arg)
    return out


@dataclasses.dataclass(frozen=True)
class Observation:
    """Fixed-layout policy input; flattens to length 7*3 + 2n + 6*3 + 16."""

    dx_left: np.ndarray  # EE pose change over one tick (pos diff + rel quat)
    dx_right: np.ndarray
    object_pose: np.ndarray  # 7
    q_left: np.ndarray
    q_right: np.ndarray
    wrench_left: np.ndarray  # 6
    wrench_right: np.ndarray
    k_prev: np.ndarray  # 6
    t_embed: np.ndarray  # 8
    m_embed: np.ndarray  # 8

    _FIELDS = (
        ("dx_left", 7), ("dx_right", 7), ("object_pose", 7),
        ("q_left", None), ("q_right", None),
        ("wrench_left", 6), ("wrench_right", 6), ("k_prev", 6),
        ("t_embed", EMBED_DIM), ("m_embed", EMBED_DIM),
    )

    def __post_init__(self):
        for name, width in self._FIELDS:
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if width is not None and v.shape[0] != width:
                raise ValueError(f"{name} must have length {width}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, v)

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, name) for name, _ in self._FIELDS])

    @classmethod
    def unflatten(cls, vec: np.ndarray, n_joints: int) -> "Observation":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        widths = [7, 7, 7, n_joints, n_joints, 6, 6, 6, EMBED_DIM, EMBED_DIM]
        if vec.shape[0] != sum(widths):
            raise ValueError("flat observation has wrong length")
        parts = np.split(vec, np.cumsum(widths)[:-1])
        return cls(*parts)

    @staticmethod
    def length(n_joints: int) -> int:
        return 7 * 3 + 2 * n_joints + 6 * 3 + 2 * EMBED_DIM


def relative_pose_7(prev_pose, pose) -> np.ndarray:
    """Position difference plus relative quaternion (current w.r.t. previous)."""
    dq = quat_canonical(quat_mul(quat_conj(prev_pose.orientation), pose.orientation))
    return np.concatenate([pose.position - prev_pose.position, dq])


def build_observation(
    ee_left, ee_right, prev_ee_left, prev_ee_right, object_pose,
    q_left, q_right, wrench_left, wrench_right, k_prev, tick: int, mass: float,
) -> Observation:
    return Observation(
        dx_left=relative_pose_7(prev_ee_left, ee_left),
        dx_right=relative_pose_7(prev_ee_right, ee_right),
        object_pose=object_pose.as_vector(),
        q_left=q_left,
        q_right=q_right,
        wrench_left=wrench_left,
        wrench_right=wrench_right,
        k_prev=k_prev,
        t_embed=sinusoidal_embedding(float(tick)),
        m_embed=sinusoidal_embedding(float(mass)),
    )


# ---------------------------------------------------------------------------
# stiffness bins
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class BinSet:
    """Per-axis stiffness bins: multiples of `step` spanning [lo, hi]."""

    translational: tuple = (20.0, 600.0, 20.0)  # lo, hi, step
    rotational: tuple = (20.0, 400.0, 20.0)
    per_arm: bool = False

    def axis_values(self) -> list:
        def mk(lo, hi, step):
            vals = np.arange(lo, hi + 0.5 * step, step)
            if np.any(np.abs(np.round(vals / step) * step - vals) > 1e-9):
                raise ValueError("bin bounds must be multiples of the step")
            return vals

        t = mk(*self.translational)
        r = mk(*self.rotational)
        per_k = [t, t, t, r, r, r]
        return per_k * 2 if self.per_arm else per_k

    @property
    def n_heads(self) -> int:
        return 12 if self.per_arm else 6


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

_EXTRACTOR_LAYERS = 4
_HEAD_LAYERS = 5


@dataclasses.dataclass
class PolicyParams:
    weights: list  # list of (W, b) tuples, extractor + policy head + value head
    n_joints: int
    hidden: int
    bins: BinSet
    obs_dim: int
    head_sizes: tuple

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for W, b in self.weights for a in (W, b)])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for W, b in self.weights:
            W[:] = vec[i : i + W.size].reshape(W.shape)
            i += W.size
            b[:] = vec[i : i + b.size]
            i += b.size

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            weights=[(W.copy(), b.copy()) for W, b in self.weights],
            n_joints=self.n_joints, hidden=self.hidden, bins=self.bins,
            obs_dim=self.obs_dim, head_sizes=self.head_sizes,
        )


def init_params(n_joints: int, bins: BinSet = None, hidden: int = 128, seed: int = 0) -> PolicyParams:
    bins = bins if bins is not None else BinSet()
    obs_dim = Observation.length(n_joints)
    head_sizes = tuple(len(v) for v in bins.axis_values())
    n_logits = sum(head_sizes)
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out, scale=1.0):
        W = rng.normal(scale=scale / np.sqrt(fan_in), size=(fan_in, fan_out))
        return W, np.zeros(fan_out)

    weights = []
    d = obs_dim
    for _ in range(_EXTRACTOR_LAYERS):
        weights.append(layer(d, hidden))
        d = hidden
    for _ in range(_HEAD_LAYERS - 1):
        weights.append(layer(hidden, hidden))
    weights.append(layer(hidden, n_logits, scale=0.01))  # near-uniform start
    for _ in range(_HEAD_LAYERS - 1):
        weights.append(layer(hidden, hidden))
    weights.append(layer(hidden, 1))
    return PolicyParams(weights=weights, n_joints=n_joints, hidden=hidden,
                        bins=bins, obs_dim=obs_dim, head_sizes=head_sizes)


def _forward_chain(layers, z, tanh_last=False, cache=None):
    for idx, (W, b) in enumerate(layers):
        a = z @ W + b
        last = idx == len(layers) - 1
        out = a if (last and not tanh_last) else np.tanh(a)
        if cache is not None:
            cache.append((z, out, last and not tanh_last))
        z = out
    return z


def forward(params: PolicyParams, obs_batch: np.ndarray, cache=None):
    """Batched forward pass: returns (logits (B, L), value (B,))."""
    obs = np.atleast_2d(np.asarray(obs_batch, dtype=float))
    ext = params.weights[:_EXTRACTOR_LAYERS]
    pol = params.weights[_EXTRACTOR_LAYERS : _EXTRACTOR_LAYERS + _HEAD_LAYERS]
    val = params.weights[_EXTRACTOR_LAYERS + _HEAD_LAYERS :]
    caches = {"ext": [], "pol": [], "val": []} if cache is not None else None
    feat = _forward_chain(ext, obs, tanh_last=True,
                          cache=None if caches is None else caches["ext"])
    logits = _forward_chain(pol, feat, cache=None if caches is None else caches["pol"])
    value = _forward_chain(val, feat, cache=None if caches is None else caches["val"])[:, 0]
    if cache is not None:
        cache.update(caches)
    return logits, value


def _backward_chain(layers, cache, dz_out):
    grads = []
    dz = dz_out
    for (W, b), (z_in, z_out, is_linear) in zip(reversed(layers), reversed(cache)):
        da = dz if is_linear else dz * (1.0 - z_out * z_out)
        grads.append((z_in.T @ da, da.sum(axis=0)))
        dz = da @ W.T
    return list(reversed(grads)), dz


def backward(params: PolicyParams, cache, dlogits, dvalue):
    """Gradients of a scalar loss w.r.t. every weight, given head gradients."""
    ext = params.weights[:_EXTRACTOR_LAYERS]
    pol = params.weights[_EXTRACTOR_LAYERS : _EXTRACTOR_LAYERS + _HEAD_LAYERS]
    val = params.weights[_EXTRACTOR_LAYERS + _HEAD_LAYERS :]
    g_pol, dfeat_pol = _backward_chain(pol, cache["pol"], dlogits)
    g_val, dfeat_val = _backward_chain(val, cache["val"], dvalue[:, None])
    g_ext, _ = _backward_chain(ext, cache["ext"], dfeat_pol + dfeat_val)
    return g_ext + g_pol + g_val


# ---------------------------------------------------------------------------
# categorical heads
# ---------------------------------------------------------------------------

def head_slices(params: PolicyParams):
    out = []
    start = 0
    for size in params.head_sizes:
        out.append(slice(start, start + size))
        start += size
    return out


def log_softmax(x):
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def head_distributions(params: PolicyParams, logits: np.ndarray) -> list:
    """Per-head probability vectors (each sums to 1)."""
    return [np.exp(log_softmax(logits[..., s])) for s in head_slices(params)]


def policy_forward(params: PolicyParams, obs: Observation):
    """Single observation -> (list of 6 categorical distributions, value)."""
    logits, value = forward(params, obs.flatten()[None, :])
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite policy activations")
    dists = [d[0] for d in head_distributions(params, logits)]
    return dists, float(value[0])


def log_prob_entropy(params: PolicyParams, logits: np.ndarray, actions: np.ndarray):
    """Joint log-prob of the multi-head action and total entropy, per sample."""
    B = logits.shape[0]
    lp = np.zeros(B)
    ent = np.zeros(B)
    for h, s in enumerate(head_slices(params)):
        ls = log_softmax(logits[:, s])
        lp += ls[np.arange(B), actions[:, h]]
        p = np.exp(ls)
        ent += -(p * ls).sum(axis=1)
    return lp, ent


def sample_actions(params: PolicyParams, logits: np.ndarray, rng) -> np.ndarray:
    B = logits.shape[0]
    acts = np.empty((B, len(params.head_sizes)), dtype=np.int64)
    for h, s in enumerate(head_slices(params)):
        p = np.exp(log_softmax(logits[:, s]))
        cum = np.cumsum(p, axis=1)
        u = rng.random(size=(B, 1))
        acts[:, h] = (u > cum[:, :-1]).sum(axis=1) if p.shape[1] > 1 else 0
        # exact sampling: first index where cumulative prob exceeds u
        acts[:, h] = np.argmax(cum >= u, axis=1)
    return acts


def greedy_actions(params: PolicyParams, logits: np.ndarray) -> np.ndarray:
    return np.stack(
        [np.argmax(logits[:, s], axis=1) for s in head_slices(params)], axis=1
    )


def actions_to_stiffness(params: PolicyParams, actions: np.ndarray) -> np.ndarray:
    """Map bin indices to stiffness values; (6,) shared or (12,) per-arm."""
    vals = params.bins.axis_values()
    actions = np.atleast_2d(actions)
    out = np.stack(
        [np.asarray(vals[h])[actions[:, h]] for h in range(len(vals))], axis=1
    )
    return out[0] if out.shape[0] == 1 else out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: PolicyParams, path, extra: dict = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "n_joints": params.n_joints,
        "hidden": params.hidden,
        "obs_dim": params.obs_dim,
        "head_sizes": list(params.head_sizes),
        "bins": {
            "translational": list(params.bins.translational),
            "rotational": list(params.bins.rotational),
            "per_arm": params.bins.per_arm,
        },
        "extra": extra or {},
    }
    arrays = {}
    for i, (W, b) in enumerate(params.weights):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_checkpoint(path) -> PolicyParams:
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    if meta["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta['version']}")
    bins = BinSet(
        translational=tuple(meta["bins"]["translational"]),
        rotational=tuple(meta["bins"]["rotational"]),
        per_arm=meta["bins"]["per_arm"],
    )
    weights = []
    i = 0
    while f"W{i}" in data:
        weights.append((data[f"W{i}"].copy(), data[f"b{i}"].copy()))
        i += 1
    return PolicyParams(
        weights=weights,
        n_joints=meta["n_joints"],
        hidden=meta["hidden"],
        bins=bins,
        obs_dim=meta["obs_dim"],
        head_sizes=tuple(meta["head_sizes"]),
    )
