"""Clipped-surrogate policy-gradient training for the stiffness policy.

Rollout collection, generalized advantage estimation, the clipped PPO
objective with value and entropy terms, and an Adam optimizer, all on the
hand-rolled network in `policy` (gradients are exact reverse-mode, verified
against finite differences in the tests).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .envs import PickPlaceEnv, Scenario
from .policy import (
    BinSet,
    PolicyParams,
    actions_to_stiffness,
    backward,
    forward,
    greedy_actions,
    head_slices,
    init_params,
    log_prob_entropy,
    log_softmax,
    sample_actions,
)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    iterations: int = 50
    episodes_per_iter: int = 8
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    hidden: int = 128
    seed: int = 0
    bins: BinSet = dataclasses.field(default_factory=BinSet)


@dataclasses.dataclass
class EpisodeRecord:
    obs: np.ndarray  # (T, D)
    actions: np.ndarray  # (T, H)
    log_probs: np.ndarray  # (T,)
    values: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    dones: np.ndarray  # (T,)
    faulted: bool
    ticks: list  # TickRecords (None entries on fault)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def rollout(env: PickPlaceEnv, params: PolicyParams, seed: int,
            deterministic: bool = False, goal=None) -> EpisodeRecord:
    """One episode; the action stream owns an RNG derived from the seed."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 7919)))
    obs = env.reset(int(seed), goal=goal)
    rows_obs, rows_act, rows_lp, rows_v, rows_r, rows_d, ticks = [], [], [], [], [], [], []
    faulted = False
    while True:
        flat = obs.flatten()
        logits, value = forward(params, flat[None, :])
        if deterministic:
            acts = greedy_actions(params, logits)
        else:
            acts = sample_actions(params, logits, rng)
        lp, _ = log_prob_entropy(params, logits, acts)
        k = actions_to_stiffness(params, acts[0])
        obs_next, r, done, info = env.step(k)
        rows_obs.append(flat)
        rows_act.append(acts[0])
        rows_lp.append(lp[0])
        rows_v.append(value[0])
        rows_r.append(r)
        rows_d.append(done)
        ticks.append(info.get("record"))
        if info.get("fault"):
            faulted = True
        if done:
            break
        obs = obs_next
    return EpisodeRecord(
        obs=np.array(rows_obs),
        actions=np.array(rows_act, dtype=np.int64),
        log_probs=np.array(rows_lp),
        values=np.array(rows_v),
        rewards=np.array(rows_r),
        dones=np.array(rows_d, dtype=bool),
        faulted=faulted,
        ticks=ticks,
    )


def gae_advantages(rewards, values, gamma: float, lam: float):
    """Terminal episodes: bootstrap value beyond the horizon is zero."""
    T = rewards.shape[0]
    adv = np.zeros(T)
    run = 0.0
    for t in range(T - 1, -1, -1):
        v_next = values[t + 1] if t + 1 < T else 0.0
        delta = rewards[t] + gamma * v_next - values[t]
        run = delta + gamma * lam * run
        adv[t] = run
    return adv, adv + values


def surrogate_loss_and_grad(params: PolicyParams, batch: dict, cfg: TrainConfig):
    """PPO loss (clipped surrogate + value + entropy) and exact gradients.

    batch: obs (B,D), actions (B,H), logp_old (B,), adv (B,), v_target (B,).
    Returns (stats dict, list of (dW, db) matching params.weights).
    """
    obs = batch["obs"]
    actions = batch["actions"]
    B = obs.shape[0]
    cache = {}
    logits, value = forward(params, obs, cache=cache)
    lp, ent = log_prob_entropy(params, logits, actions)
    ratio = np.exp(lp - batch["logp_old"])
    adv = batch["adv"]
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    obj = np.minimum(surr1, surr2)
    loss_pi = -obj.mean()
    v_err = value - batch["v_target"]
    loss_v = cfg.value_coef * np.mean(v_err**2)
    loss_e = -cfg.entropy_coef * ent.mean()
    loss = loss_pi + loss_v + loss_e

    # d loss / d logp: gradient flows through the unclipped branch (ties and
    # the identity region of clip behave identically)
    inside = (ratio > 1.0 - cfg.clip) & (ratio < 1.0 + cfg.clip)
    active = (surr1 <= surr2) | inside
    dlp = -(adv * ratio * active) / B

    dlogits = np.zeros_like(logits)
    for h, s in enumerate(head_slices(params)):
        ls = log_softmax(logits[:, s])
        p = np.exp(ls)
        onehot = np.zeros_like(p)
        onehot[np.arange(B), actions[:, h]] = 1.0
        dlogits[:, s] += dlp[:, None] * (onehot - p)
        # entropy term: dH/dl = -p (log p + H)
        H = -(p * ls).sum(axis=1, keepdims=True)
        dlogits[:, s] += (cfg.entropy_coef / B) * p * (ls + H)
    dvalue = 2.0 * cfg.value_coef * v_err / B

    grads = backward(params, cache, dlogits, dvalue)
    stats = {
        "loss": float(loss),
        "loss_pi": float(loss_pi),
        "loss_v": float(loss_v),
        "entropy": float(ent.mean()),
        "clip_frac": float(np.mean(~active)),
    }
    return stats, grads


def surrogate_loss(params: PolicyParams, batch: dict, cfg: TrainConfig) -> float:
    """Loss only (used by the finite-difference gradient check)."""
    logits, value = forward(params, batch["obs"])
    lp, ent = log_prob_entropy(params, logits, batch["actions"])
    ratio = np.exp(lp - batch["logp_old"])
    obj = np.minimum(ratio * batch["adv"],
                     np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * batch["adv"])
    loss = -obj.mean()
    loss += cfg.value_coef * np.mean((value - batch["v_target"]) ** 2)
    loss -= cfg.entropy_coef * ent.mean()
    return float(loss)


class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def update(self, flat_params: np.ndarray, flat_grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * flat_grad
        self.v = self.b2 * self.v + (1 - self.b2) * flat_grad**2
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return flat_params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _flatten_grads(grads) -> np.ndarray:
    return np.concatenate([a.ravel() for dW, db in grads for a in (dW, db)])


def train(scenario: Scenario, cfg: TrainConfig, params: PolicyParams = None,
          progress=None):
    """PPO training loop; returns (params, log rows)."""
    env = PickPlaceEnv(scenario)
    if params is None:
        params = init_params(scenario.chain_left.n, cfg.bins, cfg.hidden, cfg.seed)
    opt = Adam(params.flat().size, cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 104729)))
    log = []
    for it in range(cfg.iterations):
        episodes = [
            rollout(env, params, seed=_episode_seed(cfg.seed, it, k))
            for k in range(cfg.episodes_per_iter)
        ]
        obs = np.concatenate([e.obs for e in episodes])
        actions = np.concatenate([e.actions for e in episodes])
        logp_old = np.concatenate([e.log_probs for e in episodes])
        adv_list, vt_list = [], []
        for e in episodes:
            a, v = gae_advantages(e.rewards, e.values, cfg.gamma, cfg.gae_lambda)
            adv_list.append(a)
            vt_list.append(v)
        adv = np.concatenate(adv_list)
        v_target = np.concatenate(vt_list)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        B = obs.shape[0]
        stats = {}
        if not np.all(np.isfinite(adv)) or not np.all(np.isfinite(obs)):
            raise FloatingPointError("non-finite training batch")
        for _ in range(cfg.epochs):
            order = rng.permutation(B)
            for chunk in np.array_split(order, cfg.minibatches):
                batch = {
                    "obs": obs[chunk], "actions": actions[chunk],
                    "logp_old": logp_old[chunk], "adv": adv[chunk],
                    "v_target": v_target[chunk],
                }
                stats, grads = surrogate_loss_and_grad(params, batch, cfg)
                if not np.isfinite(stats["loss"]):
                    raise FloatingPointError(f"diverged at iteration {it}")
                flat_g = _flatten_grads(grads)
                norm = np.linalg.norm(flat_g)
                if cfg.max_grad_norm > 0 and norm > cfg.max_grad_norm:
                    flat_g *= cfg.max_grad_norm / norm
                params.set_flat(opt.update(params.flat(), flat_g))

        ks = np.concatenate(
            [actions_to_stiffness(params, e.actions) for e in episodes if len(e.actions)]
        )
        row = {
            "iteration": it,
            "mean_return": float(np.mean([e.episode_return for e in episodes])),
            "loss": stats.get("loss", np.nan),
            "loss_pi": stats.get("loss_pi", np.nan),
            "loss_v": stats.get("loss_v", np.nan),
            "entropy": stats.get("entropy", np.nan),
            "k_mean": float(ks.mean()),
            "k_std": float(ks.std()),
            "faults": int(sum(e.faulted for e in episodes)),
        }
        log.append(row)
        if progress is not None:
            progress(row)
    return params, log


def _episode_seed(seed: int, iteration: int, index: int) -> int:
    # stable, collision-free episode seeds from (global seed, iter, rollout)
    return int(np.random.SeedSequence((seed, iteration, index)).generate_state(1)[0])


def write_training_log(log, path) -> None:
    cols = ["iteration", "mean_return", "loss", "loss_pi", "loss_v", "entropy",
            "k_mean", "k_std", "faults"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in log:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in cols) + "\n")
