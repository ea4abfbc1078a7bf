"""Dense per-tick reward with the smoothness-enforcing EMA penalty.

Positive shaping uses exp(-scale * error) on the EE and object tracking
errors (the scale is a config choice); indicator penalties fire on
infeasible QP ticks and on stiffness commands that jump away from their
exponential moving average.
"""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass(frozen=True)
class RewardConfig:
    w_track_ee: float = 1.0
    w_track_obj: float = 1.0
    w_goal: float = 10.0
    r_infeasible: float = 5.0
    r_ema: float = 1.0
    ema_alpha: float = 0.9
    ema_threshold: float = 100.0  # stiffness units, inf-norm
    goal_radius: float = 0.05  # m
    error_scale: float = 20.0  # 1/m in the exp(-scale*err) shaping

    def __post_init__(self):
        for f in ("w_track_ee", "w_track_obj", "w_goal", "r_infeasible", "r_ema"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")
        if not 0.0 < self.ema_alpha < 1.0:
            raise ValueError("ema_alpha must lie in (0, 1)")

    @property
    def lower_bound(self) -> float:
        return -(self.r_infeasible + self.r_ema)

    @property
    def upper_bound(self) -> float:
        return self.w_track_ee + self.w_track_obj + self.w_goal


@dataclasses.dataclass
class EMATracker:
    ema: np.ndarray = None

    @property
    def initialized(self) -> bool:
        return self.ema is not None


def ema_update(tracker: EMATracker, k: np.ndarray, alpha: float) -> EMATracker:
    """First call adopts k; afterwards ema <- alpha*ema + (1-alpha)*k."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    k = np.asarray(k, dtype=float)
    if tracker.initialized:
        return EMATracker(ema=alpha * tracker.ema + (1.0 - alpha) * k)
    return EMATracker(ema=k.copy())


def compute_reward(
    ee_error_left: np.ndarray,
    ee_error_right: np.ndarray,
    obj_error: np.ndarray,
    goal_distance: float,
    in_final_stage: bool,
    qp_infeasible: bool,
    k: np.ndarray,
    tracker: EMATracker,
    cfg: RewardConfig,
) -> float:
    """Scalar reward for one control tick (EMA deviation measured against the
    tracker state before this tick's update)."""
    e_ee = np.linalg.norm(np.concatenate([ee_error_left, ee_error_right]))
    e_obj = np.linalg.norm(obj_error)
    r = cfg.w_track_ee * np.exp(-cfg.error_scale * e_ee)
    r += cfg.w_track_obj * np.exp(-cfg.error_scale * e_obj)
    if in_final_stage and goal_distance <= cfg.goal_radius:
        r += cfg.w_goal
    if qp_infeasible:
        r -= cfg.r_infeasible
    if tracker.initialized and cfg.r_ema > 0.0:
        if np.max(np.abs(np.asarray(k, dtype=float) - tracker.ema)) > cfg.ema_threshold:
            r -= cfg.r_ema
    return float(r)
