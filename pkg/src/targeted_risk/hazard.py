"""Discrete-hazard tensors and exact product-limit curve computation.

Hazards are per-interval conditional event probabilities, stored per
(arm, subject, interval, cause).  Survival is the product limit
``S(s_m) = prod_{m'<=m} (1 - sum_l lam_l(s_m'))`` and the absolute risk of
cause l is ``F_l(s_m) = sum_{m'<=m} S(s_{m'-1}) lam_l(s_m')``, so the state
probabilities satisfy ``S + sum_l F_l = 1`` exactly at every grid point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TimeGrid
from .errors import DataError

__all__ = [
    "DEFAULT_CLAMP_MARGIN",
    "HazardTensor",
    "CensoringSurvival",
    "RiskCurves",
    "compute_curves",
    "survival_curve",
    "absolute_risk_curve",
    "interval_lookup",
]

DEFAULT_CLAMP_MARGIN = 1e-6


@dataclass(frozen=True)
class HazardTensor:
    """Discrete cause-specific hazards, shape (arms, subjects, intervals, causes).

    Every cell and every per-(arm,subject,interval) total lies in
    ``[0, 1 - clamp_margin]`` so that survival stays positive and the
    multiplicative targeting update remains valid.
    """

    values: np.ndarray
    clamp_margin: float = DEFAULT_CLAMP_MARGIN

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 4:
            raise DataError(f"hazard tensor must be 4-d, got shape {v.shape}")
        if not 0 < self.clamp_margin < 0.5:
            raise DataError("clamp_margin must be in (0, 0.5)")
        if np.any(v < 0) or np.any(v > 1 - self.clamp_margin):
            raise DataError("hazards outside [0, 1 - clamp_margin]")
        if np.any(v.sum(axis=3) > 1 - self.clamp_margin + 1e-15):
            raise DataError("total discrete hazard exceeds 1 - clamp_margin")
        object.__setattr__(self, "values", v)

    @property
    def num_arms(self) -> int:
        return self.values.shape[0]

    @property
    def num_subjects(self) -> int:
        return self.values.shape[1]

    @property
    def num_intervals(self) -> int:
        return self.values.shape[2]

    @property
    def num_causes(self) -> int:
        return self.values.shape[3]

    def with_values(self, values: np.ndarray) -> "HazardTensor":
        return HazardTensor(values=values, clamp_margin=self.clamp_margin)


@dataclass(frozen=True)
class CensoringSurvival:
    """Left limits S^c(s_m - | arm, subject), shape (arms, subjects, intervals).

    Values are in (0, 1], non-increasing along the interval axis, and are
    expected to sit above the caller's positivity floor.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise DataError(f"censoring survival must be 3-d, got shape {v.shape}")
        if np.any(v <= 0) or np.any(v > 1):
            raise DataError("censoring survival values must lie in (0, 1]")
        if np.any(np.diff(v, axis=2) > 1e-12):
            raise DataError("censoring survival must be non-increasing in time")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class RiskCurves:
    """State-probability curves evaluated at the grid points.

    ``survival[a, i, m] = S(s_m | a, L_i)`` and
    ``risk[a, i, m, l] = F_l(s_m | a, L_i)``; the ``*_prev`` arrays hold the
    left limits (values at the previous grid point, with S(s_0)=1, F(s_0)=0)
    that the clever covariates and the loss need.
    """

    survival: np.ndarray
    risk: np.ndarray
    survival_prev: np.ndarray
    risk_prev: np.ndarray


def compute_curves(hazards: HazardTensor) -> RiskCurves:
    """Product-limit survival and cumulative absolute risks from hazards."""
    lam = hazards.values
    total = lam.sum(axis=3)
    surv = np.cumprod(1.0 - total, axis=2)
    ones = np.ones_like(surv[:, :, :1])
    surv_prev = np.concatenate([ones, surv[:, :, :-1]], axis=2)
    risk = np.cumsum(surv_prev[..., None] * lam, axis=2)
    zeros = np.zeros_like(risk[:, :, :1, :])
    risk_prev = np.concatenate([zeros, risk[:, :, :-1, :]], axis=2)
    return RiskCurves(survival=surv, risk=risk, survival_prev=surv_prev, risk_prev=risk_prev)


def survival_curve(hazards: HazardTensor, arm: int, subject: int) -> np.ndarray:
    """S(s_m | arm, L_subject) across the grid; non-increasing, in (0, 1]."""
    lam = hazards.values[arm, subject]
    return np.cumprod(1.0 - lam.sum(axis=1))


def absolute_risk_curve(hazards: HazardTensor, arm: int, subject: int, cause: int) -> np.ndarray:
    """F_cause(s_m | arm, L_subject) across the grid; cause is 1-based."""
    if not 1 <= cause <= hazards.num_causes:
        raise DataError(f"cause {cause} outside 1..{hazards.num_causes}")
    lam = hazards.values[arm, subject]
    surv = np.cumprod(1.0 - lam.sum(axis=1))
    surv_prev = np.concatenate(([1.0], surv[:-1]))
    return np.cumsum(surv_prev * lam[:, cause - 1])


def interval_lookup(grid: TimeGrid, t: float) -> int:
    """0-based index of the right-closed grid interval containing t."""
    return grid.interval_index(t)
