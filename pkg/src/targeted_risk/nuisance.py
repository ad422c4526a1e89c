"""Initial estimators for the propensity, censoring survival, and hazards.

The targeting step assumes these are given; the choices here are simple and
deterministic: an empirical or ridge-logistic propensity, a reverse
product-limit censoring fit (stratified by arm by default), and either a
stratified occurrence/exposure hazard fit or a pooled logistic model of
event-in-interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .data import Dataset, TimeGrid
from .errors import DataError, PositivityError
from .hazard import DEFAULT_CLAMP_MARGIN, CensoringSurvival, HazardTensor

__all__ = [
    "DEFAULT_POSITIVITY_FLOOR",
    "PropensityModel",
    "PooledLogisticHazards",
    "NuisanceFit",
    "fit_propensity",
    "fit_censoring_survival",
    "fit_cause_hazards",
    "fit_nuisance",
]

DEFAULT_POSITIVITY_FLOOR = 0.01
DEFAULT_PSEUDOCOUNT = 0.5


def _ridge_logistic(x, y, ridge=1e-4, max_iter=50, tol=1e-10):
    """Ridge-penalized logistic MLE by IRLS; intercept is not penalized.

    Returns (coefficients, converged flag).  Deterministic for fixed inputs.
    """
    n, p = x.shape
    beta = np.zeros(p)
    penalty = np.full(p, ridge)
    penalty[0] = 0.0
    for _ in range(max_iter):
        eta = np.clip(x @ beta, -30.0, 30.0)
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        grad = x.T @ (y - mu) - penalty * beta
        hess = (x * w[:, None]).T @ x + np.diag(penalty + 1e-12)
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(grad)) < tol * n:
            return beta, True
    eta = np.clip(x @ beta, -30.0, 30.0)
    mu = 1.0 / (1.0 + np.exp(-eta))
    grad = x.T @ (y - mu) - penalty * beta
    return beta, bool(np.max(np.abs(grad)) < 1e-6 * n)


@dataclass(frozen=True)
class PropensityModel:
    """P(A=1 | L), either a constant proportion or logistic in covariates."""

    kind: Literal["empirical", "logistic"]
    parameters: np.ndarray
    floor: float = DEFAULT_POSITIVITY_FLOOR
    truncated: bool = False

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        """pi_hat(1 | L_i) for each row of ``covariates``, truncated to
        [floor, 1 - floor]."""
        covariates = np.atleast_2d(covariates)
        if self.kind == "empirical":
            raw = np.full(covariates.shape[0], float(self.parameters[0]))
        else:
            x = np.column_stack([np.ones(covariates.shape[0]), covariates])
            raw = 1.0 / (1.0 + np.exp(-np.clip(x @ self.parameters, -30, 30)))
        return np.clip(raw, self.floor, 1.0 - self.floor)

    def prob_of_arm(self, arm: int, covariates: np.ndarray) -> np.ndarray:
        p1 = self.predict(covariates)
        return p1 if arm == 1 else 1.0 - p1


def fit_propensity(
    dataset: Dataset,
    kind: Literal["empirical", "logistic"] = "empirical",
    floor: float = DEFAULT_POSITIVITY_FLOOR,
    ridge: float = 1e-4,
) -> PropensityModel:
    """Estimate P(A=1 | L).  Requires both arms present."""
    a = dataset.treatments
    if a.min() == a.max():
        raise DataError("single-arm data: propensity is degenerate")
    if kind == "empirical":
        return PropensityModel(kind="empirical", parameters=np.array([a.mean()]), floor=floor)
    if kind != "logistic":
        raise DataError(f"unknown propensity kind {kind!r}")
    x = np.column_stack([np.ones(dataset.n), dataset.covariates])
    beta, _ = _ridge_logistic(x, a.astype(float), ridge=ridge)
    raw = 1.0 / (1.0 + np.exp(-np.clip(x @ beta, -30, 30)))
    truncated = bool(np.any(raw < floor) or np.any(raw > 1.0 - floor))
    return PropensityModel(kind="logistic", parameters=beta, floor=floor, truncated=truncated)


def _risk_and_counts(dataset: Dataset, grid: TimeGrid, mask: np.ndarray):
    """At-risk counts per interval plus event/censoring counts at each grid
    point, restricted to ``mask``-selected subjects.

    Subjects with T at s_m count as at risk in interval m; with all times on
    the grid, at-risk in interval m means T >= s_m.
    """
    m = grid.m
    times = dataset.times[mask]
    events = dataset.events[mask]
    idx = grid.indices_of(times)
    at_risk = np.zeros(m, dtype=np.int64)
    np.add.at(at_risk, idx, 1)
    at_risk = at_risk[::-1].cumsum()[::-1]
    event_counts = np.zeros((m, dataset.num_causes), dtype=np.int64)
    for l in range(1, dataset.num_causes + 1):
        np.add.at(event_counts[:, l - 1], idx[events == l], 1)
    censor_counts = np.zeros(m, dtype=np.int64)
    np.add.at(censor_counts, idx[events == 0], 1)
    return at_risk, event_counts, censor_counts


def fit_censoring_survival(
    dataset: Dataset,
    grid: TimeGrid,
    stratify_by_arm: bool = True,
    floor: float = DEFAULT_POSITIVITY_FLOOR,
) -> tuple[CensoringSurvival, dict]:
    """Reverse product-limit censoring fit, unconditional on covariates.

    Returns left limits S^c(s_m - | a, L_i) per (arm, subject, interval) and
    a metadata dict recording floor hits and empty-risk-set carry-forwards.
    """
    n, m = dataset.n, grid.m
    values = np.empty((2, n, m))
    meta = {"floored": False, "empty_risk_intervals": {}, "stratify_by_arm": stratify_by_arm}

    def curve_for(mask):
        if not np.any(mask):
            raise PositivityError("censoring stratum is empty")
        at_risk, _, censored = _risk_and_counts(dataset, grid, mask)
        with np.errstate(divide="ignore", invalid="ignore"):
            haz = np.where(at_risk > 0, censored / np.maximum(at_risk, 1), 0.0)
        left = np.cumprod(np.concatenate(([1.0], 1.0 - haz[:-1])))
        return left, int(np.sum((at_risk == 0)))

    if stratify_by_arm:
        for a in (0, 1):
            mask = dataset.treatments == a
            left, empty = curve_for(mask)
            meta["empty_risk_intervals"][a] = empty
            values[a, :, :] = left[None, :]
    else:
        left, empty = curve_for(np.ones(n, dtype=bool))
        meta["empty_risk_intervals"]["pooled"] = empty
        values[:, :, :] = left[None, None, :]

    if np.any(values < floor):
        meta["floored"] = True
        values = np.maximum(values, floor)
    return CensoringSurvival(values=values), meta


@dataclass(frozen=True)
class PooledLogisticHazards:
    """Per-cause logistic models of event-in-interval on a time basis,
    covariates and treatment; the time basis separates from the subject
    part, so predictions broadcast without expanding person-intervals."""

    coefficients: np.ndarray  # (causes, features)
    converged: tuple[bool, ...]
    ridge: float
    tau: float
    time_basis: np.ndarray  # (intervals, time features) including intercept

    def linear_predictor(self, cause: int, arm: int, covariates: np.ndarray) -> np.ndarray:
        """(subjects, intervals) linear predictor for one cause and arm."""
        beta = self.coefficients[cause - 1]
        k = self.time_basis.shape[1]
        time_part = self.time_basis @ beta[:k]
        subj_part = covariates @ beta[k:-1] + beta[-1] * arm
        return subj_part[:, None] + time_part[None, :]

    def predict(self, cause: int, arm: int, covariates: np.ndarray) -> np.ndarray:
        eta = np.clip(self.linear_predictor(cause, arm, covariates), -30, 30)
        return 1.0 / (1.0 + np.exp(-eta))


def _pooled_time_basis(grid: TimeGrid) -> np.ndarray:
    widths = np.diff(np.concatenate(([0.0], grid.times)))
    scaled = grid.times / grid.horizon
    log_width = np.log(widths / widths.mean())
    return np.column_stack([np.ones(grid.m), scaled, scaled**2, log_width])


def _clamp_tensor(values: np.ndarray, margin: float) -> np.ndarray:
    values = np.clip(values, 0.0, 1.0 - margin)
    total = values.sum(axis=3, keepdims=True)
    over = total > 1.0 - margin
    if np.any(over):
        scale = np.where(over, (1.0 - margin) / np.maximum(total, 1e-300), 1.0)
        values = values * scale
    return values


def fit_pooled_logistic(
    dataset: Dataset,
    grid: TimeGrid,
    ridge: float = 1e-3,
) -> PooledLogisticHazards:
    """Fit one pooled logistic hazard model per cause on at-risk rows."""
    n, m, j = dataset.n, grid.m, dataset.num_causes
    m_idx = grid.indices_of(np.minimum(dataset.times, grid.horizon))
    basis = _pooled_time_basis(grid)

    rows_i, rows_m = np.nonzero(np.arange(m)[None, :] <= m_idx[:, None])
    x = np.column_stack(
        [basis[rows_m], dataset.covariates[rows_i], dataset.treatments[rows_i].astype(float)]
    )
    coefs, flags = [], []
    for l in range(1, j + 1):
        y = ((rows_m == m_idx[rows_i]) & (dataset.events[rows_i] == l)).astype(float)
        beta, ok = _ridge_logistic(x, y, ridge=ridge)
        coefs.append(beta)
        flags.append(ok)
    return PooledLogisticHazards(
        coefficients=np.vstack(coefs),
        converged=tuple(flags),
        ridge=ridge,
        tau=grid.horizon,
        time_basis=basis,
    )


def _stratified_hazards(
    dataset: Dataset, grid: TimeGrid, pseudocount: float
) -> np.ndarray:
    n, m, j = dataset.n, grid.m, dataset.num_causes
    values = np.zeros((2, n, m, j))
    pc = pseudocount / m
    for a in (0, 1):
        mask = dataset.treatments == a
        if not np.any(mask):
            continue
        at_risk, events, _ = _risk_and_counts(dataset, grid, mask)
        denom = np.maximum(at_risk, 1) + pc
        lam = (events + pc) / denom[:, None]
        if pseudocount == 0.0:
            lam = np.where(at_risk[:, None] > 0, lam, 0.0)
        values[a, :, :, :] = lam[None, :, :]
    return values


def fit_cause_hazards(
    dataset: Dataset,
    grid: TimeGrid,
    covariate_mode: Literal["stratified", "pooled-logistic"] = "pooled-logistic",
    pseudocount: float = DEFAULT_PSEUDOCOUNT,
    clamp_margin: float = DEFAULT_CLAMP_MARGIN,
    ridge: float = 1e-3,
) -> tuple[HazardTensor, dict]:
    """Initial cause-specific hazard fit on the full (arm, subject) lattice.

    ``stratified``: per-arm occurrence/exposure ratios with a pseudo-count
    of ``pseudocount`` events spread across the grid (zero cells freeze the
    multiplicative targeting update, hence the smoothing).
    ``pooled-logistic``: one ridge-logistic per cause; falls back to the
    stratified fit, flagged, if IRLS fails to converge.
    """
    meta: dict = {"mode": covariate_mode, "pseudocount": pseudocount, "fallback": False}
    if covariate_mode == "pooled-logistic":
        model = fit_pooled_logistic(dataset, grid, ridge=ridge)
        meta["ridge"] = ridge
        meta["converged"] = model.converged
        meta["model"] = model
        if all(model.converged):
            values = np.empty((2, dataset.n, grid.m, dataset.num_causes))
            for a in (0, 1):
                for l in range(1, dataset.num_causes + 1):
                    values[a, :, :, l - 1] = model.predict(l, a, dataset.covariates)
        else:
            meta["fallback"] = True
            values = _stratified_hazards(dataset, grid, pseudocount)
    elif covariate_mode == "stratified":
        values = _stratified_hazards(dataset, grid, pseudocount)
    else:
        raise DataError(f"unknown hazard mode {covariate_mode!r}")

    clamped = _clamp_tensor(values, clamp_margin)
    meta["clamped_cells"] = int(np.sum(clamped != values))
    return HazardTensor(values=clamped, clamp_margin=clamp_margin), meta


@dataclass(frozen=True)
class NuisanceFit:
    """Bundle of initial estimators plus the data and grid they live on."""

    dataset: Dataset
    grid: TimeGrid
    propensity: PropensityModel
    censoring: CensoringSurvival
    hazards: HazardTensor
    fit_metadata: dict = field(default_factory=dict)
    censoring_floor: float = DEFAULT_POSITIVITY_FLOOR


def fit_nuisance(
    dataset: Dataset,
    grid: TimeGrid,
    propensity_kind: Literal["empirical", "logistic"] = "empirical",
    hazard_mode: Literal["stratified", "pooled-logistic"] = "pooled-logistic",
    pseudocount: float = DEFAULT_PSEUDOCOUNT,
    positivity_floor: float = DEFAULT_POSITIVITY_FLOOR,
    stratify_censoring: bool = True,
    clamp_margin: float = DEFAULT_CLAMP_MARGIN,
) -> NuisanceFit:
    """Fit all three nuisance components with shared floors."""
    propensity = fit_propensity(dataset, kind=propensity_kind, floor=positivity_floor)
    censoring, cmeta = fit_censoring_survival(
        dataset, grid, stratify_by_arm=stratify_censoring, floor=positivity_floor
    )
    hazards, hmeta = fit_cause_hazards(
        dataset,
        grid,
        covariate_mode=hazard_mode,
        pseudocount=pseudocount,
        clamp_margin=clamp_margin,
    )
    return NuisanceFit(
        dataset=dataset,
        grid=grid,
        propensity=propensity,
        censoring=censoring,
        hazards=hazards,
        fit_metadata={"censoring": cmeta, "hazards": hmeta},
        censoring_floor=positivity_floor,
    )
