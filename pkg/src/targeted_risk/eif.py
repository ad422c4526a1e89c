"""Clever covariates, efficient influence function values, and plug-ins.

For a component targeting cause j at time t_k under arm a, the influence
function of one observation is

    sum_l sum_{m <= T index} h[i,m,l] * (dN_l(s_m) - lam_l(s_m | A_i, L_i))
        + F_j(t_k | a, L_i) - psi_hat

with the clever covariate

    h[i,m,l] = 1{A_i = a}/pi(A_i|L_i) * 1{s_m <= t_k}/Sc(s_m- | A_i, L_i)
               * (1{l = j} - (F_j(t_k) - F_j(s_{m-1})) / S(s_{m-1}))

all curve values taken at (A_i, L_i).  A survival component (cause None)
uses the negated sum of all cause components, which collapses to the weight
``-S(t_k)/S(s_{m-1})`` for every l.  Contrast mode stacks both arms with
the arm-0 part negated.

The matrix evaluation below never materializes h: everything reduces to
per-subject prefix sums over intervals, so one evaluation is
O(arms * n * intervals * causes) regardless of the number of components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, TimeGrid
from .errors import DataError, PositivityError
from .hazard import HazardTensor, RiskCurves, compute_curves
from .nuisance import NuisanceFit

__all__ = [
    "DEFAULT_SURVIVAL_FLOOR",
    "TargetComponent",
    "TargetSpec",
    "EifMatrix",
    "EifEngine",
    "clever_covariate",
    "clever_covariates",
    "eif_matrix",
    "plugin_estimates",
]

DEFAULT_SURVIVAL_FLOOR = 1e-3


@dataclass(frozen=True)
class TargetComponent:
    """One coordinate of the target: cause j at time t (cause None = event-free
    survival P(T > t))."""

    cause: int | None
    time: float


@dataclass(frozen=True)
class TargetSpec:
    """Ordered stack of target components plus the arm mode.

    mode "arm": treatment-specific probabilities under ``arm``.
    mode "contrast": arm-1 minus arm-0 average effects.
    """

    components: tuple[TargetComponent, ...]
    mode: str = "arm"
    arm: int | None = 1
    curve_mode: bool = False

    def __post_init__(self):
        if not self.components:
            raise DataError("target spec needs at least one component")
        if self.mode not in ("arm", "contrast"):
            raise DataError(f"unknown target mode {self.mode!r}")
        if self.mode == "arm" and self.arm not in (0, 1):
            raise DataError("mode 'arm' requires arm in {0, 1}")

    @property
    def d(self) -> int:
        return len(self.components)

    @classmethod
    def absolute_risk(cls, causes: Sequence[int], times: Sequence[float],
                      arm: int | None = 1, contrast: bool = False,
                      curve_mode: bool = False) -> "TargetSpec":
        comps = tuple(TargetComponent(j, float(t)) for j in causes for t in times)
        mode = "contrast" if contrast else "arm"
        return cls(components=comps, mode=mode, arm=None if contrast else arm,
                   curve_mode=curve_mode)

    @classmethod
    def survival(cls, times: Sequence[float], arm: int | None = 1,
                 contrast: bool = False, curve_mode: bool = False) -> "TargetSpec":
        comps = tuple(TargetComponent(None, float(t)) for t in times)
        mode = "contrast" if contrast else "arm"
        return cls(components=comps, mode=mode, arm=None if contrast else arm,
                   curve_mode=curve_mode)

    def arm_slices(self) -> tuple[tuple[int, float], ...]:
        """(arm, sign) pairs whose signed sum gives the target."""
        if self.mode == "contrast":
            return ((1, 1.0), (0, -1.0))
        return ((self.arm, 1.0),)

    def validate_for(self, dataset: Dataset, grid: TimeGrid) -> None:
        for c in self.components:
            if c.cause is not None and not 1 <= c.cause <= dataset.num_causes:
                raise DataError(f"component cause {c.cause} outside 1..{dataset.num_causes}")
        grid.indices_of([c.time for c in self.components])


@dataclass(frozen=True)
class EifMatrix:
    """n x d matrix of influence-function values; column k matches
    ``column_index[k]``; column means are the score vector."""

    values: np.ndarray
    column_index: tuple[TargetComponent, ...]

    @property
    def score(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @property
    def sigma(self) -> np.ndarray:
        """Per-component scale: root of the column second moment."""
        return np.sqrt(np.mean(self.values**2, axis=0))


@dataclass(frozen=True)
class StepEval:
    """One evaluation of the estimator state at a given hazard tensor."""

    psi: np.ndarray
    eif: EifMatrix
    score: np.ndarray
    sigma: np.ndarray
    curves: RiskCurves


class EifEngine:
    """Precomputed observed-data quantities for repeated EIF evaluation.

    The censoring weights, propensities, counting-process jumps, and at-risk
    masks are fixed along the targeting path; only the hazard tensor (and
    the curves derived from it) changes between calls.
    """

    def __init__(self, nuisance: NuisanceFit, spec: TargetSpec,
                 survival_floor: float = DEFAULT_SURVIVAL_FLOOR):
        dataset, grid = nuisance.dataset, nuisance.grid
        spec.validate_for(dataset, grid)
        self.nuisance = nuisance
        self.spec = spec
        self.dataset = dataset
        self.grid = grid
        self.survival_floor = survival_floor

        n, m, j = dataset.n, grid.m, dataset.num_causes
        self.n, self.m, self.j = n, m, j
        self.m_idx = grid.indices_of(dataset.times)
        self.atrisk = (np.arange(m)[None, :] <= self.m_idx[:, None]).astype(float)
        self.dn = np.zeros((n, m, j))
        for l in range(1, j + 1):
            sel = dataset.events == l
            self.dn[sel, self.m_idx[sel], l - 1] = 1.0

        pi1 = nuisance.propensity.predict(dataset.covariates)
        sc = np.maximum(nuisance.censoring.values, nuisance.censoring_floor)
        self.w_base = np.empty((2, n, m))
        for a in (0, 1):
            pi_a = pi1 if a == 1 else 1.0 - pi1
            self.w_base[a] = 1.0 / (pi_a[:, None] * sc[a])
        self.arm_sel = tuple(dataset.treatments == a for a in (0, 1))

        self.comp_cause = np.array(
            [-1 if c.cause is None else c.cause - 1 for c in spec.components], dtype=np.int64
        )
        self.comp_midx = grid.indices_of([c.time for c in spec.components])
        self.max_midx = int(self.comp_midx.max())
        self.arm_slices = spec.arm_slices()
        self.targeted_arms = tuple(a for a, _ in self.arm_slices)

    # -- curve handling ---------------------------------------------------

    def curves(self, hazards: HazardTensor) -> RiskCurves:
        return compute_curves(hazards)

    def _check_floor(self, curves: RiskCurves) -> None:
        if self.survival_floor <= 0:
            return
        for a in self.targeted_arms:
            used = curves.survival_prev[a][:, : self.max_midx + 1]
            low = used.min()
            if low < self.survival_floor:
                raise PositivityError(
                    f"event-free survival {low:.3e} below floor {self.survival_floor:g} "
                    f"on arm {a} before the last target time"
                )

    # -- evaluation --------------------------------------------------------

    def evaluate(self, hazards: HazardTensor, curves: RiskCurves | None = None) -> StepEval:
        """Plug-in estimates and the full EIF matrix at one hazard tensor."""
        if curves is None:
            curves = self.curves(hazards)
        self._check_floor(curves)
        n, d = self.n, self.spec.d
        lam = hazards.values
        eif = np.zeros((n, d))
        psi = np.zeros(d)
        cause_groups = self._cause_groups()

        for a, sign in self.arm_slices:
            surv, risk = curves.survival[a], curves.risk[a]
            surv_prev, risk_prev = curves.survival_prev[a], curves.risk_prev[a]

            plug = np.empty((n, d))
            f_cols = self.comp_cause >= 0
            if np.any(f_cols):
                plug[:, f_cols] = risk[:, self.comp_midx[f_cols], self.comp_cause[f_cols]]
            if np.any(~f_cols):
                plug[:, ~f_cols] = surv[:, self.comp_midx[~f_cols]]
            psi_a = plug.mean(axis=0)

            sel = self.arm_sel[a]
            contrib = plug - psi_a[None, :]
            if np.any(sel):
                wb = self.w_base[a][sel]
                inv_sp = 1.0 / np.maximum(surv_prev[sel], 1e-300)
                resid = (self.dn[sel] - lam[a][sel]) * self.atrisk[sel][:, :, None]
                g = resid * wb[:, :, None]
                gsum = g.sum(axis=2)
                cum_s = np.cumsum(gsum * inv_sp, axis=1)
                mart = np.zeros((int(sel.sum()), d))
                for jc, cols in cause_groups.items():
                    mk = self.comp_midx[cols]
                    if jc < 0:
                        mart[:, cols] = -surv[sel][:, mk] * cum_s[:, mk]
                    else:
                        cum_r = np.cumsum(g[:, :, jc], axis=1)
                        cum_fs = np.cumsum(gsum * risk_prev[sel][:, :, jc] * inv_sp, axis=1)
                        mart[:, cols] = (
                            cum_r[:, mk]
                            - risk[sel][:, mk, jc] * cum_s[:, mk]
                            + cum_fs[:, mk]
                        )
                contrib[sel] += mart
            eif += sign * contrib
            psi += sign * psi_a

        mat = EifMatrix(values=eif, column_index=self.spec.components)
        return StepEval(psi=psi, eif=mat, score=mat.score, sigma=mat.sigma, curves=curves)

    def _cause_groups(self) -> dict[int, np.ndarray]:
        groups: dict[int, np.ndarray] = {}
        for jc in np.unique(self.comp_cause):
            groups[int(jc)] = np.nonzero(self.comp_cause == jc)[0]
        return groups

    # -- fluctuation field ---------------------------------------------------

    def fluctuation_field(self, curves: RiskCurves, weighted_score: np.ndarray,
                          norm_value: float) -> np.ndarray:
        """Log-hazard increment per (arm, subject, interval, cause).

        ``weighted_score`` is Sigma_d^{-1} applied to the (masked) score;
        the increment at one hazard cell is the inner product of that vector
        with the clever-covariate stack evaluated at the cell's own arm,
        divided by ``norm_value``.  Entries of non-targeted arms stay zero.
        """
        self._check_floor(curves)
        n, m, j, d = self.n, self.m, self.j, self.spec.d
        out = np.zeros((2, n, m, j))
        cause_groups = self._cause_groups()

        for a, sign in self.arm_slices:
            u = sign * weighted_score
            surv, risk = curves.survival[a], curves.risk[a]
            surv_prev, risk_prev = curves.survival_prev[a], curves.risk_prev[a]
            inv_sp = 1.0 / np.maximum(surv_prev, 1e-300)

            # T1 per cause: suffix sums of u over components with t_k >= s_m.
            t1 = np.zeros((j, m))
            for jc, cols in cause_groups.items():
                if jc < 0:
                    continue
                tmp = np.zeros(m)
                np.add.at(tmp, self.comp_midx[cols], u[cols])
                t1[jc] = tmp[::-1].cumsum()[::-1]

            # T2: suffix sums of u_c * (curve value at the component time).
            t2t = np.zeros((m, n))
            for jc, cols in cause_groups.items():
                mk = self.comp_midx[cols]
                vals = surv[:, mk] if jc < 0 else risk[:, mk, jc]
                np.add.at(t2t, mk, (u[cols][None, :] * vals).T)
            t2 = t2t[::-1].cumsum(axis=0)[::-1].T

            t3 = np.einsum("nmj,jm->nm", risk_prev, t1)
            shared = (t2 - t3) * inv_sp
            field = (t1.T[None, :, :] - shared[:, :, None]) * self.w_base[a][:, :, None]
            out[a] += field / norm_value
        return out

    # -- loss ---------------------------------------------------------------

    def mean_log_likelihood(self, hazards: HazardTensor) -> float:
        """Per-subject mean of the hazard-factor log likelihood.

        Event terms use log lam at the observed (arm, interval, cause);
        at-risk terms subtract the summed discrete hazards.  Along the
        targeted update path this functional increases at exactly the
        Hilbert norm of the score.
        """
        lam = hazards.values
        n = self.n
        total = 0.0
        obs = self.dataset.treatments
        events = self.dataset.events
        rows = np.arange(n)
        lam_obs = lam[obs, rows]  # (n, M, J)
        at_risk_sum = (lam_obs * self.atrisk[:, :, None]).sum(axis=(1, 2))
        has_event = events >= 1
        lam_event = lam_obs[rows[has_event], self.m_idx[has_event], events[has_event] - 1]
        total = np.sum(np.log(np.maximum(lam_event, 1e-300))) - at_risk_sum.sum()
        return float(total / n)


def clever_covariate(
    curves: RiskCurves,
    censoring_values: np.ndarray,
    propensity_obs: np.ndarray,
    dataset: Dataset,
    grid: TimeGrid,
    component: TargetComponent,
    component_arm: int,
    cause: int,
    subject: int,
    interval: int,
    survival_floor: float = DEFAULT_SURVIVAL_FLOOR,
) -> float:
    """One clever-covariate value h[subject, interval, cause] for one
    component, evaluated at the subject's observed arm.

    ``censoring_values`` are the (arm, subject, interval) left limits,
    ``propensity_obs`` the per-subject pi(A_i | L_i).  Zero whenever the
    observed arm differs from the component's arm or the interval starts at
    or after the component time.
    """
    a_obs = int(dataset.treatments[subject])
    if a_obs != component_arm:
        return 0.0
    mk = int(grid.indices_of([component.time])[0])
    if interval > mk:
        return 0.0
    s_prev = curves.survival_prev[a_obs, subject, interval]
    if s_prev < survival_floor:
        raise PositivityError(
            f"event-free survival {s_prev:.3e} below floor {survival_floor:g}"
        )
    weight = 1.0 / (propensity_obs[subject] * censoring_values[a_obs, subject, interval])
    if component.cause is None:
        return float(weight * (-curves.survival[a_obs, subject, mk] / s_prev))
    jc = component.cause - 1
    delta_f = (
        curves.risk[a_obs, subject, mk, jc] - curves.risk_prev[a_obs, subject, interval, jc]
    )
    base = -delta_f / s_prev
    if cause == component.cause:
        base = 1.0 + base
    return float(weight * base)


def clever_covariates(
    nuisance: NuisanceFit,
    spec: TargetSpec,
    hazards: HazardTensor | None = None,
    survival_floor: float = DEFAULT_SURVIVAL_FLOOR,
) -> np.ndarray:
    """Materialized clever covariates at the observed arms, indexed
    (subject, interval, cause, component).  Contrast components carry the
    minus sign on their arm-0 part.  Intended for small problems and
    cross-checks; the estimation path never builds this array."""
    hazards = hazards if hazards is not None else nuisance.hazards
    engine = EifEngine(nuisance, spec, survival_floor=survival_floor)
    size = engine.n * engine.m * engine.j * spec.d
    if size > 5e7:
        raise DataError("clever covariate array too large to materialize")
    curves = engine.curves(hazards)
    engine._check_floor(curves)
    sc = np.maximum(nuisance.censoring.values, nuisance.censoring_floor)
    pi_obs = np.where(
        nuisance.dataset.treatments == 1,
        nuisance.propensity.predict(nuisance.dataset.covariates),
        1.0 - nuisance.propensity.predict(nuisance.dataset.covariates),
    )
    out = np.zeros((engine.n, engine.m, engine.j, spec.d))
    for ci, comp in enumerate(spec.components):
        for arm, sign in spec.arm_slices():
            mk = engine.comp_midx[ci]
            for i in range(engine.n):
                if nuisance.dataset.treatments[i] != arm:
                    continue
                for m in range(mk + 1):
                    weight = 1.0 / (pi_obs[i] * sc[arm, i, m])
                    s_prev = curves.survival_prev[arm, i, m]
                    if comp.cause is None:
                        w = -curves.survival[arm, i, mk] / s_prev
                        out[i, m, :, ci] = sign * weight * w
                    else:
                        jc = comp.cause - 1
                        delta_f = curves.risk[arm, i, mk, jc] - curves.risk_prev[arm, i, m, jc]
                        for l in range(engine.j):
                            w = (1.0 if l == jc else 0.0) - delta_f / s_prev
                            out[i, m, l, ci] = sign * weight * w
    return out


def eif_matrix(hazards: HazardTensor, nuisance: NuisanceFit, spec: TargetSpec,
               survival_floor: float = DEFAULT_SURVIVAL_FLOOR) -> EifMatrix:
    """Influence-function matrix for the target at the given hazards."""
    engine = EifEngine(nuisance, spec, survival_floor=survival_floor)
    return engine.evaluate(hazards).eif


def plugin_estimates(hazards: HazardTensor, spec: TargetSpec, grid: TimeGrid) -> np.ndarray:
    """Plug-in estimates: empirical covariate average of the targeted curve
    values (difference of arms in contrast mode)."""
    curves = compute_curves(hazards)
    midx = grid.indices_of([c.time for c in spec.components])
    causes = np.array([-1 if c.cause is None else c.cause - 1 for c in spec.components])
    psi = np.zeros(spec.d)
    for a, sign in spec.arm_slices():
        vals = np.empty((hazards.num_subjects, spec.d))
        f_cols = causes >= 0
        if np.any(f_cols):
            vals[:, f_cols] = curves.risk[a][:, midx[f_cols], causes[f_cols]]
        if np.any(~f_cols):
            vals[:, ~f_cols] = curves.survival[a][:, midx[~f_cols]]
        psi += sign * vals.mean(axis=0)
    return psi
