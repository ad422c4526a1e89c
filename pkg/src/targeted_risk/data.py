"""Observed-data model, CSV ingestion, and the discrete time grid.

One observation is ``(covariates, treatment, followup_time, event_code)``
with ``event_code = 0`` meaning right-censored and ``1..J`` the competing
event types.  All hazards, curves and integrals downstream live on a finite
grid of time points built from the distinct observed times and the
requested target times; with hazards constant on each interval the
continuous-time likelihood is exactly representable this way.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "Subject",
    "Dataset",
    "TimeGrid",
    "ValidationReport",
    "parse_dataset",
    "build_time_grid",
    "validate_dataset",
]


@dataclass(frozen=True)
class Subject:
    """A single right-censored competing-risks observation."""

    id: str
    covariates: tuple[float, ...]
    treatment: int
    followup_time: float
    event_code: int

    def __post_init__(self):
        if not self.followup_time > 0:
            raise DataError(f"subject {self.id!r}: followup_time must be > 0")
        if self.treatment not in (0, 1):
            raise DataError(f"subject {self.id!r}: treatment must be 0 or 1")
        if self.event_code < 0:
            raise DataError(f"subject {self.id!r}: negative event code")


@dataclass(frozen=True)
class Dataset:
    """The sample plus the cause count J and the horizon of interest."""

    subjects: tuple[Subject, ...]
    num_causes: int
    horizon: float

    def __post_init__(self):
        if self.num_causes < 1:
            raise DataError("num_causes must be >= 1")
        if not self.horizon > 0:
            raise DataError("horizon must be > 0")
        if not self.subjects:
            raise DataError("dataset has no subjects")
        p = len(self.subjects[0].covariates)
        for s in self.subjects:
            if len(s.covariates) != p:
                raise DataError(
                    f"subject {s.id!r}: covariate dimension {len(s.covariates)} != {p}"
                )
            if s.event_code > self.num_causes:
                raise DataError(
                    f"subject {s.id!r}: event code {s.event_code} exceeds J={self.num_causes}"
                )
        if not any(
            s.event_code >= 1 and s.followup_time <= self.horizon for s in self.subjects
        ):
            raise DataError("no events observed on (0, horizon]; estimation is degenerate")

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def num_covariates(self) -> int:
        return len(self.subjects[0].covariates)

    # Array views used by the numeric modules; built lazily once.
    def _arrays(self):
        cache = self.__dict__.get("_array_cache")
        if cache is None:
            cache = {
                "time": np.array([s.followup_time for s in self.subjects]),
                "event": np.array([s.event_code for s in self.subjects], dtype=np.int64),
                "treatment": np.array([s.treatment for s in self.subjects], dtype=np.int64),
                "covariates": np.array([s.covariates for s in self.subjects], dtype=float),
            }
            for arr in cache.values():
                arr.flags.writeable = False
            object.__setattr__(self, "_array_cache", cache)
        return cache

    @property
    def times(self) -> np.ndarray:
        return self._arrays()["time"]

    @property
    def events(self) -> np.ndarray:
        return self._arrays()["event"]

    @property
    def treatments(self) -> np.ndarray:
        return self._arrays()["treatment"]

    @property
    def covariates(self) -> np.ndarray:
        return self._arrays()["covariates"]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times s_1 < ... < s_M <= horizon.

    Interval m is the right-closed cell (s_{m-1}, s_m] with s_0 = 0; every
    observed follow-up time at or below the horizon and every target time
    coincides with exactly one grid point.
    """

    times: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise DataError("time grid must be a non-empty 1-d array")
        if not (np.all(np.diff(t) > 0) and t[0] > 0):
            raise DataError("grid times must be strictly increasing and positive")
        if t[-1] > self.horizon:
            raise DataError("grid extends past the horizon")
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    @property
    def m(self) -> int:
        return int(self.times.size)

    @property
    def mesh(self) -> float:
        """Largest interval width, counting the leading (0, s_1] cell."""
        padded = np.concatenate(([0.0], self.times))
        return float(np.max(np.diff(padded)))

    def interval_index(self, t: float) -> int:
        """0-based index of the interval containing t; grid points map to
        their own interval.  t must lie in (0, horizon]."""
        if not 0 < t <= self.horizon:
            raise DataError(f"time {t} outside (0, {self.horizon}]")
        idx = int(np.searchsorted(self.times, t, side="left"))
        if idx >= self.m:
            raise DataError(f"time {t} beyond the last grid point {self.times[-1]}")
        return idx

    def floor_index(self, t: float) -> int:
        """0-based index of the largest grid point <= t, or -1 if t < s_1."""
        if not 0 < t <= self.horizon:
            raise DataError(f"time {t} outside (0, {self.horizon}]")
        return int(np.searchsorted(self.times, t, side="right")) - 1

    def indices_of(self, times: Sequence[float]) -> np.ndarray:
        """Exact grid indices of the given times (they must be grid points)."""
        out = np.empty(len(times), dtype=np.int64)
        for i, t in enumerate(times):
            idx = int(np.searchsorted(self.times, t, side="left"))
            if idx >= self.m or self.times[idx] != t:
                raise DataError(f"time {t} is not a grid point")
            out[i] = idx
        return out


_DEFAULT_SCHEMA = {"id": "id", "time": "time", "event": "event", "treatment": "treatment"}


def parse_dataset(
    source: Iterable[str] | str | io.TextIOBase,
    horizon: float,
    num_causes: int | None = None,
    schema: dict[str, str] | None = None,
) -> Dataset:
    """Read a header-first CSV into a validated :class:`Dataset`.

    Expected columns: ``id,time,event,treatment,x1,...,xp`` (names can be
    remapped through ``schema``).  Rows with ``time`` beyond the horizon are
    administratively censored at the horizon (event forced to 0).  Missing
    values are rejected, not imputed.
    """
    if not horizon > 0:
        raise DataError("horizon must be > 0")
    colmap = dict(_DEFAULT_SCHEMA)
    if schema:
        colmap.update(schema)

    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: header row required") from None
    header = [h.strip() for h in header]
    try:
        core_idx = {key: header.index(col) for key, col in colmap.items()}
    except ValueError as exc:
        raise DataError(f"missing required column: {exc}") from None
    cov_idx = [i for i in range(len(header)) if i not in core_idx.values()]

    subjects = []
    max_event = 0
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")

        def cell(key):
            value = row[core_idx[key]].strip()
            if value == "":
                raise DataError(f"line {lineno}: missing value in column {colmap[key]!r}")
            return value

        try:
            time = float(cell("time"))
            event = int(cell("event"))
            treatment = int(cell("treatment"))
            covs = []
            for i in cov_idx:
                value = row[i].strip()
                if value == "":
                    raise DataError(f"line {lineno}: missing covariate in column {header[i]!r}")
                covs.append(float(value))
        except DataError:
            raise
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None

        if time <= 0:
            raise DataError(f"line {lineno}: time must be > 0")
        if treatment not in (0, 1):
            raise DataError(f"line {lineno}: treatment must be 0 or 1, got {treatment}")
        if event < 0 or (num_causes is not None and event > num_causes):
            raise DataError(
                f"line {lineno}: event code {event} outside 0..{num_causes}"
            )
        if time > horizon:
            time, event = horizon, 0
        max_event = max(max_event, event)
        subjects.append(
            Subject(
                id=cell("id"),
                covariates=tuple(covs),
                treatment=treatment,
                followup_time=time,
                event_code=event,
            )
        )

    if not subjects:
        raise DataError("no data rows found")
    causes = num_causes if num_causes is not None else max(max_event, 1)
    return Dataset(subjects=tuple(subjects), num_causes=causes, horizon=horizon)


def build_time_grid(
    dataset: Dataset,
    target_times: Sequence[float] = (),
    extra_resolution: int | None = None,
) -> TimeGrid:
    """Sorted union of observed times (<= horizon) and target times,
    optionally refined to at least ``extra_resolution`` points.

    Refinement bisects the widest interval (leftmost on ties) until the
    point count is reached, so the grid mesh is non-increasing in
    ``extra_resolution`` and rebuilding from a grid's own output is a
    no-op.
    """
    tau = dataset.horizon
    for t in target_times:
        if not 0 < t <= tau:
            raise DataError(f"target time {t} outside (0, {tau}]")
    observed = dataset.times[dataset.times <= tau]
    points = np.unique(np.concatenate([observed, np.asarray(target_times, dtype=float)]))
    points = points[points > 0]
    if points.size == 0:
        raise DataError("empty time grid: no observed or target times on (0, horizon]")

    if extra_resolution:
        pts = list(points)
        while len(pts) < extra_resolution:
            padded = [0.0] + pts
            gaps = np.diff(padded)
            k = int(np.argmax(gaps))
            pts.insert(k, padded[k] + gaps[k] / 2.0)
        points = np.asarray(pts)

    return TimeGrid(times=points, horizon=tau)


@dataclass
class ValidationReport:
    """Positivity and support screens; warnings only, never fatal."""

    arm_counts: dict[int, int]
    cause_counts: dict[int, int]
    at_risk_at_horizon: dict[int, int]
    min_at_risk_proportion: float
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.warnings


def validate_dataset(dataset: Dataset, target_times: Sequence[float] | None = None) -> ValidationReport:
    """Empirical screens for the positivity conditions the estimator needs."""
    arms = dataset.treatments
    times = dataset.times
    events = dataset.events
    last_time = max(target_times) if target_times else dataset.horizon

    arm_counts = {a: int(np.sum(arms == a)) for a in (0, 1)}
    cause_counts = {
        j: int(np.sum(events == j)) for j in range(1, dataset.num_causes + 1)
    }
    at_risk = {a: int(np.sum((arms == a) & (times >= last_time))) for a in (0, 1)}
    denom = max(dataset.n, 1)
    min_prop = min(at_risk.values()) / denom

    warnings = []
    for a in (0, 1):
        if arm_counts[a] == 0:
            warnings.append(f"arm {a} has no subjects: propensity positivity fails")
        elif at_risk[a] < 10:
            warnings.append(
                f"arm {a} has only {at_risk[a]} subjects at risk at t={last_time:g}"
            )
    for j, count in cause_counts.items():
        if count == 0:
            warnings.append(
                f"no cause-{j} events observed: its absolute risk estimate is identically 0"
            )
    return ValidationReport(
        arm_counts=arm_counts,
        cause_counts=cause_counts,
        at_risk_at_horizon=at_risk,
        min_at_risk_proportion=min_prop,
        warnings=warnings,
    )
