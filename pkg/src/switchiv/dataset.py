"""Trial data model: subjects, time-varying covariate rows, CSV I/O and exposure.

Arm coding follows the analysis convention used throughout the package:
``arm = 1`` is the control arm, ``arm = 0`` the experimental arm.  The
treatment process ``D(t)`` is 1 while a subject takes control treatment and
0 once on experimental treatment.  Only control subjects can switch, once,
at ``switch_time``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

REQUIRED_COLUMNS = ("id", "arm", "time", "event")
OPTIONAL_COLUMNS = ("switch_time", "prog_time")


class DataError(ValueError):
    """Raised when input data violate the dataset invariants."""


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    arm: int
    time: float
    event: int
    switch_time: float | None = None
    covariates: tuple[float, ...] = ()
    progression_time: float | None = None

    @property
    def switched(self) -> bool:
        return self.switch_time is not None


@dataclass(frozen=True)
class TimeVaryingCovariateRow:
    id: str
    start: float
    stop: float
    values: tuple[float, ...]


@dataclass(frozen=True)
class EventGrid:
    times: np.ndarray
    tau_end: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise DataError("event grid must be a non-empty 1-d array")
        if np.any(np.diff(t) <= 0):
            raise DataError("event times must be strictly increasing")
        if t[-1] > self.tau_end:
            raise DataError("last event time exceeds study end")
        object.__setattr__(self, "times", t)

    @property
    def k(self) -> int:
        return self.times.size

    @property
    def increments(self) -> np.ndarray:
        """Interval lengths tau_j - tau_{j-1} with tau_0 = 0."""
        return np.diff(self.times, prepend=0.0)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:  # truthy iff problems were found
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


@dataclass(frozen=True)
class Dataset:
    subjects: tuple[SubjectRecord, ...]
    covariate_names: tuple[str, ...] = ()
    tv_rows: tuple[TimeVaryingCovariateRow, ...] | None = None
    tv_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if self.tv_rows is not None:
            object.__setattr__(self, "tv_rows", tuple(self.tv_rows))
        object.__setattr__(self, "tv_names", tuple(self.tv_names))

    def __len__(self) -> int:
        return len(self.subjects)

    # Column views.  Datasets are immutable so these are computed once.
    @cached_property
    def ids(self) -> np.ndarray:
        return np.array([s.id for s in self.subjects], dtype=object)

    @cached_property
    def arm(self) -> np.ndarray:
        return np.array([s.arm for s in self.subjects], dtype=float)

    @cached_property
    def time(self) -> np.ndarray:
        return np.array([s.time for s in self.subjects], dtype=float)

    @cached_property
    def event(self) -> np.ndarray:
        return np.array([s.event for s in self.subjects], dtype=float)

    @cached_property
    def switch(self) -> np.ndarray:
        """Switch times with ``inf`` for subjects who never crossed over."""
        return np.array(
            [math.inf if s.switch_time is None else s.switch_time for s in self.subjects],
            dtype=float,
        )

    @cached_property
    def progression(self) -> np.ndarray:
        return np.array(
            [math.inf if s.progression_time is None else s.progression_time
             for s in self.subjects],
            dtype=float,
        )

    @cached_property
    def covariates(self) -> np.ndarray:
        if not self.subjects:
            return np.empty((0, len(self.covariate_names)))
        return np.array([s.covariates for s in self.subjects], dtype=float).reshape(
            len(self.subjects), len(self.covariate_names)
        )

    def covariate_matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        """Columns of the baseline covariate matrix selected by name."""
        if names is None:
            return self.covariates
        idx = []
        for name in names:
            if name not in self.covariate_names:
                raise DataError(f"unknown covariate {name!r}")
            idx.append(self.covariate_names.index(name))
        return self.covariates[:, idx]

    def subset(self, mask: np.ndarray) -> "Dataset":
        keep = [s for s, m in zip(self.subjects, mask) if m]
        rows = None
        if self.tv_rows is not None:
            kept = {s.id for s in keep}
            rows = tuple(r for r in self.tv_rows if r.id in kept)
        return replace(self, subjects=tuple(keep), tv_rows=rows)


# -- validation ---------------------------------------------------------------

def validate(d: Dataset) -> ValidationReport:
    problems: list[str] = []
    seen: set[str] = set()
    width = len(d.covariate_names)
    for s in d.subjects:
        if s.id in seen:
            problems.append(f"{s.id}: duplicate id")
        seen.add(s.id)
        if s.arm not in (0, 1):
            problems.append(f"{s.id}: arm must be 0 or 1")
        if s.event not in (0, 1):
            problems.append(f"{s.id}: event must be 0 or 1")
        if not s.time >= 0 or not math.isfinite(s.time):
            problems.append(f"{s.id}: negative or non-finite follow-up time")
        if s.switch_time is not None:
            if s.switch_time < 0:
                problems.append(f"{s.id}: negative switch time")
            if s.switch_time > s.time:
                problems.append(f"{s.id}: switch after end of follow-up")
            if s.arm == 0:
                problems.append(f"{s.id}: experimental-arm subject with switch_time")
        if s.progression_time is not None and s.progression_time < 0:
            problems.append(f"{s.id}: negative progression time")
        if len(s.covariates) != width:
            problems.append(f"{s.id}: expected {width} covariates, got {len(s.covariates)}")
        elif any(not math.isfinite(v) for v in s.covariates):
            problems.append(f"{s.id}: non-finite covariate value")
    if d.tv_rows is not None:
        by_id: dict[str, list[TimeVaryingCovariateRow]] = {}
        for r in d.tv_rows:
            by_id.setdefault(r.id, []).append(r)
            if len(r.values) != len(d.tv_names):
                problems.append(f"{r.id}: time-varying row has wrong number of values")
        times = {s.id: s.time for s in d.subjects}
        for sid, rows in by_id.items():
            if sid not in times:
                problems.append(f"{sid}: time-varying rows for unknown subject")
                continue
            rows.sort(key=lambda r: r.start)
            if any(r.start >= r.stop for r in rows):
                problems.append(f"{sid}: time-varying row with start >= stop")
            if rows[0].start != 0:
                problems.append(f"{sid}: time-varying rows do not start at 0")
            if any(a.stop != b.start for a, b in zip(rows, rows[1:])):
                problems.append(f"{sid}: time-varying rows overlap or leave gaps")
            if rows[-1].stop < times[sid]:
                problems.append(f"{sid}: time-varying rows end before follow-up")
    return ValidationReport(tuple(problems))


def make_dataset(
    subjects: Iterable[SubjectRecord],
    covariate_names: Sequence[str] = (),
    tv_rows: Iterable[TimeVaryingCovariateRow] | None = None,
    tv_names: Sequence[str] = (),
) -> Dataset:
    """Build a dataset and raise :class:`DataError` on the first violation."""
    d = Dataset(tuple(subjects), tuple(covariate_names),
                None if tv_rows is None else tuple(tv_rows), tuple(tv_names))
    report = validate(d)
    if report:
        raise DataError("; ".join(report.violations))
    return d


def from_arrays(
    arm, time, event, switch_time=None, covariates=None, covariate_names=None,
    progression_time=None, ids=None,
) -> Dataset:
    """Vector constructor; ``nan``/``inf`` in optional time arrays means absent."""
    arm = np.asarray(arm)
    n = arm.size
    sw = np.full(n, np.inf) if switch_time is None else np.asarray(switch_time, float)
    pr = np.full(n, np.inf) if progression_time is None else np.asarray(progression_time, float)
    X = np.empty((n, 0)) if covariates is None else np.asarray(covariates, float).reshape(n, -1)
    if covariate_names is None:
        covariate_names = [f"x{j + 1}" for j in range(X.shape[1])]
    if ids is None:
        width = len(str(n))
        ids = [f"s{i:0{width}d}" for i in range(n)]
    subjects = [
        SubjectRecord(
            id=str(ids[i]),
            arm=int(arm[i]),
            time=float(time[i]),
            event=int(event[i]),
            switch_time=None if not np.isfinite(sw[i]) else float(sw[i]),
            covariates=tuple(float(v) for v in X[i]),
            progression_time=None if not np.isfinite(pr[i]) else float(pr[i]),
        )
        for i in range(n)
    ]
    return make_dataset(subjects, covariate_names)


# -- CSV I/O ------------------------------------------------------------------

def _number(value: str, column: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"line {line}: non-numeric value {value!r} in column {column!r}") from None


def _flag(value: str, column: str, line: int) -> int:
    x = _number(value, column, line)
    if x not in (0.0, 1.0):
        raise DataError(f"line {line}: column {column!r} must be 0 or 1, got {value!r}")
    return int(x)


def parse_subjects(
    path: str | Path,
    covariates: Sequence[str] | None = None,
    tv_path: str | Path | None = None,
) -> Dataset:
    """Read a wide subject CSV (and optionally a long time-varying CSV).

    Columns beyond ``id, arm, time, event, switch_time, prog_time`` are baseline
    covariates unless ``covariates`` restricts them.  Empty cells in
    ``switch_time``/``prog_time`` mean the event never happened.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        extra = [h for h in header if h not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
        if covariates is None:
            cov_names = extra
        else:
            unknown = [c for c in covariates if c not in extra]
            if unknown:
                raise DataError(f"{path}: unknown covariate(s) {', '.join(unknown)}")
            cov_names = list(covariates)
        col = {h: i for i, h in enumerate(header)}
        subjects = []
        seen: set[str] = set()
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} cells, got {len(row)}")
            cell = lambda name: row[col[name]].strip()  # noqa: E731
            sid = cell("id")
            if sid in seen:
                raise DataError(f"line {line}: duplicate id {sid!r}")
            seen.add(sid)
            sw = cell("switch_time") if "switch_time" in col else ""
            pg = cell("prog_time") if "prog_time" in col else ""
            values = []
            for name in cov_names:
                v = cell(name)
                if v == "":
                    raise DataError(f"line {line}: missing covariate {name!r}")
                values.append(_number(v, name, line))
            rec = SubjectRecord(
                id=sid,
                arm=_flag(cell("arm"), "arm", line),
                time=_number(cell("time"), "time", line),
                event=_flag(cell("event"), "event", line),
                switch_time=None if sw == "" else _number(sw, "switch_time", line),
                covariates=tuple(values),
                progression_time=None if pg == "" else _number(pg, "prog_time", line),
            )
            if rec.switch_time is not None and rec.arm == 0:
                raise DataError(f"line {line}: experimental-arm subject with switch_time")
            if rec.switch_time is not None and rec.switch_time > rec.time:
                raise DataError(f"line {line}: switch after end of follow-up")
            subjects.append(rec)
    tv_rows, tv_names = None, ()
    if tv_path is not None:
        tv_rows, tv_names = parse_tv_rows(tv_path)
    return make_dataset(subjects, cov_names, tv_rows, tv_names)


def parse_tv_rows(path: str | Path) -> tuple[list[TimeVaryingCovariateRow], tuple[str, ...]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in ("id", "start", "stop") if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        names = tuple(h for h in header if h not in ("id", "start", "stop"))
        col = {h: i for i, h in enumerate(header)}
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            rows.append(TimeVaryingCovariateRow(
                id=row[col["id"]].strip(),
                start=_number(row[col["start"]], "start", line),
                stop=_number(row[col["stop"]], "stop", line),
                values=tuple(_number(row[col[n]], n, line) for n in names),
            ))
    return rows, names


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_subjects(d: Dataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(REQUIRED_COLUMNS + OPTIONAL_COLUMNS) + list(d.covariate_names))
        for s in d.subjects:
            w.writerow([s.id, s.arm, _fmt(s.time), s.event, _fmt(s.switch_time),
                        _fmt(s.progression_time)] + [repr(float(v)) for v in s.covariates])


def write_tv_rows(d: Dataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "start", "stop", *d.tv_names])
        for r in d.tv_rows or ():
            w.writerow([r.id, _fmt(r.start), _fmt(r.stop), *[repr(float(v)) for v in r.values]])


# -- treatment process --------------------------------------------------------

def treatment_at(s: SubjectRecord, t: float) -> int:
    """D(t): 1 while on control treatment, 0 on experimental (right-continuous)."""
    if s.arm == 0:
        return 0
    if s.switch_time is None or t < s.switch_time:
        return 1
    return 0


def cumulative_exposure(s: SubjectRecord, t: float) -> float:
    """Time spent on control treatment up to ``t``, i.e. the integral of D."""
    if s.arm == 0:
        return 0.0
    if s.switch_time is None:
        return float(t)
    return float(min(t, s.switch_time))


def treatment_matrix(d: Dataset, times: np.ndarray) -> np.ndarray:
    """D_i(t) for every subject (rows) and time (columns)."""
    times = np.asarray(times, dtype=float)
    return ((d.arm[:, None] == 1) & (times[None, :] < d.switch[:, None])).astype(float)


def exposure_matrix(d: Dataset, times: np.ndarray) -> np.ndarray:
    """Cumulative control exposure for every subject and time."""
    times = np.asarray(times, dtype=float)
    return d.arm[:, None] * np.minimum(times[None, :], d.switch[:, None])


def event_grid(d: Dataset, tau_end: float | None = None) -> EventGrid:
    ev = d.time[d.event == 1]
    if ev.size == 0:
        raise DataError("no observed events in dataset")
    tau = float(d.time.max()) if tau_end is None else float(tau_end)
    times = np.unique(ev[ev <= tau])
    if times.size == 0:
        raise DataError(f"no observed events before study end {tau}")
    return EventGrid(times, tau)


def at_risk_matrix(d: Dataset, grid: EventGrid) -> np.ndarray:
    """Y_i(tau_j) = I(T_i >= tau_j)."""
    return (d.time[:, None] >= grid.times[None, :]).astype(float)


def event_matrix(d: Dataset, grid: EventGrid) -> np.ndarray:
    """dN_i(tau_j) = I(T_i = tau_j, event_i = 1)."""
    return ((d.time[:, None] == grid.times[None, :]) & (d.event[:, None] == 1)).astype(float)
