"""Right-censored survival data with covariates.

A :class:`Dataset` holds the triplets ``(T_i, Delta_i, Z_i)`` as numpy arrays
sorted by follow-up time. Everything downstream (risk-set sums, the Breslow
estimator, the counting processes) relies on that ordering.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Invalid survival data. ``row`` is the 1-based data row, if known."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Observation:
    time: float
    status: int
    covariates: tuple[float, ...]

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time >= 0):
            raise DataError(f"time must be finite and nonnegative, got {self.time}")
        if self.status not in (0, 1):
            raise DataError(f"status must be 0 or 1, got {self.status}")
        if not all(math.isfinite(z) for z in self.covariates):
            raise DataError("covariates must be finite")


@dataclass(frozen=True)
class ValidationReport:
    n: int
    d: int
    n_events: int
    n_tied_times: int  # observations sharing their time with another observation

    @property
    def has_ties(self) -> bool:
        return self.n_tied_times > 0


def _count_tied(times: np.ndarray) -> int:
    if times.size < 2:
        return 0
    same = times[1:] == times[:-1]
    tied = np.zeros(times.size, dtype=bool)
    tied[1:] |= same
    tied[:-1] |= same
    return int(tied.sum())


@dataclass(frozen=True, eq=False)
class Dataset:
    """Time-sorted survival data.

    Construct through :meth:`from_arrays` (or :func:`load_csv`), which
    validates and sorts. Arrays are made read-only so a dataset can be shared
    between threads and cached computations.
    """

    time: np.ndarray
    status: np.ndarray
    covariates: np.ndarray  # shape (n, d)
    report: ValidationReport = field(repr=False)

    @classmethod
    def from_arrays(cls, time, status, covariates) -> "Dataset":
        time = np.asarray(time, dtype=float).reshape(-1)
        status_raw = np.asarray(status).reshape(-1)
        z = np.asarray(covariates, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        n = time.size
        if n < 1:
            raise DataError("dataset must contain at least one observation")
        if status_raw.size != n or z.shape[0] != n:
            raise DataError("time, status and covariates must have the same length")
        if z.ndim != 2 or z.shape[1] < 1:
            raise DataError("covariates must be an (n, d) array with d >= 1")

        bad = np.flatnonzero(~np.isfinite(time) | (time < 0))
        if bad.size:
            raise DataError(f"time must be finite and nonnegative, got {time[bad[0]]}", int(bad[0]) + 1)
        bad = np.flatnonzero((status_raw != 0) & (status_raw != 1))
        if bad.size:
            raise DataError(f"status must be 0 or 1, got {status_raw[bad[0]]}", int(bad[0]) + 1)
        bad = np.flatnonzero(~np.isfinite(z).all(axis=1))
        if bad.size:
            raise DataError("covariates must be finite", int(bad[0]) + 1)

        order = np.argsort(time, kind="stable")
        time = np.ascontiguousarray(time[order])
        status_arr = np.ascontiguousarray(status_raw[order].astype(np.int8))
        z = np.ascontiguousarray(z[order])
        for a in (time, status_arr, z):
            a.setflags(write=False)
        report = ValidationReport(
            n=n, d=z.shape[1], n_events=int(status_arr.sum()), n_tied_times=_count_tied(time)
        )
        return cls(time, status_arr, z, report)

    @classmethod
    def from_observations(cls, observations: Iterable[Observation]) -> "Dataset":
        obs = list(observations)
        if not obs:
            raise DataError("dataset must contain at least one observation")
        d = len(obs[0].covariates)
        for i, o in enumerate(obs):
            if len(o.covariates) != d:
                raise DataError(f"expected {d} covariates, got {len(o.covariates)}", i + 1)
        return cls.from_arrays(
            [o.time for o in obs], [o.status for o in obs], [o.covariates for o in obs]
        )

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(float(t), int(s), tuple(float(v) for v in z))
            for t, s, z in zip(self.time, self.status, self.covariates)
        ]

    def with_covariates(self, covariates) -> "Dataset":
        """Same times and statuses (already sorted) with replaced covariates."""
        return Dataset.from_arrays(self.time, self.status, covariates)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.time, other.time)
            and np.array_equal(self.status, other.status)
            and np.array_equal(self.covariates, other.covariates)
        )

    def __len__(self):
        return self.n


def event_times(ds: Dataset) -> np.ndarray:
    """Ascending times of the uncensored observations, duplicates kept."""
    return ds.time[ds.status == 1]


def load_csv(path) -> Dataset:
    """Read a ``time,status,z1,...,zd`` file.

    Raises
    ------
    DataError
        On a bad header or any invalid row; the message names the data row
        (1-based, header excluded).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        d = len(header) - 2
        expected = ["time", "status"] + [f"z{k + 1}" for k in range(d)]
        if d < 1 or header != expected:
            raise DataError(f"{path}: header must be time,status,z1,...,zd; got {','.join(header)}")

        times, statuses, zs = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 2:
                raise DataError(f"expected {d + 2} columns, got {len(row)}", row_no)
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise DataError(f"malformed value in {row!r}", row_no) from None
            if not all(math.isfinite(v) for v in values):
                raise DataError("non-finite value", row_no)
            t, s = values[0], values[1]
            if t < 0:
                raise DataError(f"negative time {t}", row_no)
            if s not in (0.0, 1.0):
                raise DataError(f"status must be 0 or 1, got {row[1].strip()}", row_no)
            times.append(t)
            statuses.append(int(s))
            zs.append(values[2:])
    if not times:
        raise DataError(f"{path}: no observations")
    return Dataset.from_arrays(times, statuses, np.array(zs, dtype=float).reshape(len(times), d))


def write_csv(ds: Dataset, path) -> None:
    # repr() of a float round-trips exactly
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "status"] + [f"z{k + 1}" for k in range(ds.d)])
        for t, s, z in zip(ds.time.tolist(), ds.status.tolist(), ds.covariates.tolist()):
            writer.writerow([repr(t), s] + [repr(v) for v in z])


def dataset(times: Sequence[float], status: Sequence[int], covariates) -> Dataset:
    """Shorthand for :meth:`Dataset.from_arrays`."""
    return Dataset.from_arrays(times, status, covariates)
