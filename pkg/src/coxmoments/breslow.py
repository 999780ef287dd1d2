"""Step functions, the Breslow estimator and exact sup-norm distances."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from .partial_likelihood import RiskSetSums, as_beta, risk_start
from .survival_data import Dataset

Side = Literal["right", "left"]
Direction = Literal["increasing", "decreasing"]


class DomainWarning(UserWarning):
    """Query outside the range where the estimator is meant to be used."""


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Piecewise-constant function with finitely many jumps.

    ``values[k]`` is the value just after ``jumps[k]``; ``initial`` is the
    value before the first jump. A right-continuous function takes the
    post-jump value at the jump location, a left-continuous one the pre-jump
    value. Queries at ``t >= domain_end`` (if set) still evaluate but warn.
    """

    jumps: np.ndarray
    values: np.ndarray
    initial: float
    side: Side = "right"
    domain_end: float | None = None

    def __post_init__(self):
        jumps = np.asarray(self.jumps, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if jumps.size != values.size:
            raise ValueError("jumps and values must have the same length")
        if jumps.size and not np.all(np.diff(jumps) > 0):
            raise ValueError("jump locations must be strictly ascending")
        if self.side not in ("right", "left"):
            raise ValueError(f"side must be 'right' or 'left', got {self.side!r}")
        jumps.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "initial", float(self.initial))

    def _index(self, t):
        # number of jumps that have taken effect at t
        return np.searchsorted(self.jumps, t, side="right" if self.side == "right" else "left")

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.domain_end is not None and np.any(t_arr >= self.domain_end):
            warnings.warn(
                f"evaluating at t >= {self.domain_end}, outside the estimation domain",
                DomainWarning,
                stacklevel=2,
            )
        table = np.concatenate(([self.initial], self.values))
        out = table[self._index(t_arr)]
        return float(out) if out.ndim == 0 else out

    def left_limit(self, t):
        table = np.concatenate(([self.initial], self.values))
        out = table[np.searchsorted(self.jumps, np.asarray(t, dtype=float), side="left")]
        return float(out) if out.ndim == 0 else out

    def right_limit(self, t):
        table = np.concatenate(([self.initial], self.values))
        out = table[np.searchsorted(self.jumps, np.asarray(t, dtype=float), side="right")]
        return float(out) if out.ndim == 0 else out

    def is_monotone(self, direction: Direction) -> bool:
        seq = np.concatenate(([self.initial], self.values))
        steps = np.diff(seq)
        return bool(np.all(steps >= 0) if direction == "increasing" else np.all(steps <= 0))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "value"])
            writer.writerow(["-inf", repr(self.initial)])
            for t, v in zip(self.jumps.tolist(), self.values.tolist()):
                writer.writerow([repr(t), repr(v)])

    @classmethod
    def from_csv(cls, path, side: Side = "right") -> "StepFunction":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["t", "value"]:
            raise ValueError(f"{path}: expected header t,value")
        body = [(float(a), float(b)) for a, b in rows[1:]]
        if not body or not math.isinf(body[0][0]):
            raise ValueError(f"{path}: first data row must hold the initial value at t=-inf")
        return cls(
            jumps=[t for t, _ in body[1:]], values=[v for _, v in body[1:]], initial=body[0][1], side=side
        )


def breslow_estimator(ds: Dataset, beta_hat) -> StepFunction:
    """Breslow estimator of the cumulative baseline hazard.

    Jumps by ``1 / (n Phi_n(T_i; beta_hat))`` at each uncensored ``T_i``; tied
    event times add up. Right-continuous, reported on ``[0, max T)``.
    """
    b = as_beta(beta_hat, ds.d)
    domain_end = float(ds.time[-1])
    event_t = ds.time[ds.status == 1]
    if event_t.size == 0:
        return StepFunction(np.empty(0), np.empty(0), 0.0, "right", domain_end)
    uniq, counts = np.unique(event_t, return_counts=True)
    rs = RiskSetSums.build(ds, b, second_order=False)
    s0 = rs.s0[risk_start(ds, uniq)]
    # log-domain so a tiny shifted risk-set mass cannot overflow the increment
    increments = counts * np.exp(-rs.shift - np.log(s0))
    return StepFunction(uniq, np.cumsum(increments), 0.0, "right", domain_end)


def phi_n_curve(ds: Dataset, beta) -> StepFunction:
    """Phi_n(.; beta) as a left-continuous, non-increasing step function."""
    b = as_beta(beta, ds.d)
    rs = RiskSetSums.build(ds, b, second_order=False)
    scale = math.exp(rs.shift) / ds.n
    uniq = np.unique(ds.time)
    # after the jump at uniq[k] the risk set is {T > uniq[k]}
    after = rs.s0[np.searchsorted(ds.time, uniq, side="right")] * scale
    return StepFunction(uniq, after, rs.s0[0] * scale, "left")


def _check_monotone(f, a: float, b: float, direction: Direction, samples: int = 513):
    if math.isinf(b):
        hi = a + 1.0 if a >= 0 else 1.0
        grid = np.concatenate((np.linspace(a, hi, samples // 2), hi + np.geomspace(1e-3, 1e6, samples // 2)))
    else:
        grid = np.linspace(a, b, samples, endpoint=False)
    vals = np.asarray(f(grid), dtype=float)
    steps = np.diff(vals)
    tol = 1e-12 * max(1.0, float(np.nanmax(np.abs(vals))))
    bad = steps < -tol if direction == "increasing" else steps > tol
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise ValueError(f"f is not {direction} on [{a}, {b}): violation between {grid[k]} and {grid[k + 1]}")


def sup_distance(
    step: StepFunction,
    f: Callable,
    direction: Direction,
    a: float,
    b: float,
    f_at_b: float | None = None,
    include_b: bool = False,
    check: bool = True,
) -> float:
    """Exact ``sup |step(t) - f(t)|`` over ``[a, b)`` (``[a, b]`` if ``include_b``).

    ``f`` must be continuous and monotone on the domain and vectorised. Between
    jumps the step is constant and ``f`` monotone, so the supremum over each
    open piece is attained at a one-sided limit at its ends; the candidates
    are those limits plus the values at the jump points themselves.
    ``f_at_b`` overrides the left limit of ``f`` at ``b`` (needed when
    ``b`` is infinite or ``f`` is not defined there).
    """
    if not b > a:
        raise ValueError("need a < b")
    if direction not in ("increasing", "decreasing"):
        raise ValueError(f"unknown direction {direction!r}")
    if check:
        _check_monotone(f, a, b, direction)

    inner = step.jumps[(step.jumps > a) & (step.jumps < b)]
    points = np.concatenate(([a], inner))
    f_points = np.asarray(f(points), dtype=float).reshape(-1)
    if f_at_b is None:
        f_at_b = float(np.asarray(f(np.array([b])), dtype=float).reshape(-1)[0])
    # value on each open piece (points[k], next point)
    piece = step.right_limit(points)
    f_ends = np.concatenate((f_points[1:], [f_at_b]))
    at_points = step(points) if step.domain_end is None else _quiet(step, points)
    cand = [
        np.abs(piece - f_points),
        np.abs(piece - f_ends),
        np.abs(at_points - f_points),
    ]
    if include_b:
        cand.append(np.atleast_1d(abs(_quiet(step, b) - f_at_b)))
    return float(max(c.max() for c in cand))


def _quiet(step: StepFunction, t):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DomainWarning)
        return step(t)
