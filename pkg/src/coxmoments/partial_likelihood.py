"""Risk-set processes and the Cox log partial likelihood.

For a time-sorted dataset the risk set ``{j : T_j >= t}`` is a suffix of the
arrays, so all of

    Phi_n(t; b) = 1/n sum_j 1{T_j >= t} exp(b'Z_j)
    D1_n(t; b)  = 1/n sum_j 1{T_j >= t} Z_j exp(b'Z_j)
    D2_n(t; b)  = 1/n sum_j 1{T_j >= t} Z_j Z_j' exp(b'Z_j)

are read off backward cumulative sums. The exponentials are computed with a
common shift ``max_j b'Z_j``; ratios such as D1_n/Phi_n are formed from the
shifted sums, so the shift cancels. Tied event times each use the full risk
set (Breslow convention).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .survival_data import Dataset

# shifted risk-set mass below this is recomputed with a risk-set-local shift
_UNDERFLOW = 1e-250


class NoEventsError(ValueError):
    def __init__(self, message: str = "no uncensored observations"):
        super().__init__(message)


def as_beta(beta, d: int) -> np.ndarray:
    b = np.atleast_1d(np.asarray(beta, dtype=float)).reshape(-1)
    if b.size != d:
        raise ValueError(f"beta has dimension {b.size}, dataset has d={d}")
    if not np.isfinite(b).all():
        raise ValueError("beta must be finite")
    return b


def _suffix_sum(x: np.ndarray) -> np.ndarray:
    """Backward cumulative sum with a trailing zero block (empty risk set)."""
    out = np.zeros((x.shape[0] + 1,) + x.shape[1:])
    # extended-precision accumulator: a float64 running sum drifts by ~n*eps,
    # which at large n puts the score's roundoff floor above usual tolerances
    out[:-1] = np.cumsum(x[::-1], axis=0, dtype=np.longdouble)[::-1]
    return out


@dataclass(frozen=True)
class RiskSetSums:
    """Shifted backward sums over the sorted dataset.

    ``s0[i] = sum_{j>=i} w_j`` with ``w_j = exp(b'Z_j - shift)``, likewise
    ``s1`` (weights times Z) and ``s2`` (weights times ZZ'); index ``n`` is the
    empty risk set.
    """

    eta: np.ndarray
    shift: float
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray | None

    @classmethod
    def build(cls, ds: Dataset, beta, second_order: bool = True) -> "RiskSetSums":
        b = as_beta(beta, ds.d)
        z = ds.covariates
        eta = z @ b
        shift = float(eta.max())
        w = np.exp(eta - shift)
        wz = z * w[:, None]
        # w * z_j * z_k in a fixed order so the result is exactly symmetric
        s2 = _suffix_sum(w[:, None, None] * (z[:, :, None] * z[:, None, :])) if second_order else None
        return cls(eta, shift, _suffix_sum(w), _suffix_sum(wz), s2)


def risk_start(ds: Dataset, t) -> np.ndarray:
    """Index of the first observation with ``T >= t``."""
    return np.searchsorted(ds.time, t, side="left")


def phi_n(t, beta, ds: Dataset):
    """Phi_n(t; beta), left-continuous and non-increasing in ``t``."""
    rs = RiskSetSums.build(ds, beta, second_order=False)
    val = rs.s0[risk_start(ds, t)] * np.exp(rs.shift) / ds.n
    return float(val) if np.ndim(t) == 0 else val


def d1_n(t, beta, ds: Dataset) -> np.ndarray:
    """D1_n(t; beta), the beta-gradient of Phi_n. Shape ``(d,)`` or ``(len(t), d)``."""
    rs = RiskSetSums.build(ds, beta, second_order=False)
    return rs.s1[risk_start(ds, t)] * np.exp(rs.shift) / ds.n


def d2_n(t, beta, ds: Dataset) -> np.ndarray:
    """D2_n(t; beta), the beta-Hessian of Phi_n. Shape ``(d, d)`` or ``(len(t), d, d)``."""
    rs = RiskSetSums.build(ds, beta)
    return rs.s2[risk_start(ds, t)] * np.exp(rs.shift) / ds.n


@dataclass(frozen=True)
class EventMoments:
    """Per-event risk-set quantities at the m event times (ties repeated)."""

    eta: np.ndarray  # b'Z at each event
    covariates: np.ndarray  # Z at each event, (m, d)
    log_mass: np.ndarray  # log sum_{risk set} exp(b'Z_j)
    mean: np.ndarray  # D1_n / Phi_n, (m, d)
    second: np.ndarray | None  # D2_n / Phi_n, (m, d, d)


def _local_moments(ds: Dataset, eta: np.ndarray, start: int, second_order: bool):
    z = ds.covariates[start:]
    e = eta[start:]
    c = e.max()
    w = np.exp(e - c)
    s0 = w.sum()
    mean = (z * w[:, None]).sum(axis=0) / s0
    second = np.einsum("i,ij,ik->jk", w, z, z) / s0 if second_order else None
    return c + np.log(s0), mean, second


def event_moments(beta, ds: Dataset, second_order: bool = True) -> EventMoments:
    events = np.flatnonzero(ds.status == 1)
    if events.size == 0:
        raise NoEventsError()
    rs = RiskSetSums.build(ds, beta, second_order=second_order)
    starts = risk_start(ds, ds.time[events])
    s0 = rs.s0[starts]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mass = rs.shift + np.log(s0)
        mean = rs.s1[starts] / s0[:, None]
        second = rs.s2[starts] / s0[:, None, None] if second_order else None
    for k in np.flatnonzero(s0 < _UNDERFLOW):
        log_mass[k], mean[k], sec = _local_moments(ds, rs.eta, int(starts[k]), second_order)
        if second_order:
            second[k] = sec
    return EventMoments(rs.eta[events], ds.covariates[events], log_mass, mean, second)


def log_partial_likelihood(beta, ds: Dataset) -> float:
    em = event_moments(beta, ds, second_order=False)
    return float(np.sum(em.eta - em.log_mass))


def score(beta, ds: Dataset) -> np.ndarray:
    """Gradient of the log partial likelihood: sum over events of Z_i - D1_n/Phi_n."""
    em = event_moments(beta, ds, second_order=False)
    return (em.covariates - em.mean).sum(axis=0)


def _information(em: EventMoments) -> np.ndarray:
    cov = em.second - em.mean[:, :, None] * em.mean[:, None, :]
    info = cov.sum(axis=0)
    return 0.5 * (info + info.T)


def information(beta, ds: Dataset) -> np.ndarray:
    """Negative Hessian of the log partial likelihood.

    Sum over events of the exp(b'Z)-weighted covariance of Z in the risk set,
    i.e. D2_n/Phi_n - (D1_n/Phi_n)(D1_n/Phi_n)'.
    """
    return _information(event_moments(beta, ds))


def evaluate(beta, ds: Dataset) -> tuple[float, np.ndarray, np.ndarray]:
    """Log partial likelihood, score and information from one pass."""
    em = event_moments(beta, ds)
    return (
        float(np.sum(em.eta - em.log_mass)),
        (em.covariates - em.mean).sum(axis=0),
        _information(em),
    )


def titu_sides(beta, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of the bound ``(D1_n)_k^2 / Phi_n <= 1/n sum_i (Z_i)_k^2 exp(b'Z_i)``.

    Returns the left side at every observed time, shape ``(n, d)``, and the
    right side, shape ``(d,)``. The left side is evaluated at the risk set of
    each observation, which covers every value Phi_n takes on ``[0, T_(n)]``.
    """
    rs = RiskSetSums.build(ds, beta, second_order=False)
    scale = np.exp(rs.shift) / ds.n
    starts = risk_start(ds, ds.time)
    s0 = rs.s0[starts]
    lhs = rs.s1[starts] ** 2 / s0[:, None] * scale
    w = np.exp(rs.eta - rs.shift)
    rhs = (ds.covariates**2 * w[:, None]).sum(axis=0) * scale
    return lhs, rhs
