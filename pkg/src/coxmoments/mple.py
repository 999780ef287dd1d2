"""Maximum partial likelihood estimation by damped Newton iterations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .partial_likelihood import NoEventsError, as_beta, evaluate
from .survival_data import Dataset

COND_LIMIT = 1e12


class FitError(RuntimeError):
    pass


class SingularInformationError(FitError):
    def __init__(self, detail: str = ""):
        super().__init__("singular information" + (f": {detail}" if detail else ""))


class MonotoneLikelihoodError(FitError):
    def __init__(self, detail: str = ""):
        super().__init__("monotone likelihood" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-9
    max_iterations: int = 50
    initial_beta: tuple[float, ...] | None = None  # zero vector when None
    step_halving_max: int = 30
    divergence_bound: float = 50.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.divergence_bound > 0:
            raise ValueError("divergence_bound must be positive")


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    converged: bool
    iterations: int
    score_norm: float
    information_at_solution: np.ndarray
    log_likelihood: float

    @property
    def d(self) -> int:
        return self.beta_hat.size

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat.tolist(),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "score_norm": float(self.score_norm),
            "log_likelihood": float(self.log_likelihood),
            "information": self.information_at_solution.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FitResult":
        beta = np.asarray(doc["beta_hat"], dtype=float).reshape(-1)
        d = beta.size
        info = np.asarray(doc["information"], dtype=float)
        if info.size != d * d:
            raise ValueError(f"information has {info.size} entries, expected {d * d}")
        return cls(
            beta_hat=beta,
            converged=bool(doc["converged"]),
            iterations=int(doc["iterations"]),
            score_norm=float(doc["score_norm"]),
            information_at_solution=info.reshape(d, d),
            log_likelihood=float(doc["log_likelihood"]),
        )

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read_json(cls, path) -> "FitResult":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def is_separated(ds: Dataset, tol: float = 1e-9) -> bool:
    """True if some direction v makes the partial likelihood monotone.

    That happens when every event has the largest v'Z in its risk set, with
    strict inequality for at least one risk-set member. Solved as an LP in
    ``v`` and suffix bounds ``m_k >= max_{j>=k} v'Z_j``::

        max  sum_i sum_{j in R_i} v'(Z_i - Z_j)
        s.t. v'Z_k <= m_k,  m_{k+1} <= m_k,  m_{start(i)} <= v'Z_i,  |v|_inf <= 1

    which has O(n) rows instead of one per (event, risk-set member) pair.
    """
    events = np.flatnonzero(ds.status == 1)
    if events.size == 0:
        return False
    n, d = ds.n, ds.d
    z = ds.covariates
    starts = np.searchsorted(ds.time, ds.time[events], side="left")
    suffix = np.concatenate((np.cumsum(z[::-1], axis=0)[::-1], np.zeros((1, d))))
    c = ((n - starts)[:, None] * z[events] - suffix[starts]).sum(axis=0)
    if not np.any(c):
        return False

    rows_z = sparse.hstack([sparse.csr_matrix(z), -sparse.identity(n, format="csr")])
    chain = sparse.hstack(
        [sparse.csr_matrix((n - 1, d)), sparse.eye(n - 1, n, k=1, format="csr") - sparse.eye(n - 1, n, format="csr")]
    )
    pick = sparse.csr_matrix((np.ones(events.size), (np.arange(events.size), starts)), shape=(events.size, n))
    rows_ev = sparse.hstack([-sparse.csr_matrix(z[events]), pick])
    a_ub = sparse.vstack([rows_z, chain, rows_ev], format="csr")
    res = linprog(
        np.concatenate((-c, np.zeros(n))),
        A_ub=a_ub,
        b_ub=np.zeros(a_ub.shape[0]),
        bounds=[(-1, 1)] * d + [(None, None)] * n,
        method="highs",
    )
    return bool(res.status == 0 and -res.fun > tol * max(1.0, float(np.abs(c).sum())))


def _ill_conditioned(info: np.ndarray, reference: float) -> bool:
    eig = np.linalg.eigvalsh(info)
    top = max(eig[-1], reference)
    return not (eig[0] > top / COND_LIMIT and top > 0)


def _newton_step_norm(info: np.ndarray, u: np.ndarray) -> float:
    try:
        return float(np.linalg.norm(np.linalg.solve(info, u)))
    except np.linalg.LinAlgError:
        return math.inf


def fit(ds: Dataset, cfg: SolverConfig | None = None) -> FitResult:
    """Maximise the log partial likelihood by Newton's method with step halving.

    Raises
    ------
    NoEventsError
        No uncensored observations.
    SingularInformationError
        The information is numerically singular (collinear or constant
        covariates).
    MonotoneLikelihoodError
        The iterates diverge, step halving cannot increase the likelihood, or
        the data are separated so no finite maximiser exists.
    """
    cfg = cfg or SolverConfig()
    if ds.report.n_events == 0:
        raise NoEventsError()
    beta = np.zeros(ds.d) if cfg.initial_beta is None else as_beta(cfg.initial_beta, ds.d).copy()

    loglik, u, info = evaluate(beta, ds)
    reference = max(np.linalg.eigvalsh(info)[-1], 0.0)
    if _ill_conditioned(info, 0.0):
        raise SingularInformationError("at the initial iterate")

    for iteration in range(cfg.max_iterations + 1):
        score_norm = float(np.linalg.norm(u))
        if score_norm <= cfg.tolerance:
            # a tiny score with a large Newton step means the likelihood is
            # flattening out towards infinity rather than peaking
            if _newton_step_norm(info, u) > 1e-4 * (1.0 + np.linalg.norm(beta)) and is_separated(ds):
                raise MonotoneLikelihoodError(f"score vanishes only as |beta|={np.linalg.norm(beta):.3g} grows")
            return FitResult(beta, True, iteration, score_norm, info, loglik)
        if iteration == cfg.max_iterations:
            break
        if _ill_conditioned(info, reference):
            if is_separated(ds):
                raise MonotoneLikelihoodError(f"information vanishes along the path at |beta|={np.linalg.norm(beta):.3g}")
            raise SingularInformationError(f"at iteration {iteration}")

        step = np.linalg.solve(info, u)
        for _ in range(cfg.step_halving_max + 1):
            candidate = beta + step
            new_loglik, new_u, new_info = evaluate(candidate, ds)
            if np.isfinite(new_loglik) and new_loglik >= loglik - 1e-12 * (1.0 + abs(loglik)):
                break
            step = step / 2
        else:
            raise MonotoneLikelihoodError("step halving failed to increase the likelihood")

        beta, loglik, u, info = candidate, new_loglik, new_u, new_info
        if np.linalg.norm(beta) > cfg.divergence_bound:
            raise MonotoneLikelihoodError(f"|beta| exceeded {cfg.divergence_bound}")

    if is_separated(ds):
        raise MonotoneLikelihoodError("no finite maximiser (separated covariates)")
    return FitResult(beta, False, cfg.max_iterations, float(np.linalg.norm(u)), info, loglik)


def en_indicator(fit_result: FitResult, n: int, sigma, epsilon: float) -> bool:
    """Whether ``|| n^{-1} Sigma^{-1} S''(beta_hat) - I ||_F <= epsilon``.

    The curvature is taken at ``beta_hat`` in place of the unknown mean-value
    point between ``beta_hat`` and the truth.
    """
    if not fit_result.converged:
        raise ValueError("en_indicator needs a converged fit")
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = fit_result.d
    if sigma.shape != (d, d):
        raise ValueError(f"sigma must be {d}x{d}")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if np.linalg.cond(sigma) > COND_LIMIT:
        raise SingularInformationError("sigma is singular")
    ratio = np.linalg.solve(sigma, fit_result.information_at_solution) / n
    return bool(np.linalg.norm(ratio - np.eye(d), "fro") <= epsilon)
