"""Data-generating law and the population quantities it implies.

A :class:`ModelSpec` fixes the Cox model completely: true coefficients, a
parametric baseline hazard, a bounded covariate law and a censoring law made
of an optional exponential pre-study censoring time plus a fixed study end
``T0``. With ``C = min(C_tilde, T0)`` every subject still event-free and
uncensored at ``T0`` is censored there, so ``P(T = T0) > 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import quad_vec


class SpecError(ValueError):
    """Invalid model specification; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class QuadratureError(RuntimeError):
    pass


class SingularSigmaError(ValueError):
    pass


@dataclass(frozen=True)
class Baseline:
    family: str = "exponential"
    rate: float = 1.0  # exponential
    scale: float = 1.0  # weibull: Lambda0(t) = scale * t**shape
    shape: float = 1.0

    def __post_init__(self):
        if self.family == "exponential":
            if not self.rate > 0:
                raise SpecError("baseline.rate", "must be positive")
        elif self.family == "weibull":
            if not self.scale > 0:
                raise SpecError("baseline.scale", "must be positive")
            if not self.shape > 0:
                raise SpecError("baseline.shape", "must be positive")
        else:
            raise SpecError("baseline.family", f"unknown family {self.family!r}")

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "exponential":
            return np.full_like(t, self.rate)
        with np.errstate(divide="ignore"):
            return self.scale * self.shape * np.power(np.maximum(t, 0.0), self.shape - 1)

    def cumulative(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        if self.family == "exponential":
            return self.rate * t
        return self.scale * np.power(t, self.shape)

    def inverse_cumulative(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "exponential":
            return y / self.rate
        return np.power(y / self.scale, 1.0 / self.shape)

    def to_dict(self) -> dict:
        if self.family == "exponential":
            return {"family": "exponential", "rate": self.rate}
        return {"family": "weibull", "scale": self.scale, "shape": self.shape}


@lru_cache(maxsize=32)
def _gauss_legendre(k: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(k)


@dataclass(frozen=True, eq=False)
class CovariateLaw:
    """Finite-discrete (``atoms``, ``probabilities``) or uniform on a box."""

    law: str = "finite-discrete"
    atoms: np.ndarray | None = None  # (K, d)
    probabilities: np.ndarray | None = None  # (K,)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.law == "finite-discrete":
            if self.atoms is None or self.probabilities is None:
                raise SpecError("covariates", "finite-discrete law needs atoms and probabilities")
            atoms = np.asarray(self.atoms, dtype=float)
            if atoms.ndim == 1:
                atoms = atoms.reshape(-1, 1)
            probs = np.asarray(self.probabilities, dtype=float).reshape(-1)
            if atoms.shape[0] != probs.size or probs.size == 0:
                raise SpecError("covariates.probabilities", "need one probability per atom")
            if not np.isfinite(atoms).all():
                raise SpecError("covariates.atoms", "must be finite")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise SpecError("covariates.probabilities", "must be nonnegative and sum to 1")
            object.__setattr__(self, "atoms", atoms)
            object.__setattr__(self, "probabilities", probs / probs.sum())
        elif self.law == "uniform-box":
            if self.lower is None or self.upper is None:
                raise SpecError("covariates", "uniform-box law needs lower and upper")
            lo = np.asarray(self.lower, dtype=float).reshape(-1)
            hi = np.asarray(self.upper, dtype=float).reshape(-1)
            if lo.size != hi.size or lo.size == 0:
                raise SpecError("covariates.upper", "lower and upper must have the same length")
            if not (np.isfinite(lo).all() and np.isfinite(hi).all()) or np.any(hi <= lo):
                raise SpecError("covariates.upper", "need finite lower < upper in every component")
            if lo.size > 3:
                raise SpecError("covariates.lower", "uniform-box quadrature supports d <= 3")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        else:
            raise SpecError("covariates.law", f"unknown law {self.law!r}")

    @property
    def d(self) -> int:
        return self.atoms.shape[1] if self.law == "finite-discrete" else self.lower.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.law == "finite-discrete":
            return self.atoms[rng.choice(self.probabilities.size, size=n, p=self.probabilities)]
        return rng.uniform(self.lower, self.upper, size=(n, self.d))

    def rule(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``(K, d)`` and weights ``(K,)`` integrating against the law."""
        if self.law == "finite-discrete":
            return self.atoms, self.probabilities
        x, w = _gauss_legendre(k)
        axes = [0.5 * (lo + hi) + 0.5 * (hi - lo) * x for lo, hi in zip(self.lower, self.upper)]
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        weights = np.ones(1)
        for _ in range(self.d):
            weights = np.outer(weights, 0.5 * w).reshape(-1)
        return nodes, weights

    def to_dict(self) -> dict:
        if self.law == "finite-discrete":
            return {
                "law": "finite-discrete",
                "atoms": self.atoms.tolist(),
                "probabilities": self.probabilities.tolist(),
            }
        return {"law": "uniform-box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class Censoring:
    study_end: float
    rate: float = 0.0  # exponential pre-study censoring; 0 means none

    def __post_init__(self):
        if not (math.isfinite(self.study_end) and self.study_end > 0):
            raise SpecError(
                "censoring.study_end",
                f"study end T0 must be finite and positive (assumption A1), got {self.study_end}",
            )
        if not (math.isfinite(self.rate) and self.rate >= 0):
            raise SpecError("censoring.rate", "must be a finite nonnegative rate")

    def survival(self, t):
        """P(C >= t)."""
        t = np.asarray(t, dtype=float)
        inside = t <= self.study_end
        return np.where(inside, np.exp(-self.rate * np.clip(t, 0.0, self.study_end)), 0.0)

    def to_dict(self) -> dict:
        if self.rate == 0:
            return {"law": "none", "study_end": self.study_end}
        return {"law": "exponential", "rate": self.rate, "study_end": self.study_end}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    beta0: np.ndarray
    baseline: Baseline
    covariates: CovariateLaw
    censoring: Censoring
    quad_nodes: int = field(default=24, repr=False)

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.beta0, dtype=float)).reshape(-1)
        if not np.isfinite(b).all():
            raise SpecError("beta0", "must be finite")
        if b.size != self.covariates.d:
            raise SpecError("beta0", f"has length {b.size} but covariates have d={self.covariates.d}")
        b.setflags(write=False)
        object.__setattr__(self, "beta0", b)

    @property
    def d(self) -> int:
        return self.beta0.size

    @property
    def study_end(self) -> float:
        return self.censoring.study_end

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0.tolist(),
            "baseline": self.baseline.to_dict(),
            "covariates": self.covariates.to_dict(),
            "censoring": self.censoring.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        def need(obj, key, path):
            if not isinstance(obj, dict) or key not in obj:
                raise SpecError(f"{path}.{key}" if path else key, "missing")
            return obj[key]

        def number(value, path):
            try:
                out = float(value)
            except (TypeError, ValueError):
                raise SpecError(path, f"expected a number, got {value!r}") from None
            return out

        base = need(doc, "baseline", "")
        family = need(base, "family", "baseline")
        if family == "exponential":
            baseline = Baseline("exponential", rate=number(need(base, "rate", "baseline"), "baseline.rate"))
        elif family == "weibull":
            baseline = Baseline(
                "weibull",
                scale=number(need(base, "scale", "baseline"), "baseline.scale"),
                shape=number(need(base, "shape", "baseline"), "baseline.shape"),
            )
        else:
            raise SpecError("baseline.family", f"unknown family {family!r}")

        cov = need(doc, "covariates", "")
        law = need(cov, "law", "covariates")
        try:
            if law == "finite-discrete":
                covariates = CovariateLaw(
                    "finite-discrete",
                    atoms=np.asarray(need(cov, "atoms", "covariates"), dtype=float),
                    probabilities=np.asarray(need(cov, "probabilities", "covariates"), dtype=float),
                )
            elif law == "uniform-box":
                covariates = CovariateLaw(
                    "uniform-box",
                    lower=np.asarray(need(cov, "lower", "covariates"), dtype=float),
                    upper=np.asarray(need(cov, "upper", "covariates"), dtype=float),
                )
            else:
                raise SpecError("covariates.law", f"unknown law {law!r}")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError("covariates", str(exc)) from None

        cens = need(doc, "censoring", "")
        t0 = number(need(cens, "study_end", "censoring"), "censoring.study_end")
        claw = cens.get("law", "none")
        if claw == "none":
            censoring = Censoring(t0)
        elif claw == "exponential":
            censoring = Censoring(t0, number(need(cens, "rate", "censoring"), "censoring.rate"))
            if censoring.rate <= 0:
                raise SpecError("censoring.rate", "must be positive")
        else:
            raise SpecError("censoring.law", f"unknown law {claw!r}")

        try:
            beta0 = np.asarray(need(doc, "beta0", ""), dtype=float)
        except (TypeError, ValueError):
            raise SpecError("beta0", "expected a list of numbers") from None
        return cls(beta0, baseline, covariates, censoring)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read_json(cls, path) -> "ModelSpec":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError("<document>", f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)


def reference_spec() -> ModelSpec:
    """d=1, Z in {0,1} equiprobable, beta0=0.5, exponential(1) baseline, T0=2."""
    return ModelSpec(
        beta0=np.array([0.5]),
        baseline=Baseline("exponential", rate=1.0),
        covariates=CovariateLaw("finite-discrete", atoms=np.array([[0.0], [1.0]]), probabilities=np.array([0.5, 0.5])),
        censoring=Censoring(study_end=2.0),
    )


def lambda0(t, spec: ModelSpec):
    out = spec.baseline.hazard(t)
    return float(out) if np.ndim(out) == 0 else out


def Lambda0(t, spec: ModelSpec):
    out = spec.baseline.cumulative(t)
    return float(out) if np.ndim(out) == 0 else out


def _moments(t, beta, spec: ModelSpec, order: int, k: int):
    """Phi (order 0), D1 (1) or D2 (2) at times ``t`` using rule size ``k``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nodes, weights = spec.covariates.rule(k)
    b = np.asarray(beta, dtype=float).reshape(-1)
    surv = np.exp(-np.outer(spec.baseline.cumulative(t), np.exp(nodes @ spec.beta0)))  # (T, K)
    coef = surv * (weights * np.exp(nodes @ b)) * spec.censoring.survival(t)[:, None]
    if order == 0:
        return coef.sum(axis=1)
    if order == 1:
        return coef @ nodes
    return np.einsum("tk,ki,kj->tij", coef, nodes, nodes)


def _expect(t, beta, spec: ModelSpec, order: int, rtol: float = 1e-8):
    if spec.covariates.law == "finite-discrete":
        return _moments(t, beta, spec, order, 0)
    k = spec.quad_nodes
    prev = _moments(t, beta, spec, order, k)
    for _ in range(4):
        k *= 2
        cur = _moments(t, beta, spec, order, k)
        scale = np.maximum(np.abs(cur), 1e-300)
        if np.all(np.abs(cur - prev) <= rtol * scale + 1e-300):
            return cur
        prev = cur
    raise QuadratureError(f"covariate quadrature did not reach relative {rtol} with {k} nodes per axis")


def _scalar_t(t, out):
    return out[0] if np.ndim(t) == 0 else out


def phi_true(t, beta, spec: ModelSpec):
    """Phi(t; beta) = E[exp(beta'Z) P(X >= t | Z) P(C >= t)]; zero beyond T0."""
    out = _expect(t, beta, spec, 0)
    return float(out[0]) if np.ndim(t) == 0 else out


def d1_true(t, beta, spec: ModelSpec):
    return _scalar_t(t, _expect(t, beta, spec, 1))


def d2_true(t, beta, spec: ModelSpec):
    return _scalar_t(t, _expect(t, beta, spec, 2))


@dataclass(frozen=True)
class QuadConfig:
    epsrel: float = 1e-10
    epsabs: float = 1e-14
    limit: int = 2000


def sigma_matrix(spec: ModelSpec, quad_cfg: QuadConfig | None = None) -> np.ndarray:
    """Limit of n^{-1} times the information at beta0.

    Integral over [0, T0] of ``(D2 - D1 D1' / Phi)(u; beta0) lambda0(u)``,
    computed with adaptive Gauss-Kronrod quadrature.
    """
    cfg = quad_cfg or QuadConfig()
    b0 = spec.beta0

    def integrand(u):
        phi = _expect(u, b0, spec, 0)[0]
        d1 = _expect(u, b0, spec, 1)[0]
        d2 = _expect(u, b0, spec, 2)[0]
        if phi <= 0:
            return np.zeros_like(d2)
        return (d2 - np.outer(d1, d1) / phi) * spec.baseline.hazard(u)

    value, err = quad_vec(integrand, 0.0, spec.study_end, epsabs=cfg.epsabs, epsrel=cfg.epsrel, limit=cfg.limit)
    sigma = 0.5 * (value + value.T)
    if err > max(1e-6 * np.abs(sigma).max(), cfg.epsabs):
        raise QuadratureError(f"sigma quadrature error estimate {err:g} too large")
    eig = np.linalg.eigvalsh(sigma)
    if not (eig[-1] > 0 and eig[0] > 1e-10 * eig[-1]):
        raise SingularSigmaError("sigma is singular: the covariate law has no variation the model can identify")
    return sigma


def prob_T_eq_T0(spec: ModelSpec) -> float:
    """P(T = T0) = E_Z[exp(-Lambda0(T0) exp(beta0'Z))] exp(-mu T0)."""
    t0 = spec.study_end
    nodes, weights = spec.covariates.rule(4 * spec.quad_nodes)
    surv = np.exp(-spec.baseline.cumulative(t0) * np.exp(nodes @ spec.beta0))
    return float(weights @ surv) * math.exp(-spec.censoring.rate * t0)
