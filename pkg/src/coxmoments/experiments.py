"""Monte Carlo checks of the bounded-moment results for the Cox estimators.

Every replication is a pure function of ``(spec, n, SeedSpec)``. Replications
run serially or on a process pool; results are collected in stream order
and reduced in the parent, so reports do not depend on the worker count.

Replication-level quantities are stored already multiplied by ``sqrt(n)``;
the moment of order p is then just the p-th power.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .breslow import breslow_estimator, phi_n_curve, sup_distance
from .dgp import SeedSpec, simulate
from .mple import FitError, SolverConfig, en_indicator, fit
from .partial_likelihood import NoEventsError, phi_n, titu_sides
from .population import ModelSpec, phi_true, sigma_matrix
from .survival_data import Dataset

QUANTITY_LABELS = {
    "beta_gated": "1{E_n} n^{p/2} |beta_hat - beta0|^p",
    "beta_ungated": "n^{p/2} |beta_hat - beta0|^p",
    "phi_sup": "n^{p/2} sup_t |Phi_n(t; beta0) - Phi(t; beta0)|^p",
    "breslow_gated": "1{A_n} n^{p/2} sup_[0,T0) |Lambda_n - Lambda0|^p",
    "breslow_ungated": "n^{p/2} sup_[0,T0) |Lambda_n - Lambda0|^p",
}
# A_n^2 uses beta_hat in place of the unknown mean-value point
EVENT_LABELS = {
    "E": "E_n at beta_hat",
    "A1": "A_n^1",
    "A2(beta_hat)": "A_n^2 with beta* := beta_hat",
    "A": "A_n = A_n^1 & A_n^2(beta_hat) & E_n",
}
MAX_FAILURE_RATE = 0.2


class ExperimentAbort(RuntimeError):
    pass


class InequalityViolation(AssertionError):
    pass


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    spec: ModelSpec
    n_grid: tuple[int, ...]
    p_list: tuple[float, ...] = (1.0, 2.0, 4.0)
    replications: int = 2000
    master_seed: int = 20190715
    epsilon: float = 0.5
    out_dir: str | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "p_list", tuple(float(p) for p in self.p_list))
        if not self.n_grid:
            raise ValueError("n_grid must be nonempty")
        if any(n < 1 for n in self.n_grid) or list(self.n_grid) != sorted(set(self.n_grid)):
            raise ValueError("n_grid must be strictly ascending positive counts")
        if not self.p_list or any(not (p >= 0 and math.isfinite(p)) for p in self.p_list):
            raise ValueError("p_list must hold finite nonnegative moment orders")
        if self.replications < 100:
            raise ValueError("replications must be at least 100")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "n_grid": list(self.n_grid),
            "p_list": list(self.p_list),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "epsilon": self.epsilon,
            "out_dir": self.out_dir,
            "solver": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.solver).items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if "spec" not in doc:
            raise ValueError("config: missing spec")
        solver = doc.get("solver") or {}
        if solver.get("initial_beta") is not None:
            solver = {**solver, "initial_beta": tuple(solver["initial_beta"])}
        kwargs = {k: doc[k] for k in ("n_grid", "p_list", "replications", "master_seed", "epsilon", "out_dir") if k in doc}
        if "n_grid" not in kwargs:
            raise ValueError("config: missing n_grid")
        return cls(spec=ModelSpec.from_dict(doc["spec"]), solver=SolverConfig(**solver), **kwargs)


def stream_id(n: int, rep: int) -> int:
    """Stream for replication ``rep`` at sample size ``n``; shared across experiments."""
    return (int(n) << 32) | int(rep)


@dataclass(frozen=True)
class MomentRow:
    n: int
    p: float
    quantity: str
    mc_mean: float
    mc_se: float
    event_freq: float  # nan when the quantity is not event-gated
    failures: int


@dataclass
class MomentReport:
    rows: list[MomentRow] = field(default_factory=list)
    # (n, event tag) -> (frequency, standard error)
    events: dict[tuple[int, str], tuple[float, float]] = field(default_factory=dict)

    def row(self, n: int, p: float, quantity: str) -> MomentRow:
        for r in self.rows:
            if r.n == n and r.p == p and r.quantity == quantity:
                return r
        raise KeyError((n, p, quantity))

    def series(self, quantity: str, p: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = sorted((r for r in self.rows if r.quantity == quantity and r.p == p), key=lambda r: r.n)
        return (
            np.array([r.n for r in rows]),
            np.array([r.mc_mean for r in rows]),
            np.array([r.mc_se for r in rows]),
        )

    def event_series(self, tag: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        keys = sorted(k for k in self.events if k[1] == tag)
        return (
            np.array([k[0] for k in keys]),
            np.array([self.events[k][0] for k in keys]),
            np.array([self.events[k][1] for k in keys]),
        )

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "p", "quantity", "mc_mean", "mc_se", "event_freq", "failures"])
            for r in self.rows:
                freq = "" if math.isnan(r.event_freq) else repr(r.event_freq)
                writer.writerow([r.n, repr(r.p), r.quantity, repr(r.mc_mean), repr(r.mc_se), freq, r.failures])

    def events_to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "event", "frequency", "se"])
            for (n, tag), (freq, se) in sorted(self.events.items()):
                writer.writerow([n, tag, repr(freq), repr(se)])


# ---------------------------------------------------------------------------
# acceptance rules


def boundedness(means: Sequence[float], ses: Sequence[float], max_ratio: float = 3.0) -> dict:
    """No-systematic-growth rule for a sequence of Monte Carlo means over n.

    Passes when ``max/min <= max_ratio`` and the last three means do not
    increase monotonically by more than two combined standard errors.
    """
    m = np.asarray(means, dtype=float)
    s = np.asarray(ses, dtype=float)
    ratio = float(m.max() / m.min()) if m.min() > 0 else math.inf
    growth = False
    if m.size >= 3:
        a, b, c = m[-3:]
        growth = bool(a < b < c and (c - a) > 2.0 * math.hypot(s[-1], s[-3]))
    return {"ratio": ratio, "growth": growth, "passed": bool(ratio <= max_ratio and not growth)}


def frequencies_nondecreasing(freqs: Sequence[float], ses: Sequence[float]) -> bool:
    """Every later frequency is at least every earlier one minus two combined SEs."""
    f = np.asarray(freqs, dtype=float)
    s = np.asarray(ses, dtype=float)
    for i in range(f.size):
        for j in range(i + 1, f.size):
            if f[j] < f[i] - 2.0 * math.hypot(s[i], s[j]):
                return False
    return True


# ---------------------------------------------------------------------------
# single replications (module level so they pickle)


def phi_sup_error(ds: Dataset, beta, spec: ModelSpec) -> float:
    """``sup_t |Phi_n(t; beta) - Phi(t; beta0)|`` over the whole real line.

    Both functions are constant for t <= 0 and vanish beyond T0, so the
    supremum is the one over the closed interval [0, T0].
    """
    curve = phi_n_curve(ds, beta)
    return sup_distance(
        curve,
        lambda u: phi_true(u, spec.beta0, spec),
        "decreasing",
        0.0,
        spec.study_end,
        include_b=True,
        check=False,
    )


def breslow_sup_error(ds: Dataset, beta, spec: ModelSpec) -> float:
    """``sup_{[0, T0)} |Lambda_n(t) - Lambda0(t)|`` for the Breslow estimator at ``beta``."""
    lam = breslow_estimator(ds, beta)
    return sup_distance(
        lam,
        spec.baseline.cumulative,
        "increasing",
        0.0,
        spec.study_end,
        check=False,
    )


def _fit(ds: Dataset, solver: SolverConfig):
    try:
        res = fit(ds, solver)
    except (FitError, NoEventsError):
        return None
    return res if res.converged else None


def _beta_task(args) -> tuple:
    spec, n, seed, sigma, epsilon, solver = args
    ds = simulate(spec, n, seed)
    res = _fit(ds, solver)
    if res is None:
        return (False, math.nan, False)
    err = math.sqrt(n) * float(np.linalg.norm(res.beta_hat - spec.beta0))
    return (True, err, en_indicator(res, n, sigma, epsilon))


def _phi_task(args) -> float:
    spec, n, seed = args
    ds = simulate(spec, n, seed)
    return math.sqrt(n) * phi_sup_error(ds, spec.beta0, spec)


def _breslow_task(args) -> tuple:
    spec, n, seed, sigma, epsilon, solver, phi_end = args
    ds = simulate(spec, n, seed)
    a1 = abs(phi_n(spec.study_end, spec.beta0, ds) - phi_end) <= phi_end / 2
    res = _fit(ds, solver)
    if res is None:
        return (False, math.nan, a1, False, False)
    err = math.sqrt(n) * breslow_sup_error(ds, res.beta_hat, spec)
    a2 = phi_sup_error(ds, res.beta_hat, spec) <= phi_end / 2
    return (True, err, a1, a2, en_indicator(res, n, sigma, epsilon))


def _normality_task(args) -> tuple:
    spec, n, seed, sigma_half, solver = args
    ds = simulate(spec, n, seed)
    res = _fit(ds, solver)
    d = spec.d
    if res is None:
        return (False, np.full(d, np.nan), np.zeros(d, dtype=bool))
    delta = res.beta_hat - spec.beta0
    z = math.sqrt(n) * (sigma_half @ delta)
    se = np.sqrt(np.diag(np.linalg.inv(res.information_at_solution)))
    covered = np.abs(delta) <= stats.norm.ppf(0.975) * se
    return (True, z, covered)


def _inequality_task(args) -> tuple:
    spec, n, seed = args
    ds = simulate(spec, n, seed)
    lhs, rhs = titu_sides(spec.beta0, ds)
    slack = lhs - rhs * (1.0 + 1e-12)
    return (float(slack.max()), rhs)


def _map(task: Callable, args: list, workers: int, progress: bool = False, label: str = "") -> list:
    if workers <= 1:
        out = []
        for i, a in enumerate(args):
            out.append(task(a))
            if progress and (i + 1) % max(1, len(args) // 10) == 0:
                print(f"\r{label} {i + 1}/{len(args)}", end="", file=sys.stderr, flush=True)
    else:
        chunk = max(1, len(args) // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(task, args, chunksize=chunk))
    if progress:
        print(f"\r{label} {len(args)}/{len(args)}", file=sys.stderr, flush=True)
    return out


def _seeds(cfg: ExperimentConfig, n: int) -> list[SeedSpec]:
    return [SeedSpec(cfg.master_seed, stream_id(n, r)) for r in range(cfg.replications)]


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(x.mean()), se


def _freq(flags: np.ndarray) -> tuple[float, float]:
    f = float(np.mean(flags))
    return f, math.sqrt(f * (1 - f) / flags.size)


def _powers(v: np.ndarray, p: float) -> np.ndarray:
    return np.ones_like(v) if p == 0 else v**p


def _check_failures(failures: int, cfg: ExperimentConfig, n: int) -> None:
    if failures > MAX_FAILURE_RATE * cfg.replications:
        raise ExperimentAbort(
            f"n={n}: {failures}/{cfg.replications} fits failed (monotone likelihood or singular "
            "information); the data-generating law is too extreme for this sample size"
        )


# ---------------------------------------------------------------------------
# experiments


def run_beta_moments(cfg: ExperimentConfig, workers: int = 1, progress: bool = False) -> MomentReport:
    """Gated moments of ``sqrt(n)|beta_hat - beta0|``.

    Failed fits are excluded from the means and counted; they count as
    ``E_n`` not occurring in the event frequency.
    """
    sigma = sigma_matrix(cfg.spec)
    report = MomentReport()
    for n in cfg.n_grid:
        args = [(cfg.spec, n, s, sigma, cfg.epsilon, cfg.solver) for s in _seeds(cfg, n)]
        out = _map(_beta_task, args, workers, progress, f"beta n={n}")
        ok = np.array([o[0] for o in out])
        err = np.array([o[1] for o in out])[ok]
        en = np.array([o[2] for o in out])
        failures = int((~ok).sum())
        _check_failures(failures, cfg, n)
        freq, freq_se = _freq(en)
        report.events[(n, "E")] = (freq, freq_se)
        for p in cfg.p_list:
            report.rows.append(MomentRow(n, p, "beta_gated", *_mean_se(en[ok] * _powers(err, p)), freq, failures))
            report.rows.append(MomentRow(n, p, "beta_ungated", *_mean_se(_powers(err, p)), math.nan, failures))
    return report


def run_phi_moments(cfg: ExperimentConfig, workers: int = 1, progress: bool = False) -> MomentReport:
    report = MomentReport()
    for n in cfg.n_grid:
        args = [(cfg.spec, n, s) for s in _seeds(cfg, n)]
        v = np.array(_map(_phi_task, args, workers, progress, f"phi n={n}"))
        for p in cfg.p_list:
            report.rows.append(MomentRow(n, p, "phi_sup", *_mean_se(_powers(v, p)), math.nan, 0))
    return report


def run_breslow_moments(cfg: ExperimentConfig, workers: int = 1, progress: bool = False) -> MomentReport:
    sigma = sigma_matrix(cfg.spec)
    phi_end = phi_true(cfg.spec.study_end, cfg.spec.beta0, cfg.spec)
    report = MomentReport()
    for n in cfg.n_grid:
        args = [(cfg.spec, n, s, sigma, cfg.epsilon, cfg.solver, phi_end) for s in _seeds(cfg, n)]
        out = _map(_breslow_task, args, workers, progress, f"breslow n={n}")
        ok = np.array([o[0] for o in out])
        err = np.array([o[1] for o in out])[ok]
        a1, a2, en = (np.array([o[k] for o in out]) for k in (2, 3, 4))
        a = a1 & a2 & en
        failures = int((~ok).sum())
        _check_failures(failures, cfg, n)
        for tag, flags in (("A1", a1), ("A2(beta_hat)", a2), ("E", en), ("A", a)):
            report.events[(n, tag)] = _freq(flags)
        freq = report.events[(n, "A")][0]
        for p in cfg.p_list:
            report.rows.append(MomentRow(n, p, "breslow_gated", *_mean_se(a[ok] * _powers(err, p)), freq, failures))
            report.rows.append(MomentRow(n, p, "breslow_ungated", *_mean_se(_powers(err, p)), math.nan, failures))
    return report


@dataclass(frozen=True)
class NormalityRow:
    n: int
    component: int
    ks_statistic: float
    ks_pvalue: float
    wald_coverage: float
    failures: int
    small_n: bool


@dataclass
class NormalityReport:
    rows: list[NormalityRow] = field(default_factory=list)

    def row(self, n: int, component: int) -> NormalityRow:
        for r in self.rows:
            if r.n == n and r.component == component:
                return r
        raise KeyError((n, component))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "component", "ks_statistic", "ks_pvalue", "wald_coverage", "failures", "small_n"])
            for r in self.rows:
                writer.writerow(
                    [r.n, r.component, repr(r.ks_statistic), repr(r.ks_pvalue), repr(r.wald_coverage), r.failures, int(r.small_n)]
                )


SMALL_N = 200


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def run_normality(cfg: ExperimentConfig, workers: int = 1, progress: bool = False) -> NormalityReport:
    """Standardise ``sqrt(n)(beta_hat - beta0)`` by the limiting covariance and test against N(0, I).

    The limiting covariance is the inverse of the information limit, so the
    standardising matrix is ``sigma^{1/2}``. Also records how often the 95%
    Wald interval from the observed information covers beta0.
    """
    sigma_half = sqrtm_psd(sigma_matrix(cfg.spec))
    report = NormalityReport()
    for n in cfg.n_grid:
        args = [(cfg.spec, n, s, sigma_half, cfg.solver) for s in _seeds(cfg, n)]
        out = _map(_normality_task, args, workers, progress, f"normality n={n}")
        ok = np.array([o[0] for o in out])
        failures = int((~ok).sum())
        _check_failures(failures, cfg, n)
        z = np.array([o[1] for o in out])[ok]
        cov = np.array([o[2] for o in out])[ok]
        for k in range(cfg.spec.d):
            ks = stats.kstest(z[:, k], "norm")
            report.rows.append(
                NormalityRow(n, k + 1, float(ks.statistic), float(ks.pvalue), float(cov[:, k].mean()), failures, n < SMALL_N)
            )
    return report


@dataclass(frozen=True)
class InequalityRow:
    check: str
    n: int
    p: float
    component: int
    lhs: float
    lhs_se: float
    rhs: float
    passed: bool


@dataclass
class InequalityReport:
    rows: list[InequalityRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["check", "n", "p", "component", "lhs", "lhs_se", "rhs", "passed"])
            for r in self.rows:
                writer.writerow([r.check, r.n, repr(r.p), r.component, repr(r.lhs), repr(r.lhs_se), repr(r.rhs), int(r.passed)])


def covariate_moment(spec: ModelSpec, k: int, p: float) -> float:
    """``E[Z_k^{2p} exp(p beta0'Z)]`` as an exact atom sum."""
    if spec.covariates.law != "finite-discrete":
        raise ValueError("exact covariate moments need a finite-discrete covariate law")
    atoms, probs = spec.covariates.atoms, spec.covariates.probabilities
    y = atoms[:, k] ** 2 * np.exp(atoms @ spec.beta0)
    return float(probs @ np.power(y, p)) if p > 0 else 1.0


def _partitions(p: int, max_part: int | None = None):
    max_part = p if max_part is None else max_part
    if p == 0:
        yield ()
        return
    for first in range(min(p, max_part), 0, -1):
        for rest in _partitions(p - first, first):
            yield (first,) + rest


def run_inequality_checks(cfg: ExperimentConfig, workers: int = 1, progress: bool = False) -> InequalityReport:
    """Exact and Monte Carlo checks of the inequalities behind the score bound.

    * ``titu``: ``(D1_n)_k^2/Phi_n <= 1/n sum (Z_i)_k^2 exp(beta0'Z_i)`` at every
      observed time of every replication (any violation raises).
    * ``moment``: MC mean of ``(1/n sum (Z_i)_k^2 exp(beta0'Z_i))^p`` is at most
      ``E[Z_k^{2p} exp(p beta0'Z)]`` plus three standard errors.
    * ``covariance``: for integer p and each way of splitting p into parts,
      ``prod E[Y^{a_j}] <= E[Y^p]`` with ``Y = Z_k^2 exp(beta0'Z)``, exactly.
    """
    spec = cfg.spec
    if spec.covariates.law != "finite-discrete":
        raise ValueError("inequality checks need a finite-discrete covariate law")
    report = InequalityReport()
    for n in cfg.n_grid:
        seeds = _seeds(cfg, n)
        out = _map(_inequality_task, [(spec, n, s) for s in seeds], workers, progress, f"inequalities n={n}")
        slack = np.array([o[0] for o in out])
        if np.any(slack > 0):
            r = int(np.argmax(slack > 0))
            raise InequalityViolation(
                f"Titu bound violated at n={n}, seed={seeds[r]} by {slack[r]:.3g}"
            )
        report.rows.append(InequalityRow("titu", n, math.nan, 0, float(slack.max()), 0.0, 0.0, True))
        y = np.array([o[1] for o in out])  # (R, d)
        for p in cfg.p_list:
            for k in range(spec.d):
                mean, se = _mean_se(_powers(y[:, k], p))
                rhs = covariate_moment(spec, k, p)
                report.rows.append(InequalityRow("moment", n, p, k + 1, mean, se, rhs, mean <= rhs + 3 * se))
    for p in cfg.p_list:
        if p != int(p) or p < 1:
            continue
        for k in range(spec.d):
            rhs = covariate_moment(spec, k, p)
            worst = max(math.prod(covariate_moment(spec, k, a) for a in parts) for parts in _partitions(int(p)))
            ok = worst <= rhs * (1 + 1e-12) + 1e-300
            report.rows.append(InequalityRow("covariance", 0, p, k + 1, worst, 0.0, rhs, ok))
    return report


EXPERIMENTS = {
    "beta-moments": run_beta_moments,
    "phi-moments": run_phi_moments,
    "breslow-moments": run_breslow_moments,
    "normality": run_normality,
    "inequalities": run_inequality_checks,
}


def write_outputs(kind: str, cfg: ExperimentConfig, report, out_dir) -> list[Path]:
    """Report CSV (plus event breakdown where present) and a JSON run manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = kind.replace("-", "_")
    written = [out / f"{stem}.csv"]
    report.to_csv(written[0])
    if isinstance(report, MomentReport) and report.events:
        written.append(out / f"{stem}_events.csv")
        report.events_to_csv(written[-1])
    manifest = {
        "experiment": kind,
        "code_version": __version__,
        "master_seed": cfg.master_seed,
        "config": cfg.to_dict(),
        "quantities": QUANTITY_LABELS,
        "events": EVENT_LABELS,
        "approximations": [
            "E_n evaluates the information at beta_hat instead of the mean-value point",
            "A_n^2 evaluates Phi_n at beta_hat instead of the mean-value point",
        ],
        "outputs": [p.name for p in written],
    }
    written.append(out / "manifest.json")
    written[-1].write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return written
