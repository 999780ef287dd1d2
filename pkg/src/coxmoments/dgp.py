"""Reproducible simulation from a :class:`~coxmoments.population.ModelSpec`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .population import ModelSpec
from .survival_data import Dataset


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        # Philox is counter-based; the (master_seed, stream_id) pair keys the stream
        seq = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(seq))


def simulate(spec: ModelSpec, n: int, seed: SeedSpec | int) -> Dataset:
    """Draw ``n`` i.i.d. triplets ``(T, Delta, Z)``.

    Covariates first, then the unit exponentials for the event times, then
    the pre-study censoring times, so each block of draws is reproducible.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not isinstance(seed, SeedSpec):
        seed = SeedSpec(int(seed))
    rng = seed.generator()
    z = spec.covariates.sample(rng, n)
    e = rng.standard_exponential(n)
    x = spec.baseline.inverse_cumulative(e * np.exp(-(z @ spec.beta0)))
    if spec.censoring.rate > 0:
        c_tilde = rng.exponential(1.0 / spec.censoring.rate, n)
    else:
        c_tilde = np.full(n, np.inf)
    c = np.minimum(c_tilde, spec.study_end)
    t = np.minimum(x, c)
    status = (x <= c).astype(np.int8)
    return Dataset.from_arrays(t, status, z)


def event_times_latent(spec: ModelSpec, n: int, seed: SeedSpec | int) -> tuple[np.ndarray, np.ndarray]:
    """Uncensored event times X and covariates, from the same draws as :func:`simulate`."""
    if not isinstance(seed, SeedSpec):
        seed = SeedSpec(int(seed))
    rng = seed.generator()
    z = spec.covariates.sample(rng, n)
    e = rng.standard_exponential(n)
    return spec.baseline.inverse_cumulative(e * np.exp(-(z @ spec.beta0))), z
