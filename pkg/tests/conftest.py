import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from coxmoments.population import reference_spec
from coxmoments.survival_data import Dataset

settings.register_profile("default", deadline=None, suppress_health_check=(HealthCheck.too_slow,))
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@st.composite
def datasets(draw, min_n=1, max_n=30, max_d=3, with_events=False, ties=True):
    n = draw(st.integers(min_n, max_n))
    d = draw(st.integers(1, max_d))
    if ties and draw(st.booleans()):
        times = draw(st.lists(st.integers(0, 6).map(float), min_size=n, max_size=n))
    else:
        times = draw(
            st.lists(st.floats(0, 10, allow_nan=False, allow_subnormal=False), min_size=n, max_size=n)
        )
    status = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    if with_events and not any(status):
        status[draw(st.integers(0, n - 1))] = 1
    z = draw(
        st.lists(
            st.lists(st.floats(-2, 2, allow_nan=False, allow_subnormal=False), min_size=d, max_size=d),
            min_size=n,
            max_size=n,
        )
    )
    return Dataset.from_arrays(times, status, z)


def random_dataset(rng: np.random.Generator, n: int, d: int, tie_grid: int | None = None) -> Dataset:
    if tie_grid:
        t = rng.integers(0, tie_grid, n).astype(float) + 1.0
    else:
        t = rng.exponential(1.0, n)
    return Dataset.from_arrays(t, rng.integers(0, 2, n) | (rng.random(n) < 0.5), rng.normal(0, 1, (n, d)))


@pytest.fixture(scope="session")
def ref_spec():
    return reference_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
