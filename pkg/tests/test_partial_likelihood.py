import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coxmoments.partial_likelihood import (
    NoEventsError,
    d1_n,
    d2_n,
    information,
    log_partial_likelihood,
    phi_n,
    score,
    titu_sides,
)
from coxmoments.survival_data import Dataset

from .conftest import datasets, random_dataset


# independent oracles: a direct scan of the defining sums


def naive_phi(t, beta, ds):
    b = np.asarray(beta, float).reshape(-1)
    return sum(math.exp(z @ b) for ti, z in zip(ds.time, ds.covariates) if ti >= t) / ds.n


def naive_d1(t, beta, ds):
    b = np.asarray(beta, float).reshape(-1)
    out = np.zeros(ds.d)
    for ti, z in zip(ds.time, ds.covariates):
        if ti >= t:
            out += z * math.exp(z @ b)
    return out / ds.n


def naive_d2(t, beta, ds):
    b = np.asarray(beta, float).reshape(-1)
    out = np.zeros((ds.d, ds.d))
    for ti, z in zip(ds.time, ds.covariates):
        if ti >= t:
            out += np.outer(z, z) * math.exp(z @ b)
    return out / ds.n


def naive_loglik(beta, ds):
    b = np.asarray(beta, float).reshape(-1)
    total = 0.0
    for ti, si, zi in zip(ds.time, ds.status, ds.covariates):
        if si:
            total += zi @ b - math.log(sum(math.exp(zj @ b) for tj, zj in zip(ds.time, ds.covariates) if tj >= ti))
    return total


def fd_gradient(f, b, h=1e-5):
    g = np.zeros_like(b)
    for k in range(b.size):
        e = np.zeros_like(b)
        e[k] = h
        g[k] = (f(b + e) - f(b - e)) / (2 * h)
    return g


def fd_hessian_of(grad, b, h=1e-5):
    hess = np.zeros((b.size, b.size))
    for k in range(b.size):
        e = np.zeros_like(b)
        e[k] = h
        hess[:, k] = (grad(b + e) - grad(b - e)) / (2 * h)
    return 0.5 * (hess + hess.T)


def ds1(times, status, z):
    return Dataset.from_arrays(times, status, np.asarray(z, float).reshape(len(times), -1))


class TestPhi:
    def test_before_first_time_beta_zero(self):
        ds = ds1([1, 2, 3], [1, 0, 1], [0.3, -1, 2])
        assert phi_n(0.5, [0.0], ds) == pytest.approx(1.0)

    def test_after_last_time(self):
        ds = ds1([1, 2, 3], [1, 0, 1], [0.3, -1, 2])
        assert phi_n(3.5, [0.7], ds) == 0.0

    def test_two_point_example(self):
        ds = ds1([1, 2], [1, 1], [0, math.log(2)])
        assert phi_n(1.5, [1.0], ds) == pytest.approx(1.0, rel=1e-15)

    def test_vectorised(self):
        ds = ds1([1, 2], [1, 1], [0, 1])
        np.testing.assert_allclose(phi_n(np.array([0.0, 1.0, 1.5, 3.0]), [0.0], ds), [1, 1, 0.5, 0])

    @given(datasets(), st.floats(-1, 1), st.lists(st.floats(-1, 11), min_size=2, max_size=2))
    def test_non_increasing(self, ds, scale, ts):
        beta = np.full(ds.d, scale)
        t, s = sorted(ts)
        assert phi_n(t, beta, ds) >= phi_n(s, beta, ds)


class TestD1D2:
    def test_zero_covariates(self):
        ds = ds1([1, 2, 3], [1, 0, 1], [0, 0, 0])
        for t in (0.0, 1.5, 2.5, 4.0):
            np.testing.assert_array_equal(d1_n(t, [0.4], ds), [0.0])

    def test_empty_risk_set(self):
        ds = ds1([1, 2], [1, 1], [[1, 2], [3, 4]])
        np.testing.assert_array_equal(d1_n(5.0, [0.1, 0.2], ds), [0.0, 0.0])
        np.testing.assert_array_equal(d2_n(5.0, [0.1, 0.2], ds), np.zeros((2, 2)))

    def test_d1_example(self):
        ds = ds1([1, 3], [1, 1], [2, -1])
        np.testing.assert_allclose(d1_n(2.0, [0.0], ds), [-0.5])

    def test_d2_single_term(self):
        ds = ds1([1], [1], [3])
        np.testing.assert_allclose(d2_n(0.5, [0.0], ds), [[9.0]])

    @given(datasets(max_d=3), st.floats(-1, 1), st.floats(-1, 11))
    def test_d2_symmetric_psd(self, ds, scale, t):
        m = d2_n(t, np.full(ds.d, scale), ds)
        np.testing.assert_array_equal(m, m.T)
        assert np.all(np.diag(m) >= 0)
        assert np.linalg.eigvalsh(m)[0] >= -1e-12 * max(1.0, np.abs(m).max())

    def test_d1_is_gradient_and_d2_is_hessian_of_phi(self, rng):
        for _ in range(20):
            ds = random_dataset(rng, 15, 2)
            b = rng.normal(0, 0.5, 2)
            t = rng.uniform(0, 1.5)
            g = fd_gradient(lambda x: phi_n(t, x, ds), b)
            np.testing.assert_allclose(d1_n(t, b, ds), g, rtol=1e-7, atol=1e-9)
            h = fd_hessian_of(lambda x: d1_n(t, x, ds), b)
            np.testing.assert_allclose(d2_n(t, b, ds), h, rtol=1e-7, atol=1e-9)


def test_sweep_matches_naive_scan(rng):
    for trial in range(30):
        ds = random_dataset(rng, int(rng.integers(1, 60)), int(rng.integers(1, 4)), tie_grid=5 if trial % 2 else None)
        b = rng.normal(0, 0.7, ds.d)
        queries = np.concatenate((ds.time, rng.uniform(-1, ds.time.max() + 1, 10)))
        scale = naive_phi(-np.inf, 0 * b, ds) * np.exp(np.abs(ds.covariates @ b).max()) * (1 + np.abs(ds.covariates).max()) ** 2
        for t in queries:
            assert phi_n(t, b, ds) == pytest.approx(naive_phi(t, b, ds), rel=1e-12, abs=1e-300)
            np.testing.assert_allclose(d1_n(t, b, ds), naive_d1(t, b, ds), rtol=1e-12, atol=1e-12 * scale)
            np.testing.assert_allclose(d2_n(t, b, ds), naive_d2(t, b, ds), rtol=1e-12, atol=1e-12 * scale)


class TestLogLikelihood:
    def test_no_events(self):
        ds = ds1([1, 2], [0, 0], [0, 1])
        with pytest.raises(NoEventsError, match="no uncensored observations"):
            log_partial_likelihood([0.0], ds)
        with pytest.raises(NoEventsError):
            score([0.0], ds)

    def test_covariate_free_reduction(self):
        # m events at distinct times among n subjects, risk set shrinks by one per step
        ds = ds1([1, 2, 3, 4, 5], [1, 1, 1, 1, 1], [0, 0, 0, 0, 0])
        expected = -sum(math.log(5 - i) for i in range(5))
        for b in (-3.0, 0.0, 2.0):
            assert log_partial_likelihood([b], ds) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("b", [-2.0, 0.0, 0.7, 5.0])
    def test_two_subject_closed_form(self, b):
        ds = ds1([1, 2], [1, 1], [0, 1])
        assert log_partial_likelihood([b], ds) == pytest.approx(-math.log1p(math.exp(b)), rel=1e-13)
        np.testing.assert_allclose(score([b], ds), [-math.exp(b) / (1 + math.exp(b))], rtol=1e-13)

    def test_single_subject(self):
        ds = ds1([1], [1], [5])
        for b in (-1.0, 0.0, 3.0):
            assert log_partial_likelihood([b], ds) == pytest.approx(0.0, abs=1e-12)

    def test_matches_naive_with_ties(self, rng):
        for _ in range(20):
            ds = random_dataset(rng, 25, 2, tie_grid=6)
            if ds.report.n_events == 0:
                continue
            b = rng.normal(0, 0.5, 2)
            assert log_partial_likelihood(b, ds) == pytest.approx(naive_loglik(b, ds), rel=1e-12)

    def test_large_linear_predictor_is_stable(self):
        # exp(800) overflows; shifted sums must not
        ds = ds1([1, 2, 3], [1, 1, 0], [0.0, 800.0, 799.0])
        val = log_partial_likelihood([1.0], ds)
        expected = 0.0 - np.logaddexp.reduce([0.0, 800.0, 799.0]) + 800.0 - np.logaddexp(800.0, 799.0)
        assert val == pytest.approx(expected, rel=1e-14)
        assert np.isfinite(score([1.0], ds)).all()
        assert np.isfinite(information([1.0], ds)).all()

    def test_risk_set_far_below_global_shift(self):
        # late risk set sits ~900 below the global maximum of b'Z
        ds = ds1([1, 2, 3], [1, 1, 1], [900.0, 0.0, 1.0])
        u = score([1.0], ds)
        e = math.exp(1.0)
        # first event contributes ~exp(-900), the last one exactly 0
        np.testing.assert_allclose(u, [-e / (1 + e)], rtol=1e-12)
        np.testing.assert_allclose(information([1.0], ds), [[e / (1 + e) ** 2]], rtol=1e-12)


class TestScoreInformation:
    def test_common_covariate_gives_zero_score(self):
        ds = ds1([1, 2, 3, 4], [1, 0, 1, 1], [[1, 2]] * 4)
        for b in ([0.0, 0.0], [1.0, -2.0]):
            np.testing.assert_allclose(score(b, ds), [0.0, 0.0], atol=1e-12)
            np.testing.assert_allclose(information(b, ds), np.zeros((2, 2)), atol=1e-12)

    def test_two_subject_information(self):
        ds = ds1([1, 2], [1, 1], [0, 1])
        np.testing.assert_allclose(information([0.0], ds), [[0.25]], rtol=1e-15)

    def test_finite_differences(self, rng):
        for _ in range(40):
            ds = random_dataset(rng, int(rng.integers(2, 80)), int(rng.integers(1, 4)), tie_grid=None)
            if ds.report.n_events == 0:
                continue
            b = rng.normal(0, 0.5, ds.d)
            g = fd_gradient(lambda x: log_partial_likelihood(x, ds), b)
            u = score(b, ds)
            assert np.linalg.norm(u - g) <= 1e-6 * max(np.linalg.norm(g), 1.0)
            h = -fd_hessian_of(lambda x: score(x, ds), b)
            info = information(b, ds)
            assert np.linalg.norm(info - h) <= 1e-5 * max(np.linalg.norm(h), 1.0)

    @given(datasets(with_events=True), st.floats(-1, 1))
    def test_information_psd(self, ds, scale):
        info = information(np.full(ds.d, scale), ds)
        eig = np.linalg.eigvalsh(info)
        assert eig[0] >= -1e-10 * max(eig[-1], 1e-300) - 1e-13


@given(datasets(), st.floats(-1.5, 1.5))
def test_titu_bound_at_every_time(ds, scale):
    lhs, rhs = titu_sides(np.full(ds.d, scale), ds)
    assert np.all(lhs <= rhs * (1 + 1e-12) + 1e-300)
