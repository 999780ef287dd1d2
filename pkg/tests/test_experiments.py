import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coxmoments.breslow import StepFunction, sup_distance
from coxmoments.dgp import SeedSpec, simulate
from coxmoments.experiments import (
    ExperimentAbort,
    ExperimentConfig,
    _phi_task,
    boundedness,
    breslow_sup_error,
    covariate_moment,
    frequencies_nondecreasing,
    phi_sup_error,
    run_beta_moments,
    run_breslow_moments,
    run_inequality_checks,
    run_normality,
    run_phi_moments,
    stream_id,
    write_outputs,
)
from coxmoments.population import Baseline, Censoring, CovariateLaw, ModelSpec, reference_spec


def zero_spec(t0=1e9):
    return ModelSpec(
        np.array([0.0]),
        Baseline("exponential", rate=1.0),
        CovariateLaw("finite-discrete", atoms=[[0.0]], probabilities=[1.0]),
        Censoring(t0),
    )


def small_cfg(**kw):
    base = dict(spec=reference_spec(), n_grid=(50, 100), p_list=(0.0, 1.0, 2.0), replications=100, master_seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="replications"):
            small_cfg(replications=99)
        with pytest.raises(ValueError):
            small_cfg(n_grid=())
        with pytest.raises(ValueError):
            small_cfg(n_grid=(100, 50))
        with pytest.raises(ValueError):
            small_cfg(epsilon=1.0)
        with pytest.raises(ValueError):
            small_cfg(p_list=(-1.0,))

    def test_dict_round_trip(self):
        cfg = small_cfg()
        back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back.to_dict() == cfg.to_dict()


def test_stream_ids_unique():
    ids = {stream_id(n, r) for n in (50, 100, 1600) for r in range(2000)}
    assert len(ids) == 3 * 2000


class TestRules:
    def test_flat_passes(self):
        assert boundedness([1.0, 1.1, 0.9, 1.0], [0.05] * 4)["passed"]

    def test_ratio_fails(self):
        assert not boundedness([1.0, 2.0, 4.0], [0.01] * 3)["passed"]

    def test_sqrt_n_growth_fails(self):
        n = np.array([50, 100, 200, 400, 800, 1600])
        res = boundedness(np.sqrt(n) / 10, np.full(6, 0.01))
        assert res["growth"] and not res["passed"]

    def test_noisy_increase_within_se_passes(self):
        assert boundedness([1.0, 1.01, 1.02], [0.05] * 3)["passed"]

    def test_frequencies(self):
        assert frequencies_nondecreasing([0.5, 0.7, 0.69, 0.9], [0.01] * 4)
        assert not frequencies_nondecreasing([0.9, 0.5], [0.01, 0.01])


class TestSupErrors:
    def test_phi_degenerate_is_ks_distance(self):
        spec = zero_spec()
        ds = simulate(spec, 100, SeedSpec(1))
        # KS distance of the empirical survival of T against exp(-t)
        t = ds.time
        emp_before = 1 - np.arange(t.size) / t.size  # P_n(T >= t_i)
        emp_after = 1 - np.arange(1, t.size + 1) / t.size  # P_n(T > t_i)
        ks = max(np.abs(emp_before - np.exp(-t)).max(), np.abs(emp_after - np.exp(-t)).max())
        assert phi_sup_error(ds, [0.0], spec) == pytest.approx(ks, abs=1e-12)

    def test_phi_ks_band(self):
        spec = zero_spec()
        vals = np.array([_phi_task((spec, 100, SeedSpec(3, r))) ** 2 for r in range(400)])
        assert 0.3 <= vals.mean() <= 1.2

    def test_breslow_zero_covariates_is_nelson_aalen(self):
        spec = ModelSpec(np.array([0.0]), Baseline("exponential", rate=1.0),
                         CovariateLaw("finite-discrete", atoms=[[0.0]], probabilities=[1.0]), Censoring(1.5))
        for seed in range(5):
            ds = simulate(spec, 200, SeedSpec(seed))
            ev = ds.status == 1
            at_risk = np.array([np.sum(ds.time >= t) for t in ds.time])
            na = np.cumsum(np.where(ev, 1.0 / at_risk, 0.0))
            jumps = ds.time[ev]
            step = StepFunction(jumps, na[ev], 0.0)
            direct = sup_distance(step, lambda u: np.asarray(u, float), "increasing", 0.0, 1.5)
            assert breslow_sup_error(ds, [0.0], spec) == pytest.approx(direct, rel=1e-12)

    def test_single_replication_n1(self, ref_spec):
        v = _phi_task((ref_spec, 1, SeedSpec(0)))
        assert math.isfinite(v) and v >= 0


@pytest.fixture(scope="module")
def beta_report():
    return run_beta_moments(small_cfg())


class TestRunners:
    def test_beta_shape(self, beta_report):
        assert len([r for r in beta_report.rows if r.quantity == "beta_gated"]) == 2 * 3
        for r in beta_report.rows:
            assert r.mc_mean >= 0 and math.isfinite(r.mc_mean)
            if r.p > 0:
                assert r.mc_se > 0

    def test_p0_gated_mean_is_event_frequency(self, beta_report):
        for n in (50, 100):
            row = beta_report.row(n, 0.0, "beta_gated")
            ok = 100 - row.failures
            assert row.mc_mean * ok / 100 == pytest.approx(beta_report.events[(n, "E")][0], abs=1e-12)

    def test_reproducible(self, beta_report, tmp_path):
        again = run_beta_moments(small_cfg())
        beta_report.to_csv(tmp_path / "a.csv")
        again.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_workers_do_not_change_output(self, tmp_path):
        cfg = small_cfg(n_grid=(60,))
        run_phi_moments(cfg, workers=1).to_csv(tmp_path / "a.csv")
        run_phi_moments(cfg, workers=2).to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_breslow_events(self):
        rep = run_breslow_moments(small_cfg(n_grid=(100,)))
        for tag in ("A1", "A2(beta_hat)", "E", "A"):
            f, se = rep.events[(100, tag)]
            assert 0 <= f <= 1
        assert rep.events[(100, "A")][0] <= min(rep.events[(100, t)][0] for t in ("A1", "A2(beta_hat)", "E"))

    def test_abort_on_many_failures(self):
        # n=3 with a binary covariate separates very often
        with pytest.raises(ExperimentAbort, match="fits failed"):
            run_beta_moments(small_cfg(n_grid=(3,)))

    def test_normality_flags_small_n(self):
        rep = run_normality(small_cfg(n_grid=(50, 400)))
        assert rep.row(50, 1).small_n and not rep.row(400, 1).small_n
        assert 0 <= rep.row(400, 1).wald_coverage <= 1


class TestInequalities:
    def test_reference_rhs(self, ref_spec):
        assert covariate_moment(ref_spec, 0, 2) == pytest.approx(math.e / 2, rel=1e-15)

    def test_reference_passes(self):
        rep = run_inequality_checks(small_cfg(n_grid=(200,), p_list=(1.0, 2.0, 3.0, 4.0)))
        assert rep.passed
        assert {r.check for r in rep.rows} == {"titu", "moment", "covariance"}

    def test_zero_covariates_tight(self):
        rep = run_inequality_checks(small_cfg(spec=zero_spec(2.0), n_grid=(50,), p_list=(2.0,)))
        moment = [r for r in rep.rows if r.check == "moment"][0]
        assert moment.lhs == 0.0 and moment.rhs == 0.0 and moment.passed

    def test_needs_discrete_law(self):
        spec = ModelSpec(np.array([0.1]), Baseline(), CovariateLaw("uniform-box", lower=[0], upper=[1]), Censoring(1.0))
        with pytest.raises(ValueError):
            run_inequality_checks(small_cfg(spec=spec))

    @given(st.lists(st.floats(-2, 2), min_size=2, max_size=4), st.floats(-1, 1), st.integers(1, 5))
    def test_moment_rhs_dominates_power_of_mean(self, atoms, beta, p):
        # Jensen: E[Y]^p <= E[Y^p]
        probs = np.full(len(atoms), 1 / len(atoms))
        spec = ModelSpec(np.array([beta]), Baseline(), CovariateLaw("finite-discrete", atoms=[[a] for a in atoms], probabilities=probs), Censoring(1.0))
        assert covariate_moment(spec, 0, 1) ** p <= covariate_moment(spec, 0, p) * (1 + 1e-12)


def test_write_outputs(tmp_path):
    cfg = small_cfg(n_grid=(50,))
    rep = run_phi_moments(cfg)
    paths = write_outputs("phi-moments", cfg, rep, tmp_path)
    rows = list(csv.DictReader(open(paths[0])))
    assert list(rows[0]) == ["n", "p", "quantity", "mc_mean", "mc_se", "event_freq", "failures"]
    assert len(rows) == 3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["master_seed"] == 7 and manifest["experiment"] == "phi-moments"
