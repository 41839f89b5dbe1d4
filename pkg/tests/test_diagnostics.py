"""Tests for trace estimators, bias/MSE tables, and matrix-factorization RMSE."""

import numpy as np
import pytest

from hamcmc.diagnostics import (
    DiagnosticsError,
    Trace,
    bias_mse_curve,
    curve_summary,
    empirical_cov,
    posterior_mean_error,
    rmse,
    weighted_mean,
)
from hamcmc.models import GaussianMFModel, make_correlated_gaussian
from hamcmc.samplers import ChainConfig, StepSchedule


def make_trace(samples, eps=None, burn_in=0):
    samples = np.asarray(samples, dtype=float)
    if eps is None:
        eps = np.ones(samples.shape[0])
    return Trace(samples=samples, eps=np.asarray(eps, dtype=float), burn_in=burn_in)


def sign_test_p(successes: int, trials: int) -> float:
    """One-sided binomial tail P(X >= successes) under p = 1/2."""
    from math import comb

    return sum(comb(trials, k) for k in range(successes, trials + 1)) / 2.0**trials


class TestWeightedMean:
    def test_constant_function_is_exact(self):
        trace = make_trace(np.random.default_rng(0).standard_normal((10, 2)),
                           eps=np.linspace(1, 0.1, 10))
        assert weighted_mean(trace, h=lambda _: 1.0) == pytest.approx(1.0)

    def test_constant_trace(self):
        c = np.array([1.5, -2.0])
        trace = make_trace(np.tile(c, (7, 1)), eps=np.linspace(2, 1, 7))
        assert np.allclose(weighted_mean(trace), c)

    def test_three_sample_hand_average(self):
        trace = make_trace([[1.0], [2.0], [4.0]], eps=[0.5, 0.3, 0.2])
        expected = (0.5 * 1 + 0.3 * 2 + 0.2 * 4) / 1.0
        assert weighted_mean(trace)[0] == pytest.approx(expected)

    def test_invariant_to_weight_rescaling(self):
        rng = np.random.default_rng(1)
        samples = rng.standard_normal((20, 3))
        eps = rng.uniform(0.1, 1.0, 20)
        t1 = make_trace(samples, eps)
        t2 = make_trace(samples, eps * 123.4)
        assert np.allclose(weighted_mean(t1), weighted_mean(t2), rtol=1e-12)

    def test_burn_in_respected(self):
        trace = make_trace([[10.0], [1.0], [1.0]], burn_in=1)
        assert weighted_mean(trace)[0] == pytest.approx(1.0)

    def test_empty_effective_trace_raises(self):
        trace = make_trace([[1.0]], burn_in=1)
        with pytest.raises(DiagnosticsError):
            weighted_mean(trace)


class TestPosteriorMeanError:
    def setup_method(self):
        self.model = make_correlated_gaussian(3, 40, 2.0, 0.5, seed=2)
        self.mean, _ = self.model.analytic_posterior()

    def test_zero_at_truth(self):
        trace = make_trace(np.tile(self.mean, (5, 1)))
        assert posterior_mean_error(trace, self.model) == pytest.approx(0.0, abs=1e-24)

    def test_unit_offset(self):
        shifted = self.mean + np.array([1.0, 0.0, 0.0])
        trace = make_trace(np.tile(shifted, (5, 1)))
        assert posterior_mean_error(trace, self.model) == pytest.approx(1.0)

    def test_matches_independent_norm(self):
        rng = np.random.default_rng(3)
        samples = rng.standard_normal((15, 3))
        eps = rng.uniform(0.2, 1.0, 15)
        trace = make_trace(samples, eps)
        estimate = np.average(samples, axis=0, weights=eps)
        expected = float(np.sum((estimate - self.mean) ** 2))
        assert posterior_mean_error(trace, self.model) == pytest.approx(expected, rel=1e-12)


class TestEmpiricalCov:
    def test_constant_trace_zero_matrix(self):
        trace = make_trace(np.tile([1.0, 2.0], (6, 1)))
        assert np.allclose(empirical_cov(trace), 0.0)

    def test_two_point_hand_example(self):
        trace = make_trace([[1.0, 0.0], [-1.0, 0.0]])
        assert np.allclose(empirical_cov(trace), [[1.0, 0.0], [0.0, 0.0]])

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            samples = rng.standard_normal((30, 4))
            eps = rng.uniform(0.1, 1.0, 30)
            cov = empirical_cov(make_trace(samples, eps))
            assert np.abs(cov - cov.T).max() < 1e-12
            assert np.linalg.eigvalsh(cov).min() >= -1e-10

    def test_too_few_samples(self):
        with pytest.raises(DiagnosticsError):
            empirical_cov(make_trace([[1.0, 2.0]]))


class TestBiasMseCurve:
    def test_single_replicate_table_shape(self):
        model = make_correlated_gaussian(2, 30, 1.0, 0.4, seed=5)
        cfg = ChainConfig(
            sampler="sgld", n_steps=50, seed=1, burn_in=25,
            schedule=StepSchedule.polynomial(0.05), n_omega=3,
        )
        rows = bias_mse_curve(model, [cfg], replicates=1)
        metrics = {r["metric"] for r in rows}
        assert {"sq_error", "bias_norm", "mse", "abs_bias_0", "abs_bias_1"} <= metrics
        assert all(set(r) == {"sampler", "T", "replicate", "metric", "value"} for r in rows)

    def test_sgld_mse_decays_with_chain_length(self):
        # Longer chains beat shorter ones on a 1-d target: one-sided sign
        # test over 30 paired replicates at p < 0.05.
        model = make_correlated_gaussian(1, 50, 1.0, 0.0, seed=6)
        mean_true, _ = model.analytic_posterior()
        wins = 0
        trials = 30
        from hamcmc.samplers import replicate_configs, run_chain
        from hamcmc.diagnostics import weighted_mean as wm

        short_cfg = ChainConfig(sampler="sgld", n_steps=100, seed=777, burn_in=50,
                                schedule=StepSchedule.polynomial(0.05), n_omega=5)
        long_cfg = ChainConfig(sampler="sgld", n_steps=10_000, seed=777, burn_in=5_000,
                               schedule=StepSchedule.polynomial(0.05), n_omega=5)
        for cfg_short, cfg_long in zip(
            replicate_configs(short_cfg, trials), replicate_configs(long_cfg, trials)
        ):
            err_short = np.sum((wm(run_chain(model, cfg_short)) - mean_true) ** 2)
            err_long = np.sum((wm(run_chain(model, cfg_long)) - mean_true) ** 2)
            wins += err_long < err_short
        assert sign_test_p(wins, trials) < 0.05

    def test_curve_summary_keys(self):
        model = make_correlated_gaussian(2, 20, 1.0, 0.4, seed=7)
        cfgs = [
            ChainConfig(sampler="sgld", n_steps=t, seed=2, burn_in=t // 2,
                        schedule=StepSchedule.polynomial(0.05), n_omega=3)
            for t in (20, 40)
        ]
        summary = curve_summary(bias_mse_curve(model, cfgs, replicates=2))
        assert set(summary) == {("sgld", 20), ("sgld", 40)}
        assert all({"bias_norm", "mse"} == set(v) for v in summary.values())


class TestRmse:
    def make_model(self):
        triples = [(0, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0)]
        return GaussianMFModel(triples, 2, 2, 1)

    def test_perfect_predictions(self):
        model = self.make_model()
        w = np.array([[1.0], [3.0]])
        h = np.array([[1.0, 2.0]])
        theta = model.pack(w, h)
        trace = make_trace(np.tile(theta, (4, 1)))
        test = [(0, 0, 1.0), (0, 1, 2.0)]
        assert rmse(model, trace, test) == pytest.approx(0.0, abs=1e-14)

    def test_single_entry_off_by_two(self):
        model = self.make_model()
        theta = np.zeros(model.dim)
        trace = make_trace(np.tile(theta, (3, 1)))
        assert rmse(model, trace, [(1, 1, 2.0)]) == pytest.approx(2.0)

    def test_matches_independent_script(self):
        model = self.make_model()
        rng = np.random.default_rng(8)
        samples = rng.standard_normal((12, model.dim))
        eps = rng.uniform(0.1, 1.0, 12)
        trace = make_trace(samples, eps)
        test = [(0, 0, 0.5), (1, 1, -0.7), (0, 1, 1.2)]
        preds = []
        for theta in samples:
            w = theta[:2].reshape(2, 1)
            h = theta[2:].reshape(1, 2)
            full = w @ h
            preds.append([full[i, j] for i, j, _ in test])
        pred_mean = np.average(np.array(preds), axis=0, weights=eps)
        expected = float(np.sqrt(np.mean((pred_mean - np.array([0.5, -0.7, 1.2])) ** 2)))
        assert rmse(model, trace, test) == pytest.approx(expected, rel=1e-12)

    def test_empty_test_set(self):
        model = self.make_model()
        trace = make_trace(np.zeros((3, model.dim)))
        with pytest.raises(DiagnosticsError):
            rmse(model, trace, [])


class TestTrace:
    def test_length_mismatch_rejected(self):
        with pytest.raises(DiagnosticsError):
            Trace(samples=np.zeros((3, 2)), eps=np.ones(2))

    def test_burn_in_bounds(self):
        with pytest.raises(DiagnosticsError):
            Trace(samples=np.zeros((3, 2)), eps=np.ones(3), burn_in=4)
