import math

import numpy as np
import pytest

from hawkes_ccrm.data import InteractionDataset
from hawkes_ccrm.evaluation import (FittedModel, directed_counts, evaluate_model, evaluation_pairs,
                                    fit_hawkes_global, fit_poisson_global, posterior_predictive_degrees,
                                    predict_counts, rmse, split_by_time)
from hawkes_ccrm.generator import generate, sample_graph
from hawkes_ccrm.hawkes_pair import KernelParams, NonStationaryError, expected_lambda_integral
from hawkes_ccrm.random_measures import CcrmHyper, GgpHyper

W5 = np.array([[0.5], [0.6], [0.3], [0.9], [0.2]])
PAIRS = np.array([[0, 1], [1, 0], [2, 3], [3, 2], [1, 4], [4, 1], [0, 4]])


def uniform_dataset(n, T=None):
    t = np.arange(1, n + 1, dtype=float)
    return InteractionDataset(t, np.zeros(n, int), np.ones(n, int), T=T or float(n))


def test_split_fraction_and_no_leakage():
    s = split_by_time(uniform_dataset(100), 0.85)
    assert len(s.train) == 85 and len(s.test) == 15
    assert s.train.t.max() <= s.T_split < s.test.t.min()


def test_split_keeps_ties_in_train():
    d = InteractionDataset([1, 2, 2, 2, 3], [0, 0, 1, 0, 0], [1, 1, 0, 2, 1], T=3.0)
    s = split_by_time(d, 0.4)
    assert len(s.train) == 4 and len(s.test) == 1


def test_split_near_one():
    s = split_by_time(uniform_dataset(10), 0.999)
    assert len(s.train) == 10 and len(s.test) == 0 and s.empty_test


def test_split_single_timestamp_flags_empty_test():
    d = InteractionDataset([1.0] * 5, [0, 1, 0, 2, 2], [1, 0, 2, 0, 1], T=2.0)
    assert split_by_time(d, 0.5).empty_test


@pytest.mark.parametrize("f", [0.0, 1.0, -0.1])
def test_split_fraction_validated(f):
    with pytest.raises(ValueError):
        split_by_time(uniform_dataset(5), f)


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([2, 3, 4], [1, 2, 3]) == pytest.approx(1.0)
    assert rmse([3, 4], [0, 0]) == pytest.approx(3.5355339, abs=1e-6)
    with pytest.raises(ValueError):
        rmse([], [])


def test_evaluation_pairs_and_counts(three_pair_history):
    s = split_by_time(three_pair_history, 0.5)
    union = evaluation_pairs(s, "union")
    train = evaluation_pairs(s, "train")
    assert len(train) <= len(union)
    counts = directed_counts(s.test, union)
    assert counts.sum() == len(s.test)


def test_poisson_rate_one_pair():
    m = fit_poisson_global(uniform_dataset(10, T=10.0))
    assert m.mu_global[0] == pytest.approx(1.0)


def test_poisson_predicts_rate_times_horizon(three_pair_history):
    m = FittedModel("poisson_global", mu_global=0.4)
    np.testing.assert_allclose(predict_counts(m, three_pair_history, PAIRS, 2.5), 1.0)


def test_ccrm_predicts_base_rate_times_horizon(three_pair_history):
    m = FittedModel("ccrm", weights=W5)
    pred = predict_counts(m, three_pair_history, PAIRS, 3.0)
    want = [(W5[i] @ W5[j]) * 3.0 for i, j in PAIRS]
    np.testing.assert_allclose(pred, want)


def test_analytic_prediction_matches_ode_formula(three_pair_history):
    k = KernelParams(1.0, 2.0)
    m = FittedModel("hawkes_ccrm", weights=W5, eta=[k.eta], delta=[k.delta])
    pred = predict_counts(m, three_pair_history, PAIRS[:2], 5.0)
    h = three_pair_history.pairs.history(0)  # pair (0, 1)
    mu = float(W5[0] @ W5[1])
    ef = sum(math.exp(-2.0 * (4.0 - t)) for t in h.backward)
    eb = sum(math.exp(-2.0 * (4.0 - t)) for t in h.forward)
    f, b = expected_lambda_integral(mu, mu, mu + ef, mu + eb, k, 5.0)
    np.testing.assert_allclose(pred, [f, b], rtol=1e-12)


def test_simulated_prediction_agrees(three_pair_history):
    m = FittedModel("hawkes_ccrm", weights=W5, eta=[1.0], delta=[2.0])
    a = predict_counts(m, three_pair_history, PAIRS, 5.0)
    s = predict_counts(m, three_pair_history, PAIRS, 5.0, method="simulate", n_sims=20000, rng=1)
    np.testing.assert_allclose(s, a, rtol=0.04)


def test_nonstationary_draws_rejected(three_pair_history):
    m = FittedModel("hawkes_ccrm", weights=W5, eta=[3.0], delta=[2.0])
    with pytest.raises(NonStationaryError):
        predict_counts(m, three_pair_history, PAIRS, 1.0)


def test_nonstationary_draws_dropped_when_others_remain(three_pair_history):
    mixed = FittedModel("hawkes_ccrm", weights=W5, eta=[3.0, 1.0], delta=[2.0, 2.0])
    clean = FittedModel("hawkes_ccrm", weights=W5, eta=[1.0], delta=[2.0])
    np.testing.assert_allclose(predict_counts(mixed, three_pair_history, PAIRS, 1.0),
                               predict_counts(clean, three_pair_history, PAIRS, 1.0))


def test_unknown_model_and_missing_rates():
    with pytest.raises(ValueError):
        FittedModel("irm", weights=W5)
    with pytest.raises(ValueError):
        FittedModel("ccrm")


def test_global_hawkes_finds_no_reciprocity_in_poisson_data():
    d = generate(GgpHyper(15.0, 0.2, 1.0), CcrmHyper.uniform(1, 1.0, 1.0), KernelParams(0.0, 2.0), 40.0,
                 np.random.default_rng(3))
    m = fit_hawkes_global(d, iterations=1500, rng=1)
    assert np.quantile(m.eta, 0.5) < 0.1


@pytest.mark.slow
def test_true_parameters_beat_every_baseline():
    """The exact conditional-mean forecaster should win the RMSE comparison in most replications."""
    k = KernelParams(2.0, 3.0)
    wins = 0
    for seed in range(20):
        d = generate(GgpHyper(15.0, 0.3, 1.0), CcrmHyper.uniform(4, 0.5, 4.0), k, 300.0,
                     np.random.default_rng(100 + seed))
        s = split_by_time(d, 0.85)
        truth = FittedModel("hawkes_ccrm", weights=d.truth.w, eta=[k.eta], delta=[k.delta])
        baselines = [FittedModel("ccrm", weights=d.truth.w), fit_hawkes_global(s.train, iterations=1500, rng=seed),
                     fit_poisson_global(s.train)]
        best = min(evaluate_model(m, s).rmse for m in baselines)
        wins += evaluate_model(truth, s).rmse <= best
    assert wins >= 16


def test_degree_envelope_covers_same_model_graph():
    h, c, T = GgpHyper(30.0, 0.3, 1.0), CcrmHyper.uniform(2, 0.5, 1.0), 20.0
    observed = sample_graph(h, c, T, np.random.default_rng(0))
    rep = posterior_predictive_degrees([(h, c)], T, observed, 200, rng=1)
    assert rep.coverage >= 0.8
    rows = list(rep.rows())
    assert len(rows) == rep.observed.size


def test_degree_histogram_empty_for_tiny_alpha():
    rep = posterior_predictive_degrees([(GgpHyper(1e-6, -0.5, 1.0), CcrmHyper((1.0,), (1.0,)))], 5.0, None, 5,
                                       rng=1)
    assert rep.mean.sum() == 0
