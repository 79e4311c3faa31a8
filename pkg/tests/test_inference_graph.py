import math

import numpy as np
import pytest
from scipy import stats

from _oracles import finite_difference_grad, naive_graph_loglik
from hawkes_ccrm import _kernels
from hawkes_ccrm.data import BinaryGraph
from hawkes_ccrm.generator import sample_graph
from hawkes_ccrm.inference.graph import (GraphData, Stage1Config, Stage1State, WeightTarget, align_columns,
                                         graph_loglik, hmc_update_weights, load_checkpoint, log_posterior,
                                         mbr_point_estimate, mh_rescale, run_stage1, sample_latent_counts,
                                         sample_zero_truncated_poisson, save_checkpoint)
from hawkes_ccrm.random_measures import CcrmHyper, GgpHyper


def random_state(rng, V=12, p=3, E=20):
    pairs = np.array([(i, j) for i in range(V) for j in range(i + 1, V)])
    edges = pairs[rng.choice(len(pairs), size=E, replace=False)]
    Z = GraphData(np.arange(V), edges, float(rng.uniform(1, 20)))
    state = Stage1State(rng.normal(-1.5, 0.7, V), rng.normal(0, 0.7, (V, p)), rng.gamma(1.0, 0.05, p),
                        GgpHyper(rng.uniform(1, 20), rng.uniform(-0.9, 0.9), rng.uniform(0.2, 3)),
                        CcrmHyper(tuple(rng.uniform(0.1, 2, p)), tuple(rng.uniform(0.1, 5, p))),
                        rng.integers(1, 4, size=(E, p)))
    return state, Z


def test_graph_loglik_matches_pair_sum(rng):
    for _ in range(10):
        state, Z = random_state(rng, V=9, p=2, E=12)
        want = naive_graph_loglik(state.w, state.w_rem, Z.edges, Z.T)
        assert graph_loglik(state, Z) == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_weight_gradient_matches_finite_differences(rng):
    for _ in range(10):
        state, Z = random_state(rng)
        t = WeightTarget.from_state(state, Z)
        V, p = state.log_beta.shape
        x = np.concatenate([state.log_w0, state.log_beta.ravel()])

        def f(z):
            return t.logp_grad(z[:V], z[V:].reshape(V, p))[0]

        _, gu, gv = t.logp_grad(state.log_w0, state.log_beta)
        g = np.concatenate([gu, gv.ravel()])
        fd = finite_difference_grad(f, x, h=1e-5)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_compiled_gradient_matches_reference(rng):
    state, Z = random_state(rng)
    t = WeightTarget.from_state(state, Z)
    lp, gu, gv = t.logp_grad(state.log_w0, state.log_beta)
    gu2, gv2 = np.empty_like(gu), np.empty_like(gv)
    lp2 = _kernels.weight_logp_grad(state.log_w0, state.log_beta, t.m, t.w_rem, t.sigma, t.tau, t.a, t.b, t.T,
                                    gu2, gv2)
    assert lp2 == pytest.approx(lp, rel=1e-12)
    np.testing.assert_allclose(gu2, gu, rtol=1e-10)
    np.testing.assert_allclose(gv2, gv, rtol=1e-10)


@pytest.mark.parametrize("lam", [1e-4, 0.3, 1.0, 4.0, 40.0])
def test_zero_truncated_poisson_mean(lam):
    rng = np.random.default_rng(0)
    x = sample_zero_truncated_poisson(np.full(40000, lam), rng)
    assert x.min() >= 1
    want = lam / -math.expm1(-lam)
    sd = math.sqrt(lam * (1 + lam) / -math.expm1(-lam) - want ** 2)
    assert abs(x.mean() - want) < 4 * sd / math.sqrt(x.size) + 1e-12


def test_zero_truncated_poisson_rejects_zero_rate(rng):
    with pytest.raises(ValueError):
        sample_zero_truncated_poisson(np.array([0.0, 1.0]), rng)


def test_latent_counts_positive_and_shaped(rng):
    state, Z = random_state(rng)
    c = sample_latent_counts(state, Z, rng)
    assert c.shape == (len(Z.edges), state.p)
    assert np.all(c.sum(axis=1) >= 1)


def test_hmc_preserves_energy_for_small_steps(rng):
    state, Z = random_state(rng)
    probs = [hmc_update_weights(state, Z, 10, 1e-4, rng)[1] for _ in range(20)]
    assert min(probs) > 0.99


def test_rescale_leaves_weights_and_likelihood_unchanged(rng):
    state, Z = random_state(rng)
    w_before, ll_before = state.w.copy(), graph_loglik(state, Z)
    moved = False
    for _ in range(20):
        moved |= mh_rescale(state, Z, 0.5, rng)
    assert moved
    np.testing.assert_allclose(state.w, w_before, rtol=1e-12)
    assert graph_loglik(state, Z) == pytest.approx(ll_before, rel=1e-12)


def test_align_columns_recovers_permutation(rng):
    W = rng.gamma(1.0, 1.0, (30, 4))
    perm = np.array([2, 0, 3, 1])
    shuffled = W[:, perm]
    got = align_columns(shuffled, W)
    np.testing.assert_array_equal(shuffled[:, got], W)


def test_align_columns_large_p(rng):
    W = rng.gamma(1.0, 1.0, (30, 8))
    perm = rng.permutation(8)
    np.testing.assert_array_equal(W[:, perm][:, align_columns(W[:, perm], W)], W)


def test_config_validation():
    with pytest.raises(ValueError):
        Stage1Config(p=0)
    with pytest.raises(ValueError):
        Stage1Config(iterations=10, burn_in=20)


def test_zero_iterations_and_empty_graph_raise():
    g = BinaryGraph(3, [[0, 1], [1, 2]])
    with pytest.raises(ValueError):
        run_stage1(g, 5.0, Stage1Config(iterations=0), rng=1)
    with pytest.raises(ValueError):
        run_stage1(BinaryGraph(3, np.zeros((0, 2))), 5.0, Stage1Config(iterations=10), rng=1)


@pytest.fixture(scope="module")
def fitted():
    g = sample_graph(GgpHyper(15.0, 0.2, 1.0), CcrmHyper.uniform(2, 0.5, 2.0), 20.0, np.random.default_rng(8))
    cfg = Stage1Config(p=2, iterations=600, thin=5, n_chains=2, init_iterations=100)
    return g, cfg, run_stage1(g, 20.0, cfg, rng=3)


def test_stage1_outputs(fitted):
    g, cfg, s = fitted
    assert s.n_samples == 2 * (300 // 5)
    W = s.stacked("w")
    assert W.shape[1:] == (g.active_nodes().size, 2)
    assert np.all(np.isfinite(s.stacked("logpost")))
    H = s.stacked("hyper")
    assert np.all(H[:, 1] < 1) and np.all(H[:, [0, 2]] > 0)
    assert len(s.hyper_draws()) == s.n_samples


def test_stage1_weights_track_degree(fitted):
    g, _, s = fitted
    pe = mbr_point_estimate(s, g.n_nodes)
    deg = g.degrees()[pe.nodes]
    rho = stats.spearmanr(deg, pe.w_hat.sum(axis=1)).correlation
    assert rho > 0.8


def test_stage1_is_deterministic(fitted):
    g, cfg, s = fitted
    again = run_stage1(g, 20.0, cfg, rng=3)
    np.testing.assert_array_equal(again.stacked("logpost"), s.stacked("logpost"))


def test_point_estimate_column_invariance(fitted):
    g, _, s = fitted
    pe = mbr_point_estimate(s, g.n_nodes)
    for c in s.chains:
        c.w = c.w[:, :, ::-1].copy()
    pe2 = mbr_point_estimate(s, g.n_nodes)
    for c in s.chains:
        c.w = c.w[:, :, ::-1].copy()
    i, j = g.edges[:, 0], g.edges[:, 1]
    np.testing.assert_allclose(pe2.mu(i, j), pe.mu(i, j), rtol=1e-12)


def test_checkpoint_round_trip_and_resume(fitted, tmp_path):
    g, cfg, s = fitted
    path = tmp_path / "ck.json"
    save_checkpoint(s, path)
    states = load_checkpoint(path)
    assert len(states) == 2
    Z = s.graph
    assert log_posterior(states[0], Z) == pytest.approx(log_posterior(s.chains[0].final_state, Z))
    short = Stage1Config(p=2, iterations=20, thin=1, n_chains=2)
    resumed = run_stage1(g, 20.0, short, rng=4, initial=states)
    assert resumed.n_samples == 20


def test_checkpoint_format_checked(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(p)
