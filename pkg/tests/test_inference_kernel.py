import logging
import math

import numpy as np
import pytest

from _oracles import naive_stage2_logpost
from hawkes_ccrm.data import InteractionDataset
from hawkes_ccrm.generator import generate
from hawkes_ccrm.hawkes_pair import MU_FLOOR, KernelParams
from hawkes_ccrm.inference.kernel import KernelData, Stage2Config, run_stage2, stage2_logpost
from hawkes_ccrm.random_measures import CcrmHyper, GgpHyper


def test_config_reads_variances():
    cfg = Stage2Config()
    np.testing.assert_allclose(cfg.proposal_sd, np.sqrt([1.5, 2.5]))
    np.testing.assert_allclose(Stage2Config(proposal_is_sd=True).proposal_sd, [1.5, 2.5])
    with pytest.raises(ValueError):
        Stage2Config(pair_set="everything")
    with pytest.raises(ValueError):
        Stage2Config(prior_rate_eta=0.0)


@pytest.mark.parametrize("pair_set", ["connected", "active"])
def test_logpost_matches_oracle(three_pair_history, pair_set):
    d = three_pair_history
    idx = d.pairs
    mu = np.array([0.3, 0.5, 0.2])
    data = KernelData.build(d, mu, pair_set)
    cfg = Stage2Config(pair_set=pair_set)
    hists = [(idx.history(p).forward, idx.history(p).backward, d.T) for p in range(len(idx))]
    uses = list(zip(data.use_f, data.use_b))
    for eta, delta in [(0.5, 1.0), (1.7, 0.9), (0.0, 3.0)]:
        want = naive_stage2_logpost(hists, mu, uses, eta, delta, 0.01, 0.01)
        assert stage2_logpost(KernelParams(eta, delta), data, cfg) == pytest.approx(want, abs=1e-10)


def test_active_pair_set_drops_silent_directions():
    d = InteractionDataset([1.0, 2.0], [0, 0], [1, 1], T=3.0)
    assert KernelData.build(d, np.array([0.2]), "active").use_b.tolist() == [False]
    assert KernelData.build(d, np.array([0.2]), "connected").use_b.tolist() == [True]


def test_base_rates_floored_with_warning(three_pair_history, caplog):
    with caplog.at_level(logging.WARNING):
        data = KernelData.build(three_pair_history, np.array([0.0, 0.2, 0.1]), "connected")
    assert data.n_floored == 1 and data.mu[0] == MU_FLOOR
    assert "flooring" in caplog.text


def test_wrong_rate_length_rejected(three_pair_history):
    with pytest.raises(ValueError):
        KernelData.build(three_pair_history, np.array([0.1]), "connected")


def test_sampler_targets_prior_without_data():
    """With no pairs the posterior is the Exponential prior; checks the truncated-proposal correction."""
    empty = InteractionDataset([], [], [], T=1.0, n_nodes=2)
    data = KernelData.build(empty, np.zeros(0), "connected")
    cfg = Stage2Config(prior_rate_eta=1.0, prior_rate_delta=0.5, iterations=40000, burn_in=1000, n_chains=1,
                       proposal_var=(1.0, 4.0), init=(1.0, 2.0))
    s = run_stage2(data, cfg, rng=2)
    eta, delta = s.stacked("eta"), s.stacked("delta")
    assert eta.mean() == pytest.approx(1.0, rel=0.06)
    assert delta.mean() == pytest.approx(2.0, rel=0.06)
    assert np.mean(eta > 2.0) == pytest.approx(math.exp(-2.0), abs=0.02)


def test_recovers_kernel_with_true_base_rates():
    d = generate(GgpHyper(30.0, 0.3, 1.0), CcrmHyper.uniform(2, 0.3, 1.0), KernelParams(0.85, 3.0), 60.0,
                 np.random.default_rng(12))
    idx = d.pairs
    data = KernelData.build(d, d.truth.mu(idx.a, idx.b), "connected")
    s = run_stage2(data, Stage2Config(iterations=4000, n_chains=2), rng=5)
    summ = s.summary()
    lo, hi = summ["eta"]["ci95"]
    assert lo < 0.85 < hi
    lo, hi = summ["delta"]["ci95"]
    assert lo < 3.0 < hi
    assert 0 < min(summ["acceptance"]) < 1
    assert summ["nonstationary_mass"] == 0.0


def test_joint_and_adaptive_modes_run(three_pair_history):
    data = KernelData.build(three_pair_history, np.array([0.3, 0.2, 0.1]), "connected")
    for cfg in (Stage2Config(iterations=200, joint=True), Stage2Config(iterations=200, adapt=True)):
        s = run_stage2(data, cfg, rng=1)
        assert s.stacked("eta").size == 2 * 100


def test_determinism(three_pair_history):
    data = KernelData.build(three_pair_history, np.array([0.3, 0.2, 0.1]), "connected")
    cfg = Stage2Config(iterations=300)
    a = list(run_stage2(data, cfg, rng=9).trace_rows())
    b = list(run_stage2(data, cfg, rng=9).trace_rows())
    assert a == b
