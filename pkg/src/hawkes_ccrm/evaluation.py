"""Temporal train/test protocol: splitting, count prediction, RMSE, baselines, degree checks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from . import _kernels
from .data import BinaryGraph, InteractionDataset, binary_projection
from .hawkes_pair import NonStationaryError
from .random_measures import CcrmHyper, GgpHyper

log = logging.getLogger(__name__)

MODELS = ("hawkes_ccrm", "ccrm", "hawkes_global", "poisson_global")


# ---------------------------------------------------------------------------
# Splitting


@dataclass
class SplitDataset:
    train: InteractionDataset
    test: InteractionDataset
    T_split: float
    fraction: float

    @property
    def empty_test(self) -> bool:
        return len(self.test) == 0

    @property
    def horizon(self) -> float:
        return self.test.T - self.T_split


def split_by_time(d: InteractionDataset, fraction: float = 0.85) -> SplitDataset:
    """Train holds the first ceil(fraction n) interactions plus any ties at the cut time."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    n = len(d)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    k = math.ceil(fraction * n)
    T_split = float(d.t[k - 1])
    train = d.window(0.0, T_split, T=T_split)
    test = d.window(T_split, d.T, include_lo=False, T=d.T)
    if len(test) == 0:
        log.warning("test window is empty after splitting at t=%g", T_split)
    return SplitDataset(train, test, T_split, fraction)


def evaluation_pairs(split: SplitDataset, mode: str = "union") -> np.ndarray:
    """Directed pairs (src, dst) with an interaction in train and test ("union") or in train only."""
    if mode == "union":
        src = np.concatenate([split.train.src, split.test.src])
        dst = np.concatenate([split.train.dst, split.test.dst])
    elif mode == "train":
        src, dst = split.train.src, split.train.dst
    else:
        raise ValueError("mode must be 'union' or 'train'")
    if src.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.stack([src, dst], axis=1), axis=0)


def directed_counts(d: InteractionDataset, pairs: np.ndarray) -> np.ndarray:
    """Number of interactions of ``d`` on each directed pair."""
    if len(pairs) == 0:
        return np.zeros(0)
    n = max(int(d.n_nodes), int(pairs.max()) + 1)
    key = d.src * n + d.dst
    uniq, cnt = np.unique(key, return_counts=True)
    q = pairs[:, 0] * n + pairs[:, 1]
    pos = np.searchsorted(uniq, q)
    pos = np.minimum(pos, max(uniq.size - 1, 0))
    hit = (uniq.size > 0) & (uniq[pos] == q) if uniq.size else np.zeros(q.size, bool)
    return np.where(hit, cnt[pos] if uniq.size else 0, 0).astype(float)


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ValueError("pred and actual must have the same shape")
    if pred.size == 0:
        raise ValueError("empty evaluation pair set")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


# ---------------------------------------------------------------------------
# Fitted models


@dataclass
class FittedModel:
    """Parameters needed to forecast counts under one of the four models.

    ``weights`` (n_nodes x p) give base rates for the community models;
    ``mu_global`` is the shared base rate of the global models. ``eta`` and
    ``delta`` hold kernel posterior draws (a single entry for point fits).
    """

    tag: str
    weights: Optional[np.ndarray] = None
    mu_global: Optional[np.ndarray] = None
    eta: np.ndarray = field(default_factory=lambda: np.zeros(1))
    delta: np.ndarray = field(default_factory=lambda: np.ones(1))
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in MODELS:
            raise ValueError(f"unknown model {self.tag!r}; expected one of {MODELS}")
        self.eta = np.atleast_1d(np.asarray(self.eta, float))
        self.delta = np.atleast_1d(np.asarray(self.delta, float))
        if self.mu_global is not None:
            self.mu_global = np.broadcast_to(np.atleast_1d(np.asarray(self.mu_global, float)),
                                             self.eta.shape).copy()
        if self.weights is None and self.mu_global is None:
            raise ValueError("a fitted model needs weights or a global base rate")

    def base_rate(self, i, j, draw: int = 0) -> np.ndarray:
        i, j = np.atleast_1d(i), np.atleast_1d(j)
        if self.weights is not None:
            W = self.weights
            n = W.shape[0]
            ok = (i < n) & (j < n)
            out = np.zeros(i.size)
            prod = np.sort(W[i[ok]] * W[j[ok]], axis=1)
            out[ok] = prod.sum(axis=1)
            return out
        return np.full(i.size, float(self.mu_global[draw]))

    def draws(self, max_draws: int = 200) -> np.ndarray:
        """Indices of stationary kernel draws, thinned evenly to at most ``max_draws``."""
        ok = np.flatnonzero(self.eta < self.delta)
        if ok.size == 0:
            raise NonStationaryError("every kernel draw has eta >= delta; refusing to forecast")
        if ok.size < self.eta.size:
            log.info("dropping %d non-stationary kernel draws", self.eta.size - ok.size)
        if ok.size > max_draws:
            ok = ok[np.linspace(0, ok.size - 1, max_draws).round().astype(int)]
        return ok


def _analytic_counts(mu_f, mu_b, lf0, lb0, eta, delta, H):
    """Vectorised integrated expected intensities over (0, H]; see hawkes_pair.expected_lambda_integral."""
    def integrated(x0, x_inf, rate):
        return x_inf * H - (x0 - x_inf) * np.expm1(-rate * H) / rate

    s = integrated(lf0 + lb0, delta * (mu_f + mu_b) / (delta - eta), delta - eta)
    d = integrated(lf0 - lb0, delta * (mu_f - mu_b) / (delta + eta), delta + eta)
    return 0.5 * (s + d), 0.5 * (s - d)


def predict_counts(model: FittedModel, history: InteractionDataset, pairs, horizon: float,
                   method: str = "analytic", n_sims: int = 100, rng=None, max_draws: int = 200,
                   return_se: bool = False):
    """Expected interactions on each directed pair over (T_split, T_split + horizon].

    ``history`` is the training window, its horizon ``T`` being the split time;
    its events set the initial excitation. Kernel draws are averaged. With
    ``return_se`` the Monte Carlo standard errors are returned as well (zero
    in analytic mode).
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if method not in ("analytic", "simulate"):
        raise ValueError("method must be 'analytic' or 'simulate'")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if len(pairs) == 0:
        return np.zeros(0)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    forward = pairs[:, 0] == lo
    upairs, inv = np.unique(np.stack([lo, hi], axis=1), axis=0, return_inverse=True)
    inv = inv.ravel()
    idx = history.pairs
    n = max(int(history.n_nodes), int(upairs.max()) + 1)
    key_hist = idx.a * n + idx.b
    key = upairs[:, 0] * n + upairs[:, 1]
    pos = np.searchsorted(key_hist, key) if key_hist.size else np.zeros(key.size, np.int64)
    pos = np.minimum(pos, max(key_hist.size - 1, 0))
    has_hist = (key_hist[pos] == key) if key_hist.size else np.zeros(key.size, bool)
    T0 = history.T
    draws = model.draws(max_draws if method == "analytic" else max(1, min(max_draws, n_sims)))
    if model.tag in ("ccrm", "poisson_global"):
        draws = draws[:1] if model.mu_global is None else draws
    fw_tot = np.zeros(len(upairs))
    bw_tot = np.zeros(len(upairs))
    fw_var = np.zeros(len(upairs))
    bw_var = np.zeros(len(upairs))
    rng = np.random.default_rng(rng)
    sims_each = max(1, int(math.ceil(n_sims / len(draws))))
    for dr in draws:
        eta = float(model.eta[dr]) if model.tag in ("hawkes_ccrm", "hawkes_global") else 0.0
        delta = float(model.delta[dr]) if model.tag in ("hawkes_ccrm", "hawkes_global") else 1.0
        mu = model.base_rate(upairs[:, 0], upairs[:, 1], draw=dr)
        ef = np.zeros(len(upairs))
        eb = np.zeros(len(upairs))
        if eta > 0 and np.any(has_hist):
            ef_all, eb_all = _kernels.end_states(idx.times, idx.fwd, idx.offsets, delta, T0)
            ef[has_hist] = ef_all[pos[has_hist]]
            eb[has_hist] = eb_all[pos[has_hist]]
        if method == "analytic":
            f, b = _analytic_counts(mu, mu, mu + eta * ef, mu + eta * eb, eta, delta, horizon)
        else:
            f = np.empty(len(upairs))
            b = np.empty(len(upairs))
            seeds = rng.integers(0, 2 ** 32, size=len(upairs))
            for q in range(len(upairs)):
                c = _kernels.forecast_counts(mu[q], mu[q], eta, delta, horizon, ef[q], eb[q], sims_each,
                                             int(seeds[q]))
                f[q], b[q] = c.mean(axis=0)
                if sims_each > 1:
                    vf, vb = c.var(axis=0, ddof=1) / sims_each
                    fw_var[q] += vf
                    bw_var[q] += vb
        fw_tot += f
        bw_tot += b
    fw_tot /= len(draws)
    bw_tot /= len(draws)
    pred = np.where(forward, fw_tot[inv], bw_tot[inv])
    if not return_se:
        return pred
    se = np.sqrt(np.where(forward, fw_var[inv], bw_var[inv])) / len(draws)
    return pred, se


@dataclass
class PredictionReport:
    model: str
    pairs: np.ndarray
    predicted: np.ndarray
    actual: np.ndarray
    rmse: float
    rmse_train_pairs: float

    def rows(self):
        for (i, j), p, a in zip(self.pairs, self.predicted, self.actual):
            yield [int(i), int(j), float(p), float(a)]


def evaluate_model(model: FittedModel, split: SplitDataset, method: str = "analytic", n_sims: int = 100,
                   rng=None) -> PredictionReport:
    """RMSE over directed pairs active in train or test, plus the train-only variant."""
    pairs = evaluation_pairs(split, "union")
    pred = predict_counts(model, split.train, pairs, split.horizon, method, n_sims, rng)
    actual = directed_counts(split.test, pairs)
    train_pairs = evaluation_pairs(split, "train")
    in_train = np.zeros(len(pairs), bool)
    if len(train_pairs):
        n = int(max(pairs.max(), train_pairs.max())) + 1
        in_train = np.isin(pairs[:, 0] * n + pairs[:, 1], train_pairs[:, 0] * n + train_pairs[:, 1])
    r_train = rmse(pred[in_train], actual[in_train]) if in_train.any() else float("nan")
    return PredictionReport(model.tag, pairs, pred, actual, rmse(pred, actual), r_train)


# ---------------------------------------------------------------------------
# Baselines


def fit_poisson_global(train: InteractionDataset) -> FittedModel:
    """One rate for every directed pair: interactions / (active directed pairs x T)."""
    if len(train) == 0:
        raise ValueError("empty training set")
    n_pairs = len(np.unique(np.stack([train.src, train.dst], axis=1), axis=0))
    mu = len(train) / (n_pairs * train.T)
    return FittedModel("poisson_global", mu_global=mu, meta={"n_pairs": n_pairs})


def _global_logpost(x, idx, use, prior_rate):
    mu, eta, delta = x
    if mu <= 0 or eta < 0 or delta <= 0:
        return -math.inf
    ll = _kernels.batch_loglik_shared_mu(idx.times, idx.fwd, idx.offsets, mu, use, use, eta, delta, idx.T)
    return ll - prior_rate * (mu + eta + delta) if math.isfinite(ll) else -math.inf


def fit_hawkes_global(train: InteractionDataset, iterations: int = 4000, burn_in: Optional[int] = None,
                      rng=None, prior_rate: float = 0.01, target_accept: float = 0.44) -> FittedModel:
    """Shared (mu, eta, delta) over both directions of every active pair.

    Single-coordinate MH with truncated-normal proposals whose scales adapt
    during burn-in.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(rng)
    burn_in = iterations // 2 if burn_in is None else burn_in
    idx = train.pairs
    use = np.ones(len(idx), dtype=np.bool_)
    mu0 = len(train) / (2 * len(idx) * train.T)
    x = np.array([mu0, 0.1, 1.0])
    sd = np.array([0.5 * mu0, 0.5, 1.0])
    lp = _global_logpost(x, idx, use, prior_rate)
    out = []
    for it in range(iterations):
        for c in range(3):
            y = x.copy()
            while True:
                y[c] = x[c] + sd[c] * rng.standard_normal()
                if y[c] > 0:
                    break
            corr = special.log_ndtr(x[c] / sd[c]) - special.log_ndtr(y[c] / sd[c])
            lp_y = _global_logpost(y, idx, use, prior_rate)
            ok = math.isfinite(lp_y) and math.log(rng.random()) < lp_y - lp + corr
            if ok:
                x, lp = y, lp_y
            if it < burn_in:
                sd[c] *= math.exp((float(ok) - target_accept) / (it + 10) ** 0.6)
        if it >= burn_in:
            out.append(x.copy())
    draws = np.array(out) if out else x[None, :]
    return FittedModel("hawkes_global", mu_global=draws[:, 0], eta=draws[:, 1], delta=draws[:, 2],
                       meta={"posterior_mean": draws.mean(axis=0).tolist()})


def fit_hawkes_ccrm(train: InteractionDataset, stage1_cfg, stage2_cfg, rng=None, kernel: bool = True
                    ) -> FittedModel:
    """Two-stage fit; with ``kernel=False`` the reciprocity is switched off (the CCRM baseline)."""
    from .inference.graph import mbr_point_estimate, run_stage1
    from .inference.kernel import KernelData, run_stage2

    seq = np.random.SeedSequence(rng if not isinstance(rng, np.random.Generator)
                                 else int(rng.integers(0, 2 ** 63)))
    s1_seed, s2_seed = seq.spawn(2)
    g = binary_projection(train)
    s1 = run_stage1(g, train.T, stage1_cfg, np.random.default_rng(s1_seed))
    pe = mbr_point_estimate(s1, train.n_nodes)
    meta = {"stage1": s1, "point_estimate": pe}
    if not kernel:
        return FittedModel("ccrm", weights=pe.full_weights(), meta=meta)
    idx = train.pairs
    data = KernelData.build(train, pe.mu(idx.a, idx.b), stage2_cfg.pair_set)
    s2 = run_stage2(data, stage2_cfg, np.random.default_rng(s2_seed))
    meta["stage2"] = s2
    return FittedModel("hawkes_ccrm", weights=pe.full_weights(), eta=s2.stacked("eta"),
                       delta=s2.stacked("delta"), meta=meta)


def fit_baseline(tag: str, train: InteractionDataset, stage1_cfg=None, rng=None, **kw) -> FittedModel:
    if tag == "poisson_global":
        return fit_poisson_global(train)
    if tag == "hawkes_global":
        return fit_hawkes_global(train, rng=rng, **kw)
    if tag == "ccrm":
        if stage1_cfg is None:
            raise ValueError("the ccrm baseline needs a stage-1 configuration")
        return fit_hawkes_ccrm(train, stage1_cfg, None, rng, kernel=False)
    raise ValueError(f"unknown baseline {tag!r}")


# ---------------------------------------------------------------------------
# Posterior predictive degrees


@dataclass
class DegreeReport:
    bin_edges: np.ndarray          # log2 bins [2^k, 2^(k+1))
    observed: np.ndarray
    mean: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    replicates: int

    @property
    def coverage(self) -> float:
        inside = (self.observed >= self.q05) & (self.observed <= self.q95)
        return float(inside.mean()) if inside.size else float("nan")

    def rows(self):
        for k in range(self.observed.size):
            yield [int(self.bin_edges[k]), int(self.bin_edges[k + 1]), float(self.observed[k]),
                   float(self.mean[k]), float(self.q05[k]), float(self.q95[k])]


def _log2_hist(deg: np.ndarray, edges: np.ndarray) -> np.ndarray:
    deg = deg[deg > 0]
    return np.histogram(deg, bins=edges)[0].astype(float)


def posterior_predictive_degrees(hyper_draws: Sequence[Tuple[GgpHyper, CcrmHyper]], T: float,
                                 observed: Optional[BinaryGraph], replicates: int, rng=None,
                                 eps: float = 1e-3) -> DegreeReport:
    """Degree histograms of graphs simulated from hyperparameter draws, with a 5-95% envelope.

    A pair is connected iff its first event occurs before T, which happens
    with probability 1 - exp(-2T mu_ij) whatever the kernel, so graphs are
    drawn directly from the weights.
    """
    from .generator import sample_graph

    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    rng = np.random.default_rng(rng)
    degs = []
    for r in range(replicates):
        h, c = hyper_draws[int(rng.integers(len(hyper_draws)))]
        degs.append(sample_graph(h, c, T, rng, eps).degrees())
    obs = observed.degrees() if observed is not None else np.zeros(0, np.int64)
    top = max([int(d.max(initial=0)) for d in degs] + [int(obs.max(initial=0)), 1])
    edges = 2 ** np.arange(0, int(math.floor(math.log2(top))) + 2)
    sims = np.stack([_log2_hist(d, edges) for d in degs])
    return DegreeReport(edges, _log2_hist(obs, edges), sims.mean(axis=0), np.quantile(sims, 0.05, axis=0),
                        np.quantile(sims, 0.95, axis=0), replicates)
