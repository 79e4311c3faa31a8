"""Scikit-learn style estimators over interaction data.

``X`` is either an :class:`InteractionDataset` or an array of rows
``(src, dst, time)`` with integer node ids. ``fit`` learns from interactions
on [0, T]; ``predict`` returns expected counts per directed pair over the
next ``horizon`` time units.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import InteractionDataset
from .evaluation import (FittedModel, directed_counts, fit_hawkes_ccrm, fit_hawkes_global, fit_poisson_global,
                         predict_counts, rmse)
from .inference.graph import Stage1Config
from .inference.kernel import Stage2Config


def check_interactions(X, T: Optional[float] = None, n_nodes: Optional[int] = None) -> InteractionDataset:
    """Validate ``X`` and return it as an :class:`InteractionDataset`."""
    if isinstance(X, InteractionDataset):
        if T is not None and T < X.t.max(initial=0.0):
            raise ValueError("T precedes the last interaction")
        return X if T is None else InteractionDataset(X.t, X.src, X.dst, T=T, n_nodes=X.n_nodes)
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of (src, dst, time) rows, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("no interactions")
    if not np.all(np.isfinite(arr)):
        raise ValueError("interactions contain NaN or infinite values")
    ids = arr[:, :2]
    if np.any(ids != np.round(ids)) or ids.min() < 0:
        raise ValueError("node ids must be nonnegative integers")
    t = arr[:, 2]
    return InteractionDataset(t, ids[:, 0].astype(np.int64), ids[:, 1].astype(np.int64),
                              T=float(t.max()) if T is None else float(T), n_nodes=n_nodes)


def check_pairs(pairs) -> np.ndarray:
    P = np.asarray(pairs)
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError(f"expected an (m, 2) array of directed pairs, got shape {P.shape}")
    if P.size and (np.any(P != np.round(P)) or P.min() < 0):
        raise ValueError("pairs must hold nonnegative integer node ids")
    return P.astype(np.int64)


class _CountForecaster(BaseEstimator):
    """Shared predict/score logic; subclasses set ``model_`` in ``fit``."""

    method: str = "analytic"
    n_sims: int = 100

    def _fit_model(self, d: InteractionDataset, rng) -> FittedModel:  # pragma: no cover
        raise NotImplementedError

    def fit(self, X, y=None, T: Optional[float] = None):
        d = check_interactions(X, T)
        self.model_ = self._fit_model(d, np.random.default_rng(getattr(self, "random_state", None)))
        self.history_ = d
        self.n_nodes_ = d.n_nodes
        return self

    def predict(self, pairs, horizon: float) -> np.ndarray:
        """Expected interactions on each directed pair over (T, T + horizon]."""
        check_is_fitted(self, "model_")
        P = check_pairs(pairs)
        return predict_counts(self.model_, self.history_, P, float(horizon), self.method, self.n_sims,
                              getattr(self, "random_state", None))

    def score(self, X, y=None, T_end: Optional[float] = None) -> float:
        """Negative RMSE on interactions after the training horizon.

        The pair set is every directed pair active in training or in ``X``.
        """
        check_is_fitted(self, "model_")
        test = check_interactions(X, T_end, n_nodes=None)
        if test.t.size and test.t.min() <= self.history_.T:
            raise ValueError("test interactions must come after the training horizon")
        src = np.concatenate([self.history_.src, test.src])
        dst = np.concatenate([self.history_.dst, test.dst])
        pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
        pred = self.predict(pairs, test.T - self.history_.T)
        return -rmse(pred, directed_counts(test, pairs))


class HawkesCCRM(_CountForecaster):
    """Community base rates with mutually-exciting reciprocity, fitted in two stages.

    Stage 1 samples node weights and hyperparameters from the binary graph;
    stage 2 samples the kernel (eta, delta) given the resulting base rates.

    Attributes set by ``fit``: ``model_``, ``stage1_``, ``stage2_``,
    ``point_estimate_``, ``eta_``, ``delta_`` (posterior means).
    """

    def __init__(self, n_communities: int = 1, stage1_iterations: int = 100_000, stage2_iterations: int = 10_000,
                 n_chains: int = 2, thin: int = 10, pair_set: str = "connected", method: str = "analytic",
                 n_sims: int = 100, random_state=None):
        self.n_communities = n_communities
        self.stage1_iterations = stage1_iterations
        self.stage2_iterations = stage2_iterations
        self.n_chains = n_chains
        self.thin = thin
        self.pair_set = pair_set
        self.method = method
        self.n_sims = n_sims
        self.random_state = random_state

    _kernel = True

    def _configs(self):
        s1 = Stage1Config(p=self.n_communities, iterations=self.stage1_iterations, thin=self.thin,
                          n_chains=self.n_chains)
        s2 = Stage2Config(iterations=self.stage2_iterations, n_chains=self.n_chains, pair_set=self.pair_set)
        return s1, s2

    def _fit_model(self, d, rng):
        s1, s2 = self._configs()
        seed = int(rng.integers(0, 2 ** 63))
        m = fit_hawkes_ccrm(d, s1, s2, seed, kernel=self._kernel)
        self.stage1_ = m.meta["stage1"]
        self.point_estimate_ = m.meta["point_estimate"]
        self.stage2_ = m.meta.get("stage2")
        self.eta_ = float(m.eta.mean())
        self.delta_ = float(m.delta.mean())
        return m


class CCRM(HawkesCCRM):
    """Community base rates only; reciprocity switched off (eta = 0)."""

    _kernel = False


class GlobalHawkes(_CountForecaster):
    """One base rate and one kernel shared by every pair, sampled by MH."""

    def __init__(self, iterations: int = 4000, method: str = "analytic", n_sims: int = 100, random_state=None):
        self.iterations = iterations
        self.method = method
        self.n_sims = n_sims
        self.random_state = random_state

    def _fit_model(self, d, rng):
        m = fit_hawkes_global(d, iterations=self.iterations, rng=rng)
        self.mu_, self.eta_, self.delta_ = (float(x) for x in m.meta["posterior_mean"])
        return m


class GlobalPoisson(_CountForecaster):
    """Homogeneous Poisson rate shared by every observed directed pair."""

    def __init__(self, random_state=None):
        self.random_state = random_state

    def _fit_model(self, d, rng):
        m = fit_poisson_global(d)
        self.mu_ = float(m.mu_global[0])
        return m
