"""Metropolis-Hastings sampling of the reciprocity kernel (eta, delta) given base rates."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import special

from .. import _kernels
from ..data import InteractionDataset, PairIndex
from ..hawkes_pair import MU_FLOOR, KernelParams

log = logging.getLogger(__name__)

PAIR_SETS = ("connected", "active")


@dataclass
class Stage2Config:
    prior_rate_eta: float = 0.01
    prior_rate_delta: float = 0.01
    proposal_var: tuple = (1.5, 2.5)
    # read proposal_var as standard deviations instead of variances
    proposal_is_sd: bool = False
    iterations: int = 10_000
    burn_in: Optional[int] = None
    thin: int = 1
    n_chains: int = 2
    init: tuple = (0.5, 1.0)
    pair_set: str = "connected"
    joint: bool = False
    adapt: bool = False
    target_accept: float = 0.44
    seed: Optional[int] = None

    def __post_init__(self):
        if min(self.proposal_var) < 0:
            raise ValueError("proposal scales must be nonnegative")
        if self.iterations < 0 or self.thin < 1 or self.n_chains < 1:
            raise ValueError("iterations >= 0, thin >= 1 and n_chains >= 1 required")
        if self.burn_in is None:
            self.burn_in = self.iterations // 2
        if not 0 <= self.burn_in <= self.iterations:
            raise ValueError("burn_in must lie in [0, iterations]")
        if self.pair_set not in PAIR_SETS:
            raise ValueError(f"pair_set must be one of {PAIR_SETS}")
        if self.prior_rate_eta <= 0 or self.prior_rate_delta <= 0:
            raise ValueError("prior rates must be positive")

    @property
    def proposal_sd(self) -> np.ndarray:
        v = np.asarray(self.proposal_var, dtype=float)
        return v if self.proposal_is_sd else np.sqrt(v)


@dataclass
class KernelData:
    """Merged per-pair event streams with the base rate of each direction.

    ``use_f``/``use_b`` select which directions enter the likelihood: with
    pair set "active" only directions that have events, with "connected"
    both directions of every pair that has at least one event.
    """

    index: PairIndex
    mu: np.ndarray
    use_f: np.ndarray
    use_b: np.ndarray
    n_floored: int = 0

    @classmethod
    def build(cls, d: InteractionDataset, mu: np.ndarray, pair_set: str = "connected") -> "KernelData":
        """``mu[p]`` is the base rate of unordered pair p of ``d.pairs``."""
        idx = d.pairs
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (len(idx),):
            raise ValueError(f"need one base rate per pair ({len(idx)}), got {mu.shape}")
        low = ~(mu >= MU_FLOOR)
        if np.any(low):
            log.warning("flooring %d base rates at %g", int(low.sum()), MU_FLOOR)
            mu = np.where(low, MU_FLOOR, mu)
        if pair_set == "active":
            use_f, use_b = idx.n_fwd > 0, idx.n_bwd > 0
        elif pair_set == "connected":
            use_f = use_b = np.ones(len(idx), dtype=np.bool_)
        else:
            raise ValueError(f"pair_set must be one of {PAIR_SETS}")
        return cls(idx, mu, np.ascontiguousarray(use_f), np.ascontiguousarray(use_b), int(low.sum()))

    @property
    def n_events(self) -> int:
        return self.index.n_events

    def loglik(self, eta: float, delta: float) -> float:
        i = self.index
        return _kernels.batch_loglik(i.times, i.fwd, i.offsets, self.mu, self.mu, self.use_f, self.use_b,
                                     float(eta), float(delta), i.T)


def log_prior(eta: float, delta: float, cfg: Stage2Config) -> float:
    if eta < 0 or delta <= 0:
        return -math.inf
    return (math.log(cfg.prior_rate_eta) - cfg.prior_rate_eta * eta
            + math.log(cfg.prior_rate_delta) - cfg.prior_rate_delta * delta)


def stage2_logpost(phi: KernelParams, data: KernelData, cfg: Stage2Config) -> float:
    """Hawkes log-likelihood over the selected directions plus Exponential log-priors."""
    lp = log_prior(phi.eta, phi.delta, cfg)
    if not math.isfinite(lp):
        return lp
    ll = data.loglik(phi.eta, phi.delta)
    return ll + lp if math.isfinite(ll) else -math.inf


def _truncnorm_draw(x: float, sd: float, rng) -> float:
    """N(x, sd^2) restricted to (0, inf), by redrawing; x >= 0 keeps acceptance >= 1/2."""
    while True:
        y = x + sd * rng.standard_normal()
        if y > 0:
            return y


def _log_norm_mass(x: float, sd: float) -> float:
    """log P(N(x, sd^2) > 0)."""
    return float(special.log_ndtr(x / sd))


@dataclass
class Stage2Chain:
    eta: np.ndarray
    delta: np.ndarray
    logpost: np.ndarray
    accept: np.ndarray  # per-coordinate acceptance over post-burn-in iterations
    proposal_sd: np.ndarray


@dataclass
class Stage2Samples:
    chains: List[Stage2Chain]
    config: Stage2Config
    meta: Dict[str, object] = field(default_factory=dict)

    def stacked(self, name: str) -> np.ndarray:
        return np.concatenate([getattr(c, name) for c in self.chains])

    def interval(self, name: str, level: float = 0.95):
        x = self.stacked(name)
        q = (1 - level) / 2
        return float(np.quantile(x, q)), float(np.quantile(x, 1 - q))

    def summary(self) -> Dict[str, object]:
        from .graph import gelman_rubin

        eta, delta = self.stacked("eta"), self.stacked("delta")
        out: Dict[str, object] = {}
        for name, x in (("eta", eta), ("delta", delta)):
            lo, hi = self.interval(name)
            out[name] = {"mean": float(x.mean()), "sd": float(x.std()), "ci95": [lo, hi],
                         "rhat": gelman_rubin([getattr(c, name) for c in self.chains])}
        out["acceptance"] = np.mean([c.accept for c in self.chains], axis=0).tolist()
        out["nonstationary_mass"] = float(np.mean(eta >= delta)) if eta.size else float("nan")
        out["n_samples"] = int(eta.size)
        out.update(self.meta)
        return out

    def trace_rows(self):
        for ci, c in enumerate(self.chains):
            for d in range(c.eta.size):
                yield [ci, d, float(c.logpost[d]), float(c.eta[d]), float(c.delta[d])]


def _run_chain(data: KernelData, cfg: Stage2Config, rng, init) -> Stage2Chain:
    x = np.array(init, dtype=float)
    sd = cfg.proposal_sd.copy()
    log_sd = np.log(np.maximum(sd, 1e-300))
    lp = stage2_logpost(KernelParams(*x), data, cfg)
    if not math.isfinite(lp):
        raise ValueError(f"non-finite log posterior at initial kernel {tuple(x)}")
    n_keep = max(0, (cfg.iterations - cfg.burn_in) // cfg.thin)
    out = np.empty((n_keep, 3))
    acc = np.zeros(2)
    keep = 0
    blocks = [(0, 1)] if cfg.joint else [(0,), (1,)]
    for it in range(cfg.iterations):
        for blk in blocks:
            y = x.copy()
            corr = 0.0
            for c in blk:
                if sd[c] == 0:
                    continue
                y[c] = _truncnorm_draw(x[c], sd[c], rng)
                corr += _log_norm_mass(x[c], sd[c]) - _log_norm_mass(y[c], sd[c])
            if np.array_equal(y, x):
                ok = True
            else:
                lp_y = stage2_logpost(KernelParams(*y), data, cfg)
                log_ratio = lp_y - lp + corr
                ok = math.isfinite(lp_y) and (log_ratio >= 0 or rng.random() < math.exp(log_ratio))
                if ok:
                    x, lp = y, lp_y
            if cfg.adapt and it < cfg.burn_in:
                g = 1.0 / (it + 10) ** 0.6
                for c in blk:
                    log_sd[c] += g * (float(ok) - cfg.target_accept)
                    sd[c] = math.exp(log_sd[c])
            if it >= cfg.burn_in:
                for c in blk:
                    acc[c] += ok
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == cfg.thin - 1 and keep < n_keep:
            out[keep] = (x[0], x[1], lp)
            keep += 1
    n_post = max(cfg.iterations - cfg.burn_in, 1)
    out = out[:keep]
    return Stage2Chain(out[:, 0].copy(), out[:, 1].copy(), out[:, 2].copy(), acc / n_post, sd)


def run_stage2(data: KernelData, cfg: Stage2Config, rng=None) -> Stage2Samples:
    """Independent MH chains over (eta, delta) with truncated-normal proposals.

    Coordinates are updated alternately (eta, then delta) unless ``cfg.joint``.
    The support is eta >= 0, delta > 0; the non-stationary mass is reported.
    """
    if isinstance(rng, np.random.Generator):
        streams = rng.spawn(cfg.n_chains)
    else:
        seq = np.random.SeedSequence(cfg.seed if rng is None else rng)
        streams = [np.random.default_rng(s) for s in seq.spawn(cfg.n_chains)]
    chains = [_run_chain(data, cfg, r, cfg.init) for r in streams]
    meta = {"pair_set": cfg.pair_set, "n_events": data.n_events, "n_pairs": len(data.index),
            "n_floored": data.n_floored}
    return Stage2Samples(chains, cfg, meta)
