"""Posterior sampling of CCRM weights and hyperparameters from a binary graph.

The sampler alternates three moves: joint HMC on log sociabilities and log
scores given latent edge counts, a random-walk Metropolis-Hastings move on the
hyperparameters that refreshes the remainder masses from their prior, and an
exact draw of the latent counts from a truncated multivariate Poisson.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from .. import _kernels
from ..data import BinaryGraph
from ..random_measures import (CcrmHyper, GgpHyper, NumericalError, laplace_exponent_fast,
                              sample_levy_atoms_rejection)

log = logging.getLogger(__name__)

PRIOR_SHAPE = 0.01
PRIOR_RATE = 0.01
REMAINDER_EPS = 1e-3
# Hyperparameter proposals implying more remainder atoms than this are rejected.
MAX_REMAINDER_ATOMS = 2_000_000


@dataclass
class Stage1Config:
    p: int = 1
    iterations: int = 100_000
    burn_in: Optional[int] = None
    thin: int = 10
    n_chains: int = 2
    leapfrog: int = 10
    step_size: float = 0.01
    hyper_step: float = 0.02
    target_hmc: float = 0.65
    target_hyper: float = 0.23
    eps: float = REMAINDER_EPS
    rescale_step: float = 0.5
    init_iterations: int = 200
    init_jitter: float = 0.1
    seed: Optional[int] = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.iterations < 0 or self.thin < 1 or self.n_chains < 1 or self.leapfrog < 1:
            raise ValueError("iterations >= 0, thin >= 1, n_chains >= 1 and leapfrog >= 1 required")
        if self.burn_in is None:
            self.burn_in = self.iterations // 2
        if not 0 <= self.burn_in <= self.iterations:
            raise ValueError("burn_in must lie in [0, iterations]")


@dataclass
class Stage1State:
    """One Markov chain state over the active nodes of a graph.

    ``counts`` holds the latent counts of each edge of the graph, one row per
    edge in the order of ``BinaryGraph.edges``.
    """

    log_w0: np.ndarray
    log_beta: np.ndarray
    w_rem: np.ndarray
    ggp: GgpHyper
    ccrm: CcrmHyper
    counts: np.ndarray

    @property
    def log_w(self) -> np.ndarray:
        return self.log_w0[:, None] + self.log_beta

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.log_w)

    @property
    def p(self) -> int:
        return self.log_beta.shape[1]

    def copy(self) -> "Stage1State":
        return replace(self, log_w0=self.log_w0.copy(), log_beta=self.log_beta.copy(),
                       w_rem=self.w_rem.copy(), counts=self.counts.copy())

    def to_dict(self) -> dict:
        return dict(log_w0=self.log_w0.tolist(), log_beta=self.log_beta.tolist(), w_rem=self.w_rem.tolist(),
                    alpha=self.ggp.alpha, sigma=self.ggp.sigma, tau=self.ggp.tau,
                    a=list(self.ccrm.a), b=list(self.ccrm.b), counts=self.counts.tolist())

    @classmethod
    def from_dict(cls, d: dict) -> "Stage1State":
        p = len(d["a"])
        return cls(np.asarray(d["log_w0"], float), np.asarray(d["log_beta"], float).reshape(-1, p),
                   np.asarray(d["w_rem"], float), GgpHyper(d["alpha"], d["sigma"], d["tau"]),
                   CcrmHyper(d["a"], d["b"]), np.asarray(d["counts"], np.int64).reshape(-1, p))


@dataclass
class GraphData:
    """A graph restricted to its active nodes, with dense relabelling."""

    nodes: np.ndarray      # original ids of the active nodes
    edges: np.ndarray      # (E, 2) in dense ids
    T: float

    @classmethod
    def from_graph(cls, Z: BinaryGraph, T: float) -> "GraphData":
        nodes = Z.active_nodes()
        remap = np.full(Z.n_nodes, -1, dtype=np.int64)
        remap[nodes] = np.arange(nodes.size)
        return cls(nodes, remap[Z.edges], float(T))

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)


# ---------------------------------------------------------------------------
# Likelihood


def graph_loglik(state: Stage1State, Z: GraphData, include_remainder: bool = True) -> float:
    """log P(Z | w) with edge probability 1 - exp(-2T sum_k w_ik w_jk).

    The non-edge sum over all i < j uses (sum_i w_ik)^2 - sum_i w_ik^2 so the
    cost is O(Vp + Ep). With ``include_remainder`` the unobserved mass adds
    -2T sum_ik w_ik w_*k - T sum_k w_*k^2.
    """
    w = state.w
    T = Z.T
    i, j = Z.edges[:, 0], Z.edges[:, 1]
    mu_e = np.einsum("ek,ek->e", w[i], w[j])
    S = w.sum(axis=0)
    all_pairs = 0.5 * float(np.sum(S * S - np.einsum("ik,ik->k", w, w)))
    out = float(np.sum(np.log(-np.expm1(-2.0 * T * mu_e)))) - 2.0 * T * (all_pairs - float(mu_e.sum()))
    if include_remainder:
        out -= 2.0 * T * float(S @ state.w_rem) + T * float(state.w_rem @ state.w_rem)
    return out


def _log_prior_weights(log_w0, log_beta, ggp: GgpHyper, ccrm: CcrmHyper) -> float:
    """Density of the observed atoms given hyperparameters, on (log w0, log beta)."""
    V = log_w0.size
    a, b = ccrm.a_arr, ccrm.b_arr
    w0 = np.exp(log_w0)
    beta = np.exp(log_beta)
    out = V * math.log(ggp.alpha) - ggp.sigma * log_w0.sum() - ggp.tau * w0.sum() - V * special.gammaln(1 - ggp.sigma)
    out += float(np.sum(V * (a * np.log(b) - special.gammaln(a)) + a * log_beta.sum(axis=0) - b * beta.sum(axis=0)))
    return float(out)


def _hyper_vector(ggp: GgpHyper, ccrm: CcrmHyper) -> np.ndarray:
    return np.concatenate([[math.log(ggp.alpha), math.log(1 - ggp.sigma), math.log(ggp.tau)],
                           np.log(ccrm.a_arr), np.log(ccrm.b_arr)])


def _hyper_from_vector(x: np.ndarray, p: int) -> Tuple[GgpHyper, CcrmHyper]:
    e = np.exp(x)
    return GgpHyper(e[0], 1.0 - e[1], e[2]), CcrmHyper(tuple(e[3:3 + p]), tuple(e[3 + p:3 + 2 * p]))


def _log_prior_hyper(x: np.ndarray) -> float:
    """Gamma(0.01, 0.01) priors on alpha, 1 - sigma, tau, a_k, b_k, in log coordinates."""
    return float(np.sum(PRIOR_SHAPE * x - PRIOR_RATE * np.exp(x)))


def log_posterior(state: Stage1State, Z: GraphData) -> float:
    """Unnormalised log posterior on transformed coordinates (remainder density omitted)."""
    x = _hyper_vector(state.ggp, state.ccrm)
    return (graph_loglik(state, Z) + _log_prior_weights(state.log_w0, state.log_beta, state.ggp, state.ccrm)
            + _log_prior_hyper(x))


# ---------------------------------------------------------------------------
# Latent counts


def _edge_rates(w: np.ndarray, Z: GraphData) -> np.ndarray:
    return 2.0 * Z.T * w[Z.edges[:, 0]] * w[Z.edges[:, 1]]


def sample_zero_truncated_poisson(lam: np.ndarray, rng) -> np.ndarray:
    """Poisson(lam) conditioned on >= 1."""
    lam = np.ascontiguousarray(lam, dtype=float)
    if np.any(~(lam > 0)):
        raise ValueError("zero-truncated Poisson needs positive rates")
    return _kernels.zero_truncated_poisson(lam.ravel(), int(rng.integers(0, 2 ** 32))).reshape(lam.shape)


def sample_latent_counts(state: Stage1State, Z: GraphData, rng) -> np.ndarray:
    """Per-edge community counts: total from a zero-truncated Poisson, multinomial split."""
    rates = _edge_rates(state.w, Z)
    tot = rates.sum(axis=1)
    if np.any(~(tot > 0)):
        raise ValueError("a connected pair has zero total rate")
    n = sample_zero_truncated_poisson(tot, rng)
    probs = rates / tot[:, None]
    if state.p == 1:
        counts = n[:, None]
    else:
        counts = rng.multinomial(n, probs)
    state.counts = counts.astype(np.int64)
    return state.counts


def node_counts(counts: np.ndarray, Z: GraphData) -> np.ndarray:
    """m_ik = sum over edges at i of the community-k latent count."""
    V = Z.n_nodes
    m = np.empty((V, counts.shape[1]))
    for k in range(counts.shape[1]):
        m[:, k] = (np.bincount(Z.edges[:, 0], counts[:, k], minlength=V)
                   + np.bincount(Z.edges[:, 1], counts[:, k], minlength=V))
    return m


# ---------------------------------------------------------------------------
# HMC on (log w0, log beta)


@dataclass
class WeightTarget:
    """Conditional log-density of (log w0, log beta) given counts and hyperparameters."""

    m: np.ndarray
    w_rem: np.ndarray
    sigma: float
    tau: float
    a: np.ndarray
    b: np.ndarray
    T: float

    @classmethod
    def from_state(cls, state: Stage1State, Z: GraphData) -> "WeightTarget":
        return cls(node_counts(state.counts, Z), state.w_rem.astype(float), state.ggp.sigma, state.ggp.tau,
                   state.ccrm.a_arr, state.ccrm.b_arr, Z.T)

    def logp_grad(self, u: np.ndarray, v: np.ndarray):
        w0 = np.exp(u)
        beta = np.exp(v)
        w = w0[:, None] * beta
        S = w.sum(axis=0)
        R = S - w + self.w_rem
        T2 = 2.0 * self.T
        exposure = T2 * (0.5 * float(np.sum(S * S - np.einsum("ik,ik->k", w, w))) + float(S @ self.w_rem))
        logp = (float(np.sum(self.m * (u[:, None] + v))) - exposure - self.sigma * float(u.sum())
                - self.tau * float(w0.sum()) + float(np.sum(self.a * v - self.b * beta)))
        wR = w * R
        gv = self.m - T2 * wR + self.a - self.b * beta
        gu = self.m.sum(axis=1) - T2 * wR.sum(axis=1) - self.sigma - self.tau * w0
        return logp, gu, gv


def hmc_update_weights(state: Stage1State, Z: GraphData, L: int, step: float, rng,
                       target: Optional[WeightTarget] = None) -> Tuple[bool, float]:
    """One HMC transition with identity mass; returns (accepted, acceptance probability)."""
    t = target or WeightTarget.from_state(state, Z)
    u = state.log_w0.copy()
    v = state.log_beta.copy()
    pu = rng.standard_normal(u.shape)
    pv = rng.standard_normal(v.shape)
    k0 = 0.5 * (float(pu @ pu) + float(np.sum(pv * pv)))
    with np.errstate(over="ignore", invalid="ignore"):
        logp0, logp1, ok = _kernels.leapfrog(u, v, pu, pv, t.m, t.w_rem, float(t.sigma), float(t.tau),
                                             t.a, t.b, float(t.T), float(step), int(L))
    if not ok:
        log.debug("non-finite HMC trajectory, rejecting")
        return False, 0.0
    log_ratio = logp1 - 0.5 * (float(pu @ pu) + float(np.sum(pv * pv))) - logp0 + k0
    if not math.isfinite(log_ratio):
        return False, 0.0
    prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
    if log_ratio >= 0 or rng.random() < prob:
        state.log_w0, state.log_beta = u, v
        return True, prob
    return False, prob


# ---------------------------------------------------------------------------
# Hyperparameters and remainder masses


def sample_remainder(ggp: GgpHyper, ccrm: CcrmHyper, eps: float, rng,
                     tilt: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
    """Total CCRM mass on [0, alpha] from a truncated GGP draw, tilted by exp(-tilt . w).

    Tilting keeps an atom with probability prod_k (1 + t_k w0 / b_k)^(-a_k)
    and then draws its scores from Gamma(a_k, b_k + t_k w0). Returns None when
    the proposal would need an unreasonable number of atoms.
    """
    if ggp.sigma < 0:
        mean_atoms = ggp.alpha * ggp.tau ** ggp.sigma / -ggp.sigma
    else:
        mean_atoms = ggp.alpha * (math.log(1 / eps) if ggp.sigma == 0 else eps ** -ggp.sigma / ggp.sigma)
    if not mean_atoms < MAX_REMAINDER_ATOMS:
        return None
    a, b = ccrm.a_arr, ccrm.b_arr
    t = np.zeros(ccrm.p) if tilt is None else np.asarray(tilt, float)

    def keep(w0):
        return np.exp(-np.log1p(np.outer(w0, t / b)) @ a)

    w0 = sample_levy_atoms_rejection(ggp, eps, rng, keep if np.any(t > 0) else None)
    small = _small_atom_mass(ggp, ccrm, t, eps)
    if w0.size == 0:
        return small
    beta = rng.gamma(a, 1.0 / (b + np.outer(w0, t)))
    return (w0[:, None] * beta).sum(axis=0) + small


def _small_atom_mass(ggp: GgpHyper, ccrm: CcrmHyper, t: np.ndarray, eps: float) -> np.ndarray:
    """Expected tilted mass of atoms with w0 <= eps, added deterministically (sigma >= 0)."""
    if ggp.sigma < 0:
        return np.zeros(ccrm.p)
    # for w0 <= eps the tilt is close to 1: first-order moment of the restricted measure
    m1 = ggp.tau ** (ggp.sigma - 1) * special.gammainc(1 - ggp.sigma, ggp.tau * eps)
    return ggp.alpha * m1 * ccrm.a_arr / (ccrm.b_arr + t * eps)


def _remainder_log_laplace(ggp: GgpHyper, ccrm: CcrmHyper, t: np.ndarray) -> float:
    """log E[exp(-t . w_*)] under the untruncated remainder law.

    Using the full exponent keeps the penalty from the many small atoms even
    though the draw itself truncates them; otherwise sigma drifts towards 1.
    """
    return -ggp.alpha * laplace_exponent_fast(t, ggp.sigma, ggp.tau, ccrm.a_arr, ccrm.b_arr)


def mh_update_hyper(state: Stage1State, Z: GraphData, scale: float, rng,
                    eps: float = REMAINDER_EPS) -> Tuple[bool, float]:
    """Random walk on (log alpha, log(1-sigma), log tau, log a, log b) with a fresh w_*.

    w_* is drawn from its prior tilted by the exposure exp(-2T S . w_*), with
    S_k = sum_i w_ik. The tilted density cancels against the target except for
    its normalising Laplace transform and the quadratic -T |w_*|^2 term.
    """
    p = state.p
    x0 = _hyper_vector(state.ggp, state.ccrm)
    x1 = x0 + scale * rng.standard_normal(x0.size)
    try:
        ggp1, ccrm1 = _hyper_from_vector(x1, p)
    except ValueError:
        return False, 0.0
    S = state.w.sum(axis=0)
    T = Z.T
    t = 2.0 * T * S
    w_rem1 = sample_remainder(ggp1, ccrm1, eps, rng, tilt=t)
    if w_rem1 is None:
        return False, 0.0
    try:
        lap1 = _remainder_log_laplace(ggp1, ccrm1, t)
        lap0 = _remainder_log_laplace(state.ggp, state.ccrm, t)
    except NumericalError:
        return False, 0.0
    log_ratio = (-T * float(w_rem1 @ w_rem1 - state.w_rem @ state.w_rem) + lap1 - lap0
                 + _log_prior_weights(state.log_w0, state.log_beta, ggp1, ccrm1)
                 - _log_prior_weights(state.log_w0, state.log_beta, state.ggp, state.ccrm)
                 + _log_prior_hyper(x1) - _log_prior_hyper(x0))
    if not math.isfinite(log_ratio):
        return False, 0.0
    prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
    if log_ratio >= 0 or rng.random() < prob:
        state.ggp, state.ccrm, state.w_rem = ggp1, ccrm1, w_rem1
        return True, prob
    return False, prob


def mh_rescale(state: Stage1State, Z: GraphData, scale: float, rng) -> bool:
    """Move along the scale ridge (w0/c, beta c, b/c, tau c, alpha c^-sigma).

    Weights w, the graph likelihood and the atom density are invariant along
    it; only the vague hyperpriors change, so the ratio is the hyperprior ratio.
    The move is a translation in log coordinates and needs no Jacobian.
    """
    ell = scale * float(rng.standard_normal())
    sigma = state.ggp.sigma
    x0 = _hyper_vector(state.ggp, state.ccrm)
    x1 = x0.copy()
    p = state.p
    x1[0] -= sigma * ell
    x1[2] += ell
    x1[3 + p:] -= ell
    log_ratio = _log_prior_hyper(x1) - _log_prior_hyper(x0)
    if not (log_ratio >= 0 or rng.random() < math.exp(log_ratio)):
        return False
    ggp1, ccrm1 = _hyper_from_vector(x1, p)
    state.ggp, state.ccrm = replace(ggp1, sigma=sigma), ccrm1
    state.log_w0 = state.log_w0 - ell
    state.log_beta = state.log_beta + ell
    return True


def refresh_remainder(state: Stage1State, Z: GraphData, rng, eps: float = REMAINDER_EPS) -> None:
    """Gibbs-like refresh of w_* from the tilted prior, corrected by MH for the quadratic term."""
    t = 2.0 * Z.T * state.w.sum(axis=0)
    w1 = sample_remainder(state.ggp, state.ccrm, eps, rng, tilt=t)
    if w1 is None:
        return
    log_ratio = -Z.T * float(w1 @ w1 - state.w_rem @ state.w_rem)
    if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
        state.w_rem = w1


# ---------------------------------------------------------------------------
# Chains


@dataclass
class ChainTrace:
    w: np.ndarray           # (n_keep, V, p)
    w0: np.ndarray          # (n_keep, V)
    w_rem: np.ndarray       # (n_keep, p)
    hyper: np.ndarray       # (n_keep, 3 + 2p) columns alpha, sigma, tau, a_1.., b_1..
    logpost: np.ndarray     # (n_keep,)
    accept_hmc: float
    accept_hyper: float
    step_size: float
    hyper_step: float
    adaptation: List[Tuple[int, float, float]] = field(default_factory=list)
    final_state: Optional[Stage1State] = None


@dataclass
class Stage1Samples:
    chains: List[ChainTrace]
    graph: GraphData
    config: Stage1Config

    @property
    def n_samples(self) -> int:
        return sum(c.logpost.size for c in self.chains)

    def stacked(self, name: str) -> np.ndarray:
        return np.concatenate([getattr(c, name) for c in self.chains], axis=0)

    def hyper_names(self) -> List[str]:
        p = self.config.p
        return ["alpha", "sigma", "tau"] + [f"a_{k}" for k in range(p)] + [f"b_{k}" for k in range(p)]

    def gelman_rubin(self) -> float:
        return gelman_rubin([c.logpost for c in self.chains])

    def hyper_draws(self) -> List[Tuple[GgpHyper, CcrmHyper]]:
        """Retained hyperparameter samples as typed pairs."""
        p = self.config.p
        return [(GgpHyper(*row[:3]), CcrmHyper(tuple(row[3:3 + p]), tuple(row[3 + p:])))
                for row in self.stacked("hyper")]

    def trace_rows(self):
        """(chain, draw, logpost, hyper...) rows for CSV traces."""
        for ci, c in enumerate(self.chains):
            for d in range(c.logpost.size):
                yield [ci, d, float(c.logpost[d])] + [float(x) for x in c.hyper[d]]


def gelman_rubin(traces: Sequence[np.ndarray]) -> float:
    """Potential scale reduction factor over equal-length chains."""
    n = min(len(t) for t in traces)
    if len(traces) < 2 or n < 2:
        return float("nan")
    x = np.stack([np.asarray(t[:n], float) for t in traces])
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    var_hat = (n - 1) / n * W + B / n
    return float(math.sqrt(var_hat / W)) if W > 0 else float("nan")


def _rm_gain(t: int) -> float:
    return 1.0 / (t + 10) ** 0.6


def _hyper_row(state: Stage1State) -> np.ndarray:
    return np.concatenate([[state.ggp.alpha, state.ggp.sigma, state.ggp.tau], state.ccrm.a_arr, state.ccrm.b_arr])


def run_chain(state: Stage1State, Z: GraphData, cfg: Stage1Config, rng, iterations: Optional[int] = None,
              burn_in: Optional[int] = None) -> ChainTrace:
    """Gibbs sweeps of HMC weights, MH hyperparameters and latent counts."""
    iterations = cfg.iterations if iterations is None else iterations
    burn_in = cfg.burn_in if burn_in is None else burn_in
    adapt_until = burn_in // 2
    log_step = math.log(cfg.step_size)
    log_hstep = math.log(cfg.hyper_step)
    n_keep = max(0, (iterations - burn_in) // cfg.thin)
    V, p = state.log_beta.shape
    ws = np.empty((n_keep, V, p))
    w0s = np.empty((n_keep, V))
    rems = np.empty((n_keep, p))
    hyps = np.empty((n_keep, 3 + 2 * p))
    lps = np.empty(n_keep)
    acc_h = acc_m = 0
    n_post = 0
    adapt_log = []
    keep = 0
    for it in range(iterations):
        ok_h, prob_h = hmc_update_weights(state, Z, cfg.leapfrog, math.exp(log_step), rng)
        ok_m, prob_m = mh_update_hyper(state, Z, math.exp(log_hstep), rng, cfg.eps)
        if not ok_m:
            refresh_remainder(state, Z, rng, cfg.eps)
        mh_rescale(state, Z, cfg.rescale_step, rng)
        sample_latent_counts(state, Z, rng)
        if it < adapt_until:
            g = _rm_gain(it)
            log_step += g * (prob_h - cfg.target_hmc)
            log_hstep += g * (prob_m - cfg.target_hyper)
            if (it + 1) % 100 == 0:
                adapt_log.append((it + 1, math.exp(log_step), math.exp(log_hstep)))
        if it >= burn_in:
            acc_h += ok_h
            acc_m += ok_m
            n_post += 1
            if (it - burn_in) % cfg.thin == cfg.thin - 1 and keep < n_keep:
                ws[keep] = state.w
                w0s[keep] = np.exp(state.log_w0)
                rems[keep] = state.w_rem
                hyps[keep] = _hyper_row(state)
                lps[keep] = log_posterior(state, Z)
                keep += 1
    return ChainTrace(ws[:keep], w0s[:keep], rems[:keep], hyps[:keep], lps[:keep],
                      acc_h / max(n_post, 1), acc_m / max(n_post, 1), math.exp(log_step),
                      math.exp(log_hstep), adapt_log, state)


def _degree_init(Z: GraphData, p: int, rng, jitter: float) -> Stage1State:
    deg = Z.degrees().astype(float)
    E = max(len(Z.edges), 1)
    w = deg / (2.0 * Z.T * math.sqrt(E / Z.T)) + 1e-3
    ggp = GgpHyper(max(math.sqrt(E), 1.0), 0.0, 1.0)
    ccrm = CcrmHyper.uniform(p, 1.0, 1.0)
    log_beta = np.log(np.full((Z.n_nodes, p), 1.0 / math.sqrt(p)))
    log_beta += jitter * rng.standard_normal(log_beta.shape)
    state = Stage1State(np.log(w), log_beta, np.zeros(p), ggp, ccrm, np.zeros((len(Z.edges), p), np.int64))
    sample_latent_counts(state, Z, rng)
    return state


def initial_state(Z: GraphData, cfg: Stage1Config, rng) -> Stage1State:
    """Run a short one-community chain, then spread its weights over p communities."""
    base = _degree_init(Z, 1, rng, 0.0)
    if cfg.init_iterations > 0:
        short = replace(cfg, p=1, iterations=cfg.init_iterations, burn_in=cfg.init_iterations, thin=1)
        run_chain(base, Z, short, rng)
    p = cfg.p
    if p == 1:
        return base
    log_beta = np.repeat(base.log_beta, p, axis=1) - 0.5 * math.log(p)
    log_beta += cfg.init_jitter * rng.standard_normal(log_beta.shape)
    a, b = base.ccrm.a[0], base.ccrm.b[0]
    ccrm = CcrmHyper.uniform(p, a, b)
    state = Stage1State(base.log_w0.copy(), log_beta, np.repeat(base.w_rem, p) / math.sqrt(p), base.ggp, ccrm,
                        np.zeros((len(Z.edges), p), np.int64))
    sample_latent_counts(state, Z, rng)
    return state


def run_stage1(Z: BinaryGraph, T: float, cfg: Stage1Config, rng=None,
               initial: Optional[Sequence[Stage1State]] = None) -> Stage1Samples:
    """Independent chains from a shared seed; each chain owns a spawned RNG stream.

    ``initial`` resumes from saved chain states instead of the default
    initialisation.
    """
    data = Z if isinstance(Z, GraphData) else GraphData.from_graph(Z, T)
    if len(data.edges) == 0:
        raise ValueError("stage 1 needs a graph with at least one edge")
    if cfg.iterations == 0:
        raise ValueError("stage 1 configured with zero iterations; no samples would be produced")
    if isinstance(rng, np.random.Generator):
        streams = rng.spawn(cfg.n_chains)
    else:
        seq = np.random.SeedSequence(cfg.seed if rng is None else rng)
        streams = [np.random.default_rng(s) for s in seq.spawn(cfg.n_chains)]
    chains = []
    for c, r in enumerate(streams):
        if initial is not None:
            state = initial[c].copy()
        else:
            state = initial_state(data, cfg, r)
        if not math.isfinite(log_posterior(state, data)):
            raise ValueError("non-finite log posterior at initialisation")
        chains.append(run_chain(state, data, cfg, r))
    return Stage1Samples(chains, data, cfg)


def save_checkpoint(samples: Stage1Samples, path) -> None:
    """JSON record of each chain's final state, enough to resume sampling."""
    rec = {"format": "hawkes-ccrm-stage1", "version": 1,
           "chains": [c.final_state.to_dict() for c in samples.chains if c.final_state is not None],
           "step_size": [c.step_size for c in samples.chains],
           "hyper_step": [c.hyper_step for c in samples.chains]}
    with open(path, "w") as fh:
        json.dump(rec, fh)


def load_checkpoint(path) -> List[Stage1State]:
    with open(path) as fh:
        rec = json.load(fh)
    if rec.get("format") != "hawkes-ccrm-stage1":
        raise ValueError(f"{path} is not a stage-1 checkpoint")
    return [Stage1State.from_dict(d) for d in rec["chains"]]


# ---------------------------------------------------------------------------
# Point estimate


@dataclass
class PointEstimate:
    """Weights aligned across samples and averaged, for the active nodes of the graph."""

    nodes: np.ndarray
    w_hat: np.ndarray
    w0_hat: np.ndarray
    hyper_hat: Dict[str, float]
    n_nodes: int

    def full_weights(self) -> np.ndarray:
        """Weights indexed by original node id; inactive nodes get zero."""
        out = np.zeros((self.n_nodes, self.w_hat.shape[1]))
        out[self.nodes] = self.w_hat
        return out

    def mu(self, i, j) -> np.ndarray:
        """Base rates sum_k w_ik w_jk, summed in sorted order so column order is irrelevant."""
        W = self.full_weights()
        prod = np.sort(W[np.atleast_1d(i)] * W[np.atleast_1d(j)], axis=1)
        return prod.sum(axis=1)

    @property
    def mu_hat(self) -> Dict[Tuple[int, int], float]:
        """Base rates over all pairs of active nodes."""
        iu, ju = np.triu_indices(self.nodes.size, k=1)
        vals = self.mu(self.nodes[iu], self.nodes[ju])
        return {(int(a), int(b)): float(v) for a, b, v in zip(self.nodes[iu], self.nodes[ju], vals)}


def _column_cost(Wa: np.ndarray, Wb: np.ndarray) -> np.ndarray:
    """cost[k, l] = ||Wa[:, k] - Wb[:, l]||^2."""
    return ((Wa[:, :, None] - Wb[:, None, :]) ** 2).sum(axis=0)


def align_columns(W: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Permutation perm minimising ||W[:, perm] - ref||^2."""
    p = W.shape[1]
    cost = _column_cost(ref, W)  # cost[k, l]: ref column k against W column l
    if p <= 6:
        best, best_cost = None, math.inf
        for perm in itertools.permutations(range(p)):
            c = math.fsum(cost[k, perm[k]] for k in range(p))
            if c < best_cost:
                best, best_cost = perm, c
        return np.asarray(best)
    rows, cols = optimize.linear_sum_assignment(cost)
    return cols[np.argsort(rows)]


def mbr_point_estimate(samples: Stage1Samples, n_nodes: Optional[int] = None) -> PointEstimate:
    """Align each retained sample to the highest-posterior one, then average."""
    W = samples.stacked("w")
    if W.shape[0] == 0:
        raise ValueError("no retained samples")
    lp = samples.stacked("logpost")
    ref = W[int(np.argmax(lp))]
    aligned = np.stack([Wi[:, align_columns(Wi, ref)] for Wi in W])
    w_hat = aligned.mean(axis=0)
    w0_hat = samples.stacked("w0").mean(axis=0)
    H = samples.stacked("hyper")
    hyper_hat = {name: float(H[:, c].mean()) for c, name in enumerate(samples.hyper_names())}
    g = samples.graph
    n = int(g.nodes.max()) + 1 if n_nodes is None else n_nodes
    return PointEstimate(g.nodes, w_hat, w0_hat, hyper_hat, n)
