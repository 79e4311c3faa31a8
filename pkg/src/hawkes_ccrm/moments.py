"""Expected numbers of interactions, edges and nodes, and sparsity diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import interpolate, special, stats

from .data import count_summary
from .hawkes_pair import KernelParams
from .random_measures import (CcrmHyper, GgpHyper, _quad, laplace_exponent,
                              levy_integral, mean_measure, sample_truncated_levy,
                              truncated_first_moment, truncated_mass)

MC_EPS = 1e-6


@dataclass
class MomentEstimate:
    value: float
    stderr: float = 0.0
    method: str = "closed-form"
    bias_bound: float = 0.0


@dataclass
class MomentsReport:
    e_interactions: MomentEstimate
    e_edges: MomentEstimate
    e_nodes: MomentEstimate
    params: Dict[str, object] = field(default_factory=dict)

    def to_record(self) -> Dict[str, object]:
        rec: Dict[str, object] = dict(self.params)
        for name in ("e_interactions", "e_edges", "e_nodes"):
            for key, val in asdict(getattr(self, name)).items():
                rec[f"{name}_{key}"] = val
        return rec


def expected_interactions(h: GgpHyper, c: CcrmHyper, k: KernelParams, T: float) -> float:
    k.require_stationary()
    if T < 0:
        raise ValueError("T must be nonnegative")
    mw = mean_measure(h, c).mean_w
    gap = k.delta - k.eta
    per_rate = k.delta / gap * T + k.eta / gap ** 2 * math.expm1(-T * gap)
    return h.alpha ** 2 * float(mw @ mw) * per_rate


# ---------------------------------------------------------------------------
# Quadrature helpers


def gamma_expectation(f, a: float, b: float, knot: Optional[float] = None, epsrel: float = 1e-9) -> float:
    """E[f(beta)] for beta ~ Gamma(a, rate b).

    ``knot`` marks where f changes fastest (in beta units). Near zero the
    substitution s = g**a absorbs the g**(a-1) singularity of the standard
    gamma variable g = b * beta; elsewhere the integral runs over log g.
    """
    g_hi = a + 45.0 + 12.0 * math.sqrt(a)
    cuts = sorted({1.0, min(max(knot * b, 1e-300), g_hi)} if knot else {1.0})
    g0 = min(cuts[0], g_hi)
    inv = 1.0 / a

    def head(s):
        g = s ** inv
        return f(g / b) * math.exp(-g)

    total = _quad(head, 0.0, g0 ** a, epsrel) / special.gamma(a + 1)
    lg = special.gammaln(a)

    def body(y):
        g = math.exp(y)
        return f(g / b) * math.exp(a * y - g - lg)

    edges = [math.log(g) for g in cuts + [g_hi] if g >= g0]
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            total += _quad(body, lo, hi, epsrel)
    return total


_LOGX = np.linspace(math.log(1e-10), math.log(1e13), 700)


@lru_cache(maxsize=64)
def _pair_connection_curve(a: tuple, b: tuple):
    """Spline of log G(x), G(x) = E[1 - exp(-x sum_k beta_k beta'_k)] over two nodes' scores.

    The inner score integrates analytically to (1 + x beta_k / b_k)^(-a_k); the
    product over k then factorises because scores are independent.
    """
    xs = np.exp(_LOGX)
    log_h = np.zeros_like(xs)
    for ak, bk in zip(a, b):
        for n, x in enumerate(xs):
            one_minus = gamma_expectation(lambda beta: -math.expm1(-ak * math.log1p(x * beta / bk)), ak, bk,
                                          knot=bk / x)
            log_h[n] += math.log1p(-min(one_minus, 1.0 - 1e-300))
    G = -np.expm1(log_h)
    return interpolate.CubicSpline(_LOGX, np.log(G)), float(sum((ak / bk) ** 2 for ak, bk in zip(a, b)))


def _connection_prob(c: CcrmHyper):
    spline, slope = _pair_connection_curve(c.a, c.b)
    lo, hi = _LOGX[0], _LOGX[-1]

    def G(x):
        if x <= 0:
            return 0.0
        lx = math.log(x)
        if lx < lo:
            return x * slope
        return math.exp(float(spline(min(lx, hi))))

    return G


def _edges_quadrature(h: GgpHyper, c: CcrmHyper, T: float) -> float:
    G = _connection_prob(c)

    def inner(u):
        return levy_integral(lambda v: G(2.0 * T * u * v), h.sigma, h.tau, epsrel=1e-9)

    return h.alpha ** 2 / 2.0 * levy_integral(inner, h.sigma, h.tau, epsrel=1e-7)


_LOGY = np.linspace(math.log(1e-12), math.log(1e9), 500)


@lru_cache(maxsize=64)
def _psi_curve(T: float, sigma: float, tau: float, a: tuple, b: tuple):
    c = CcrmHyper(a, b)
    h = GgpHyper(1.0, sigma, tau)
    vals = np.array([laplace_exponent([2.0 * T * math.exp(ly)], h, c) for ly in _LOGY])
    return interpolate.CubicSpline(_LOGY, np.log(vals)), float(2.0 * T * mean_measure(h, c).mean_w[0])


def _nodes_quadrature(h: GgpHyper, c: CcrmHyper, T: float) -> float:
    if c.p != 1:
        raise ValueError("nodes quadrature is implemented for p = 1 only")
    spline, slope = _psi_curve(float(T), float(h.sigma), float(h.tau), c.a, c.b)
    lo, hi = _LOGY[0], _LOGY[-1]
    a, b = c.a[0], c.b[0]

    def psi2T(y):
        if y <= 0:
            return 0.0
        ly = math.log(y)
        if ly < lo:
            return y * slope
        return math.exp(float(spline(min(ly, hi))))

    def inner(w0):
        return gamma_expectation(lambda beta: -math.expm1(-h.alpha * psi2T(w0 * beta)), a, b, epsrel=1e-8)

    return h.alpha * levy_integral(inner, h.sigma, h.tau, epsrel=1e-7)


# ---------------------------------------------------------------------------
# Monte Carlo over the Lévy measure


def _levy_mc_draws(h: GgpHyper, c: CcrmHyper, n: int, eps: float, rng):
    """Weights w (n, p) drawn from the Lévy measure normalised on (eps, inf), and its mass."""
    if h.sigma < 0:
        mass = h.tau ** h.sigma / (-h.sigma)
        w0 = rng.gamma(-h.sigma, 1.0 / h.tau, size=n)
        tail = 0.0
    else:
        mass = truncated_mass(h.sigma, h.tau, eps)
        w0 = sample_truncated_levy(h.sigma, h.tau, eps, n, rng)
        tail = truncated_first_moment(h.sigma, h.tau, eps)
    beta = rng.gamma(c.a_arr, 1.0 / c.b_arr, size=(n, c.p))
    return w0[:, None] * beta, mass, tail


def _mc_moments(h, c, T, n, eps, rng):
    w, mass, tail = _levy_mc_draws(h, c, n, eps, rng)
    unit = GgpHyper(1.0, h.sigma, h.tau)
    psi = np.array([laplace_exponent(2.0 * T * wi, unit, c) for wi in w])
    # psi(t) <= t . mu_w bounds the contribution of the omitted w0 <= eps atoms.
    mw = mean_measure(h, c).mean_w
    tail_psi = 2.0 * T * float((c.a_arr / c.b_arr) @ mw) * tail
    return psi, mass, tail_psi


def expected_edges(h: GgpHyper, c: CcrmHyper, T: float, method: str = "quadrature",
                   n_samples: int = 2000, eps: float = MC_EPS, rng=None) -> MomentEstimate:
    if T < 0:
        raise ValueError("T must be nonnegative")
    if T == 0:
        return MomentEstimate(0.0, 0.0, method)
    if method == "quadrature":
        return MomentEstimate(_edges_quadrature(h, c, T), 0.0, "quadrature")
    if method != "monte-carlo":
        raise ValueError(f"unknown method {method!r}")
    psi, mass, tail_psi = _mc_moments(h, c, T, n_samples, eps, np.random.default_rng(rng))
    scale = h.alpha ** 2 / 2.0 * mass
    return MomentEstimate(scale * psi.mean(), scale * psi.std(ddof=1) / math.sqrt(psi.size),
                          "monte-carlo", h.alpha ** 2 / 2.0 * tail_psi)


def expected_nodes(h: GgpHyper, c: CcrmHyper, T: float, method: str = "quadrature",
                   n_samples: int = 2000, eps: float = MC_EPS, rng=None) -> MomentEstimate:
    if T < 0:
        raise ValueError("T must be nonnegative")
    if T == 0:
        return MomentEstimate(0.0, 0.0, method)
    if method == "quadrature" and c.p == 1:
        return MomentEstimate(_nodes_quadrature(h, c, T), 0.0, "quadrature")
    if method not in ("quadrature", "monte-carlo"):
        raise ValueError(f"unknown method {method!r}")
    psi, mass, tail_psi = _mc_moments(h, c, T, n_samples, eps, np.random.default_rng(rng))
    vals = -np.expm1(-h.alpha * psi)
    scale = h.alpha * mass
    return MomentEstimate(scale * vals.mean(), scale * vals.std(ddof=1) / math.sqrt(vals.size),
                          "monte-carlo", h.alpha ** 2 * tail_psi)


def moments_report(h: GgpHyper, c: CcrmHyper, k: KernelParams, T: float, method: str = "quadrature",
                   n_samples: int = 2000, eps: float = MC_EPS, rng=None) -> MomentsReport:
    rng = np.random.default_rng(rng)
    return MomentsReport(
        MomentEstimate(expected_interactions(h, c, k, T)),
        expected_edges(h, c, T, method, n_samples, eps, rng),
        expected_nodes(h, c, T, method, n_samples, eps, rng),
        params=dict(alpha=h.alpha, sigma=h.sigma, tau=h.tau, a=list(c.a), b=list(c.b),
                    eta=k.eta, delta=k.delta, T=T),
    )


# ---------------------------------------------------------------------------
# Empirical growth rates


@dataclass
class SlopeFit:
    slope: float
    stderr: float
    ci_low: float
    ci_high: float


@dataclass
class SparsityReport:
    vary: str
    grid: List[float]
    mean_interactions: List[float]
    mean_edges: List[float]
    mean_nodes: List[float]
    slopes: Dict[str, SlopeFit]
    regime: str


def _loglog_fit(x, y, level=0.95) -> SlopeFit:
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    fit = stats.linregress(x, y)
    dof = max(x.size - 2, 1)
    q = stats.t.ppf(0.5 + level / 2, dof)
    return SlopeFit(float(fit.slope), float(fit.stderr), float(fit.slope - q * fit.stderr),
                    float(fit.slope + q * fit.stderr))


def sparsity_diagnostic(h: GgpHyper, c: CcrmHyper, k: KernelParams, grid: Sequence[float],
                        replicates: int, T: Optional[float] = None, vary: str = "alpha",
                        eps: float = 1e-3, rng=None) -> SparsityReport:
    """Log-log growth slopes of I, E, V over a grid of alpha (or T) values.

    The edges-vs-nodes slope classifies the regime: dense when it exceeds 1.8.
    """
    from .generator import generate

    grid = [float(g) for g in grid]
    if len(grid) < 2 or any(g <= 0 for g in grid) or grid != sorted(grid) or len(set(grid)) != len(grid):
        raise ValueError("grid must hold at least two distinct positive values in increasing order")
    if vary not in ("alpha", "T"):
        raise ValueError("vary must be 'alpha' or 'T'")
    if vary == "alpha" and T is None:
        raise ValueError("T is required when varying alpha")
    rng = np.random.default_rng(rng)
    means = []
    for g in grid:
        hh = h.replace(alpha=g) if vary == "alpha" else h
        TT = T if vary == "alpha" else g
        rows = [count_summary(generate(hh, c, k, TT, rng, eps=eps)) for _ in range(replicates)]
        means.append([np.mean([r[q] for r in rows]) for q in ("interactions", "edges", "nodes")])
    I, E, V = (np.array(col) for col in zip(*means))
    if np.any(E <= 0) or np.any(V <= 0) or np.any(I <= 0):
        raise ValueError("degenerate grid: some grid point produced no edges")
    slopes = {
        f"interactions_vs_{vary}": _loglog_fit(grid, I),
        f"edges_vs_{vary}": _loglog_fit(grid, E),
        f"nodes_vs_{vary}": _loglog_fit(grid, V),
        "edges_vs_nodes": _loglog_fit(V, E),
    }
    regime = "dense" if slopes["edges_vs_nodes"].slope > 1.8 else "sparse"
    return SparsityReport(vary, grid, I.tolist(), E.tolist(), V.tolist(), slopes, regime)
