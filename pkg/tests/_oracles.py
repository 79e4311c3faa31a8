"""Slow, direct implementations used as references for the optimised code."""
import math

import numpy as np
from scipy import integrate, special


def naive_direction_loglik(own, opp, mu, eta, delta, T):
    """Sum of log intensities at own events minus the compensator, by double loops.

    An opposite event excites only strictly later times.
    """
    s = 0.0
    for t in own:
        lam = mu
        for u in opp:
            if u < t:
                lam += eta * math.exp(-delta * (t - u))
        s += math.log(lam)
    comp = mu * T
    for u in opp:
        comp += eta / delta * (1.0 - math.exp(-delta * (T - u)))
    return s - comp


def naive_pair_loglik(fwd, bwd, mu_f, mu_b, eta, delta, T):
    return (naive_direction_loglik(fwd, bwd, mu_f, eta, delta, T)
            + naive_direction_loglik(bwd, fwd, mu_b, eta, delta, T))


def naive_graph_loglik(w, w_rem, edges, T):
    """Bernoulli edges with P(edge) = 1 - exp(-2T mu_ij) over every observed pair,
    plus the Poisson-void term for pairs involving the unobserved mass."""
    V = w.shape[0]
    E = {(int(min(i, j)), int(max(i, j))) for i, j in edges}
    out = 0.0
    for i in range(V):
        for j in range(i + 1, V):
            mu = float(w[i] @ w[j])
            if (i, j) in E:
                out += math.log(1.0 - math.exp(-2.0 * T * mu))
            else:
                out -= 2.0 * T * mu
    S = w.sum(axis=0)
    out -= 2.0 * T * float(S @ w_rem) + T * float(w_rem @ w_rem)
    return out


def naive_stage2_logpost(histories, mus, uses, eta, delta, rate_eta, rate_delta):
    """Sum of per-direction naive log-likelihoods plus Exponential log-priors.

    ``histories`` holds (fwd, bwd, T); ``uses`` holds (use_f, use_b) flags.
    """
    if eta < 0 or delta <= 0:
        return -math.inf
    ll = 0.0
    for (fwd, bwd, T), mu, (uf, ub) in zip(histories, mus, uses):
        if uf:
            ll += naive_direction_loglik(fwd, bwd, mu, eta, delta, T)
        if ub:
            ll += naive_direction_loglik(bwd, fwd, mu, eta, delta, T)
    return ll + math.log(rate_eta) - rate_eta * eta + math.log(rate_delta) - rate_delta * delta


def levy_density(w, alpha, sigma, tau):
    return alpha * w ** (-1.0 - sigma) * math.exp(-tau * w) / special.gamma(1.0 - sigma)


def quad_truncated_mass(sigma, tau, eps):
    """Integral of the unit-alpha Levy density over (eps, inf), by adaptive quadrature."""
    f = lambda w: levy_density(w, 1.0, sigma, tau)
    a = integrate.quad(f, eps, 1.0, limit=200)[0] if eps < 1 else 0.0
    return a + integrate.quad(f, max(eps, 1.0), np.inf, limit=200)[0]


def quad_psi(t, sigma, tau, a, b):
    """Laplace exponent of the compound measure, int (1 - prod_k (1 + t_k w/b_k)^-a_k) rho(dw)."""
    t, a, b = (np.atleast_1d(np.asarray(x, float)) for x in (t, a, b))

    def f(w):
        return -np.expm1(-np.sum(a * np.log1p(t * w / b))) * levy_density(w, 1.0, sigma, tau)

    pts = [1e-12, 1e-8, 1e-4, 1e-2, 1.0]
    total = 0.0
    edges = [0.0] + pts + [np.inf]
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(f, lo, hi, limit=400, epsabs=0, epsrel=1e-11)[0]
    return total


def expected_count_by_ode(mu, eta, delta, T, n=20001):
    """Integrate d/dt m = delta*mu - (delta - eta) m for a symmetric pair, then integrate m."""
    ts = np.linspace(0.0, T, n)
    sol = integrate.solve_ivp(lambda t, m: [delta * mu - (delta - eta) * m[0], m[0]], (0.0, T), [mu, 0.0],
                              t_eval=ts, rtol=1e-12, atol=1e-14)
    return float(sol.y[1, -1])


def finite_difference_grad(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def dense_direction_loglik(own, opp, mu, eta, delta, T, chunk=512):
    """The same double sum as ``naive_direction_loglik`` evaluated as dense blocks.

    Still O(n^2) in work, but fast enough for histories of 10^4 events.
    """
    own = np.asarray(own, float)
    opp = np.asarray(opp, float)
    logs = []
    for s in range(0, own.size, chunk):
        t = own[s:s + chunk, None]
        lag = t - opp[None, :]
        exc = np.where(lag > 0, np.exp(-delta * np.where(lag > 0, lag, 0.0)), 0.0)
        logs.extend(np.log(mu + eta * exc.sum(axis=1)).tolist())
    comp = [mu * T] + (eta / delta * -np.expm1(-delta * (T - opp))).tolist()
    return math.fsum(logs) - math.fsum(comp)
