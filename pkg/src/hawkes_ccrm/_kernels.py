"""Compiled inner loops for mutually-exciting exponential Hawkes pairs.

Merged event streams are encoded as ``times`` (nondecreasing) with an int8
``fwd`` flag (1 = forward i->j, 0 = backward j->i). At equal timestamps
forward events come first, and an event never excites the opposite process
at its own timestamp.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def pair_terms(times, fwd, mu_f, mu_b, eta, delta, T):
    """Return (sum log lambda_f, Lambda_f(T), sum log lambda_b, Lambda_b(T))."""
    ef = 0.0  # excitation felt by the forward process, at time `cur`
    eb = 0.0
    pend_f = 0.0  # events at `cur` not yet allowed to excite
    pend_b = 0.0
    cur = 0.0
    slog_f = 0.0
    slog_b = 0.0
    n_f = 0
    n_b = 0
    for k in range(times.shape[0]):
        t = times[k]
        if t > cur:
            d = math.exp(-delta * (t - cur))
            ef = (ef + pend_f) * d
            eb = (eb + pend_b) * d
            pend_f = 0.0
            pend_b = 0.0
            cur = t
        if fwd[k]:
            lam = mu_f + eta * ef
            if lam > 0.0:
                slog_f += math.log(lam)
            else:
                slog_f = -np.inf
            pend_b += 1.0
            n_f += 1
        else:
            lam = mu_b + eta * eb
            if lam > 0.0:
                slog_b += math.log(lam)
            else:
                slog_b = -np.inf
            pend_f += 1.0
            n_b += 1
    d = math.exp(-delta * (T - cur))
    tail_f = (ef + pend_f) * d  # sum over backward events of exp(-delta (T-u))
    tail_b = (eb + pend_b) * d
    comp_f = mu_f * T + eta / delta * (n_b - tail_f)
    comp_b = mu_b * T + eta / delta * (n_f - tail_b)
    return slog_f, comp_f, slog_b, comp_b


@njit(cache=True)
def batch_loglik(times, fwd, offsets, mu_f, mu_b, use_f, use_b, eta, delta, T):
    """Sum of per-direction log-likelihood terms over many pairs."""
    total = 0.0
    for p in range(offsets.shape[0] - 1):
        lo = offsets[p]
        hi = offsets[p + 1]
        sf, cf, sb, cb = pair_terms(times[lo:hi], fwd[lo:hi], mu_f[p], mu_b[p], eta, delta, T)
        if use_f[p]:
            total += sf - cf
        if use_b[p]:
            total += sb - cb
    return total


@njit(cache=True)
def batch_loglik_shared_mu(times, fwd, offsets, mu, use_f, use_b, eta, delta, T):
    """As batch_loglik with one base rate for every direction."""
    total = 0.0
    for p in range(offsets.shape[0] - 1):
        lo = offsets[p]
        hi = offsets[p + 1]
        sf, cf, sb, cb = pair_terms(times[lo:hi], fwd[lo:hi], mu, mu, eta, delta, T)
        if use_f[p]:
            total += sf - cf
        if use_b[p]:
            total += sb - cb
    return total


@njit(cache=True)
def end_state(times, fwd, delta, t_end):
    """Excitation sums (felt by forward, felt by backward) at t_end, events <= t_end included."""
    ef = 0.0
    eb = 0.0
    for k in range(times.shape[0]):
        if times[k] > t_end:
            break
        d = math.exp(-delta * (t_end - times[k]))
        if fwd[k]:
            eb += d
        else:
            ef += d
    return ef, eb


@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def ogata(mu_f, mu_b, eta, delta, t0, T, ef, eb):
    """Thinning simulation on (t0, T] from excitation state (ef, eb) at t0.

    Between events the total intensity only decays, so its value right after
    the last event (or proposal) is a valid upper bound.
    """
    cap = 16
    out_t = np.empty(cap)
    out_d = np.empty(cap, dtype=np.int8)
    n = 0
    t = t0
    while True:
        lam_bar = mu_f + mu_b + eta * (ef + eb)
        if lam_bar <= 0.0:
            break
        w = np.random.exponential(1.0 / lam_bar)
        if t + w > T:
            break
        t = t + w
        d = math.exp(-delta * w)
        ef *= d
        eb *= d
        lf = mu_f + eta * ef
        lb = mu_b + eta * eb
        u = np.random.random() * lam_bar
        if u < lf + lb:
            if n == cap:
                cap *= 2
                nt = np.empty(cap)
                nd = np.empty(cap, dtype=np.int8)
                nt[:n] = out_t[:n]
                nd[:n] = out_d[:n]
                out_t = nt
                out_d = nd
            out_t[n] = t
            if u < lf:
                out_d[n] = 1
                eb += 1.0
            else:
                out_d[n] = 0
                ef += 1.0
            n += 1
    return out_t[:n], out_d[:n]


@njit(cache=True)
def simulate_one(mu_f, mu_b, eta, delta, t0, T, ef, eb, seed):
    _seed(seed)
    return ogata(mu_f, mu_b, eta, delta, t0, T, ef, eb)


@njit(cache=True)
def continue_pairs(mu, t_first, d_first, eta, delta, T, seeds):
    """Simulate pairs already known to have a first event at ``t_first``.

    Returns flattened (pair index, time, forward flag) including the first event.
    """
    cap = 2 * mu.shape[0] + 16
    idx = np.empty(cap, dtype=np.int64)
    ts = np.empty(cap)
    ds = np.empty(cap, dtype=np.int8)
    n = 0
    for p in range(mu.shape[0]):
        _seed(seeds[p])
        if d_first[p]:
            ef, eb = 0.0, 1.0
        else:
            ef, eb = 1.0, 0.0
        rest_t, rest_d = ogata(mu[p], mu[p], eta, delta, t_first[p], T, ef, eb)
        need = n + 1 + rest_t.shape[0]
        if need > cap:
            while cap < need:
                cap *= 2
            ni = np.empty(cap, dtype=np.int64)
            nt = np.empty(cap)
            nd = np.empty(cap, dtype=np.int8)
            ni[:n] = idx[:n]
            nt[:n] = ts[:n]
            nd[:n] = ds[:n]
            idx, ts, ds = ni, nt, nd
        idx[n] = p
        ts[n] = t_first[p]
        ds[n] = d_first[p]
        n += 1
        for k in range(rest_t.shape[0]):
            idx[n] = p
            ts[n] = rest_t[k]
            ds[n] = rest_d[k]
            n += 1
    return idx[:n], ts[:n], ds[:n]


@njit(cache=True)
def forecast_counts(mu_f, mu_b, eta, delta, horizon, ef, eb, n_sims, seed):
    """Per-replicate event counts (forward, backward) over (0, horizon]."""
    _seed(seed)
    out = np.zeros((n_sims, 2))
    for s in range(n_sims):
        t = 0.0
        xf = ef
        xb = eb
        while True:
            lam_bar = mu_f + mu_b + eta * (xf + xb)
            if lam_bar <= 0.0:
                break
            w = np.random.exponential(1.0 / lam_bar)
            if t + w > horizon:
                break
            t += w
            d = math.exp(-delta * w)
            xf *= d
            xb *= d
            lf = mu_f + eta * xf
            u = np.random.random() * lam_bar
            if u < lf:
                out[s, 0] += 1.0
                xb += 1.0
            elif u < lf + mu_b + eta * xb:
                out[s, 1] += 1.0
                xf += 1.0
    return out


@njit(cache=True)
def zero_truncated_poisson(lam, seed):
    """Poisson(lam) conditioned on >= 1: sequential inversion for small rates, rejection otherwise."""
    _seed(seed)
    out = np.empty(lam.shape[0], dtype=np.int64)
    for n in range(lam.shape[0]):
        r = lam[n]
        if r < 1.0:
            # P(N = k | N >= 1) = e^-r r^k / (k! (1 - e^-r))
            u = np.random.random() * (-math.expm1(-r))
            k = 1
            pk = r * math.exp(-r)
            cum = pk
            while cum < u and k < 10000:
                k += 1
                pk *= r / k
                cum += pk
            out[n] = k
        else:
            k = 0
            while k == 0:
                k = np.random.poisson(r)
            out[n] = k
    return out


@njit(cache=True)
def weight_logp_grad(u, v, m, w_rem, sigma, tau, a, b, T, gu, gv):
    """Log-density of (log w0, log beta) given latent counts; fills gu, gv with its gradient."""
    V, p = v.shape
    S = np.zeros(p)
    SS = np.zeros(p)
    w = np.empty((V, p))
    for i in range(V):
        w0 = math.exp(u[i])
        for k in range(p):
            wik = w0 * math.exp(v[i, k])
            w[i, k] = wik
            S[k] += wik
            SS[k] += wik * wik
    T2 = 2.0 * T
    logp = 0.0
    for k in range(p):
        logp -= T2 * (0.5 * (S[k] * S[k] - SS[k]) + S[k] * w_rem[k])
    for i in range(V):
        w0 = math.exp(u[i])
        logp -= sigma * u[i] + tau * w0
        g = -sigma - tau * w0
        for k in range(p):
            beta = math.exp(v[i, k])
            logp += m[i, k] * (u[i] + v[i, k]) + a[k] * v[i, k] - b[k] * beta
            wr = w[i, k] * (S[k] - w[i, k] + w_rem[k])
            gv[i, k] = m[i, k] - T2 * wr + a[k] - b[k] * beta
            g += m[i, k] - T2 * wr
        gu[i] = g
    return logp


@njit(cache=True)
def leapfrog(u, v, pu, pv, m, w_rem, sigma, tau, a, b, T, step, L):
    """L leapfrog steps in place; returns (logp at start, logp at end, finite flag)."""
    gu = np.empty_like(u)
    gv = np.empty_like(v)
    logp0 = weight_logp_grad(u, v, m, w_rem, sigma, tau, a, b, T, gu, gv)
    pu += 0.5 * step * gu
    pv += 0.5 * step * gv
    logp = logp0
    for ell in range(L):
        u += step * pu
        v += step * pv
        logp = weight_logp_grad(u, v, m, w_rem, sigma, tau, a, b, T, gu, gv)
        if not math.isfinite(logp):
            return logp0, logp, False
        for i in range(u.shape[0]):
            if not math.isfinite(gu[i]):
                return logp0, logp, False
        scale = step if ell < L - 1 else 0.5 * step
        pu += scale * gu
        pv += scale * gv
    return logp0, logp, True


@njit(cache=True)
def end_states(times, fwd, offsets, delta, t_end):
    """end_state for every pair of a CSR event layout."""
    n = offsets.shape[0] - 1
    ef = np.empty(n)
    eb = np.empty(n)
    for p in range(n):
        ef[p], eb[p] = end_state(times[offsets[p]:offsets[p + 1]], fwd[offsets[p]:offsets[p + 1]], delta, t_end)
    return ef, eb
