"""One mutually-exciting Hawkes pair with exponential kernel eta * exp(-delta s)."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Tuple

import numpy as np

from . import _kernels

Direction = Literal["forward", "backward"]

# Floor applied to estimated base rates that vanish; see `floor_rates`.
MU_FLOOR = 1e-10


class NonStationaryError(ValueError):
    """Kernel parameters violate eta < delta where stationarity is required."""


@dataclass(frozen=True)
class KernelParams:
    eta: float
    delta: float

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")

    @property
    def stationary(self) -> bool:
        return self.eta < self.delta

    @property
    def branching_ratio(self) -> float:
        return self.eta / self.delta

    def require_stationary(self):
        if not self.stationary:
            raise NonStationaryError(f"eta={self.eta} >= delta={self.delta}")


@dataclass(frozen=True)
class PairRate:
    mu_ij: float
    mu_ji: float

    def __post_init__(self):
        if self.mu_ij < 0 or self.mu_ji < 0:
            raise ValueError("base rates must be nonnegative")


class PairHistory:
    """Event times of one directed pair and its reverse over [0, T].

    Times within a direction must be sorted. Equal timestamps are accepted
    (multi-recipient data); at cross-direction ties forward sorts first.
    """

    def __init__(self, forward, backward, T: float):
        fw = np.asarray(forward, dtype=float).ravel()
        bw = np.asarray(backward, dtype=float).ravel()
        if not T > 0:
            raise ValueError("horizon T must be positive")
        for name, arr in (("forward", fw), ("backward", bw)):
            if arr.size and (np.any(np.diff(arr) < 0)):
                raise ValueError(f"{name} event times are not sorted")
            if arr.size and (arr[0] < 0 or arr[-1] > T):
                raise ValueError(f"{name} event times fall outside [0, {T}]")
        fw.setflags(write=False)
        bw.setflags(write=False)
        self.forward = fw
        self.backward = bw
        self.T = float(T)

    def __repr__(self):
        return f"PairHistory(n_forward={self.forward.size}, n_backward={self.backward.size}, T={self.T})"

    @cached_property
    def merged(self) -> Tuple[np.ndarray, np.ndarray]:
        times = np.concatenate([self.forward, self.backward])
        flag = np.concatenate([np.ones(self.forward.size, np.int8), np.zeros(self.backward.size, np.int8)])
        order = np.lexsort((1 - flag, times))
        return times[order], flag[order]

    def own(self, direction: Direction) -> np.ndarray:
        return self.forward if direction == "forward" else self.backward

    def opposite(self, direction: Direction) -> np.ndarray:
        return self.backward if direction == "forward" else self.forward

    def reversed(self) -> "PairHistory":
        return PairHistory(self.backward, self.forward, self.T)


def _check_time(t, T):
    if t < 0 or t > T:
        raise ValueError(f"t={t} outside [0, {T}]")


def _check_direction(direction):
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def intensity_at(t: float, h: PairHistory, direction: Direction, mu: float, k: KernelParams) -> float:
    """Conditional intensity; opposite events at exactly ``t`` do not count."""
    _check_time(t, h.T)
    _check_direction(direction)
    opp = h.opposite(direction)
    past = opp[opp < t]
    return float(mu + k.eta * np.exp(-k.delta * (t - past)).sum())


def compensator(h: PairHistory, direction: Direction, mu: float, k: KernelParams, t: float) -> float:
    _check_time(t, h.T)
    _check_direction(direction)
    opp = h.opposite(direction)
    past = opp[opp < t]
    return float(t * mu + k.eta / k.delta * (-np.expm1(-k.delta * (t - past))).sum())


def pair_loglik_terms(h: PairHistory, rates: PairRate, k: KernelParams):
    """(sum log lambda, compensator) for the forward then backward direction."""
    times, flag = h.merged
    sf, cf, sb, cb = _kernels.pair_terms(times, flag, float(rates.mu_ij), float(rates.mu_ji),
                                         float(k.eta), float(k.delta), h.T)
    return (sf, cf), (sb, cb)


def loglik_pair(h: PairHistory, rates: PairRate, k: KernelParams) -> float:
    """Log-likelihood of both directions via the O(n) recursion.

    Returns ``-inf`` if an owned event sees zero intensity.
    """
    (sf, cf), (sb, cb) = pair_loglik_terms(h, rates, k)
    return sf - cf + sb - cb


def _seed_from(rng) -> int:
    return int(rng.integers(0, 2 ** 32))


def simulate_pair(rates: PairRate, k: KernelParams, T: float, rng,
                  allow_nonstationary: bool = False) -> PairHistory:
    """Exact simulation by Ogata thinning on [0, T]."""
    if not T > 0:
        raise ValueError("T must be positive")
    if not k.stationary:
        if not allow_nonstationary:
            raise NonStationaryError(f"eta={k.eta} >= delta={k.delta}; pass allow_nonstationary=True")
        warnings.warn("simulating a non-stationary pair; counts grow exponentially in T", RuntimeWarning)
    times, flag = _kernels.simulate_one(float(rates.mu_ij), float(rates.mu_ji), float(k.eta),
                                        float(k.delta), 0.0, float(T), 0.0, 0.0, _seed_from(rng))
    fw = flag.astype(bool)
    return PairHistory(times[fw], times[~fw], T)


def expected_count(mu: float, k: KernelParams, T: float) -> float:
    """Expected events in one direction of a symmetric pair (mu_ij = mu_ji = mu)."""
    k.require_stationary()
    if T < 0:
        raise ValueError("T must be nonnegative")
    gap = k.delta - k.eta
    return mu * (k.delta / gap * T + k.eta / gap ** 2 * math.expm1(-T * gap))


def expected_lambda_integral(mu_f: float, mu_b: float, lam_f0: float, lam_b0: float,
                             k: KernelParams, horizon: float) -> Tuple[float, float]:
    """Integrated expected intensities over (0, horizon] from initial intensities.

    Solves d/dt m = A m + delta * mu with A = [[-delta, eta], [eta, -delta]];
    the sum and difference of the two directions decouple with rates
    delta - eta and delta + eta.
    """
    k.require_stationary()
    eta, delta = k.eta, k.delta

    def integrated(x0, x_inf, rate):
        return x_inf * horizon - (x0 - x_inf) * math.expm1(-rate * horizon) / rate

    s = integrated(lam_f0 + lam_b0, delta * (mu_f + mu_b) / (delta - eta), delta - eta)
    d = integrated(lam_f0 - lam_b0, delta * (mu_f - mu_b) / (delta + eta), delta + eta)
    return 0.5 * (s + d), 0.5 * (s - d)
