"""Synthetic Hawkes-CCRM networks on [0, T] x [0, alpha]^2."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import BinaryGraph, InteractionDataset
from .hawkes_pair import KernelParams, NonStationaryError
from .random_measures import CcrmHyper, GgpHyper, NodeAtoms, sample_ccrm, sample_ggp

# Pairs with 2 * mu_ij * T below this are skipped without drawing randomness.
SKIP_RATE = 1e-14
DEFAULT_EPS = 1e-3


@dataclass
class GroundTruth:
    """Generator state kept as a test oracle; labels are never used for inference."""

    atoms: NodeAtoms
    active: np.ndarray  # atom row of each dataset node id
    ggp: GgpHyper
    ccrm: CcrmHyper
    kernel: KernelParams
    T: float

    @property
    def w(self) -> np.ndarray:
        """Weights of the dataset's nodes, in dataset id order."""
        return self.atoms.w[self.active]

    def mu(self, i, j) -> np.ndarray:
        w = self.w
        return np.einsum("nk,nk->n", w[np.atleast_1d(i)], w[np.atleast_1d(j)])


def sample_atoms(h: GgpHyper, c: CcrmHyper, rng, eps: float = DEFAULT_EPS) -> NodeAtoms:
    theta, w0 = sample_ggp(h, eps, rng)
    order = np.argsort(theta, kind="stable")
    return sample_ccrm(theta[order], w0[order], c, rng)


def simulate_from_atoms(atoms: NodeAtoms, k: KernelParams, T: float, rng):
    """Simulate all pairs given fixed weights; returns (t, src, dst) in atom ids."""
    n = len(atoms)
    if n < 2:
        return np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64)
    w = atoms.w
    iu, ju = np.triu_indices(n, k=1)
    mu = np.einsum("nk,nk->n", w[iu], w[ju])
    live = 2.0 * mu * T >= SKIP_RATE
    iu, ju, mu = iu[live], ju[live], mu[live]
    first = rng.exponential(1.0 / (2.0 * mu))
    hit = first <= T
    iu, ju, mu, first = iu[hit], ju[hit], mu[hit], first[hit]
    forward = (rng.random(first.size) < 0.5).astype(np.int8)
    seeds = rng.integers(0, 2 ** 32, size=first.size, dtype=np.int64)
    pidx, ts, ds = _kernels.continue_pairs(mu, first, forward, float(k.eta), float(k.delta), float(T), seeds)
    a, b = iu[pidx], ju[pidx]
    fw = ds.astype(bool)
    src = np.where(fw, a, b)
    dst = np.where(fw, b, a)
    return ts, src, dst


def generate(h: GgpHyper, c: CcrmHyper, k: KernelParams, T: float, rng=None,
             eps: float = DEFAULT_EPS, allow_nonstationary: bool = False) -> InteractionDataset:
    """Draw weights from the CCRM, then every pair's mutually-exciting processes.

    Each unordered pair's first event is drawn exactly from Exponential(2 mu_ij);
    only pairs whose first event lands in [0, T] are continued by thinning.
    Nodes without interactions are dropped; dataset ids follow theta order.
    """
    rng = np.random.default_rng(rng)
    if not T > 0:
        raise ValueError("T must be positive")
    if not k.stationary:
        if not allow_nonstationary:
            raise NonStationaryError(f"eta={k.eta} >= delta={k.delta}")
        warnings.warn("generating with non-stationary kernel", RuntimeWarning)
    atoms = sample_atoms(h, c, rng, eps)
    t, src, dst = simulate_from_atoms(atoms, k, T, rng)
    active = np.unique(np.concatenate([src, dst]))
    remap = np.full(len(atoms), -1, dtype=np.int64)
    remap[active] = np.arange(active.size)
    truth = GroundTruth(atoms, active, h, c, k, float(T))
    return InteractionDataset(t, remap[src], remap[dst], T=float(T), n_nodes=int(active.size),
                              truth=truth, meta={"source": "generator", "eps": eps})


def sample_graph(h: GgpHyper, c: CcrmHyper, T: float, rng=None, eps: float = DEFAULT_EPS) -> BinaryGraph:
    """Binary graph on [0, T] without simulating event times.

    A pair is connected iff its first event, Exponential(2 mu_ij), occurs
    before T; excitation never matters for that event. Nodes are the active
    atoms, numbered densely in theta order as in ``generate``.
    """
    rng = np.random.default_rng(rng)
    atoms = sample_atoms(h, c, rng, eps)
    n = len(atoms)
    if n < 2:
        return BinaryGraph(0, np.zeros((0, 2), np.int64))
    w = atoms.w
    iu, ju = np.triu_indices(n, k=1)
    mu = np.einsum("nk,nk->n", w[iu], w[ju])
    hit = rng.random(mu.size) < -np.expm1(-2.0 * T * mu)
    iu, ju = iu[hit], ju[hit]
    active = np.unique(np.concatenate([iu, ju]))
    remap = np.full(n, -1, dtype=np.int64)
    remap[active] = np.arange(active.size)
    return BinaryGraph(int(active.size), np.stack([remap[iu], remap[ju]], axis=1))
