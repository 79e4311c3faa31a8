"""Interaction datasets, binary projections and per-pair event indexes."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Optional

import numpy as np

from .hawkes_pair import PairHistory


@dataclass
class InteractionDataset:
    """Directed interactions ``(t, src, dst)`` on [0, T] over nodes 0..n_nodes-1.

    Rows are kept sorted by (t, src, dst); self-interactions are rejected.
    ``node_labels`` maps dense ids back to external ids when the data was parsed
    from a file, and ``truth`` carries generator ground truth for synthetic data.
    """

    t: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    T: float
    n_nodes: Optional[int] = None
    node_labels: Optional[np.ndarray] = None
    truth: Optional[Any] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.src = np.asarray(self.src, dtype=np.int64).ravel()
        self.dst = np.asarray(self.dst, dtype=np.int64).ravel()
        if not (self.t.size == self.src.size == self.dst.size):
            raise ValueError("t, src and dst must have equal length")
        if np.any(self.src == self.dst):
            raise ValueError("self-interactions are not allowed")
        if self.t.size:
            if self.t.min() < 0 or self.t.max() > self.T:
                raise ValueError("interaction times must lie in [0, T]")
            if self.src.min() < 0 or self.dst.min() < 0:
                raise ValueError("node ids must be nonnegative")
        order = np.lexsort((self.dst, self.src, self.t))
        if np.any(order != np.arange(order.size)):
            self.t, self.src, self.dst = self.t[order], self.src[order], self.dst[order]
        top = int(max(self.src.max(initial=-1), self.dst.max(initial=-1))) + 1
        if self.n_nodes is None:
            self.n_nodes = top
        elif self.n_nodes < top:
            raise ValueError("n_nodes smaller than the largest node id")

    def __len__(self) -> int:
        return self.t.size

    def window(self, lo: float, hi: float, *, include_lo: bool = True, T: Optional[float] = None,
               shift: bool = False) -> "InteractionDataset":
        """Interactions with time in [lo, hi] (or (lo, hi]); node ids are kept."""
        mask = (self.t >= lo if include_lo else self.t > lo) & (self.t <= hi)
        t = self.t[mask] - (lo if shift else 0.0)
        return InteractionDataset(t, self.src[mask], self.dst[mask],
                                  T=hi - (lo if shift else 0.0) if T is None else T,
                                  n_nodes=self.n_nodes, node_labels=self.node_labels)

    @cached_property
    def pairs(self) -> "PairIndex":
        return PairIndex.from_dataset(self)

    def directed_counts(self) -> Dict[tuple, int]:
        keys, counts = np.unique(np.stack([self.src, self.dst], axis=1), axis=0, return_counts=True)
        return {(int(a), int(b)): int(c) for (a, b), c in zip(keys, counts)}


@dataclass
class PairIndex:
    """All unordered pairs a < b with at least one event, in CSR layout.

    Within a pair, events are merged in time order with flag 1 for a->b
    (forward) and 0 for b->a, forward first at ties.
    """

    a: np.ndarray
    b: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    fwd: np.ndarray
    n_fwd: np.ndarray
    n_bwd: np.ndarray
    T: float

    @classmethod
    def from_dataset(cls, d: InteractionDataset) -> "PairIndex":
        lo = np.minimum(d.src, d.dst)
        hi = np.maximum(d.src, d.dst)
        fwd = (d.src == lo).astype(np.int8)
        order = np.lexsort((1 - fwd, d.t, hi, lo))
        lo, hi, t, fwd = lo[order], hi[order], d.t[order], fwd[order]
        if t.size:
            start = np.flatnonzero(np.r_[True, (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])])
        else:
            start = np.zeros(0, dtype=np.int64)
        offsets = np.r_[start, t.size].astype(np.int64)
        n_fwd = np.add.reduceat(fwd.astype(np.int64), start) if t.size else np.zeros(0, np.int64)
        sizes = np.diff(offsets)
        return cls(lo[start], hi[start], offsets, np.ascontiguousarray(t), np.ascontiguousarray(fwd),
                   n_fwd, sizes - n_fwd, float(d.T))

    def __len__(self) -> int:
        return self.a.size

    def history(self, p: int) -> PairHistory:
        lo, hi = self.offsets[p], self.offsets[p + 1]
        t, f = self.times[lo:hi], self.fwd[lo:hi].astype(bool)
        return PairHistory(t[f], t[~f], self.T)

    @property
    def n_events(self) -> int:
        return int(self.times.size)


@dataclass
class BinaryGraph:
    """Undirected simple graph; ``edges`` holds unique rows (i, j) with i < j."""

    n_nodes: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        e = np.unique(np.sort(e, axis=1), axis=0)
        self.edges = e

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def active_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.degrees() > 0)


def binary_projection(d: InteractionDataset) -> BinaryGraph:
    """Edge {i, j} iff at least one interaction in either direction."""
    return BinaryGraph(d.n_nodes, np.stack([d.src, d.dst], axis=1))


def degree_distribution(g: BinaryGraph, include_zero: bool = False) -> Dict[int, int]:
    deg = g.degrees()
    if not include_zero:
        deg = deg[deg > 0]
    values, counts = np.unique(deg, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def count_summary(d: InteractionDataset) -> Dict[str, int]:
    """Interactions I, edges E and active nodes V of a dataset."""
    g = binary_projection(d)
    return {"interactions": len(d), "edges": g.n_edges, "nodes": int(g.active_nodes().size)}
