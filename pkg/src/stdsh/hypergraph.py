"""Spatio-temporal hypergraph over n intersections and a t-step window.

Nodes are (intersection, timestep) instances, N = n*t of them, row order
node_index(i, tau) = tau*n + i so one timestep's nodes are contiguous.
Hyperedges come in two families: t spatial edges (all intersections at one
timestep; columns [0, t)) and n temporal edges (all timesteps of one
intersection; columns [t, t+n)). Every node therefore has degree exactly 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class STHypergraph:
    n: int          # intersections
    t: int          # window length
    H: np.ndarray   # (n*t, t + n) binary incidence, float64

    @property
    def num_nodes(self) -> int:
        return self.n * self.t

    @property
    def num_spatial(self) -> int:
        return self.t

    @property
    def num_temporal(self) -> int:
        return self.n

    @property
    def num_edges(self) -> int:
        return self.t + self.n


def node_index(i: int, tau: int, n: int, t: int) -> int:
    """Row index of node (intersection i, window position tau)."""
    if not (0 <= i < n and 0 <= tau < t):
        raise ValueError(f"node ({i},{tau}) out of range for n={n}, t={t}")
    return tau * n + i


def node_of(row: int, n: int, t: int) -> tuple[int, int]:
    """Inverse of node_index."""
    if not (0 <= row < n * t):
        raise ValueError(f"row {row} out of range for n={n}, t={t}")
    return row % n, row // n


def build_st_hypergraph(n: int, t: int) -> STHypergraph:
    """Build the incidence matrix for n intersections over a t-step window."""
    if n < 1 or t < 1:
        raise ValueError(f"need n >= 1 and t >= 1, got n={n}, t={t}")
    N = n * t
    H = np.zeros((N, t + n), dtype=np.float64)
    for tau in range(t):
        for i in range(n):
            r = node_index(i, tau, n, t)
            H[r, tau] = 1.0        # spatial edge of timestep tau
            H[r, t + i] = 1.0      # temporal edge of intersection i
    return STHypergraph(n=n, t=t, H=H)


def members(hg: STHypergraph, e: int) -> list[int]:
    """Node rows belonging to hyperedge column e, ascending."""
    if not (0 <= e < hg.num_edges):
        raise ValueError(f"hyperedge {e} out of range, E={hg.num_edges}")
    return [int(r) for r in np.nonzero(hg.H[:, e])[0]]


def spatial_only(hg: STHypergraph) -> np.ndarray:
    """Incidence restricted to spatial columns (temporal family ablated)."""
    return hg.H[:, : hg.t].copy()


def temporal_only(hg: STHypergraph) -> np.ndarray:
    """Incidence restricted to temporal columns (spatial family ablated)."""
    return hg.H[:, hg.t :].copy()
