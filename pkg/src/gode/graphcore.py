"""Degree-normalized user-item bipartite adjacency."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, IsolatedNode


@dataclass(frozen=True)
class BipartiteGraph:
    R: sp.csr_matrix   # n_users x n_items
    RT: sp.csr_matrix  # n_items x n_users
    user_degree: np.ndarray
    item_degree: np.ndarray

    @property
    def n_users(self) -> int:
        return self.R.shape[0]

    @property
    def n_items(self) -> int:
        return self.R.shape[1]

    @property
    def nnz(self) -> int:
        return self.R.nnz


def graph_from_pairs(pairs: np.ndarray, n_users: int, n_items: int,
                     dtype=np.float32) -> BipartiteGraph:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    rows, cols = pairs[:, 0], pairs[:, 1]
    du = np.bincount(rows, minlength=n_users)
    di = np.bincount(cols, minlength=n_items)
    if (du == 0).any():
        raise IsolatedNode(f"user {int(np.flatnonzero(du == 0)[0])} has no train interactions")
    if (di == 0).any():
        raise IsolatedNode(f"item {int(np.flatnonzero(di == 0)[0])} has no train interactions")
    w = 1.0 / np.sqrt(du[rows].astype(np.float64) * di[cols])
    R = sp.csr_matrix((w.astype(dtype), (rows, cols)), shape=(n_users, n_items))
    R.sum_duplicates()
    R.sort_indices()
    RT = R.T.tocsr()
    RT.sort_indices()
    return BipartiteGraph(R, RT, du, di)


def build_graph(dataset) -> BipartiteGraph:
    """Normalized adjacency over the train split: w_ij = 1/sqrt(|N_i| |N_j|)."""
    if len(dataset.train) == 0:
        raise IsolatedNode("empty train split")
    return graph_from_pairs(dataset.train, dataset.n_users, dataset.n_items)


def agg_items_to_users(g: BipartiteGraph, V: np.ndarray) -> np.ndarray:
    if V.shape[0] != g.n_items:
        raise DimensionMismatch(f"expected {g.n_items} item rows, got {V.shape[0]}")
    return np.asarray(g.R @ V)


def agg_users_to_items(g: BipartiteGraph, U: np.ndarray) -> np.ndarray:
    if U.shape[0] != g.n_users:
        raise DimensionMismatch(f"expected {g.n_users} user rows, got {U.shape[0]}")
    return np.asarray(g.RT @ U)


def propagate(g: BipartiteGraph, U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One application of the stacked adjacency [[0, R], [R^T, 0]]."""
    return agg_items_to_users(g, V), agg_users_to_items(g, U)


def dense_adjacency(g: BipartiteGraph) -> np.ndarray:
    """Square stacked normalized adjacency; for small graphs and tests only."""
    n = g.n_users + g.n_items
    A = np.zeros((n, n))
    R = g.R.toarray()
    A[:g.n_users, g.n_users:] = R
    A[g.n_users:, :g.n_users] = R.T
    return A
