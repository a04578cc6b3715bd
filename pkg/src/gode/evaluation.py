"""Full-ranking top-K evaluation and alignment diagnostics."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .embeddings import EmbeddingSet, row_normalize
from .errors import EmptyInput, InputError
from .graphcore import BipartiteGraph

log = logging.getLogger(__name__)

_CHUNK = 512


@dataclass
class MetricsReport:
    recall: dict[int, float]
    ndcg: dict[int, float]
    n_users_evaluated: int
    wall_clock_seconds: float = 0.0
    per_user: Optional[dict[str, np.ndarray]] = field(default=None, repr=False)

    @property
    def Ks(self) -> list[int]:
        return sorted(self.recall)

    def row(self) -> dict[str, float]:
        out = {}
        for k in self.Ks:
            out[f"recall@{k}"] = self.recall[k]
            out[f"ndcg@{k}"] = self.ndcg[k]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        row = self.row()
        w.writerow(list(row) + ["n_users"])
        w.writerow([f"{v:.6f}" for v in row.values()] + [self.n_users_evaluated])
        return buf.getvalue()

    def pretty(self) -> str:
        lines = [f"{'K':>4}  {'Recall':>8}  {'NDCG':>8}"]
        lines += [f"{k:>4}  {self.recall[k]:8.4f}  {self.ndcg[k]:8.4f}" for k in self.Ks]
        lines.append(f"users evaluated: {self.n_users_evaluated}")
        return "\n".join(lines)


def _csr(pairs: np.ndarray, n_users: int, n_items: int) -> sp.csr_matrix:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    m = sp.csr_matrix((np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])),
                      shape=(n_users, n_items))
    m.sum_duplicates()
    return m


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best columns per row, ties broken by ascending column."""
    n = scores.shape[1]
    k = min(k, n)
    if k == n:
        return np.argsort(-scores, axis=1, kind="stable")
    part = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    part_scores = np.take_along_axis(scores, part, axis=1)
    boundary = part_scores.min(axis=1)
    # rows where the k-th score is tied with an unselected column need the exact path
    n_ge = (scores >= boundary[:, None]).sum(axis=1)
    out = np.empty((scores.shape[0], k), dtype=np.int64)
    for r in np.flatnonzero(n_ge > k):
        out[r] = np.argsort(-scores[r], kind="stable")[:k]
    ok = np.flatnonzero(n_ge <= k)
    if len(ok):
        # sort candidates by column, then stably by descending score
        cols = np.sort(part[ok], axis=1)
        vals = np.take_along_axis(scores[ok], cols, axis=1)
        order = np.argsort(-vals, axis=1, kind="stable")
        out[ok] = np.take_along_axis(cols, order, axis=1)
    return out


def evaluate(dataset, E: EmbeddingSet, Ks: Sequence[int] = (20, 50), split: str = "test",
             keep_per_user: bool = False) -> MetricsReport:
    """Full-ranking Recall@K / NDCG@K by raw dot-product scores.

    ``split="test"`` masks each user's train and validation items;
    ``split="valid"`` masks train items only and scores validation items.
    """
    t0 = time.perf_counter()
    Ks = sorted(int(k) for k in Ks)
    if not Ks or Ks[0] < 1:
        raise InputError("Ks must be a non-empty list of positive integers")
    if split not in ("test", "valid"):
        raise InputError(f"unknown split {split!r}")
    n_users, n_items = dataset.n_users, dataset.n_items
    targets = _csr(dataset.test if split == "test" else dataset.valid, n_users, n_items)
    masked = [dataset.train] + ([dataset.valid] if split == "test" else [])
    mask = _csr(np.concatenate(masked), n_users, n_items)
    n_target = np.diff(targets.indptr)
    users = np.flatnonzero(n_target > 0)
    if len(users) == 0:
        raise EmptyInput(f"no users with {split} interactions")

    kmax = min(Ks[-1], n_items)
    discounts = 1.0 / np.log2(np.arange(2, kmax + 2))
    cum_disc = np.cumsum(discounts)
    rec = {k: np.empty(len(users)) for k in Ks}
    nd = {k: np.empty(len(users)) for k in Ks}
    U = np.asarray(E.U, dtype=np.float32)
    V = np.asarray(E.V, dtype=np.float32)
    for start in range(0, len(users), _CHUNK):
        chunk = users[start:start + _CHUNK]
        scores = U[chunk] @ V.T
        m = mask[chunk].tocoo()
        scores[m.row, m.col] = -np.inf
        top = top_k(scores, kmax)
        hits = np.take_along_axis(targets[chunk].toarray(), top, axis=1) > 0
        n_pos = n_target[chunk]
        cum_hits = np.cumsum(hits, axis=1)
        dcg = np.cumsum(hits * discounts, axis=1)
        sl = slice(start, start + len(chunk))
        for k in Ks:
            kk = min(k, kmax)
            rec[k][sl] = cum_hits[:, kk - 1] / n_pos
            ideal = cum_disc[np.minimum(n_pos, kk) - 1]
            nd[k][sl] = dcg[:, kk - 1] / ideal
    report = MetricsReport(
        recall={k: float(rec[k].mean()) for k in Ks},
        ndcg={k: float(nd[k].mean()) for k in Ks},
        n_users_evaluated=int(len(users)),
        wall_clock_seconds=time.perf_counter() - t0,
    )
    if keep_per_user:
        report.per_user = {"users": users, **{f"recall@{k}": rec[k] for k in Ks},
                           **{f"ndcg@{k}": nd[k] for k in Ks}}
    return report


def measure_alignment(E: EmbeddingSet, pairs: np.ndarray) -> float:
    """Mean squared distance between normalized embeddings of positive pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise EmptyInput("no pairs")
    u, _ = row_normalize(np.asarray(E.U, dtype=np.float64)[pairs[:, 0]], "user")
    v, _ = row_normalize(np.asarray(E.V, dtype=np.float64)[pairs[:, 1]], "item")
    return float(((u - v) ** 2).sum(axis=1).mean())


class AlignmentBound(NamedTuple):
    chain: tuple[float, float, float]  # full force, neighbour terms, norm of summed differences
    rhs: float                         # ||sum of user-side neighbours - sum of item-side neighbours||^2
    holds: bool                        # chain[0] >= rhs
    steps: tuple[bool, bool, bool]     # each successive inequality
    gcn_force: float                   # one-layer degree-weighted counterpart


def verify_alignment_bound(g: BipartiteGraph, E: EmbeddingSet, pair: tuple[int, int],
                           tol: float = 1e-9) -> AlignmentBound:
    """Evaluate the MF alignment-force lower-bound chain for one positive pair.

    Neighbours of the user ``u`` are items, neighbours of the item ``v`` are
    users. The chain is reported term by term; which inequalities hold
    depends on the instance, so nothing is asserted here.
    """
    u, v = int(pair[0]), int(pair[1])
    if not (0 <= u < g.n_users and 0 <= v < g.n_items):
        raise InputError(f"pair {pair} is not in the graph")
    Nu = g.R.indices[g.R.indptr[u]:g.R.indptr[u + 1]]
    Nv = g.RT.indices[g.RT.indptr[v]:g.RT.indptr[v + 1]]
    if v not in Nu:
        raise InputError(f"user {u} and item {v} are not connected")
    U = np.asarray(E.U, dtype=np.float64)
    V = np.asarray(E.V, dtype=np.float64)
    eu, ev = U[u], V[v]
    ei, ej = V[Nu], U[Nv]
    side_u = ((ei - eu) ** 2).sum()
    side_v = ((ev - ej) ** 2).sum()
    full = ((eu - ev) ** 2).sum() + side_u + side_v
    summed = (((ei - eu).sum(axis=0) + (ev - ej).sum(axis=0)) ** 2).sum()
    rhs = ((ei.sum(axis=0) - ej.sum(axis=0)) ** 2).sum()
    wu = 1.0 / np.sqrt(g.user_degree[u] * g.item_degree[Nu].astype(np.float64))
    wv = 1.0 / np.sqrt(g.item_degree[v] * g.user_degree[Nv].astype(np.float64))
    gcn = (((wu[:, None] * ei).sum(axis=0) - (wv[:, None] * ej).sum(axis=0)) ** 2).sum()
    chain = (float(full), float(side_u + side_v), float(summed))
    steps = (chain[0] + tol >= chain[1], chain[1] + tol >= chain[2], chain[2] + tol >= rhs)
    holds = chain[0] + tol >= rhs
    if not all(steps):
        log.debug("alignment chain broken for pair %s: chain=%s rhs=%.6g", pair, chain, rhs)
    return AlignmentBound(chain, float(rhs), bool(holds), tuple(bool(s) for s in steps), float(gcn))


VARIANTS = ("MF-init", "MF-conv", "LightGCN-init", "LightGCN-conv")


@dataclass
class VariantStudy:
    reports: dict[str, MetricsReport]
    Ks: list[int]

    def relative(self, base: str = "LightGCN-conv") -> dict[str, dict[str, float]]:
        ref = self.reports[base].row()
        return {name: {key: (100.0 * val / ref[key] if ref[key] > 0 else float("nan"))
                       for key, val in rep.row().items()}
                for name, rep in self.reports.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = list(self.reports[VARIANTS[0]].row())
        w.writerow(["variant"] + keys + [f"{k}_pct" for k in keys])
        rel = self.relative()
        for name in VARIANTS:
            row = self.reports[name].row()
            w.writerow([name] + [f"{row[k]:.6f}" for k in keys] + [f"{rel[name][k]:.2f}" for k in keys])
        return buf.getvalue()


def run_variant_study(dataset, config, Ks: Sequence[int] = (20, 50), K: int = 2,
                      graph: Optional[BipartiteGraph] = None, trained=None) -> VariantStudy:
    """Train with and without in-loop convolution and score the four variants.

    ``trained`` may carry precomputed ``{"mf": EmbeddingSet, "gcn": EmbeddingSet}``.
    """
    from dataclasses import replace

    from .graphcore import build_graph
    from .postconv import conv_discrete
    from .trainer import fit

    g = graph if graph is not None else build_graph(dataset)
    trained = dict(trained or {})
    if "mf" not in trained:
        trained["mf"], _ = fit(dataset, replace(config, train_mode="mf"), graph=g)
    if "gcn" not in trained:
        trained["gcn"], _ = fit(dataset, replace(config, train_mode="gcn", K=K, self_loop=False), graph=g)
    emb = {
        "MF-init": trained["mf"],
        "MF-conv": conv_discrete(g, trained["mf"], K, self_loop=False),
        "LightGCN-init": trained["gcn"],
        "LightGCN-conv": conv_discrete(g, trained["gcn"], K, self_loop=False),
    }
    return VariantStudy({name: evaluate(dataset, emb[name], Ks) for name in VARIANTS}, sorted(Ks))
