"""Alignment + uniformity training of ID embeddings.

The default ``mf`` mode never touches the graph while training. ``gcn`` mode
computes the loss on K-layer convolved embeddings instead; it only exists to
compare against the in-loop convolution paradigm.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .embeddings import EmbeddingSet, row_normalize
from .errors import EmptyInput, InputError, NoTraining, NonFinite
from .graphcore import BipartiteGraph, build_graph
from .postconv import conv_discrete, conv_discrete_arrays

log = logging.getLogger(__name__)

__all__ = [
    "EmbeddingSet", "TrainConfig", "TrainingLog", "EpochRecord", "EarlyStopper", "Adam",
    "init_embeddings", "align_loss", "uniform_loss", "loss_and_grad", "adam_step",
    "fit", "gcn_forward",
]


@dataclass
class TrainConfig:
    d: int = 64
    batch_size: int = 256
    lr: float = 1e-3
    gamma: float = 0.5
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    train_mode: str = "mf"
    K: int = 2
    self_loop: bool = False
    squared_uniformity: bool = False
    valid_k: int = 20

    def validate(self) -> "TrainConfig":
        if self.gamma < 0:
            raise InputError("gamma must be >= 0")
        if self.batch_size < 2:
            raise InputError("batch_size must be >= 2")
        if self.d < 1:
            raise InputError("d must be >= 1")
        if self.train_mode not in ("mf", "gcn"):
            raise InputError(f"unknown train_mode {self.train_mode!r}")
        if self.K < 0 or self.patience < 1 or self.max_epochs < 0:
            raise InputError("K >= 0, patience >= 1 and max_epochs >= 0 are required")
        return self


def init_embeddings(n_users: int, n_items: int, d: int, seed: int) -> EmbeddingSet:
    """I.i.d. N(0, (0.1/sqrt(d))^2) entries, so rows start with norm near 0.1."""
    if n_users < 1 or n_items < 1 or d < 1:
        raise InputError("counts and dimension must be >= 1")
    rng = np.random.default_rng(seed)
    std = 0.1 / np.sqrt(d)
    U = (rng.standard_normal((n_users, d)) * std).astype(np.float32)
    V = (rng.standard_normal((n_items, d)) * std).astype(np.float32)
    return EmbeddingSet(U, V, "initial")


def _as_pairs(batch) -> np.ndarray:
    pairs = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise EmptyInput("empty batch")
    return pairs


def _uniformity(X: np.ndarray, ids: np.ndarray, squared: bool, need_grad: bool):
    """log-mean-exp uniformity over ordered pairs of distinct batch positions.

    ``X`` holds unit rows. Positions carrying the same row id contribute the
    constant e^0 and no gradient.
    """
    B = len(X)
    if len(np.unique(ids)) < 2:
        raise InputError("uniformity needs at least two distinct rows per side")
    G = X @ X.T
    sq = np.maximum(2.0 - 2.0 * G, 0.0)
    same = ids[:, None] == ids[None, :]
    sq[same] = 0.0
    if squared:
        E = np.exp(-2.0 * sq)
    else:
        D = np.sqrt(sq)
        E = np.exp(-2.0 * D)
    np.fill_diagonal(E, 0.0)
    norm = B * (B - 1)
    S = E.sum() / norm
    loss = float(np.log(S))
    if not need_grad:
        return loss, None
    if squared:
        W = E * (8.0 / (S * norm))
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            W = np.where(same, 0.0, E / D) * (4.0 / (S * norm))
    np.fill_diagonal(W, 0.0)
    grad = -(W.sum(axis=1)[:, None] * X - W @ X)
    return loss, grad


def align_loss(batch_pairs, E: EmbeddingSet) -> float:
    pairs = _as_pairs(batch_pairs)
    u, _ = row_normalize(np.asarray(E.U, dtype=np.float64)[pairs[:, 0]], "user")
    v, _ = row_normalize(np.asarray(E.V, dtype=np.float64)[pairs[:, 1]], "item")
    return float(((u - v) ** 2).sum(axis=1).mean())


def uniform_loss(batch_user_ids, batch_item_ids, E: EmbeddingSet, squared: bool = False) -> float:
    uid = np.asarray(batch_user_ids, dtype=np.int64)
    iid = np.asarray(batch_item_ids, dtype=np.int64)
    u, _ = row_normalize(np.asarray(E.U, dtype=np.float64)[uid], "user")
    v, _ = row_normalize(np.asarray(E.V, dtype=np.float64)[iid], "item")
    lu, _ = _uniformity(u, uid, squared, False)
    lv, _ = _uniformity(v, iid, squared, False)
    return (lu + lv) / 2.0


class LossGrad(NamedTuple):
    loss: float
    align: float
    uniform: float
    user_rows: np.ndarray
    user_grad: np.ndarray
    item_rows: np.ndarray
    item_grad: np.ndarray


def _scatter(ids: np.ndarray, g_hat: np.ndarray, X: np.ndarray, side: str):
    """Sum per-position gradients onto unique rows and pull back through normalization."""
    rows, inv = np.unique(ids, return_inverse=True)
    acc = np.zeros((len(rows), g_hat.shape[1]))
    np.add.at(acc, inv, g_hat)
    x = X[rows].astype(np.float64)
    xhat, norms = row_normalize(x, side)
    grad = (acc - xhat * np.einsum("ij,ij->i", xhat, acc)[:, None]) / norms[:, None]
    if not np.isfinite(grad).all():
        bad = rows[np.flatnonzero(~np.isfinite(grad).all(axis=1))[0]]
        raise NonFinite(f"non-finite gradient on {side} row {bad}")
    return rows, grad


def loss_and_grad(batch, U: np.ndarray, V: np.ndarray, gamma: float,
                  squared: bool = False) -> LossGrad:
    """Loss ``align + gamma * uniform`` and its exact gradient w.r.t. the raw rows.

    Work is done in float64 whatever the storage dtype. Only rows appearing
    in the batch are returned; every other row has zero gradient.
    """
    if isinstance(U, EmbeddingSet):
        raise TypeError("pass the user and item arrays, not an EmbeddingSet")
    pairs = _as_pairs(batch)
    uid, iid = pairs[:, 0], pairs[:, 1]
    u, _ = row_normalize(U[uid].astype(np.float64), "user")
    v, _ = row_normalize(V[iid].astype(np.float64), "item")
    B = len(pairs)
    diff = u - v
    align = float((diff ** 2).sum(axis=1).mean())
    gu = diff * (2.0 / B)
    gv = -gu
    uniform = 0.0
    if gamma != 0.0:
        lu, du = _uniformity(u, uid, squared, True)
        lv, dv = _uniformity(v, iid, squared, True)
        uniform = (lu + lv) / 2.0
        gu = gu + (gamma / 2.0) * du
        gv = gv + (gamma / 2.0) * dv
    elif len(np.unique(uid)) > 1 and len(np.unique(iid)) > 1:
        # reported only; it does not enter the loss
        uniform = (_uniformity(u, uid, squared, False)[0] + _uniformity(v, iid, squared, False)[0]) / 2.0
    else:
        uniform = float("nan")
    urows, ugrad = _scatter(uid, gu, U, "user")
    irows, igrad = _scatter(iid, gv, V, "item")
    return LossGrad(align + gamma * uniform if gamma else align, align, uniform, urows, ugrad, irows, igrad)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              rows: Optional[np.ndarray], lr: float, step: int,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place, restricted to ``rows``.

    ``grad`` is aligned with ``rows`` (or with ``param`` when rows is None).
    ``step`` is the 1-based global step used for bias correction.
    """
    sel = slice(None) if rows is None else rows
    g = grad.astype(m.dtype, copy=False)
    m_r = beta1 * m[sel] + (1.0 - beta1) * g
    v_r = beta2 * v[sel] + (1.0 - beta2) * (g * g)
    m[sel] = m_r
    v[sel] = v_r
    m_hat = m_r / (1.0 - beta1 ** step)
    v_hat = v_r / (1.0 - beta2 ** step)
    param[sel] -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)


class Adam:
    """Per-row sparse Adam over the user and item tables."""

    def __init__(self, E: EmbeddingSet, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.E = E
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {name: (np.zeros_like(getattr(E, name)), np.zeros_like(getattr(E, name)))
                      for name in ("U", "V")}
        self.step_count = 0

    def step(self, grads: dict) -> None:
        """``grads`` maps "U"/"V" to ``(rows or None, grad)``."""
        self.step_count += 1
        for name, (rows, grad) in grads.items():
            m, v = self.state[name]
            adam_step(getattr(self.E, name), grad, m, v, rows, self.lr, self.step_count,
                      self.beta1, self.beta2, self.eps)


class EarlyStopper:
    """Stop once the metric has not improved for ``patience`` consecutive epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float) -> bool:
        if metric > self.best:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    align: float
    uniform: float
    valid_ndcg20: float
    seconds: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, timings: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["epoch", "loss", "align", "uniform", "valid_ndcg20"] + (["seconds"] if timings else [])
        w.writerow(cols)
        for r in self.records:
            row = [r.epoch, f"{r.loss:.8f}", f"{r.align:.8f}", f"{r.uniform:.8f}", f"{r.valid_ndcg20:.8f}"]
            if timings:
                row.append(f"{r.seconds:.4f}")
            w.writerow(row)
        return buf.getvalue()

    @property
    def seconds_per_epoch(self) -> float:
        return float(np.mean([r.seconds for r in self.records])) if self.records else 0.0

    @property
    def total_seconds(self) -> float:
        return float(sum(r.seconds for r in self.records))


def gcn_forward(dataset_or_graph, E: EmbeddingSet, K: int, self_loop: bool,
                readout: str = "layer_sum") -> EmbeddingSet:
    g = dataset_or_graph if isinstance(dataset_or_graph, BipartiteGraph) else build_graph(dataset_or_graph)
    return conv_discrete(g, E, K, self_loop, readout)


def gcn_loss_and_grad(g: BipartiteGraph, batch, U: np.ndarray, V: np.ndarray, gamma: float,
                      K: int, self_loop: bool, squared: bool = False):
    """Loss on K-layer convolved embeddings and dense gradients w.r.t. the raw tables."""
    Uc, Vc = conv_discrete_arrays(g, U, V, K, self_loop)
    lg = loss_and_grad(batch, Uc, Vc, gamma, squared)
    gU = np.zeros(U.shape, dtype=U.dtype)
    gV = np.zeros(V.shape, dtype=V.dtype)
    gU[lg.user_rows] = lg.user_grad
    gV[lg.item_rows] = lg.item_grad
    # the layer-sum operator is symmetric, so its adjoint is itself
    gU, gV = conv_discrete_arrays(g, gU, gV, K, self_loop)
    return lg, gU, gV


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def train_epoch(train: np.ndarray, E: EmbeddingSet, opt: Adam, cfg: TrainConfig,
                rng: np.random.Generator, g: Optional[BipartiteGraph] = None):
    """One pass over shuffled train pairs; returns mean (loss, align, uniform)."""
    sums = np.zeros(3)
    n_batches = 0
    for idx in _epoch_batches(len(train), cfg.batch_size, rng):
        batch = train[idx]
        if cfg.train_mode == "mf":
            lg = loss_and_grad(batch, E.U, E.V, cfg.gamma, cfg.squared_uniformity)
            opt.step({"U": (lg.user_rows, lg.user_grad), "V": (lg.item_rows, lg.item_grad)})
        else:
            lg, gU, gV = gcn_loss_and_grad(g, batch, E.U, E.V, cfg.gamma, cfg.K, cfg.self_loop,
                                           cfg.squared_uniformity)
            opt.step({"U": (None, gU), "V": (None, gV)})
        sums += (lg.loss, lg.align, lg.uniform)
        n_batches += 1
    if not (np.isfinite(E.U).all() and np.isfinite(E.V).all()):
        raise NonFinite("non-finite embeddings after epoch")
    return tuple(sums / max(n_batches, 1))


def fit(dataset, config: TrainConfig, graph: Optional[BipartiteGraph] = None,
        initial: Optional[EmbeddingSet] = None) -> tuple[EmbeddingSet, TrainingLog]:
    """Train embeddings with early stopping on validation NDCG@20.

    Returns the initial-flavor embeddings of the best epoch. In ``gcn`` mode
    the validation metric is computed on convolved embeddings.
    """
    from .evaluation import evaluate

    cfg = config.validate()
    if cfg.max_epochs < 1:
        raise NoTraining("max_epochs must be >= 1")
    train = np.asarray(dataset.train, dtype=np.int64)
    if len(train) < 2:
        raise EmptyInput("need at least two train interactions")
    g = graph
    if cfg.train_mode == "gcn" and g is None:
        g = build_graph(dataset)
    ss = np.random.SeedSequence(cfg.seed)
    init_seed, shuffle_seed = ss.spawn(2)
    E = initial.copy() if initial is not None else init_embeddings(
        dataset.n_users, dataset.n_items, cfg.d, int(init_seed.generate_state(1)[0]))
    rng = np.random.default_rng(shuffle_seed)
    opt = Adam(E, cfg.lr)
    stopper = EarlyStopper(cfg.patience)
    has_valid = len(dataset.valid) > 0
    best = E.copy()
    trace = TrainingLog()
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        loss, align, uniform = train_epoch(train, E, opt, cfg, rng, g)
        seconds = time.perf_counter() - t0
        if has_valid:
            scored = E if cfg.train_mode == "mf" else conv_discrete(g, E, cfg.K, cfg.self_loop)
            ndcg = evaluate(dataset, scored, [cfg.valid_k], split="valid").ndcg[cfg.valid_k]
        else:
            ndcg = float("nan")
        trace.records.append(EpochRecord(epoch, loss, align, uniform, ndcg, seconds))
        log.info("epoch %d loss=%.5f align=%.5f uniform=%.5f ndcg@%d=%.5f (%.2fs)",
                 epoch, loss, align, uniform, cfg.valid_k, ndcg, seconds)
        if not has_valid:
            best = E.copy()
            trace.best_epoch = epoch
            continue
        if stopper.update(epoch, ndcg):
            best = E.copy()
            trace.best_epoch = epoch
        if stopper.should_stop:
            break
    best.flavor = "initial"
    return best, trace


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
