"""Graph convolution applied to trained embeddings.

Two operators are available: a K-layer discrete convolution (optionally with
self-loops, i.e. propagation by A = Ā + I instead of Ā) and the continuous
graph ODE ``dh/dt = Ā h + h0`` integrated with fixed-step forward Euler.
With a unit step the Euler scheme reproduces the self-loop layer sum exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet, row_normalize
from .errors import DimensionMismatch, InputError, NonFinite
from .graphcore import BipartiteGraph, propagate

MODES = ("discrete", "discrete_sl", "ode")
READOUTS = ("layer_sum", "last_layer")


@dataclass
class ConvConfig:
    mode: str = "ode"
    K: int = 2
    t: float = 1.0
    dt: float = 0.1
    readout: str = "layer_sum"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown convolution mode {self.mode!r}")
        if self.readout not in READOUTS:
            raise InputError(f"unknown readout {self.readout!r}")
        if self.K < 0:
            raise InputError("K must be >= 0")
        if self.t < 0:
            raise InputError("t must be >= 0")
        if self.dt <= 0:
            raise InputError("dt must be > 0")

    def describe(self) -> dict:
        if self.mode == "ode":
            return {"mode": self.mode, "t": self.t, "dt": self.dt}
        return {"mode": self.mode, "K": self.K, "readout": self.readout}


def _check(g: BipartiteGraph, E0: EmbeddingSet) -> None:
    if E0.U.shape[0] != g.n_users or E0.V.shape[0] != g.n_items:
        raise DimensionMismatch(
            f"embeddings hold {E0.U.shape[0]}x{E0.V.shape[0]} rows, graph is {g.n_users}x{g.n_items}")


def conv_discrete_arrays(g: BipartiteGraph, U: np.ndarray, V: np.ndarray, K: int,
                         self_loop: bool, readout: str = "layer_sum"):
    """Array-level K-layer convolution; returns ``(U_out, V_out)``."""
    acc_u, acc_v = U.copy(), V.copy()
    for _ in range(K):
        nu, nv = propagate(g, U, V)
        if self_loop:
            nu += U
            nv += V
        U, V = nu, nv
        if readout == "layer_sum":
            acc_u += U
            acc_v += V
    if readout == "last_layer":
        return U.copy(), V.copy()
    return acc_u, acc_v


def conv_discrete(g: BipartiteGraph, E0: EmbeddingSet, K: int, self_loop: bool,
                  readout: str = "layer_sum") -> EmbeddingSet:
    _check(g, E0)
    if K < 0:
        raise InputError("K must be >= 0")
    U, V = conv_discrete_arrays(g, E0.U, E0.V, K, self_loop, readout)
    return EmbeddingSet(U, V, "convolved")


def euler_steps(t: float, dt: float) -> list[float]:
    """Step sizes covering [0, t]; the last one is shortened to land on t."""
    if t < 0 or dt <= 0:
        raise InputError("need t >= 0 and dt > 0")
    if t == 0:
        return []
    n = max(1, math.ceil(t / dt - 1e-9))
    return [dt] * (n - 1) + [t - (n - 1) * dt]


def ode_solve_euler(g: BipartiteGraph, E0: EmbeddingSet, t: float, dt: float = 0.1) -> EmbeddingSet:
    """Integrate ``dh/dt = Ā h + h0`` from ``h(0) = h0`` up to ``t``."""
    _check(g, E0)
    U0, V0 = E0.U, E0.V
    U, V = U0.copy(), V0.copy()
    for step, h in enumerate(euler_steps(t, dt), 1):
        au, av = propagate(g, U, V)
        au += U0
        av += V0
        U += U.dtype.type(h) * au
        V += V.dtype.type(h) * av
        if not (np.isfinite(U).all() and np.isfinite(V).all()):
            raise NonFinite(f"non-finite embedding after Euler step {step}")
    return EmbeddingSet(U, V, "convolved")


def apply_conv(g: BipartiteGraph, E0: EmbeddingSet, cfg: ConvConfig) -> EmbeddingSet:
    if cfg.mode == "ode":
        return ode_solve_euler(g, E0, cfg.t, cfg.dt)
    return conv_discrete(g, E0, cfg.K, cfg.mode == "discrete_sl", cfg.readout)


def embedding_discrepancy(E0: EmbeddingSet, Econv: EmbeddingSet) -> float:
    """Mean distance between row-normalized embeddings before and after convolution."""
    if E0.U.shape != Econv.U.shape or E0.V.shape != Econv.V.shape:
        raise DimensionMismatch("embedding sets differ in shape")
    total = 0.0
    for side, a, b in (("user", E0.U, Econv.U), ("item", E0.V, Econv.V)):
        na, _ = row_normalize(a.astype(np.float64), side)
        nb, _ = row_normalize(b.astype(np.float64), side)
        total += np.linalg.norm(na - nb, axis=1).sum()
    return float(total / (E0.U.shape[0] + E0.V.shape[0]))
