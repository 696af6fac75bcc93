"""Similarity graph, absorbing-chain label propagation and the cycle loss.

Every function takes a :class:`~lapda.autodiff.Tape` plus node ids and
records its work on that tape, so gradients reach the features and the
bandwidth.

Block naming follows the propagation direction: for the forward walk the
source nodes absorb (``T_tt``, ``T_ts``); for the return walk the target
nodes absorb (``T_ss``, ``T_st``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import SingularSystem, Tape


@dataclass(frozen=True)
class SimilarityGraph:
    W_ss: int
    W_st: int
    W_ts: int
    W_tt: int


def bandwidth(tape: Tape, log_sigma: int) -> int:
    """sigma = exp(s), so the bandwidth is positive by construction."""
    return tape.exp(log_sigma)


def build_similarity(tape: Tape, F_s: int, F_t: int, sigma: int) -> SimilarityGraph:
    """Gaussian weights exp(-sum_k (a_k - b_k)^2 / (2 sigma_k^2)) for all four blocks."""
    for f in (F_s, F_t):
        if not np.all(np.isfinite(tape.value(f))):
            raise FloatingPointError("build_similarity: non-finite feature value")
    W_ss = tape.exp(tape.neg(tape.sqdist(F_s, F_s, sigma)))
    W_ts = tape.exp(tape.neg(tape.sqdist(F_t, F_s, sigma)))
    W_tt = tape.exp(tape.neg(tape.sqdist(F_t, F_t, sigma)))
    W_st = tape.transpose(W_ts)
    return SimilarityGraph(W_ss=W_ss, W_st=W_st, W_ts=W_ts, W_tt=W_tt)


def _normalize_pair(tape: Tape, W_abs: int, W_cross: int) -> tuple[int, int]:
    # [W_abs | W_cross] built as concat-rows of the transposes
    m = tape.shape(W_abs)[1]
    k = tape.shape(W_cross)[1]
    stacked = tape.transpose(tape.concat_rows(tape.transpose(W_abs), tape.transpose(W_cross)))
    T = tape.transpose(tape.row_normalize(stacked))
    T_abs = tape.transpose(tape.slice_rows(T, 0, m))
    T_cross = tape.transpose(tape.slice_rows(T, m, m + k))
    return T_abs, T_cross


def forward_transition(tape: Tape, g: SimilarityGraph) -> tuple[int, int]:
    """(T_tt, T_ts): targets walk, sources absorb."""
    return _normalize_pair(tape, g.W_tt, g.W_ts)


def reverse_transition(tape: Tape, g: SimilarityGraph) -> tuple[int, int]:
    """(T_ss, T_st): sources walk, targets absorb."""
    return _normalize_pair(tape, g.W_ss, g.W_st)


def propagate_closed(tape: Tape, T_abs: int, T_cross: int, y: int,
                     batch_index: int | None = None) -> int:
    """Absorption probabilities (I - T_abs)^{-1} T_cross y, computed by a solve.

    Self-loop mass is removed and each row renormalized before solving.
    Absorption probabilities do not depend on self-loops, but a node whose
    walk almost never leaves itself makes ``I - T_abs`` nearly singular.

    Raises :class:`~lapda.autodiff.SingularSystem` if the remaining system
    is (numerically) singular, i.e. the graph is disconnected.
    """
    m = tape.shape(T_abs)[0]
    off = tape.mul(T_abs, tape.constant(1.0 - np.eye(m)))
    mass = tape.value(off).sum(axis=1) + tape.value(T_cross).sum(axis=1)
    if np.any(mass <= 0):
        i = int(np.flatnonzero(mass <= 0)[0])
        raise SingularSystem(f"propagate_closed: node {i} has no outgoing edges", batch_index=batch_index)
    T_abs, T_cross = _normalize_pair(tape, off, T_cross)
    A = tape.sub(tape.constant(np.eye(m)), T_abs)
    return tape.solve(A, tape.matmul(T_cross, y), batch_index=batch_index)


def propagate_truncated(tape: Tape, T_abs: int, T_cross: int, y: int,
                        steps: int = 20) -> tuple[int, int]:
    """First ``steps`` terms of sum_k T_abs^k T_cross y.

    Returns ``(labels, deficit)`` where ``deficit`` is an ``m x 1`` node holding
    ``1 - row_sum(labels)``: the probability mass not yet absorbed.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    term = tape.matmul(T_cross, y)
    acc = term
    for _ in range(steps - 1):
        term = tape.matmul(T_abs, term)
        acc = tape.add(acc, term)
    m = tape.shape(acc)[0]
    deficit = tape.sub(tape.constant(np.ones((m, 1))), tape.row_sum(acc))
    return acc, deficit


def cycle_loss(tape: Tape, y_hat_s: int, y_s: int) -> int:
    """L1 distance between recovered and original source labels, per source sample."""
    if tape.shape(y_hat_s) != tape.shape(y_s):
        raise ValueError(f"cycle_loss: shapes {tape.shape(y_hat_s)} and {tape.shape(y_s)} differ")
    n = tape.shape(y_s)[0]
    return tape.scale(tape.l1_norm(tape.sub(y_hat_s, y_s)), 1.0 / n)


@dataclass
class CycleResult:
    graph: SimilarityGraph
    y_hat_t: int
    y_hat_s: int
    loss: int
    deficit: int | None = None


def cycle(tape: Tape, F_s: int, F_t: int, sigma: int, y_s: int,
          mode: str = "closed", steps: int = 20, batch_index: int | None = None) -> CycleResult:
    """Source -> target -> source propagation and its cycle loss."""
    g = build_similarity(tape, F_s, F_t, sigma)
    T_tt, T_ts = forward_transition(tape, g)
    T_ss, T_st = reverse_transition(tape, g)
    if mode == "closed":
        y_t = propagate_closed(tape, T_tt, T_ts, y_s, batch_index=batch_index)
        y_back = propagate_closed(tape, T_ss, T_st, y_t, batch_index=batch_index)
        deficit = None
    elif mode == "truncated":
        y_t, _ = propagate_truncated(tape, T_tt, T_ts, y_s, steps)
        y_back, deficit = propagate_truncated(tape, T_ss, T_st, y_t, steps)
    else:
        raise ValueError(f"unknown propagation mode {mode!r}")
    return CycleResult(g, y_t, y_back, cycle_loss(tape, y_back, y_s), deficit)
