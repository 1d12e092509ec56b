"""CTC loss (log-space forward-backward) and greedy decoding.

The blank symbol is the last class. ``ctc_loss`` is a fused tape operation:
its gradient with respect to the logits comes straight from the alpha/beta
recursions rather than from differentiating the recursion step by step.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numba import njit

from .errors import ContractError, InfeasibleAlignmentError
from .tensorcore import Tensor, as_tensor, record

NEG_INF = -np.inf


@njit(cache=True)
def _lse2(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def _forward_backward(logp, ext):
    T = logp.shape[0]
    S = ext.shape[0]
    la = np.full((T, S), -np.inf)
    lb = np.full((T, S), -np.inf)
    la[0, 0] = logp[0, ext[0]]
    if S > 1:
        la[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            v = la[t - 1, s]
            if s >= 1:
                v = _lse2(v, la[t - 1, s - 1])
            if s >= 2 and ext[s] != ext[s - 2]:
                v = _lse2(v, la[t - 1, s - 2])
            if v != -np.inf:
                la[t, s] = v + logp[t, ext[s]]
    lb[T - 1, S - 1] = logp[T - 1, ext[S - 1]]
    if S > 1:
        lb[T - 1, S - 2] = logp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            v = lb[t + 1, s]
            if s + 1 < S:
                v = _lse2(v, lb[t + 1, s + 1])
            if s + 2 < S and ext[s] != ext[s + 2]:
                v = _lse2(v, lb[t + 1, s + 2])
            if v != -np.inf:
                lb[t, s] = v + logp[t, ext[s]]
    return la, lb


def _extend(target: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = np.asarray(target, dtype=np.int64)
    return ext


def min_frames(target: Sequence[int]) -> int:
    """Shortest input that can emit ``target``: one frame per label plus a blank between repeats."""
    reps = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + reps


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def ctc_nll_and_grad(logits: np.ndarray, target: Sequence[int]) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``target`` and its gradient w.r.t. the (T, C) logits."""
    T, C = logits.shape
    blank = C - 1
    target = [int(t) for t in target]
    for t in target:
        if not 0 <= t < blank:
            raise ContractError(f"target label {t} out of range for {C} classes (blank={blank})")
    if min_frames(target) > T:
        raise InfeasibleAlignmentError(
            f"target of length {len(target)} needs {min_frames(target)} frames, got {T}")
    logp = log_softmax(logits)
    ext = _extend(target, blank)
    la, lb = _forward_backward(logp, ext)
    S = ext.shape[0]
    ll = _lse2(la[T - 1, S - 1], la[T - 1, S - 2]) if S > 1 else la[T - 1, S - 1]
    # occupancy: alpha*beta double counts the emission at t
    occ = np.exp(la + lb - logp[:, ext] - ll)
    post = np.zeros((T, C))
    np.add.at(post, (slice(None), ext), occ)
    grad = np.exp(logp) - post
    return -float(ll), grad


def ctc_loss(logits, targets) -> Tensor:
    """CTC negative log-likelihood.

    ``logits`` is (T, C) with ``targets`` a single label sequence, or
    (B, T, C) with ``targets`` a list of B sequences; the batched form
    returns the mean over the batch.
    """
    logits = as_tensor(logits)
    x = logits.data
    if x.ndim == 2:
        nll, g = ctc_nll_and_grad(x, targets)
        return record(np.asarray(nll), (logits,), lambda go: (float(go) * g,))
    if x.ndim != 3 or len(targets) != x.shape[0]:
        raise ContractError(f"ctc_loss: logits {x.shape} vs {len(targets)} targets")
    B = x.shape[0]
    total = 0.0
    grads = np.empty_like(x)
    for b in range(B):
        nll, grads[b] = ctc_nll_and_grad(x[b], targets[b])
        total += nll
    return record(np.asarray(total / B), (logits,), lambda go: (float(go) / B * grads,))


def greedy_decode(logits) -> list[int]:
    """Per-frame argmax, merge repeats, drop blanks (blank = last class).

    Ties go to the lowest class index (numpy argmax semantics).
    """
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    blank = x.shape[-1] - 1
    best = np.argmax(x, axis=-1)
    out = []
    prev = -1
    for k in best:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out
