"""Sequence loss kernels: label-smoothed cross-entropy and CTC.

Both are tape primitives with analytic gradients (CTC from the
forward-backward trellis rather than generic autodiff, keeping memory at
O(T * target length)).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _accum

NEG_INF = -np.inf


class IndexOutOfRange(ValueError):
    pass


class TargetTooLong(ValueError):
    """No valid CTC alignment: T < |target| + number of repeated symbols."""


def label_smoothed_ce(logits: Tensor, targets, smoothing: float,
                      pad_index: int | None = None) -> Tensor:
    """Mean over non-pad rows of -sum_v q(v) log p(v),
    q = (1 - smoothing) * onehot(target) + smoothing / V.

    logits: [T, V]; targets: int sequence of length T. Rows whose target
    equals ``pad_index`` are excluded from the mean.
    """
    if not (0.0 <= smoothing < 1.0):
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    targets = np.asarray(targets, dtype=np.int64)
    t, v = logits.data.shape
    if targets.shape != (t,):
        raise IndexOutOfRange(f"targets shape {targets.shape} vs logits rows {t}")
    keep = np.ones(t, dtype=bool) if pad_index is None else targets != pad_index
    if np.any((targets[keep] < 0) | (targets[keep] >= v)):
        raise IndexOutOfRange("target id outside [0, V)")
    n = int(keep.sum())
    if n == 0:
        return Tensor(np.float64(0.0))

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    q = np.full((t, v), smoothing / v)
    q[np.arange(t), np.clip(targets, 0, v - 1)] += 1.0 - smoothing
    row_loss = -(q * logp).sum(axis=-1)
    loss = row_loss[keep].mean()

    soft = np.exp(logp)

    def bwd(g):
        dlogits = (soft - q) * (keep[:, None] / n)
        _accum(logits, g * dlogits)

    return Tensor(np.float64(loss), (logits,), bwd)


def _logsumexp2(a, b):
    m = np.maximum(a, b)
    safe = m != NEG_INF
    m0 = np.where(safe, m, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(safe, m + np.log(np.exp(a - m0) + np.exp(b - m0)), NEG_INF)
    return out


def _shift(arr: np.ndarray, by: int) -> np.ndarray:
    """arr shifted right by ``by`` positions, NEG_INF filled."""
    out = np.full_like(arr, NEG_INF)
    if by < len(arr):
        out[by:] = arr[: len(arr) - by]
    return out


def _shift_left(arr: np.ndarray, by: int) -> np.ndarray:
    out = np.full_like(arr, NEG_INF)
    if by < len(arr):
        out[: len(arr) - by] = arr[by:]
    return out


def ctc_required_length(target) -> int:
    target = np.asarray(target, dtype=np.int64)
    repeats = int((target[1:] == target[:-1]).sum()) if len(target) > 1 else 0
    return len(target) + repeats


def ctc_loss(logits: Tensor, target, blank: int | None = None) -> Tensor:
    """Negative log of the total probability over all CTC alignments.

    logits: [T, V+1] with the blank as the last class unless ``blank`` is
    given. Forward-backward recursion in log space; the gradient w.r.t. the
    logits is softmax(logits) minus the per-frame symbol occupancy.
    """
    t, vplus = logits.data.shape
    blank_id = vplus - 1 if blank is None else blank
    target = np.asarray(target, dtype=np.int64)
    if np.any((target < 0) | (target >= vplus)) or np.any(target == blank_id):
        raise IndexOutOfRange("CTC target id outside label range or equal to blank")
    if ctc_required_length(target) > t:
        raise TargetTooLong(
            f"target needs {ctc_required_length(target)} frames, input has {t}"
        )

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    length = len(target)
    s_len = 2 * length + 1
    ext = np.full(s_len, blank_id, dtype=np.int64)
    ext[1::2] = target
    # skip_ok[s]: transition s-2 -> s allowed (distinct non-blank labels)
    skip_ok = np.zeros(s_len, dtype=bool)
    for s in range(2, s_len):
        skip_ok[s] = ext[s] != blank_id and ext[s] != ext[s - 2]

    # alpha[t, s] includes emissions 0..t
    alpha = np.full((t, s_len), NEG_INF)
    alpha[0, 0] = lp[0, blank_id]
    if s_len > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for i in range(1, t):
        stay = alpha[i - 1]
        prev1 = _shift(alpha[i - 1], 1)
        prev2 = np.where(skip_ok, _shift(alpha[i - 1], 2), NEG_INF)
        alpha[i] = _logsumexp2(_logsumexp2(stay, prev1), prev2) + lp[i, ext]

    tail = alpha[t - 1, s_len - 1]
    if s_len > 1:
        tail = np.logaddexp(tail, alpha[t - 1, s_len - 2])
    log_p = tail
    loss = -log_p

    # beta[t, s] excludes the emission at t (beta[T-1, end states] = 0)
    beta = np.full((t, s_len), NEG_INF)
    beta[t - 1, s_len - 1] = 0.0
    if s_len > 1:
        beta[t - 1, s_len - 2] = 0.0
    skip_from = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        skip_from[:-2] = skip_ok[2:]
    for i in range(t - 2, -1, -1):
        nxt = beta[i + 1] + lp[i + 1, ext]
        nxt1 = _shift_left(nxt, 1)
        nxt2 = np.where(skip_from, _shift_left(nxt, 2), NEG_INF)
        beta[i] = _logsumexp2(_logsumexp2(nxt, nxt1), nxt2)

    # occupancy gamma[t, k] = P(symbol k emitted at frame t | target)
    post = alpha + beta - log_p  # log P(state s at frame t | target)
    gamma = np.zeros((t, vplus))
    with np.errstate(under="ignore"):
        occ = np.exp(post)
    for s in range(s_len):
        gamma[:, ext[s]] += occ[:, s]

    soft = np.exp(lp)

    def bwd(g):
        _accum(logits, g * (soft - gamma))

    return Tensor(np.float64(loss), (logits,), bwd)
