"""Reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the fixed encoder/decoder architectures in this
package: a ``Tensor`` wrapping an ndarray, a handful of differentiable ops,
and ``backward()`` walking the tape. Gradients accumulate into ``.grad`` of
every node they reach; parameters read theirs after the walk. All ops are
deterministic, so identical inputs give bit-identical outputs and gradients.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np


class DimMismatch(ValueError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction (inference / finite-difference probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_bwd", "const")

    def __init__(self, data, parents=(), bwd=None, const=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.const = const  # constants opt out of gradient accumulation
        if _GRAD_ENABLED:
            self._parents = parents
            self._bwd = bwd
        else:
            self._parents = ()
            self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def backward(self):
        """Accumulate d(self)/d(node) into ``.grad`` of every tape ancestor."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # Light operator sugar; heavy lifting is in the module functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, const=True)


def _accum(t: Tensor, g: np.ndarray):
    # Accumulation always reassigns (never mutates in place), so sharing
    # array objects between nodes is safe. Constants (wrapped plain arrays)
    # receive no gradient.
    if t.const:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if not a.const:
            _accum(a, _unbroadcast(g, a.data.shape))
        if not b.const:
            _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if not a.const:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if not b.const:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if not a.const:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if not b.const:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return Tensor(out_data, (a, b), bwd)


def affine(x, w, b) -> Tensor:
    """Fused x @ w + b (one tape node per linear layer)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.shape[-1] != w.data.shape[0]:
        raise DimMismatch(f"affine {x.data.shape} @ {w.data.shape}")
    out_data = x.data @ w.data + b.data

    def bwd(g):
        if not x.const:
            _accum(x, g @ w.data.T)
        _accum(w, x.data.reshape(-1, x.data.shape[-1]).T
               @ g.reshape(-1, g.shape[-1]))
        _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return Tensor(out_data, (x, w, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return Tensor(out_data, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, np.transpose(g, inv))

    return Tensor(out_data, (a,), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return Tensor(out_data, (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.data.shape).copy())

    return Tensor(out_data, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return Tensor(out_data, (a,), bwd)


def silu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = x * s

    def bwd(g):
        _accum(a, g * (s + x * s * (1.0 - s)))

    return Tensor(out_data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum(a, g * (a.data > 0))

    return Tensor(out_data, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax: slices along ``axis`` sum to 1 within 1e-12."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return Tensor(out_data, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def bwd(g):
        _accum(a, g - soft * g.sum(axis=axis, keepdims=True))

    return Tensor(out_data, (a,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather; gradient scatters back with repeat accumulation."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out_data = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        _accum(table, gt)

    return Tensor(out_data, (table,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = gamma.data * xhat + beta.data

    def bwd(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, (dxhat - m1 - xhat * m2) * inv)
        red = tuple(range(g.ndim - 1))
        _accum(gamma, (g * xhat).sum(axis=red))
        _accum(beta, g.sum(axis=red))

    return Tensor(out_data, (x, gamma, beta), bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return x
    x = _as_tensor(x)
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out_data = x.data * keep

    def bwd(g):
        _accum(x, g * keep)

    return Tensor(out_data, (x,), bwd)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """1-D convolution over time with ceil-length padding.

    x: [T, Cin], w: [k, Cin, Cout], b: [Cout]. Output length is
    ceil(T / stride); total padding (out-1)*stride + k - T is split
    left-heavy-last (left = pad//2, right = rest).
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    T, cin = x.data.shape
    k, cin_w, cout = w.data.shape
    if cin != cin_w:
        raise DimMismatch(f"conv1d channels {cin} vs {cin_w}")
    out_len = -(-T // stride)
    pad_total = max((out_len - 1) * stride + k - T, 0)
    pad_l = pad_total // 2
    pad_r = pad_total - pad_l
    xp = np.pad(x.data, ((pad_l, pad_r), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)[::stride]
    # windows: [out_len, Cin, k] -> [out_len, k*Cin]
    cols = windows.transpose(0, 2, 1).reshape(out_len, k * cin)
    w2 = w.data.reshape(k * cin, cout)
    out_data = cols @ w2 + b.data

    def bwd(g):
        _accum(b, g.sum(axis=0))
        _accum(w, (cols.T @ g).reshape(k, cin, cout))
        dcols = (g @ w2.T).reshape(out_len, k, cin)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[j:j + out_len * stride:stride] += dcols[:, j, :]
        _accum(x, dxp[pad_l:pad_l + T])

    return Tensor(out_data, (x, w, b), bwd)


def depthwise_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-channel 1-D convolution, stride 1, same-length output.

    x: [T, C], w: [k, C], b: [C]. Padding is symmetric (k odd expected).
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    T, c = x.data.shape
    k, c_w = w.data.shape
    if c != c_w:
        raise DimMismatch(f"depthwise_conv1d channels {c} vs {c_w}")
    pad_l = (k - 1) // 2
    pad_r = k - 1 - pad_l
    xp = np.pad(x.data, ((pad_l, pad_r), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # [T, C, k]
    out_data = np.einsum("tck,kc->tc", windows, w.data) + b.data

    def bwd(g):
        _accum(b, g.sum(axis=0))
        _accum(w, np.einsum("tck,tc->kc", windows, g))
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[j:j + T] += g * w.data[j]
        _accum(x, dxp[pad_l:pad_l + T])

    return Tensor(out_data, (x, w, b), bwd)


def segment_mean(x: Tensor, groups) -> Tensor:
    """Mean-pool contiguous row groups. ``groups`` is a sequence of
    (start, end) pairs partitioning [0, T). Backward distributes each
    group's gradient equally to its members."""
    x = _as_tensor(x)
    sizes = np.array([e - s for s, e in groups], dtype=np.float64)
    out_data = np.stack([x.data[s:e].mean(axis=0) for s, e in groups])

    def bwd(g):
        gx = np.empty_like(x.data)
        for gi, (s, e) in enumerate(groups):
            gx[s:e] = g[gi] / sizes[gi]
        _accum(x, gx)

    return Tensor(out_data, (x,), bwd)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         causal: bool = False, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention with head splitting.

    q: [Tq, d], k/v: [Tk, d]; d must divide evenly into ``heads``. With
    ``causal`` the output at position i is independent of k/v rows > i.
    ``mask`` is an optional boolean [Tq, Tk] array, True where attention is
    allowed.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    tq, d = q.data.shape
    tk, dk = k.data.shape
    if d != dk or v.data.shape != (tk, d):
        raise DimMismatch(f"attention shapes q{q.data.shape} k{k.data.shape} v{v.data.shape}")
    if d % heads != 0:
        raise DimMismatch(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads

    qh = transpose(reshape(q, (tq, heads, dh)), (1, 0, 2))
    kh = transpose(reshape(k, (tk, heads, dh)), (1, 0, 2))
    vh = transpose(reshape(v, (tk, heads, dh)), (1, 0, 2))

    scores = mul(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
    bias = np.zeros((tq, tk))
    if causal:
        if tq != tk:
            raise DimMismatch("causal attention requires square score matrix")
        rows, cols = np.triu_indices(tq, k=1)
        bias[rows, cols] = -1e30
    if mask is not None:
        bias = bias + np.where(mask, 0.0, -1e30)
    if bias.any():
        scores = add(scores, bias)
    att = softmax(scores, axis=-1)
    out = matmul(att, vh)
    return reshape(transpose(out, (1, 0, 2)), (tq, d))
