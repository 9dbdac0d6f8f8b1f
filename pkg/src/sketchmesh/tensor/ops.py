"""Structural and linear-algebra operations: matmul, reductions, shape
manipulation, gather/scatter, convolution, pooling.

Every backward rule here is written with recorded tensor ops, so all of
these operations support double backward. Convolution is built from a
closed family (pad, gather, matmul, reshape/transpose) whose adjoints are
members of the same family.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core import Tensor, as_tensor, div, mul, record


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    return record(out, "matmul", (a, b),
                  lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    return record(out, "transpose", (a,), lambda g: (transpose(g, inv),))


# ---------------------------------------------------------------------------
# shape

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))
    src = a.shape
    return record(out, "reshape", (a,), lambda g: (reshape(g, src),))


def broadcast_to(a, shape) -> Tensor:
    """Expand ``a`` to ``shape``; adjoint of summation over the new axes."""
    a = as_tensor(a)
    shape = tuple(shape)
    out = Tensor(np.broadcast_to(a.data, shape))
    src = a.shape
    ndiff = len(shape) - len(src)
    padded = (1,) * ndiff + src
    axes = tuple(i for i, (s, t) in enumerate(zip(padded, shape)) if s == 1 and t != 1)
    axes = tuple(range(ndiff)) + tuple(a for a in axes if a >= ndiff)

    def vjp(g):
        r = tsum(g, axes=axes, keepdims=True) if axes else g
        return (reshape(r, src),)

    return record(out, "broadcast_to", (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(tensors)):
            key = [slice(None)] * g.ndim
            key[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            pieces.append(getitem(g, tuple(key)))
        return tuple(pieces)

    return record(out, "concat", tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# gather / scatter (flat-index primitives; adjoints of each other)

def take_flat(a, idx: np.ndarray, out_shape) -> Tensor:
    """out = a.ravel()[idx].reshape(out_shape); idx is a constant index map."""
    a = as_tensor(a)
    out_shape = tuple(out_shape)
    out = Tensor(a.data.reshape(-1)[idx.reshape(-1)].reshape(out_shape))
    src_shape = a.shape
    return record(out, "take_flat", (a,),
                  lambda g: (scatter_add_flat(g, idx, src_shape),))


def scatter_add_flat(g, idx: np.ndarray, out_shape) -> Tensor:
    """Adjoint of take_flat: sum-scatter g into a zero tensor of out_shape."""
    g = as_tensor(g)
    out_shape = tuple(out_shape)
    flat = np.zeros(int(np.prod(out_shape)), dtype=g.data.dtype)
    np.add.at(flat, idx.reshape(-1), g.data.reshape(-1))
    out = Tensor(flat.reshape(out_shape))
    g_shape = g.shape
    return record(out, "scatter_add_flat", (g,),
                  lambda gg: (take_flat(gg, idx, g_shape),))


_GETITEM_IDX_CACHE: dict = {}


def _contains_array(key) -> bool:
    if isinstance(key, np.ndarray):
        return True
    if isinstance(key, tuple):
        return any(isinstance(k, np.ndarray) for k in key)
    return False


def _flat_index_for(shape: tuple, key) -> tuple[np.ndarray, tuple]:
    # array keys repr-truncate, so only slice/int keys are cached
    cacheable = not _contains_array(key)
    cache_key = (shape, repr(key)) if cacheable else None
    if cacheable:
        hit = _GETITEM_IDX_CACHE.get(cache_key)
        if hit is not None:
            return hit
    base = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)
    sel = base[key]
    val = (np.ascontiguousarray(sel), sel.shape)
    if cacheable:
        _GETITEM_IDX_CACHE[cache_key] = val
    return val


def getitem(a, key) -> Tensor:
    """Differentiable basic/advanced indexing (read-only)."""
    a = as_tensor(a)
    idx, out_shape = _flat_index_for(a.shape, key)
    return take_flat(a, idx, out_shape)


def take_rows(a, rows: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor by an integer row-index array."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"take_rows expects a 2-D tensor, got {a.shape}")
    ncol = a.shape[1]
    idx = (rows.astype(np.int64)[:, None] * ncol + np.arange(ncol, dtype=np.int64)[None, :])
    return take_flat(a, idx, (len(rows), ncol))


def scatter_add_rows(g, rows: np.ndarray, num_rows: int) -> Tensor:
    """Sum rows of ``g`` into a (num_rows, ncol) zero tensor at ``rows``."""
    g = as_tensor(g)
    ncol = g.shape[1]
    idx = (rows.astype(np.int64)[:, None] * ncol + np.arange(ncol, dtype=np.int64)[None, :])
    return scatter_add_flat(g, idx, (num_rows, ncol))


# ---------------------------------------------------------------------------
# reductions

def tsum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes_t = tuple(range(a.ndim))
    elif isinstance(axes, int):
        axes_t = (axes,)
    else:
        axes_t = tuple(axes)
    out = Tensor(a.data.sum(axis=axes_t if axes_t else None, keepdims=keepdims))
    src = a.shape
    kept = tuple(1 if i in axes_t else s for i, s in enumerate(src))

    def vjp(g):
        gk = g if keepdims or not src else reshape(g, kept)
        return (broadcast_to(gk, src) if src else gk,)

    return record(out, "sum", (a,), vjp)


def tmean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        n = a.size
    elif isinstance(axes, int):
        n = a.shape[axes]
    else:
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axes=axes, keepdims=keepdims), 1.0 / n)


def dot(a, b) -> Tensor:
    """Sum of the elementwise product (scalar output)."""
    return tsum(mul(a, b))


# ---------------------------------------------------------------------------
# padding / cropping of the two trailing dims

def pad2d(a, pad: int) -> Tensor:
    a = as_tensor(a)
    if pad == 0:
        return a
    width = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
    out = Tensor(np.pad(a.data, width))
    return record(out, "pad2d", (a,), lambda g: (crop2d(g, pad),))


def crop2d(a, pad: int) -> Tensor:
    a = as_tensor(a)
    if pad == 0:
        return a
    key = (Ellipsis, slice(pad, a.shape[-2] - pad), slice(pad, a.shape[-1] - pad))
    out = Tensor(np.ascontiguousarray(a.data[key]))
    return record(out, "crop2d", (a,), lambda g: (pad2d(g, pad),))


# ---------------------------------------------------------------------------
# 2x average pooling and its adjoint

def avg_pool2x(a) -> Tensor:
    """Halve the two trailing dims; each output is the mean of a 2x2 block."""
    a = as_tensor(a)
    h, w = a.shape[-2], a.shape[-1]
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x requires even trailing extents, got {a.shape}")
    lead = a.shape[:-2]
    r = a.data.reshape(lead + (h // 2, 2, w // 2, 2))
    out = Tensor(r.mean(axis=(-3, -1)))
    return record(out, "avg_pool2x", (a,),
                  lambda g: (mul(upsample2x(g), 0.25),))


def upsample2x(a) -> Tensor:
    """Nearest-neighbour 2x upsampling of the two trailing dims."""
    a = as_tensor(a)
    out = Tensor(np.repeat(np.repeat(a.data, 2, axis=-2), 2, axis=-1))
    return record(out, "upsample2x", (a,),
                  lambda g: (mul(avg_pool2x(g), 4.0),))


# ---------------------------------------------------------------------------
# convolution (cross-correlation) via windowing + matmul

def im2col_cb(x, k: int, stride: int) -> Tensor:
    """(C,B,Hp,Wp) -> patch matrix (C*k*k, B*Ho*Wo); adjoint of col2im_cb."""
    x = as_tensor(x)
    c, b, hp, wp = x.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]
    cols = win.transpose(0, 4, 5, 1, 2, 3).reshape(c * k * k, b * ho * wo)
    out = Tensor(cols)
    shape = (c, b, hp, wp)
    return record(out, "im2col", (x,), lambda g: (col2im_cb(g, shape, k, stride),))


def col2im_cb(g, in_shape, k: int, stride: int) -> Tensor:
    """Sum-scatter of patch columns back onto the (C,B,Hp,Wp) grid."""
    g = as_tensor(g)
    c, b, hp, wp = in_shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    garr = g.data.reshape(c, k, k, b, ho, wo)
    acc = np.zeros((c, b, hp, wp))
    for di in range(k):
        for dj in range(k):
            acc[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += garr[:, di, dj]
    out = Tensor(acc)
    return record(out, "col2im", (g,), lambda gg: (im2col_cb(gg, k, stride),))


def conv2d_cb(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation in channel-first layout: (C_in,B,H,W) with a
    (C_out,C_in,k,k) kernel -> (C_out,B,Ho,Wo). This layout keeps the whole
    conv stack free of large transposes."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    cin, b, h, w = x.shape
    cout, cin_w, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square with odd extent, got {k}x{k2}")
    if cin != cin_w:
        raise ValueError(f"conv2d: input channels {cin} != kernel channels {cin_w}")
    if h < k or w < k:
        raise ValueError(f"conv2d: spatial extents {h}x{w} smaller than kernel {k}")
    if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
        raise ValueError(
            f"conv2d: non-integral output extent for input {h}x{w}, "
            f"kernel {k}, stride {stride}, pad {pad}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = pad2d(x, pad)
    cols = im2col_cb(xp, k, stride)
    wmat = reshape(weight, (cout, cin * k * k))
    out = reshape(matmul(wmat, cols), (cout, b, ho, wo))
    if bias is not None:
        bias = as_tensor(bias)
        out = out + broadcast_to(reshape(bias, (cout, 1, 1, 1)), out.shape)
    return out


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (C_in,H,W) or (B,C_in,H,W) input with a
    (C_out,C_in,k,k) kernel. The output extent (H+2*pad-k)/stride+1 must be
    integral."""
    x = as_tensor(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or as_tensor(weight).ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input/kernel, got {x.shape}")
    out = conv2d_cb(transpose(x, (1, 0, 2, 3)), weight, bias, stride, pad)
    out = transpose(out, (1, 0, 2, 3))
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def linear(x, weight, bias=None) -> Tensor:
    """x (B,K) @ weight (K,N) + bias (N,)."""
    out = matmul(x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + broadcast_to(reshape(bias, (1, bias.size)), out.shape)
    return out


def l2_normalize(x, eps: float = 1e-12) -> Tensor:
    """Normalize each row of a (B,K) tensor to unit Euclidean norm."""
    sq = tsum(mul(x, x), axes=1, keepdims=True)
    inv = div(1.0, tsqrt_guarded(sq, eps))
    return mul(x, broadcast_to(inv, x.shape))


def tsqrt_guarded(x, eps: float) -> Tensor:
    from .core import tsqrt

    return tsqrt(x + eps)
