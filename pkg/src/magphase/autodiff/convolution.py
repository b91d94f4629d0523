"""Convolution primitives: 2-D, dilated 1-D, transposed, and subsampling.

All convolutions are cross-correlations with zero "same" padding: the
output spatial length is ``ceil(in / stride)`` and padding is split
floor/ceil around the input. Forward passes lower to a single GEMM via
im2col; backward scatters column gradients back with per-tap slice adds.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, _accumulate, _make, as_tensor


def _same_pad(in_len: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out_len = -(-in_len // stride)
    total = max((out_len - 1) * stride + kernel - in_len, 0)
    return out_len, total // 2, total - total // 2


def conv2d(x, weight, bias=None, stride=(1, 1)):
    """Batched 2-D convolution, input (B, C, H, W), weight (O, C, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects (B,C,H,W) input and (O,C,kh,kw) weight")
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if C != Cw:
        raise ShapeError(f"input channels {C} != weight channels {Cw}")
    sh, sw = stride
    Hout, ph0, ph1 = _same_pad(H, kh, sh)
    Wout, pw0, pw1 = _same_pad(W, kw, sw)
    if Hout < 1 or Wout < 1:
        raise ShapeError("conv2d produced an empty output")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)))
    sb, sc, srow, scol = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, C, kh, kw, Hout, Wout),
        strides=(sb, sc, srow, scol, srow * sh, scol * sw),
    )
    cols = view.reshape(B, C * kh * kw, Hout * Wout)
    w2 = weight.data.reshape(O, C * kh * kw)
    out = np.matmul(w2, cols).reshape(B, O, Hout, Wout)

    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, O, 1, 1)
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(B, O, Hout * Wout)
        if weight.requires_grad:
            gw = np.matmul(g2, cols.swapaxes(1, 2)).sum(axis=0).reshape(weight.shape)
            _accumulate(weight, gw, fresh=True)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)), fresh=True)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(B, C, kh, kw, Hout, Wout)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + Hout * sh : sh, j : j + Wout * sw : sw] += gcols[:, :, i, j]
            if ph0 == ph1 == pw0 == pw1 == 0:
                _accumulate(x, gxp, fresh=True)
            else:
                gx = np.ascontiguousarray(gxp[:, :, ph0 : ph0 + H, pw0 : pw0 + W])
                _accumulate(x, gx, fresh=True)

    return _make(out, tuple(parents), bw)


def conv1d_dilated(x, weight, bias=None, dilation=1):
    """Dilated 1-D convolution along the last axis, input (B, C, T)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError("conv1d_dilated expects (B,C,T) input and (O,C,k) weight")
    B, C, T = x.shape
    O, Cw, k = weight.shape
    if C != Cw:
        raise ShapeError(f"input channels {C} != weight channels {Cw}")
    span = dilation * (k - 1)
    p0, p1 = span // 2, span - span // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p0, p1)))
    sb, sc, st = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(B, C, k, T), strides=(sb, sc, st * dilation, st)
    )
    cols = view.reshape(B, C * k, T)
    w2 = weight.data.reshape(O, C * k)
    out = np.matmul(w2, cols)

    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, O, 1)
        parents.append(bias)

    def bw(g):
        if weight.requires_grad:
            gw = np.matmul(g, cols.swapaxes(1, 2)).sum(axis=0).reshape(weight.shape)
            _accumulate(weight, gw, fresh=True)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2)), fresh=True)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g).reshape(B, C, k, T)
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[:, :, i * dilation : i * dilation + T] += gcols[:, :, i]
            if p0 == p1 == 0:
                _accumulate(x, gxp, fresh=True)
            else:
                _accumulate(x, np.ascontiguousarray(gxp[:, :, p0 : p0 + T]), fresh=True)

    return _make(out, tuple(parents), bw)


def subsample(x, stride, axis=2):
    """Take every ``stride``-th entry along ``axis`` (1x1 pooling)."""
    x = as_tensor(x)
    key = [slice(None)] * x.ndim
    key[axis] = slice(None, None, stride)
    key = tuple(key)

    def bw(g):
        full = np.zeros_like(x.data)
        full[key] = g
        _accumulate(x, full, fresh=True)

    return _make(x.data[key], (x,), bw)


def avg_pool(x, stride, axis=2):
    """1x1 average pooling with a stride: pure subsampling along ``axis``."""
    if -(-x.shape[axis] // stride) < 1:
        raise ShapeError("avg_pool produced an empty output")
    return subsample(x, stride, axis=axis)


def zero_upsample(x, stride, target_len, axis=2):
    """Insert ``stride - 1`` zeros between entries along ``axis``.

    ``target_len`` must satisfy ``ceil(target_len / stride) == in_len``,
    i.e. the op inverts the shape map of :func:`subsample`.
    """
    x = as_tensor(x)
    in_len = x.shape[axis]
    if -(-target_len // stride) != in_len:
        raise ShapeError(
            f"target length {target_len} does not subsample to {in_len} at stride {stride}"
        )
    shape = list(x.shape)
    shape[axis] = target_len
    key = [slice(None)] * x.ndim
    key[axis] = slice(None, None, stride)
    key = tuple(key)
    out = np.zeros(shape, dtype=x.data.dtype)
    out[key] = x.data

    def bw(g):
        _accumulate(x, np.ascontiguousarray(g[key]), fresh=True)

    return _make(out, (x,), bw)


def transposed_conv2d(x, weight, bias=None, stride=1, target_len=None):
    """Transposed convolution expanding the H axis of (B, C, H, W) input.

    Implemented as zero-insertion upsampling followed by a stride-1 same
    convolution; ``target_len`` resolves the usual transposed-conv
    output-size ambiguity (pass the length of the mirrored encoder
    stage).
    """
    x = as_tensor(x)
    if target_len is None:
        target_len = stride * (x.shape[2] - 1) + 1
    up = zero_upsample(x, stride, target_len, axis=2) if stride > 1 else x
    return conv2d(up, weight, bias=bias, stride=(1, 1))
