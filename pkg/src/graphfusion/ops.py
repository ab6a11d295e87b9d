"""Differentiable operations over :class:`~graphfusion.tensor.Tensor`.

Every op validates shapes up front, computes its forward result in float32,
and registers a backward closure via :func:`record_op`.  Image tensors use
the layout (batch, channels, height, width).  Binary elementwise ops accept
equal shapes or a limited broadcast: same rank with each dimension either
matching or 1 on one side (this covers per-channel weights of shape
(N, C, 1, 1) against feature maps).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import ShapeError, Tensor, accumulate, record_op


def _require_4d(name: str, t: Tensor) -> None:
    if t.ndim != 4:
        raise ShapeError(f"{name}: expected a 4-d (N,C,H,W) tensor, got shape {t.shape}")


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Read-only sliding windows of shape (N, C, oh, ow, kh, kw)."""
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    return as_strided(
        x,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding.

    ``kernel`` has shape (out_ch, in_ch, kh, kw), ``bias`` shape (out_ch,).
    Output spatial size is ``(H + 2*padding - kh) // stride + 1``; with
    ``padding = (k - 1) // 2`` and stride 1 an odd kernel preserves size.
    """
    _require_4d("conv2d", x)
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-d, got shape {kernel.shape}")
    n, c, h, w = x.shape
    oc, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels (dim 1) but kernel expects {kc}")
    if bias.shape != (oc,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({oc},)")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {padding})")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: padded input {h + 2 * padding}x{w + 2 * padding} smaller than kernel {kh}x{kw}"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    hp, wp = h + 2 * padding, w + 2 * padding

    if stride == 1:
        oh = hp - kh + 1
        ow = wp - kw + 1
        if kh == 1 and kw == 1:
            out = np.tensordot(kernel.data[:, :, 0, 0], xp, axes=([1], [1]))
            out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
        else:
            # One channel-contraction GEMM per kernel row over full-width
            # slabs; the slab operands stay contiguous, and the column
            # offset becomes a slice of the result.
            out = np.zeros((n, oc, oh, ow), dtype=np.float32)
            for i in range(kh):
                slab = np.tensordot(
                    kernel.data[:, :, i, :], xp[:, :, i : i + oh, :], axes=([1], [1])
                )
                for j in range(kw):
                    out += slab[:, j, :, :, j : j + ow].transpose(1, 0, 2, 3)
        out += bias.data.reshape(1, oc, 1, 1)

        def backward(g: np.ndarray) -> None:
            if bias.requires_grad:
                accumulate(bias, g.sum(axis=(0, 2, 3)))
            if kernel.requires_grad:
                gk = np.empty((oc, c, kh, kw), dtype=np.float32)
                for i in range(kh):
                    for j in range(kw):
                        gk[:, :, i, j] = np.tensordot(
                            g, xp[:, :, i : i + oh, j : j + ow], axes=([0, 2, 3], [0, 2, 3])
                        )
                accumulate(kernel, gk)
            if x.requires_grad:
                # (c, kh, kw, n, oh, ow): each kernel tap's contribution,
                # scattered back onto the padded input by offset.
                taps = np.tensordot(kernel.data, g, axes=([0], [1]))
                dxp = np.zeros((n, c, hp, wp), dtype=np.float32)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i : i + oh, j : j + ow] += taps[:, i, j].transpose(1, 0, 2, 3)
                accumulate(x, dxp[:, :, padding : padding + h, padding : padding + w])

        return record_op(out, (x, kernel, bias), backward)

    win = _windows(xp, kh, kw, stride)
    out = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += bias.data.reshape(1, oc, 1, 1)
    oh, ow = out.shape[2], out.shape[3]

    def backward(g: np.ndarray) -> None:
        if bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            accumulate(kernel, gk)
        if x.requires_grad:
            # Full correlation of the stride-dilated output gradient with the
            # spatially flipped kernel gives the padded-input gradient.
            hd = (oh - 1) * stride + 1
            wd = (ow - 1) * stride + 1
            gd = np.zeros((n, oc, hd, wd), dtype=np.float32)
            gd[:, :, ::stride, ::stride] = g
            gp = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            win2 = _windows(gp, kh, kw, 1)
            kflip = kernel.data[:, :, ::-1, ::-1]
            dxp = np.tensordot(win2, kflip, axes=([1, 4, 5], [0, 2, 3]))
            dxp = dxp.transpose(0, 3, 1, 2)
            if dxp.shape[2] != hp or dxp.shape[3] != wp:
                # Stride leftover: trailing rows/cols no window reached.
                full = np.zeros((n, c, hp, wp), dtype=np.float32)
                full[:, :, : dxp.shape[2], : dxp.shape[3]] = dxp
                dxp = full
            accumulate(x, dxp[:, :, padding : padding + h, padding : padding + w])

    return record_op(out, (x, kernel, bias), backward)


def _check_pool_args(name: str, x: Tensor, window: int, stride: int, padding: int) -> None:
    _require_4d(name, x)
    if window < 1 or stride < 1:
        raise ShapeError(f"{name}: window and stride must be positive, got ({window}, {stride})")
    if padding < 0 or padding >= window:
        raise ShapeError(f"{name}: padding must satisfy 0 <= padding < window, got {padding}")
    h, w = x.shape[2], x.shape[3]
    if h + 2 * padding < window or w + 2 * padding < window:
        raise ShapeError(f"{name}: padded input {h}x{w} smaller than window {window}")


def maxpool2d(x: Tensor, window: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling; ties resolve to the first maximum in row-major scan order."""
    _check_pool_args("maxpool2d", x, window, stride, padding)
    n, c, h, w = x.shape
    if padding:
        # -inf padding: padded cells can never win the max.
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=np.float32(-np.inf))
    else:
        xp = x.data
    win = _windows(xp, window, window, stride)
    flat = win.reshape(win.shape[:4] + (window * window,))
    arg = np.argmax(flat, axis=4)
    out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
    oh, ow = out.shape[2], out.shape[3]

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        dxp = np.zeros(xp.shape, dtype=np.float32)
        for idx in range(window * window):
            mask = arg == idx
            if not mask.any():
                continue
            i, j = divmod(idx, window)
            dxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += g * mask
        if padding:
            dxp = dxp[:, :, padding : padding + h, padding : padding + w]
        accumulate(x, dxp)

    return record_op(np.ascontiguousarray(out), (x,), backward)


def avgpool2d(x: Tensor, window: int, stride: int, padding: int = 0) -> Tensor:
    """Average pooling; padded cells are excluded from each window's divisor."""
    _check_pool_args("avgpool2d", x, window, stride, padding)
    n, c, h, w = x.shape
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    win = _windows(xp, window, window, stride)
    sums = win.sum(axis=(4, 5))
    oh, ow = sums.shape[2], sums.shape[3]
    # Valid (non-pad) cell count per window, purely a function of geometry.
    rows = np.minimum(np.arange(oh) * stride + window, h + padding) - np.maximum(
        np.arange(oh) * stride, padding
    )
    cols = np.minimum(np.arange(ow) * stride + window, w + padding) - np.maximum(
        np.arange(ow) * stride, padding
    )
    counts = (rows[:, None] * cols[None, :]).astype(np.float32)
    out = sums / counts

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        gshare = g / counts
        dxp = np.zeros(xp.shape, dtype=np.float32)
        for i in range(window):
            for j in range(window):
                dxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += gshare
        if padding:
            dxp = dxp[:, :, padding : padding + h, padding : padding + w]
        accumulate(x, dxp)

    return record_op(out, (x,), backward)


def adaptive_avgpool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Average pooling onto an ``out_h`` x ``out_w`` grid of near-equal bins.

    Bin ``i`` along a dimension of size ``s`` covers rows
    ``floor(i*s/out) .. ceil((i+1)*s/out) - 1``; bins may overlap by one row
    when sizes do not divide evenly.
    """
    _require_4d("adaptive_avgpool2d", x)
    n, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"adaptive_avgpool2d: output grid must be positive, got ({out_h}, {out_w})")
    if out_h > h or out_w > w:
        raise ShapeError(
            f"adaptive_avgpool2d: output grid ({out_h}, {out_w}) exceeds input ({h}, {w})"
        )

    def bounds(size: int, out: int) -> list[tuple[int, int]]:
        return [(size * i // out, -(-size * (i + 1) // out)) for i in range(out)]

    rb = bounds(h, out_h)
    cb = bounds(w, out_w)
    out = np.empty((n, c, out_h, out_w), dtype=np.float32)
    for i, (r0, r1) in enumerate(rb):
        for j, (c0, c1) in enumerate(cb):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rb):
            for j, (c0, c1) in enumerate(cb):
                cnt = (r1 - r0) * (c1 - c0)
                dx[:, :, r0:r1, c0:c1] += g[:, :, i : i + 1, j : j + 1] / np.float32(cnt)
        accumulate(x, dx)

    return record_op(out, (x,), backward)


def global_avgpool(x: Tensor) -> Tensor:
    """Spatial mean per channel, shape (N, C, 1, 1)."""
    return adaptive_avgpool2d(x, 1, 1)


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear upsampling.

    Output pixel ``o`` samples input coordinate ``o * (in - 1) / (out - 1)``
    (coordinate 0 when ``out == 1``).  Interpolation uses the form
    ``a + t * (b - a)`` so constant inputs reproduce exactly.
    """
    _require_4d("upsample_bilinear", x)
    n, c, h, w = x.shape
    if out_h < h or out_w < w:
        raise ShapeError(f"upsample_bilinear: output ({out_h}, {out_w}) smaller than input ({h}, {w})")

    def grid(size: int, out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if out == 1 or size == 1:
            idx = np.zeros(out, dtype=np.intp)
            return idx, idx.copy(), np.zeros(out, dtype=np.float32)
        pos = np.arange(out, dtype=np.float64) * (size - 1) / (out - 1)
        i0 = np.floor(pos).astype(np.intp)
        i0 = np.minimum(i0, size - 2)
        t = (pos - i0).astype(np.float32)
        return i0, i0 + 1, t

    r0, r1, tr = grid(h, out_h)
    c0, c1, tc = grid(w, out_w)

    a = x.data[:, :, r0, :]
    b = x.data[:, :, r1, :]
    rows = a + tr[None, None, :, None] * (b - a)
    left = rows[:, :, :, c0]
    right = rows[:, :, :, c1]
    out = left + tc[None, None, None, :] * (right - left)

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        # Separable adjoint: per-axis interpolation matrices carry the same
        # (1 - t, t) weights as the forward pass, applied as two GEMMs.
        ah = np.zeros((out_h, h), dtype=np.float32)
        np.add.at(ah, (np.arange(out_h), r0), 1.0 - tr)
        np.add.at(ah, (np.arange(out_h), r1), tr)
        aw = np.zeros((out_w, w), dtype=np.float32)
        np.add.at(aw, (np.arange(out_w), c0), 1.0 - tc)
        np.add.at(aw, (np.arange(out_w), c1), tc)
        drows = np.tensordot(g, ah, axes=([2], [0]))  # (n, c, out_w, h)
        dx = np.tensordot(drows, aw, axes=([2], [0]))  # (n, c, h, w)
        accumulate(x, np.ascontiguousarray(dx))

    return record_op(np.ascontiguousarray(out), (x,), backward)


# ---------------------------------------------------------------------------
# dense layer


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``flatten(x) @ weight.T + bias``.

    ``x`` is (N, ...) and is flattened per sample; ``weight`` is
    (out_features, in_features), ``bias`` (out_features,).
    """
    if x.ndim < 2:
        raise ShapeError(f"fully_connected: input must have a batch dimension, got shape {x.shape}")
    if weight.ndim != 2:
        raise ShapeError(f"fully_connected: weight must be 2-d, got shape {weight.shape}")
    n = x.shape[0]
    feat = x.size // n
    of, inf_ = weight.shape
    if inf_ != feat:
        raise ShapeError(f"fully_connected: input has {feat} features but weight expects {inf_}")
    if bias.shape != (of,):
        raise ShapeError(f"fully_connected: bias shape {bias.shape} != ({of},)")
    xf = x.data.reshape(n, feat)
    out = xf @ weight.data.T + bias.data

    def backward(g: np.ndarray) -> None:
        if bias.requires_grad:
            accumulate(bias, g.sum(axis=0))
        if weight.requires_grad:
            accumulate(weight, g.T @ xf)
        if x.requires_grad:
            accumulate(x, (g @ weight.data).reshape(x.shape))

    return record_op(out, (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _broadcast_check(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    if a.ndim != b.ndim:
        raise ShapeError(f"{name}: rank mismatch {a.shape} vs {b.shape}")
    out = []
    for dim, (da, db) in enumerate(zip(a.shape, b.shape)):
        if da != db and 1 not in (da, db):
            raise ShapeError(f"{name}: dim {dim} mismatch {a.shape} vs {b.shape}")
        out.append(max(da, db))
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i, (gs, s) in enumerate(zip(grad.shape, shape)) if s == 1 and gs != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return record_op(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("sub", a, b)
    out = a.data - b.data

    def backward(g: np.ndarray) -> None:
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))

    return record_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("mul", a, b)
    out = a.data * b.data

    def backward(g: np.ndarray) -> None:
        accumulate(a, _unbroadcast(g * b.data, a.shape))
        accumulate(b, _unbroadcast(g * a.data, b.shape))

    return record_op(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise quotient; the caller keeps the denominator away from zero."""
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def backward(g: np.ndarray) -> None:
        accumulate(a, _unbroadcast(g / b.data, a.shape))
        accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return record_op(out, (a, b), backward)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on ties the gradient routes to the first argument."""
    _broadcast_check("maximum", a, b)
    out = np.maximum(a.data, b.data)
    take_a = a.data >= b.data

    def backward(g: np.ndarray) -> None:
        accumulate(a, _unbroadcast(g * take_a, a.shape))
        accumulate(b, _unbroadcast(g * ~take_a, b.shape))

    return record_op(out, (a, b), backward)


def negate(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        accumulate(x, -g)

    return record_op(-x.data, (x,), backward)


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar."""
    s32 = np.float32(s)

    def backward(g: np.ndarray) -> None:
        accumulate(x, g * s32)

    return record_op(x.data * s32, (x,), backward)


def shift(x: Tensor, c: float) -> Tensor:
    """Add a python scalar."""

    def backward(g: np.ndarray) -> None:
        accumulate(x, g)

    return record_op(x.data + np.float32(c), (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """View the same elements under a new shape (sizes must match)."""
    target = tuple(int(s) for s in shape)
    if int(np.prod(target, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {target}")
    out = x.data.reshape(target)

    def backward(g: np.ndarray) -> None:
        accumulate(x, g.reshape(x.shape))

    return record_op(out, (x,), backward)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 4-d tensors along the channel dimension."""
    if not tensors:
        raise ShapeError("concat_channels: need at least one tensor")
    for t in tensors:
        _require_4d("concat_channels", t)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: incompatible shapes {ref} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    sizes = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, o0, o1 in zip(tensors, offsets[:-1], offsets[1:]):
            accumulate(t, g[:, o0:o1])

    return record_op(out, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, computed in the overflow-free branch per sign."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray) -> None:
        accumulate(x, g * out * (1.0 - out))

    return record_op(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g: np.ndarray) -> None:
        accumulate(x, g * (x.data > 0))

    return record_op(out, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root of non-negative input.

    The subgradient at exactly zero is taken as zero, so magnitudes of
    constant fields backpropagate cleanly instead of dividing by zero.
    """
    if np.any(x.data < 0):
        raise ShapeError("sqrt: negative input")
    out = np.sqrt(x.data)

    def backward(g: np.ndarray) -> None:
        safe = np.where(out > 0, out, np.float32(1.0))
        accumulate(x, np.where(out > 0, g / (2.0 * safe), np.float32(0.0)))

    return record_op(out, (x,), backward)


def absolute(x: Tensor) -> Tensor:
    """Elementwise |x|; the subgradient at zero is zero."""
    out = np.abs(x.data)

    def backward(g: np.ndarray) -> None:
        accumulate(x, g * np.sign(x.data))

    return record_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor.

    The accumulation runs in float64 and rounds once at the end, keeping the
    stored scalar within one float32 ulp of the true sum (finite-difference
    checks rely on this).
    """
    out = np.float32(np.sum(x.data, dtype=np.float64))

    def backward(g: np.ndarray) -> None:
        accumulate(x, np.broadcast_to(g, x.shape).astype(np.float32))

    return record_op(np.asarray(out), (x,), backward)


def reduce_mean(x: Tensor) -> Tensor:
    """Mean of all elements as a 0-d tensor (float64 accumulation)."""
    inv = np.float32(1.0 / x.size)
    out = np.float32(np.sum(x.data, dtype=np.float64) / x.size)

    def backward(g: np.ndarray) -> None:
        accumulate(x, np.broadcast_to(g * inv, x.shape).astype(np.float32))

    return record_op(np.asarray(out), (x,), backward)
