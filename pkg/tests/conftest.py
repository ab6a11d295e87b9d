"""Shared helpers: independent loop-based oracles and probe-safe inputs.

The oracle functions here deliberately use plain Python loops over float64
so they share no code (and no bugs) with the library's vectorized float32
implementations.  They are slow and only ever applied to tiny arrays.
"""

from __future__ import annotations

import numpy as np
import pytest

from graphfusion.tensor import Tensor


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=requires_grad)


def separated_values(rng: np.random.Generator, shape, gap: float = 0.05) -> np.ndarray:
    """Random array whose values are pairwise at least ``gap`` apart.

    Used as input to max pooling and ``maximum`` so that a finite-difference
    probe of +-1e-3 can never change which element wins.
    """
    n = int(np.prod(shape))
    base = rng.permutation(n).astype(np.float64) * (2.0 * gap)
    base += rng.uniform(0.0, 0.5 * gap, size=n)
    base -= base.mean()
    return (base.reshape(shape) / max(n * gap, 1.0)).astype(np.float32) * n * gap * 0.1


def away_from(rng: np.random.Generator, shape, forbidden: float, margin: float = 0.05) -> np.ndarray:
    """Random values at least ``margin`` away from ``forbidden`` on either side."""
    raw = rng.uniform(margin, 1.0, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return (forbidden + sign * raw).astype(np.float32)


# ---------------------------------------------------------------------------
# float64 loop oracles


def oracle_conv(x, k, b, stride=1, padding=0):
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, c, h, w = x.shape
    oc, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, oc, oh, ow))
    for nn in range(n):
        for o in range(oc):
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for cc in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[nn, cc, y * stride + i, xx * stride + j] * k[o, cc, i, j]
                    out[nn, o, y, xx] = acc + b[o]
    return out


def oracle_maxpool(x, window, stride, padding=0):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    xp = np.full((n, c, h + 2 * padding, w + 2 * padding), -np.inf)
    xp[:, :, padding : padding + h, padding : padding + w] = x
    oh = (h + 2 * padding - window) // stride + 1
    ow = (w + 2 * padding - window) // stride + 1
    out = np.zeros((n, c, oh, ow))
    for nn in range(n):
        for cc in range(c):
            for y in range(oh):
                for xx in range(ow):
                    out[nn, cc, y, xx] = xp[
                        nn, cc, y * stride : y * stride + window, xx * stride : xx * stride + window
                    ].max()
    return out


def oracle_avgpool(x, window, stride, padding=0):
    """Average over the valid (non-padding) cells of each window."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    oh = (h + 2 * padding - window) // stride + 1
    ow = (w + 2 * padding - window) // stride + 1
    out = np.zeros((n, c, oh, ow))
    for nn in range(n):
        for cc in range(c):
            for y in range(oh):
                for xx in range(ow):
                    vals = []
                    for i in range(window):
                        for j in range(window):
                            r = y * stride + i - padding
                            s = xx * stride + j - padding
                            if 0 <= r < h and 0 <= s < w:
                                vals.append(x[nn, cc, r, s])
                    out[nn, cc, y, xx] = sum(vals) / len(vals)
    return out


def oracle_adaptive(x, out_h, out_w):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))
    for i in range(out_h):
        r0 = h * i // out_h
        r1 = -(-h * (i + 1) // out_h)
        for j in range(out_w):
            c0 = w * j // out_w
            c1 = -(-w * (j + 1) // out_w)
            out[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return out


def oracle_upsample(x, out_h, out_w):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))
    for y in range(out_h):
        py = 0.0 if out_h == 1 or h == 1 else y * (h - 1) / (out_h - 1)
        r0 = min(int(np.floor(py)), h - 2) if h > 1 else 0
        r1 = r0 + 1 if h > 1 else 0
        ty = py - r0
        for xx in range(out_w):
            px = 0.0 if out_w == 1 or w == 1 else xx * (w - 1) / (out_w - 1)
            c0 = min(int(np.floor(px)), w - 2) if w > 1 else 0
            c1 = c0 + 1 if w > 1 else 0
            tx = px - c0
            top = x[:, :, r0, c0] + tx * (x[:, :, r0, c1] - x[:, :, r0, c0])
            bot = x[:, :, r1, c0] + tx * (x[:, :, r1, c1] - x[:, :, r1, c0])
            out[:, :, y, xx] = top + ty * (bot - top)
    return out


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
