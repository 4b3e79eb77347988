"""Array kernels shared by the interpreter and the SynFlow engine.

All tensors are single samples in channels-first layout.  Each ``*_backward``
returns the vector-Jacobian products of the matching forward.
"""

import numpy as np

from .errors import ShapeMismatch


def _windows(extent_out, start, stride):
    return slice(start, start + stride * (extent_out - 1) + 1, stride)


def conv2d(x, w, b=None, stride=1, padding=(0, 0), groups=1):
    c, h, wd = x.shape
    o, cg, k1, k2 = w.shape
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - k1) // stride + 1
    ow = (wd + 2 * pw - k2) // stride + 1
    xg = xp.reshape(groups, cg, xp.shape[1], xp.shape[2])
    wg = w.reshape(groups, o // groups, cg, k1, k2)
    out = np.zeros((groups, o // groups, oh, ow), dtype=np.result_type(x, w))
    for i in range(k1):
        for j in range(k2):
            patch = xg[:, :, _windows(oh, i, stride), _windows(ow, j, stride)]
            out += np.einsum("goc,gchw->gohw", wg[..., i, j], patch)
    out = out.reshape(o, oh, ow)
    if b is not None:
        out = out + b[:, None, None]
    return out


def conv2d_backward(gy, x, w, stride=1, padding=(0, 0), groups=1, with_bias=True):
    c, h, wd = x.shape
    o, cg, k1, k2 = w.shape
    ph, pw = padding
    oh, ow = gy.shape[1:]
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    xg = xp.reshape(groups, cg, xp.shape[1], xp.shape[2])
    wg = w.reshape(groups, o // groups, cg, k1, k2)
    gyg = gy.reshape(groups, o // groups, oh, ow)
    gw = np.zeros_like(wg)
    gxp = np.zeros_like(xg)
    for i in range(k1):
        for j in range(k2):
            rs, cs = _windows(oh, i, stride), _windows(ow, j, stride)
            gw[..., i, j] = np.einsum("gohw,gchw->goc", gyg, xg[:, :, rs, cs])
            gxp[:, :, rs, cs] += np.einsum("goc,gohw->gchw", wg[..., i, j], gyg)
    gx = gxp.reshape(c, xp.shape[1], xp.shape[2])[:, ph : ph + h, pw : pw + wd]
    gb = gy.sum(axis=(1, 2)) if with_bias else None
    return gx, gw.reshape(w.shape), gb


def linear(x, w, b=None):
    y = w @ x
    return y if b is None else y + b


def linear_backward(gy, x, w):
    return w.T @ gy, np.outer(gy, x), gy


def avgpool(x, kernel, stride, padding):
    """Average pool counting padded zeros in the divisor (fixed k1*k2 divisor)."""
    c, h, w = x.shape
    (k1, k2), (ph, pw) = kernel, padding
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - k1) // stride + 1
    ow = (w + 2 * pw - k2) // stride + 1
    out = np.zeros((c, oh, ow), dtype=x.dtype)
    for i in range(k1):
        for j in range(k2):
            out += xp[:, _windows(oh, i, stride), _windows(ow, j, stride)]
    return out / (k1 * k2)


def avgpool_backward(gy, in_shape, kernel, stride, padding):
    c, h, w = in_shape
    (k1, k2), (ph, pw) = kernel, padding
    oh, ow = gy.shape[1:]
    gxp = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=gy.dtype)
    g = gy / (k1 * k2)
    for i in range(k1):
        for j in range(k2):
            gxp[:, _windows(oh, i, stride), _windows(ow, j, stride)] += g
    return gxp[:, ph : ph + h, pw : pw + w]


def _bins(n_in, n_out):
    return [((i * n_in) // n_out, -((-(i + 1) * n_in) // n_out)) for i in range(n_out)]


def adaptive_avgpool(x, size):
    c, h, w = x.shape
    out = np.zeros((c, size, size), dtype=x.dtype)
    for i, (r0, r1) in enumerate(_bins(h, size)):
        for j, (c0, c1) in enumerate(_bins(w, size)):
            out[:, i, j] = x[:, r0:r1, c0:c1].mean(axis=(1, 2))
    return out


def adaptive_avgpool_backward(gy, in_shape, size):
    c, h, w = in_shape
    gx = np.zeros(in_shape, dtype=gy.dtype)
    for i, (r0, r1) in enumerate(_bins(h, size)):
        for j, (c0, c1) in enumerate(_bins(w, size)):
            gx[:, r0:r1, c0:c1] += (gy[:, i, j] / ((r1 - r0) * (c1 - c0)))[:, None, None]
    return gx


def upsample_nearest(x, scale):
    return x.repeat(scale, axis=1).repeat(scale, axis=2)


def upsample_nearest_backward(gy, scale):
    c, h, w = gy.shape
    return gy.reshape(c, h // scale, scale, w // scale, scale).sum(axis=(2, 4))


def shuffle_perm(channels, groups):
    """Source channel for each output channel of a group shuffle.

    Channels are viewed as ``(groups, channels // groups)`` and transposed, so
    output ``j`` reads input ``perm[j]``.
    """
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def conv1d_channels(m, w):
    """Zero-padded 1-D correlation along the channel axis (ECA kernel)."""
    k = w.shape[0]
    pad = (k - 1) // 2
    mp = np.pad(m, (pad, pad))
    c = m.shape[0]
    return sum(w[t] * mp[t : t + c] for t in range(k))


def conv1d_channels_backward(ga, m, w):
    k = w.shape[0]
    pad = (k - 1) // 2
    c = m.shape[0]
    mp = np.pad(m, (pad, pad))
    gw = np.array([np.dot(ga, mp[t : t + c]) for t in range(k)])
    gmp = np.zeros_like(mp)
    for t in range(k):
        gmp[t : t + c] += w[t] * ga
    return gmp[pad : pad + c], gw


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def eca(x, w):
    """Global average pool, channel-wise 1-D conv, sigmoid gate."""
    m = x.mean(axis=(1, 2))
    gate = sigmoid(conv1d_channels(m, w)).astype(x.dtype)
    return x * gate[:, None, None]


def batchnorm(x, gamma, beta, mean, var, eps):
    scale = gamma / np.sqrt(var + eps)
    shape = (-1,) + (1,) * (x.ndim - 1)
    return x * scale.reshape(shape) + (beta - mean * scale).reshape(shape)


# ---------------------------------------------------------------------------
# modulated deformable convolution


def bilinear_sample(x, ys, xs):
    """Sample ``x`` (C, H, W) at fractional positions; zero beyond the borders.

    ``ys``/``xs`` share any shape ``S``; the result is ``(C,) + S``.
    """
    c, h, w = x.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    ly, lx = ys - y0, xs - x0
    out = np.zeros((c,) + ys.shape, dtype=np.result_type(x, ys))
    for dy, wy in ((0, 1 - ly), (1, ly)):
        for dx, wx in ((0, 1 - lx), (1, lx)):
            yi, xi = y0 + dy, x0 + dx
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            vals = x[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += vals * (wy * wx * valid)
    return out


def deform_conv2d(x, offsets, modulation, w, b=None, stride=1, padding=(1, 1)):
    """Modulated deformable convolution.

    For each output location ``p`` and kernel tap ``k`` the input is sampled at
    ``p*stride - padding + p_k + offset_k`` (bilinear, zero outside) and scaled
    by ``modulation_k`` before the weighted sum.  ``offsets`` has ``2K`` channels
    ordered ``(dy_0, dx_0, dy_1, dx_1, ...)``; taps are row-major over the kernel.
    """
    c, h, wd = x.shape
    o, ci, k1, k2 = w.shape
    K = k1 * k2
    oh, ow = offsets.shape[1:]
    if offsets.shape[0] != 2 * K or modulation.shape != (K, oh, ow) or ci != c:
        raise ShapeMismatch(
            f"deformable conv expects {2 * K} offset and {K} modulation channels over {oh}x{ow}, "
            f"got {offsets.shape} and {modulation.shape}"
        )
    ph, pw = padding
    gy, gx = np.meshgrid(np.arange(oh) * stride - ph, np.arange(ow) * stride - pw, indexing="ij")
    cols = np.empty((K, c, oh, ow), dtype=np.result_type(x, offsets))
    for k in range(K):
        ky, kx = divmod(k, k2)
        ys = gy + ky + offsets[2 * k]
        xs = gx + kx + offsets[2 * k + 1]
        cols[k] = bilinear_sample(x, ys, xs) * modulation[k]
    out = np.einsum("ock,kchw->ohw", w.reshape(o, c, K), cols)
    if b is not None:
        out = out + b[:, None, None]
    return out.astype(np.result_type(x, w), copy=False)


def deform_offsets(x, offset_w, offset_b, stride, padding):
    """Offset/modulation predictor: ``3K`` channels -> (offsets, sigmoid mask)."""
    raw = conv2d(x, offset_w, offset_b, stride, padding)
    K = raw.shape[0] // 3
    return raw[: 2 * K], sigmoid(raw[2 * K :]).astype(raw.dtype)
