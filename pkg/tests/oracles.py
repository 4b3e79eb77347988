"""Naive loop-nest reference implementations used as test oracles.

Written directly from the operator definitions, scalar by scalar, without
sharing any code with the package kernels.
"""

import math

import numpy as np


def conv2d(x, w, b=None, stride=1, padding=(0, 0), groups=1):
    c, h, wd = x.shape
    oc, icg, k1, k2 = w.shape
    ph, pw = padding
    oh = (h + 2 * ph - k1) // stride + 1
    ow = (wd + 2 * pw - k2) // stride + 1
    ocg = oc // groups
    y = np.zeros((oc, oh, ow))
    for o in range(oc):
        g = o // ocg
        for i in range(oh):
            for j in range(ow):
                s = 0.0 if b is None else float(b[o])
                for ci in range(icg):
                    cin = g * icg + ci
                    for u in range(k1):
                        for v in range(k2):
                            r, q = i * stride - ph + u, j * stride - pw + v
                            if 0 <= r < h and 0 <= q < wd:
                                s += float(w[o, ci, u, v]) * float(x[cin, r, q])
                y[o, i, j] = s
    return y


def linear(x, w, b=None):
    out = np.zeros(w.shape[0])
    for o in range(w.shape[0]):
        s = 0.0 if b is None else float(b[o])
        for i in range(w.shape[1]):
            s += float(w[o, i]) * float(x[i])
        out[o] = s
    return out


def avgpool(x, kernel, stride, padding):
    c, h, wd = x.shape
    (k1, k2), (ph, pw) = kernel, padding
    oh = (h + 2 * ph - k1) // stride + 1
    ow = (wd + 2 * pw - k2) // stride + 1
    y = np.zeros((c, oh, ow))
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                s = 0.0
                for u in range(k1):
                    for v in range(k2):
                        r, q = i * stride - ph + u, j * stride - pw + v
                        if 0 <= r < h and 0 <= q < wd:
                            s += float(x[ch, r, q])
                y[ch, i, j] = s / (k1 * k2)
    return y


def adaptive_avgpool(x, size):
    c, h, wd = x.shape
    y = np.zeros((c, size, size))
    for i in range(size):
        r0, r1 = (i * h) // size, -((-(i + 1) * h) // size)
        for j in range(size):
            q0, q1 = (j * wd) // size, -((-(j + 1) * wd) // size)
            for ch in range(c):
                y[ch, i, j] = np.mean(x[ch, r0:r1, q0:q1])
    return y


def upsample(x, scale):
    c, h, wd = x.shape
    y = np.zeros((c, h * scale, wd * scale))
    for ch in range(c):
        for i in range(h * scale):
            for j in range(wd * scale):
                y[ch, i, j] = x[ch, i // scale, j // scale]
    return y


def shuffle_order(channels, groups):
    """Output channel j reads input (j % groups) * (channels // groups) + j // groups."""
    per = channels // groups
    return [(j % groups) * per + j // groups for j in range(channels)]


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def eca(x, w):
    c = x.shape[0]
    k = len(w)
    m = [float(np.mean(x[ch])) for ch in range(c)]
    y = np.zeros_like(x, dtype=np.float64)
    for ch in range(c):
        a = 0.0
        for t in range(k):
            src = ch + t - k // 2
            if 0 <= src < c:
                a += float(w[t]) * m[src]
        y[ch] = x[ch] * sigmoid(a)
    return y


def batchnorm(x, gamma, beta, mean, var, eps):
    y = np.zeros_like(x, dtype=np.float64)
    for ch in range(x.shape[0]):
        y[ch] = (x[ch] - mean[ch]) / math.sqrt(var[ch] + eps) * gamma[ch] + beta[ch]
    return y


def bilinear(img, y, x):
    """Bilinear sample of a 2-D array; zero outside the image."""
    h, w = img.shape
    y0, x0 = math.floor(y), math.floor(x)
    total = 0.0
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            wt = (1 - abs(y - yy)) * (1 - abs(x - xx))
            if 0 <= yy < h and 0 <= xx < w and wt > 0:
                total += wt * float(img[yy, xx])
    return total


def deform_conv2d(x, offsets, modulation, w, b=None, stride=1, padding=(1, 1)):
    """Modulated deformable conv; offsets carry (dy, dx) per kernel tap."""
    c, h, wd = x.shape
    oc, _, k1, k2 = w.shape
    ph, pw = padding
    oh = (h + 2 * ph - k1) // stride + 1
    ow = (wd + 2 * pw - k2) // stride + 1
    y = np.zeros((oc, oh, ow))
    for i in range(oh):
        for j in range(ow):
            for u in range(k1):
                for v in range(k2):
                    t = u * k2 + v
                    py = i * stride - ph + u + float(offsets[2 * t, i, j])
                    px = j * stride - pw + v + float(offsets[2 * t + 1, i, j])
                    m = float(modulation[t, i, j])
                    for ci in range(c):
                        val = bilinear(x[ci], py, px) * m
                        for o in range(oc):
                            y[o, i, j] += float(w[o, ci, u, v]) * val
    if b is not None:
        for o in range(oc):
            y[o] += float(b[o])
    return y
