"""Reference forward executor (batch of one, channels-first)."""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .errors import NonFiniteValue, ShapeMismatch
from .graph import CUSTOM_OPS, Kind

CUSTOM_FORWARD = {
    "identity": lambda x: x,
    "hardswish": lambda x: x * np.clip(x + 3.0, 0.0, 6.0) / 6.0,
    "silu": lambda x: x * K.sigmoid(x),
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
}
assert set(CUSTOM_FORWARD) == set(CUSTOM_OPS)


def resolve_inputs(graph, inputs):
    """Map user-supplied tensors (keyed by input id or by modality) to input ids."""
    out = {}
    for nid in graph.inputs:
        node = graph.nodes[nid]
        mod = node.params["modality"]
        if nid in inputs:
            out[nid] = inputs[nid]
        elif mod in inputs and sum(graph.nodes[i].params["modality"] == mod for i in graph.inputs) == 1:
            out[nid] = inputs[mod]
        else:
            raise ShapeMismatch(f"no tensor supplied for input {nid!r} ({mod})", nid)
    return out


def eval_node(graph, node, xs, dtype=np.float32):
    """Evaluate one node on its input arrays."""
    k, p = node.kind, node.params

    def W(role):
        return graph.weights[node.weights[role]].astype(dtype, copy=False)

    def Wopt(role):
        return W(role) if role in node.weights else None

    x = xs[0] if xs else None
    if k in (Kind.OUTPUT,):
        return x
    if k is Kind.CONV2D:
        return K.conv2d(x, W("weight"), Wopt("bias"), p["stride"], p["padding"], p["groups"])
    if k is Kind.DEFORM_CONV2D:
        off, mod = K.deform_offsets(x, W("offset_weight"), W("offset_bias"), p["stride"], p["padding"])
        return K.deform_conv2d(x, off, mod, W("weight"), Wopt("bias"), p["stride"], p["padding"])
    if k is Kind.LINEAR:
        return K.linear(x, W("weight"), Wopt("bias"))
    if k is Kind.BATCHNORM:
        return K.batchnorm(x, W("gamma"), W("beta"), W("mean"), W("var"), dtype(p["eps"])).astype(dtype)
    if k is Kind.RELU:
        return np.maximum(x, 0)
    if k is Kind.SIGMOID:
        return K.sigmoid(x)
    if k is Kind.AVGPOOL:
        return K.avgpool(x, p["kernel"], p["stride"], p["padding"])
    if k is Kind.ADAPTIVE_AVGPOOL:
        return K.adaptive_avgpool(x, p["size"])
    if k is Kind.UPSAMPLE:
        return K.upsample_nearest(x, p["scale"])
    if k is Kind.ADD:
        out = xs[0]
        for other in xs[1:]:
            out = out + other
        return out
    if k is Kind.CONCAT:
        return np.concatenate(xs, axis=0)
    if k is Kind.SPLIT:
        start = sum(p["sizes"][: p["index"]])
        return x[start : start + p["sizes"][p["index"]]]
    if k is Kind.CHANNEL_SHUFFLE:
        perm = p["perm"] if p.get("perm") is not None else K.shuffle_perm(x.shape[0], p["groups"])
        return x[np.asarray(perm)]
    if k is Kind.ECA:
        return K.eca(x, W("weight"))
    if k is Kind.FLATTEN:
        return x.reshape(-1)
    if k is Kind.PERMUTE:
        return np.ascontiguousarray(x.transpose(p["order"]))
    if k is Kind.CUSTOM:
        return CUSTOM_FORWARD[p["name"]](*xs)
    raise ShapeMismatch(f"cannot evaluate kind {k}", node.id)


def forward(graph, inputs, dtype=np.float32, order=None, keep_all=False):
    """Evaluate ``graph``; returns ``{output id: array}`` (or every node if ``keep_all``)."""
    feeds = resolve_inputs(graph, inputs)
    order = graph.topo_order() if order is None else order
    values = {}
    for nid in order:
        node = graph.nodes[nid]
        if node.kind is Kind.INPUT:
            x = np.asarray(feeds[nid], dtype=dtype)
            if node.shape is not None and tuple(x.shape) != tuple(node.shape):
                raise ShapeMismatch(f"input tensor has shape {x.shape}, expected {node.shape}", nid)
            y = x
        else:
            y = eval_node(graph, node, [values[s] for s in node.inputs], dtype)
        y = np.asarray(y, dtype=dtype)
        if node.shape is not None and tuple(y.shape) != tuple(node.shape):
            raise ShapeMismatch(f"produced {y.shape}, expected {node.shape}", nid)
        if not np.all(np.isfinite(y)):
            raise NonFiniteValue(nid)
        values[nid] = y
    if keep_all:
        return values
    return {nid: values[nid] for nid in graph.outputs}


def deform_conv2d(x, offsets, modulation, weight, bias=None, stride=1, padding=(1, 1)):
    """Standalone modulated deformable convolution (zero padding, bilinear)."""
    return K.deform_conv2d(x, offsets, modulation, weight, bias, stride, padding)


def radar_conv(fr, offset_weight, offset_bias, weight, bias=None):
    """RadarConv: 3x3 average pool (stride 1, pad 1) then a 3x3 deformable conv.

    The offsets and modulation come from a 3x3 conv on the pooled map; the
    modulation passes through a sigmoid.
    """
    if fr.ndim != 3:
        raise ShapeMismatch(f"radar map must be C x H x W, got {fr.shape}")
    fa = K.avgpool(fr, (3, 3), 1, (1, 1))
    off, mod = K.deform_offsets(fa, offset_weight, offset_bias, 1, (1, 1))
    return K.deform_conv2d(fa, off, mod, weight, bias, 1, (1, 1))
