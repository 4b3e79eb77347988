"""SynFlow saliency over a linearized graph, with a small reverse-mode engine.

Linearization: every weight is replaced by its absolute value, activations
become identities, BatchNorm becomes a per-channel scale by ``|gamma|``, ECA
keeps its pooled 1-D conv as a (non-saturating) gate, and a deformable conv is
evaluated as a plain conv with zero offsets and unit modulation.  With an
all-ones input, ``R`` is the sum of every output element and the score of a
weight is ``dR/dw * w``.  Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import EmptyModality, NonFiniteScore, UnsupportedForSaliency
from .graph import CUSTOM_OPS, Kind
from .groups import PruneClass, build_groups, classify_node, trace_channels

OVERFLOW = 1e300


@dataclass
class LinearizedGraph:
    graph: object
    weights: dict  # key -> float64 |theta|
    unscored: dict = field(default_factory=dict)  # weight key -> why it gets no saliency


@dataclass
class SaliencyMap:
    scores: dict  # key -> float64 array, same shape as the weight
    R: float
    grads: dict

    def summed(self):
        return {k: float(v.sum()) for k, v in self.scores.items()}


@dataclass
class ModalityScore:
    scores: dict  # Tag -> mean |S_SF|
    counts: dict  # Tag -> N_m
    nodes: dict  # Tag -> node ids


def linearize(graph):
    unscored = {}
    for node in graph:
        if node.kind is Kind.CUSTOM and CUSTOM_OPS[node.params["name"]].linearize is None:
            raise UnsupportedForSaliency(f"{node.id}: custom op {node.params['name']!r} has no linearization")
        if node.kind is Kind.BATCHNORM:
            for role in ("beta", "mean", "var"):
                unscored[node.weights[role]] = "batchnorm shift/statistics are dropped"
        if node.kind is Kind.DEFORM_CONV2D:
            for role in ("offset_weight", "offset_bias"):
                unscored[node.weights[role]] = "offsets are zero under linearization"
    weights = {k: np.abs(np.asarray(v, dtype=np.float64)) for k, v in graph.weights.items()}
    return LinearizedGraph(graph, weights, unscored)


def _eval(node, xs, W):
    k, p = node.kind, node.params
    x = xs[0] if xs else None
    if k in (Kind.OUTPUT, Kind.RELU, Kind.SIGMOID):
        return x
    if k is Kind.CONV2D:
        return K.conv2d(x, W["weight"], W.get("bias"), p["stride"], p["padding"], p["groups"])
    if k is Kind.DEFORM_CONV2D:
        return K.conv2d(x, W["weight"], W.get("bias"), p["stride"], p["padding"], 1)
    if k is Kind.LINEAR:
        return K.linear(x, W["weight"], W.get("bias"))
    if k is Kind.BATCHNORM:
        return x * W["gamma"].reshape((-1,) + (1,) * (x.ndim - 1))
    if k is Kind.ECA:
        return x * K.conv1d_channels(x.mean(axis=(1, 2)), W["weight"])[:, None, None]
    if k is Kind.AVGPOOL:
        return K.avgpool(x, p["kernel"], p["stride"], p["padding"])
    if k is Kind.ADAPTIVE_AVGPOOL:
        return K.adaptive_avgpool(x, p["size"])
    if k is Kind.UPSAMPLE:
        return K.upsample_nearest(x, p["scale"])
    if k is Kind.ADD or (k is Kind.CUSTOM and CUSTOM_OPS[p["name"]].linearize == "add"):
        return sum(xs[1:], xs[0])
    if k is Kind.CUSTOM:
        return x
    if k is Kind.CONCAT:
        return np.concatenate(xs, axis=0)
    if k is Kind.SPLIT:
        a = sum(p["sizes"][: p["index"]])
        return x[a : a + p["sizes"][p["index"]]]
    if k is Kind.CHANNEL_SHUFFLE:
        return x[_perm(node, x.shape[0])]
    if k is Kind.FLATTEN:
        return x.reshape(-1)
    if k is Kind.PERMUTE:
        return x.transpose(p["order"])
    raise UnsupportedForSaliency(f"{node.id}: no linearization for {k.value}")


def _perm(node, c):
    p = node.params
    return np.asarray(p["perm"]) if p.get("perm") is not None else K.shuffle_perm(c, p["groups"])


def _node_weights(lin, node, weights):
    return {role: weights[key] for role, key in node.weights.items()}


def linear_forward(lin, weights=None, cache=None, changed=None):
    """All-ones forward of the linearized graph; returns ``(R, values)``.

    With ``cache`` and ``changed`` (a node id), only nodes downstream of
    ``changed`` are recomputed.
    """
    g = lin.graph
    weights = lin.weights if weights is None else weights
    order = g.topo_order()
    dirty = None
    if cache is not None and changed is not None:
        dirty = {changed}
        for nid in order:
            if any(s in dirty for s in g.nodes[nid].inputs):
                dirty.add(nid)
    values = {} if cache is None else dict(cache)
    for nid in order:
        node = g.nodes[nid]
        if dirty is not None and nid not in dirty:
            continue
        if node.kind is Kind.INPUT:
            values[nid] = np.ones(node.shape)
        else:
            values[nid] = _eval(node, [values[s] for s in node.inputs], _node_weights(lin, node, weights))
    R = float(sum(values[o].sum() for o in g.outputs))
    return R, values


def _backward_node(node, xs, gy, W):
    """VJP of one node: ``(grads for inputs, grads for weight roles)``."""
    k, p = node.kind, node.params
    x = xs[0] if xs else None
    if k in (Kind.OUTPUT, Kind.RELU, Kind.SIGMOID):
        return [gy], {}
    if k is Kind.CONV2D or k is Kind.DEFORM_CONV2D:
        groups = p["groups"] if k is Kind.CONV2D else 1
        gx, gw, gb = K.conv2d_backward(gy, x, W["weight"], p["stride"], p["padding"], groups, "bias" in W)
        gws = {"weight": gw}
        if "bias" in W:
            gws["bias"] = gb
        if k is Kind.DEFORM_CONV2D:
            gws["offset_weight"] = np.zeros_like(W["offset_weight"])
            gws["offset_bias"] = np.zeros_like(W["offset_bias"])
        return [gx], gws
    if k is Kind.LINEAR:
        gx, gw, gb = K.linear_backward(gy, x, W["weight"])
        gws = {"weight": gw}
        if "bias" in W:
            gws["bias"] = gb
        return [gx], gws
    if k is Kind.BATCHNORM:
        shape = (-1,) + (1,) * (x.ndim - 1)
        axes = tuple(range(1, x.ndim))
        ggamma = (gy * x).sum(axis=axes) if axes else gy * x
        zero = {r: np.zeros_like(W[r]) for r in ("beta", "mean", "var")}
        return [gy * W["gamma"].reshape(shape)], {"gamma": ggamma, **zero}
    if k is Kind.ECA:
        m = x.mean(axis=(1, 2))
        a = K.conv1d_channels(m, W["weight"])
        ga = (gy * x).sum(axis=(1, 2))
        gm, gw = K.conv1d_channels_backward(ga, m, W["weight"])
        hw = x.shape[1] * x.shape[2]
        gx = gy * a[:, None, None] + (gm / hw)[:, None, None]
        return [gx], {"weight": gw}
    if k is Kind.AVGPOOL:
        return [K.avgpool_backward(gy, x.shape, p["kernel"], p["stride"], p["padding"])], {}
    if k is Kind.ADAPTIVE_AVGPOOL:
        return [K.adaptive_avgpool_backward(gy, x.shape, p["size"])], {}
    if k is Kind.UPSAMPLE:
        return [K.upsample_nearest_backward(gy, p["scale"])], {}
    if k is Kind.ADD or k is Kind.CUSTOM and len(xs) > 1:
        return [gy] * len(xs), {}
    if k is Kind.CUSTOM:
        return [gy], {}
    if k is Kind.CONCAT:
        bounds = np.cumsum([0] + [a.shape[0] for a in xs])
        return [gy[bounds[i] : bounds[i + 1]] for i in range(len(xs))], {}
    if k is Kind.SPLIT:
        gx = np.zeros_like(x)
        a = sum(p["sizes"][: p["index"]])
        gx[a : a + p["sizes"][p["index"]]] = gy
        return [gx], {}
    if k is Kind.CHANNEL_SHUFFLE:
        gx = np.zeros_like(x)
        gx[_perm(node, x.shape[0])] = gy
        return [gx], {}
    if k is Kind.FLATTEN:
        return [gy.reshape(x.shape)], {}
    if k is Kind.PERMUTE:
        return [gy.transpose(np.argsort(p["order"]))], {}
    raise UnsupportedForSaliency(f"{node.id}: no backward for {k.value}")


def gradients(lin, values):
    """Reverse pass from ``R = sum of outputs``; returns ``{weight key: dR/dw}``."""
    g = lin.graph
    gvals = {o: np.ones_like(values[o]) for o in g.outputs}
    grads = {key: np.zeros_like(w) for key, w in lin.weights.items()}
    for nid in reversed(g.topo_order()):
        node = g.nodes[nid]
        if nid not in gvals or node.kind is Kind.INPUT:
            continue
        gy = gvals.pop(nid)
        xs = [values[s] for s in node.inputs]
        gxs, gws = _backward_node(node, xs, gy, _node_weights(lin, node, lin.weights))
        for src, gx in zip(node.inputs, gxs):
            gvals[src] = gvals[src] + gx if src in gvals else gx
        for role, gw in gws.items():
            grads[node.weights[role]] += gw
    return grads


def synflow_scores(lin):
    R, values = linear_forward(lin)
    if not np.isfinite(R) or R > OVERFLOW:
        raise NonFiniteScore(f"R = {R!r} overflows; the graph is too deep or too wide for 64-bit scoring")
    grads = gradients(lin, values)
    scores = {}
    for key, gr in grads.items():
        s = gr * lin.weights[key]
        if not np.all(np.isfinite(s)):
            raise NonFiniteScore(f"non-finite saliency for {key!r}")
        scores[key] = s
    return SaliencyMap(scores, R, grads)


def modality_scores(saliency, graph, prefusion):
    """Mean ``|S_SF|`` over the ``weight`` tensors of each modality's pre-fusion nodes."""
    scores, counts, nodes = {}, {}, {}
    for tag, ids in prefusion.items():
        keys = [graph.nodes[n].weights["weight"] for n in ids if "weight" in graph.nodes[n].weights]
        n = sum(saliency.scores[k].size for k in keys)
        if n == 0:
            raise EmptyModality(f"pre-fusion set for {getattr(tag, 'value', tag)} has no weights")
        total = sum(np.abs(saliency.scores[k]).sum() for k in keys)
        scores[tag], counts[tag], nodes[tag] = float(total / n), int(n), list(ids)
    return ModalityScore(scores, counts, nodes)


def check_conservation(lin, saliency, groups=None, trace=None):
    """Per hidden unit: ``|incoming scores - outgoing scores|``.

    A unit is one channel of an unpinned pruning group.  Incoming = the unit's
    filter weights and bias across the group's filters; outgoing = the input
    slices of every InOut consumer that reads that channel.  Returns a list of
    ``(group id, channel, incoming, outgoing, residual)``.
    """
    graph = lin.graph
    trace = trace_channels(graph) if trace is None else trace
    groups = build_groups(graph, trace=trace) if groups is None else groups
    S = saliency.scores
    out = []
    for g in groups:
        if set(g.reasons) - {"pattern"}:
            continue
        inc = np.zeros(g.width)
        outg = np.zeros(g.width)
        for f in g.filters:
            node = graph.nodes[f]
            w = S[node.weights["weight"]]
            inc += w.reshape(w.shape[0], -1).sum(axis=1)
            if "bias" in node.weights:
                inc += S[node.weights["bias"]]
        for node in graph:
            if not node.inputs or classify_node(node, graph) is not PruneClass.IN_OUT:
                continue
            src = trace.src[node.inputs[0]]
            idx = trace.idx[node.inputs[0]]
            for pos in np.flatnonzero([trace.cls(int(s)) == g.root for s in src]):
                c = idx[pos]
                for role in ("weight", "offset_weight"):
                    if role in node.weights:
                        outg[c] += S[node.weights[role]][:, pos].sum()
        for c in range(g.width):
            out.append((g.id, c, float(inc[c]), float(outg[c]), float(abs(inc[c] - outg[c]))))
    return out
