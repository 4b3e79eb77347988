"""Computation-graph data model, validation, shape inference and cost counting.

Layout is channels-first with the batch dimension left implicit: feature maps are
``(C, H, W)`` and vectors are ``(N,)``.  Weights live in a flat ``dict`` keyed by
name; each parametric node maps its weight *roles* (``weight``, ``bias``,
``gamma`` ...) to keys in that dict.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from enum import Enum
from math import prod

import numpy as np

from .errors import CycleDetected, GraphError, MissingWeight, ShapeMismatch, UnknownKind


class Kind(str, Enum):
    INPUT = "input"
    OUTPUT = "output"
    CONV2D = "conv2d"
    LINEAR = "linear"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    SIGMOID = "sigmoid"
    AVGPOOL = "avgpool"
    ADAPTIVE_AVGPOOL = "adaptive_avgpool"
    UPSAMPLE = "upsample"
    ADD = "add"
    CONCAT = "concat"
    SPLIT = "split"
    CHANNEL_SHUFFLE = "channel_shuffle"
    ECA = "eca"
    DEFORM_CONV2D = "deform_conv2d"
    FLATTEN = "flatten"
    PERMUTE = "permute"
    CUSTOM = "custom"


PARAMETRIC = {Kind.CONV2D, Kind.LINEAR, Kind.BATCHNORM, Kind.ECA, Kind.DEFORM_CONV2D}

WEIGHT_ROLES = {
    Kind.CONV2D: ("weight", "bias"),
    Kind.LINEAR: ("weight", "bias"),
    Kind.BATCHNORM: ("gamma", "beta", "mean", "var"),
    Kind.ECA: ("weight",),
    Kind.DEFORM_CONV2D: ("offset_weight", "offset_bias", "weight", "bias"),
}

MODALITIES = ("vision", "radar")


@dataclass(frozen=True)
class CustomOp:
    """A registered custom kind: shape-preserving, with a declared prune class.

    ``linearize`` names the SynFlow stand-in: ``"identity"`` for unary ops,
    ``"add"`` for binary ops, ``None`` when the op has no defined linearization.
    """

    arity: int
    prune_class: str
    linearize: str | None


CUSTOM_OPS = {
    "identity": CustomOp(1, "OutOut", "identity"),
    "hardswish": CustomOp(1, "OutOut", "identity"),
    "silu": CustomOp(1, "OutOut", "identity"),
    "sub": CustomOp(2, "InIn", "add"),
    "mul": CustomOp(2, "InIn", None),
}


@dataclass(frozen=True)
class Node:
    id: str
    kind: Kind
    inputs: tuple = ()
    params: dict = field(default_factory=dict, hash=False, compare=True)
    weights: dict = field(default_factory=dict, hash=False, compare=True)  # role -> key
    shape: tuple | None = None


@dataclass
class Graph:
    nodes: dict  # id -> Node, insertion order is the manifest order
    weights: dict  # key -> np.ndarray(float32)
    name: str = ""

    @property
    def inputs(self):
        return [n.id for n in self.nodes.values() if n.kind is Kind.INPUT]

    @property
    def outputs(self):
        return [n.id for n in self.nodes.values() if n.kind is Kind.OUTPUT]

    def __getitem__(self, node_id):
        return self.nodes[node_id]

    def __iter__(self):
        return iter(self.nodes.values())

    def consumers(self):
        out = {nid: [] for nid in self.nodes}
        for n in self.nodes.values():
            for src in n.inputs:
                if n.id not in out[src]:
                    out[src].append(n.id)
        return out

    def topo_order(self):
        """Kahn's algorithm, ties broken by manifest position (deterministic)."""
        pos = {nid: i for i, nid in enumerate(self.nodes)}
        indeg = {nid: len(set(n.inputs)) for nid, n in self.nodes.items()}
        cons = self.consumers()
        heap = [pos[nid] for nid, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        ids = list(self.nodes)
        order = []
        while heap:
            nid = ids[heapq.heappop(heap)]
            order.append(nid)
            for c in cons[nid]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, pos[c])
        if len(order) != len(self.nodes):
            stuck = sorted(set(self.nodes) - set(order))
            raise CycleDetected(f"graph has a cycle through {stuck}")
        return order

    def weight_count(self, node_id):
        return sum(self.weights[k].size for k in self.nodes[node_id].weights.values())

    def copy(self, nodes=None, weights=None, name=None):
        return Graph(
            dict(self.nodes) if nodes is None else nodes,
            {k: v.copy() for k, v in self.weights.items()} if weights is None else weights,
            self.name if name is None else name,
        )


# ---------------------------------------------------------------------------
# validation and shape inference


def _arity_ok(node):
    k, n = node.kind, len(node.inputs)
    if k is Kind.INPUT:
        return n == 0
    if k in (Kind.ADD, Kind.CONCAT):
        return n >= 2
    if k is Kind.CUSTOM:
        op = CUSTOM_OPS.get(node.params.get("name"))
        return op is not None and n == op.arity
    return n == 1


def check_structure(graph):
    """Arity, references, weight-key presence, DAG-ness and output reachability."""
    for node in graph:
        if node.kind is Kind.CUSTOM:
            name = node.params.get("name")
            if name not in CUSTOM_OPS:
                raise UnknownKind(f"{node.id}: custom op {name!r} is not registered")
            declared = node.params.get("cls")
            if declared is not None and declared != CUSTOM_OPS[name].prune_class:
                raise UnknownKind(f"{node.id}: custom op {name!r} declared as {declared!r}")
        if not _arity_ok(node):
            raise GraphError(f"{node.id}: {node.kind.value} cannot take {len(node.inputs)} input(s)")
        for src in node.inputs:
            if src not in graph.nodes:
                raise GraphError(f"{node.id}: input {src!r} does not exist")
            if graph.nodes[src].kind is Kind.OUTPUT:
                raise GraphError(f"{node.id}: output node {src!r} cannot feed another node")
        roles = WEIGHT_ROLES.get(node.kind, ())
        expected = {r for r in roles if r not in ("bias",) or node.params.get("bias", True)}
        if set(node.weights) != expected:
            raise GraphError(f"{node.id}: weight roles {sorted(node.weights)} != expected {sorted(expected)}")
        for role, key in node.weights.items():
            if key not in graph.weights:
                raise MissingWeight(f"{node.id}: weight {key!r} ({role}) is missing")
        if node.kind is Kind.INPUT and node.params.get("modality") is None:
            raise GraphError(f"{node.id}: input node needs a modality label")
    order = graph.topo_order()
    # every output must be reachable from some input
    reach = set()
    for nid in order:
        n = graph.nodes[nid]
        if n.kind is Kind.INPUT or any(s in reach for s in n.inputs):
            reach.add(nid)
    for out in graph.outputs:
        if out not in reach:
            raise GraphError(f"output {out!r} is not reachable from any input")
    return order


def _spatial(extent, k, s, p, nid):
    o = (extent + 2 * p - k) // s + 1
    if o < 1:
        raise ShapeMismatch(f"window {k} (stride {s}, pad {p}) does not fit extent {extent}", nid)
    return o


def _expect_weight(graph, node, role, shape):
    arr = graph.weights[node.weights[role]]
    if tuple(arr.shape) != tuple(shape):
        raise ShapeMismatch(
            f"weight {node.weights[role]!r} has shape {tuple(arr.shape)}, expected {tuple(shape)}", node.id
        )


def _rank3(shape, nid):
    if len(shape) != 3:
        raise ShapeMismatch(f"expected a C x H x W feature map, got {shape}", nid)
    return shape


def node_shape(graph, node, in_shapes):
    """Output shape of ``node`` given its input shapes; checks weights too."""
    k, p, nid = node.kind, node.params, node.id
    if k is Kind.INPUT:
        shape = tuple(p["shape"])
        if len(shape) not in (1, 3) or min(shape) < 1:
            raise ShapeMismatch(f"invalid input shape {shape}", nid)
        return shape
    x = in_shapes[0] if in_shapes else None
    if k in (Kind.OUTPUT, Kind.RELU, Kind.SIGMOID):
        return x
    if k is Kind.CUSTOM:
        if any(s != x for s in in_shapes):
            raise ShapeMismatch(f"custom op inputs differ: {in_shapes}", nid)
        return x
    if k in (Kind.CONV2D, Kind.DEFORM_CONV2D):
        c, h, w = _rank3(x, nid)
        (k1, k2), (ph, pw), s = p["kernel"], p["padding"], p["stride"]
        g = p.get("groups", 1)
        if c % g or p["out"] % g:
            raise ShapeMismatch(f"groups={g} must divide in={c} and out={p['out']}", nid)
        _expect_weight(graph, node, "weight", (p["out"], c // g, k1, k2))
        if "bias" in node.weights:
            _expect_weight(graph, node, "bias", (p["out"],))
        oh, ow = _spatial(h, k1, s, ph, nid), _spatial(w, k2, s, pw, nid)
        if k is Kind.DEFORM_CONV2D:
            K = k1 * k2
            _expect_weight(graph, node, "offset_weight", (3 * K, c, k1, k2))
            _expect_weight(graph, node, "offset_bias", (3 * K,))
        return (p["out"], oh, ow)
    if k is Kind.LINEAR:
        if len(x) != 1:
            raise ShapeMismatch(f"linear needs a vector input, got {x}", nid)
        _expect_weight(graph, node, "weight", (p["out"], x[0]))
        if "bias" in node.weights:
            _expect_weight(graph, node, "bias", (p["out"],))
        return (p["out"],)
    if k is Kind.BATCHNORM:
        for role in WEIGHT_ROLES[k]:
            _expect_weight(graph, node, role, (x[0],))
        return x
    if k is Kind.ECA:
        _rank3(x, nid)
        kk = p["k"]
        if kk % 2 == 0:
            raise ShapeMismatch(f"ECA kernel size must be odd, got {kk}", nid)
        _expect_weight(graph, node, "weight", (kk,))
        return x
    if k is Kind.AVGPOOL:
        c, h, w = _rank3(x, nid)
        (k1, k2), (ph, pw), s = p["kernel"], p["padding"], p["stride"]
        return (c, _spatial(h, k1, s, ph, nid), _spatial(w, k2, s, pw, nid))
    if k is Kind.ADAPTIVE_AVGPOOL:
        c, h, w = _rank3(x, nid)
        return (c, p["size"], p["size"])
    if k is Kind.UPSAMPLE:
        c, h, w = _rank3(x, nid)
        return (c, h * p["scale"], w * p["scale"])
    if k is Kind.ADD:
        if any(s != x for s in in_shapes):
            raise ShapeMismatch(f"add inputs must share one shape, got {in_shapes}", nid)
        return x
    if k is Kind.CONCAT:
        if any(len(s) != len(x) or s[1:] != x[1:] for s in in_shapes):
            raise ShapeMismatch(f"concat inputs differ outside the channel axis: {in_shapes}", nid)
        return (sum(s[0] for s in in_shapes),) + tuple(x[1:])
    if k is Kind.SPLIT:
        sizes, idx = p["sizes"], p["index"]
        if sum(sizes) != x[0] or min(sizes) < 1 or not 0 <= idx < len(sizes):
            raise ShapeMismatch(f"split sizes {sizes} (index {idx}) do not partition {x[0]} channels", nid)
        return (sizes[idx],) + tuple(x[1:])
    if k is Kind.CHANNEL_SHUFFLE:
        c = x[0]
        perm = p.get("perm")
        if perm is not None:
            if sorted(perm) != list(range(c)):
                raise ShapeMismatch(f"shuffle permutation is not a permutation of {c} channels", nid)
        elif c % p["groups"]:
            raise ShapeMismatch(f"shuffle groups={p['groups']} does not divide {c} channels", nid)
        return x
    if k is Kind.FLATTEN:
        return (prod(x),)
    if k is Kind.PERMUTE:
        order = p["order"]
        if sorted(order) != list(range(len(x))):
            raise ShapeMismatch(f"permute order {order} does not match rank {len(x)}", nid)
        return tuple(x[i] for i in order)
    raise UnknownKind(f"{nid}: unknown kind {k}")


def infer_shapes(graph, order=None):
    """Return a copy of ``graph`` whose nodes carry their output shapes."""
    order = graph.topo_order() if order is None else order
    shapes = {}
    for nid in order:
        node = graph.nodes[nid]
        in_shapes = [shapes[s] for s in node.inputs]
        shape = node_shape(graph, node, in_shapes)
        if min(shape) < 1:
            raise ShapeMismatch(f"empty extent in {shape}", nid)
        shapes[nid] = tuple(int(d) for d in shape)
    nodes = {nid: replace(n, shape=shapes[nid]) for nid, n in graph.nodes.items()}
    return Graph(nodes, graph.weights, graph.name)


def validate_graph(graph):
    """Full check: structure, then shapes.  Returns the shape-annotated graph."""
    check_structure(graph)
    return infer_shapes(graph)


# ---------------------------------------------------------------------------
# parameter / MAC accounting
#
#   conv2d        out_c * out_h * out_w * (in_c / groups) * k1 * k2
#   deform_conv2d offset-conv MACs + out_c * out_h * out_w * in_c * K
#   linear        out * in
#   eca           channels * k
#   everything else (batchnorm, activations, pools, add, concat, shuffle, ...) 0


def conv_style(graph, node):
    """``"dense"`` (groups=1), ``"depthwise"`` (groups = in = out) or ``"grouped"``."""
    g = node.params.get("groups", 1)
    if g == 1:
        return "dense"
    w = graph.weights[node.weights["weight"]]
    if w.shape[1] == 1 and w.shape[0] == g:
        return "depthwise"
    return "grouped"


def node_macs(graph, node):
    k, p = node.kind, node.params
    if k is Kind.CONV2D:
        oc, oh, ow = node.shape
        ic = graph.nodes[node.inputs[0]].shape[0]
        k1, k2 = p["kernel"]
        return oc * oh * ow * (ic // p["groups"]) * k1 * k2
    if k is Kind.DEFORM_CONV2D:
        oc, oh, ow = node.shape
        ic = graph.nodes[node.inputs[0]].shape[0]
        k1, k2 = p["kernel"]
        K = k1 * k2
        return 3 * K * oh * ow * ic * k1 * k2 + oc * oh * ow * ic * K
    if k is Kind.LINEAR:
        return node.shape[0] * graph.nodes[node.inputs[0]].shape[0]
    if k is Kind.ECA:
        return node.shape[0] * p["k"]
    return 0


def count_params_macs(graph):
    """``(params, macs)``; params counts every stored weight element."""
    if any(n.shape is None for n in graph):
        graph = infer_shapes(graph)
    keys = {key for n in graph for key in n.weights.values()}
    params = sum(int(graph.weights[key].size) for key in keys)
    macs = sum(node_macs(graph, n) for n in graph)
    return params, macs


def as_f32(a):
    return np.asarray(a, dtype=np.float32, order="C")
