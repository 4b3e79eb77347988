"""Programmatic graph construction and the bundled model zoo.

Zoo models are small compositions of vision-radar detection building blocks:

``rcnet_block``     radar stem, RadarConv (3x3 avg pool + deformable conv) and an
                    RCBlock: ``conv1x1(BN(ReLU(f))) + f`` followed by a 1x1 feed-forward.
``inverted_block``  Dual-FPN inverted block: 1x1 convs on both inputs, x2 nearest
                    upsample, concat, then a conv unit.
``vrfn_fusion``     vision branch with an add-coupled residual, radar branch, ECA on
                    both, 1x1 conv after the radar ECA, concat and channel shuffle.
``mini_achelous``   vision + radar encoders, VRFN fusion and two conv heads.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph, Kind, Node, node_shape, validate_graph
from .manifest import normalize_params


class GraphBuilder:
    """Append nodes one at a time; weights are drawn from a seeded generator."""

    def __init__(self, name="", seed=0):
        self.name = name
        self.rng = np.random.default_rng(seed)
        self.nodes = {}
        self.weights = {}
        self.shapes = {}

    def _add(self, nid, kind, inputs=(), weights=None, **params):
        if nid in self.nodes:
            raise ValueError(f"duplicate node id {nid!r}")
        inputs = tuple(inputs)
        params = normalize_params(kind, params, nid)
        weights = weights or {}
        node = Node(nid, kind, inputs, params, weights)
        g = Graph(self.nodes, self.weights)
        self.shapes[nid] = tuple(node_shape(g, node, [self.shapes[s] for s in inputs]))
        self.nodes[nid] = node
        return nid

    def _uniform(self, shape, bound):
        return self.rng.uniform(-bound, bound, size=shape).astype(np.float32)

    def _put(self, key, arr):
        self.weights[key] = np.asarray(arr, dtype=np.float32)
        return key

    def channels(self, x):
        return self.shapes[x][0]

    # -- nodes ---------------------------------------------------------------

    def input(self, nid, modality, shape):
        return self._add(nid, Kind.INPUT, modality=modality, shape=tuple(shape))

    def output(self, nid, x):
        return self._add(nid, Kind.OUTPUT, (x,))

    def conv(self, nid, x, out, k=3, stride=1, padding=None, groups=1, bias=True):
        k = (k, k) if isinstance(k, int) else tuple(k)
        padding = (k[0] // 2, k[1] // 2) if padding is None else padding
        padding = (padding, padding) if isinstance(padding, int) else tuple(padding)
        cin = self.channels(x)
        fan_in = cin // groups * k[0] * k[1]
        w = {"weight": self._put(f"{nid}.weight", self._uniform((out, cin // groups) + k, np.sqrt(3.0 / fan_in)))}
        if bias:
            w["bias"] = self._put(f"{nid}.bias", self._uniform((out,), 1.0 / np.sqrt(fan_in)))
        return self._add(nid, Kind.CONV2D, (x,), w, out=out, kernel=k, stride=stride, padding=padding,
                         groups=groups, bias=bias)

    def depthwise(self, nid, x, k=3, stride=1, bias=False):
        c = self.channels(x)
        return self.conv(nid, x, c, k, stride, groups=c, bias=bias)

    def deform(self, nid, x, out, k=3, stride=1, padding=None, bias=True):
        k = (k, k) if isinstance(k, int) else tuple(k)
        padding = (k[0] // 2, k[1] // 2) if padding is None else padding
        padding = (padding, padding) if isinstance(padding, int) else tuple(padding)
        cin = self.channels(x)
        K = k[0] * k[1]
        fan_in = cin * K
        w = {
            "offset_weight": self._put(f"{nid}.offset.weight", self._uniform((3 * K, cin) + k, 0.1 / np.sqrt(fan_in))),
            "offset_bias": self._put(f"{nid}.offset.bias", self._uniform((3 * K,), 0.5)),
            "weight": self._put(f"{nid}.weight", self._uniform((out, cin) + k, np.sqrt(3.0 / fan_in))),
        }
        if bias:
            w["bias"] = self._put(f"{nid}.bias", self._uniform((out,), 1.0 / np.sqrt(fan_in)))
        return self._add(nid, Kind.DEFORM_CONV2D, (x,), w, out=out, kernel=k, stride=stride, padding=padding,
                         bias=bias)

    def linear(self, nid, x, out, bias=True):
        n = self.shapes[x][0]
        w = {"weight": self._put(f"{nid}.weight", self._uniform((out, n), np.sqrt(3.0 / n)))}
        if bias:
            w["bias"] = self._put(f"{nid}.bias", self._uniform((out,), 1.0 / np.sqrt(n)))
        return self._add(nid, Kind.LINEAR, (x,), w, out=out, bias=bias)

    def bn(self, nid, x, eps=1e-5):
        c = self.channels(x)
        r = self.rng
        w = {
            "gamma": self._put(f"{nid}.gamma", r.uniform(0.5, 1.5, c)),
            "beta": self._put(f"{nid}.beta", r.uniform(-0.2, 0.2, c)),
            "mean": self._put(f"{nid}.mean", r.uniform(-0.1, 0.1, c)),
            "var": self._put(f"{nid}.var", r.uniform(0.5, 1.5, c)),
        }
        return self._add(nid, Kind.BATCHNORM, (x,), w, eps=eps)

    def eca(self, nid, x, k=3):
        w = {"weight": self._put(f"{nid}.weight", self._uniform((k,), 1.0))}
        return self._add(nid, Kind.ECA, (x,), w, k=k)

    def relu(self, nid, x):
        return self._add(nid, Kind.RELU, (x,))

    def sigmoid(self, nid, x):
        return self._add(nid, Kind.SIGMOID, (x,))

    def avgpool(self, nid, x, k=3, stride=1, padding=None):
        k = (k, k) if isinstance(k, int) else tuple(k)
        padding = (k[0] // 2, k[1] // 2) if padding is None else padding
        padding = (padding, padding) if isinstance(padding, int) else tuple(padding)
        return self._add(nid, Kind.AVGPOOL, (x,), kernel=k, stride=stride, padding=padding)

    def adaptive_avgpool(self, nid, x, size=1):
        return self._add(nid, Kind.ADAPTIVE_AVGPOOL, (x,), size=size)

    def upsample(self, nid, x, scale=2):
        return self._add(nid, Kind.UPSAMPLE, (x,), scale=scale)

    def add(self, nid, *xs):
        return self._add(nid, Kind.ADD, xs)

    def concat(self, nid, *xs):
        return self._add(nid, Kind.CONCAT, xs)

    def split(self, nid, x, sizes, index):
        return self._add(nid, Kind.SPLIT, (x,), sizes=tuple(sizes), index=index)

    def shuffle(self, nid, x, groups):
        return self._add(nid, Kind.CHANNEL_SHUFFLE, (x,), groups=groups)

    def flatten(self, nid, x):
        return self._add(nid, Kind.FLATTEN, (x,))

    def permute(self, nid, x, order):
        return self._add(nid, Kind.PERMUTE, (x,), order=tuple(order))

    def custom(self, nid, name, *xs):
        return self._add(nid, Kind.CUSTOM, xs, name=name)

    def build(self):
        return validate_graph(Graph(dict(self.nodes), dict(self.weights), self.name))


# ---------------------------------------------------------------------------
# zoo


def _rcb(b, prefix, f):
    """RCBlock on top of a RadarConv output ``f``; returns the feed-forward output."""
    c = b.channels(f)
    r = b.relu(f"{prefix}.relu", f)
    n = b.bn(f"{prefix}.bn", r)
    w = b.conv(f"{prefix}.conv", n, c, k=1)
    s = b.add(f"{prefix}.add", w, f)
    return b.conv(f"{prefix}.ff", s, c, k=1)


def rcnet_block(seed=0):
    b = GraphBuilder("rcnet_block", seed)
    x = b.input("radar", "radar", (4, 8, 8))
    s = b.relu("stem.relu", b.bn("stem.bn", b.conv("stem", x, 8, k=3)))
    pooled = b.avgpool("radarconv.pool", s, k=3, stride=1, padding=1)
    f = b.deform("radarconv.dcn", pooled, 8, k=3)
    y = _rcb(b, "rcb", f)
    b.output("out", y)
    return b.build()


def inverted_block(seed=0):
    b = GraphBuilder("inverted_block", seed)
    fs = b.input("f_s", "vision", (16, 4, 4))
    fe = b.input("f_e", "vision", (8, 8, 8))
    e = b.conv("inv.enc_proj", fe, 16, k=1)
    s = b.conv("inv.shared_proj", fs, 16, k=1)
    up = b.upsample("inv.up", s, 2)
    cat = b.concat("inv.cat", e, up)
    u = b.relu("unit.relu", b.bn("unit.bn", b.conv("unit.conv1", cat, 16, k=1)))
    y = b.conv("unit.conv2", u, 8, k=3)
    b.output("out", y)
    return b.build()


def _vrfn(b, prefix, f_r, f_v, k=3, shuffle_groups=2):
    """ECA + 1x1 conv on radar, ECA on vision, concat (radar first), channel shuffle."""
    r = b.conv(f"{prefix}.ecac.conv", b.eca(f"{prefix}.ecac.eca", f_r, k), b.channels(f_r), k=1)
    v = b.eca(f"{prefix}.eca", f_v, k)
    cat = b.concat(f"{prefix}.cat", r, v)
    return b.shuffle(f"{prefix}.shuffle", cat, shuffle_groups)


def vrfn_fusion(seed=0):
    b = GraphBuilder("vrfn_fusion", seed)
    vis = b.input("vision", "vision", (16, 8, 8))
    rad = b.input("radar", "radar", (4, 8, 8))
    va = b.relu("vis.relu_a", b.bn("vis.bn_a", b.conv("vis.conv_a", vis, 16, k=3)))
    vb = b.conv("vis.conv_b", va, 16, k=1)
    vs = b.conv("vis.shortcut", vis, 16, k=1)
    v = b.relu("vis.relu", b.add("vis.add", vb, vs))
    f_v = b.conv("vis.proj", v, 16, k=1)
    f_r = b.relu("rad.relu", b.bn("rad.bn", b.conv("rad.conv", rad, 8, k=3)))
    fused = _vrfn(b, "vrfn", f_r, f_v)
    y = b.conv("head", fused, 8, k=1)
    b.output("out", y)
    return b.build()


def mini_achelous(seed=0):
    b = GraphBuilder("mini_achelous", seed)
    img = b.input("image", "vision", (3, 16, 16))
    rad = b.input("radar", "radar", (4, 16, 16))
    # vision encoder
    x = b.relu("vision.stem.relu", b.bn("vision.stem.bn", b.conv("vision.stem", img, 16, k=3, stride=2)))
    x = b.relu("vision.dw.relu", b.bn("vision.dw.bn", b.depthwise("vision.dw", x)))
    x = b.bn("vision.pw.bn", b.conv("vision.pw", x, 24, k=1))
    a = b.sigmoid("vision.attn.gate", b.conv("vision.attn.qkv", x, 48, k=1))
    a = b.conv("vision.attn.proj", a, 24, k=1)
    f_v = b.relu("vision.out", b.add("vision.attn.add", a, x))
    # radar encoder: stem, RadarConv, RCBlock, downsample
    r = b.relu("radar.stem.relu", b.bn("radar.stem.bn", b.conv("radar.stem", rad, 8, k=3)))
    r = b.deform("radar.dcn", b.avgpool("radar.pool", r, k=3, stride=1, padding=1), 8, k=3)
    r = _rcb(b, "radar.rcb", r)
    f_r = b.avgpool("radar.down", r, k=2, stride=2, padding=0)
    # fusion + neck
    fused = _vrfn(b, "vrfn", f_r, f_v)
    n = b.relu("neck.relu", b.bn("neck.bn", b.conv("neck.conv", fused, 32, k=3)))
    # heads
    det = b.conv("head.det", n, 10, k=1)
    s = b.relu("head.seg.relu", b.conv("head.seg.conv", b.upsample("head.seg.up", n, 2), 16, k=3))
    seg = b.conv("head.seg.out", s, 3, k=1)
    b.output("det", det)
    b.output("seg", seg)
    return b.build()


ZOO = {
    "rcnet_block": rcnet_block,
    "inverted_block": inverted_block,
    "vrfn_fusion": vrfn_fusion,
    "mini_achelous": mini_achelous,
}


def load_zoo(name, seed=0):
    try:
        return ZOO[name](seed)
    except KeyError:
        raise KeyError(f"unknown zoo model {name!r}; available: {sorted(ZOO)}") from None
