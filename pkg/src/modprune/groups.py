"""Node taxonomy and pruning-group discovery.

Every tensor in the graph is traced channel by channel back to the node that
created the channel (its *source*): an InOut layer's filters, a graph input, or
an opaque producer.  Add-like nodes tie the sources they combine (identical
indices), Concat/Split/Shuffle only move positions around, and OutOut nodes pass
provenance straight through.  A pruning group is a union-find class of tied
sources; its members are the filter dimensions of the class plus every node that
consumes one of its channels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from fnmatch import fnmatchcase

import numpy as np

from .errors import InconsistentWidth, PatternMatchesNothing, UnknownKind, UnsupportedReshape
from .graph import CUSTOM_OPS, Kind, conv_style
from .kernels import shuffle_perm


class PruneClass(str, Enum):
    IN_OUT = "InOut"
    OUT_OUT = "OutOut"
    IN_IN = "InIn"
    REMAP = "Remap"
    RESHAPE = "Reshape"
    DUMMY = "Dummy"
    CUSTOM = "Custom"


_FIXED_CLASS = {
    Kind.INPUT: PruneClass.DUMMY,
    Kind.OUTPUT: PruneClass.DUMMY,
    Kind.LINEAR: PruneClass.IN_OUT,
    Kind.DEFORM_CONV2D: PruneClass.IN_OUT,
    Kind.BATCHNORM: PruneClass.OUT_OUT,
    Kind.ECA: PruneClass.OUT_OUT,
    Kind.RELU: PruneClass.OUT_OUT,
    Kind.SIGMOID: PruneClass.OUT_OUT,
    Kind.AVGPOOL: PruneClass.OUT_OUT,
    Kind.ADAPTIVE_AVGPOOL: PruneClass.OUT_OUT,
    Kind.UPSAMPLE: PruneClass.OUT_OUT,
    Kind.CHANNEL_SHUFFLE: PruneClass.OUT_OUT,
    Kind.ADD: PruneClass.IN_IN,
    Kind.CONCAT: PruneClass.REMAP,
    Kind.SPLIT: PruneClass.REMAP,
    Kind.FLATTEN: PruneClass.RESHAPE,
    Kind.PERMUTE: PruneClass.RESHAPE,
}


def classify_node(node, graph=None):
    """Prune class of ``node``.  Depthwise detection needs ``graph`` for weight shapes."""
    if node.kind in _FIXED_CLASS:
        return _FIXED_CLASS[node.kind]
    if node.kind is Kind.CONV2D:
        g = node.params.get("groups", 1)
        if g == 1:
            return PruneClass.IN_OUT
        style = conv_style(graph, node) if graph is not None else ("depthwise" if g == node.params["out"] else "grouped")
        return PruneClass.OUT_OUT if style == "depthwise" else PruneClass.IN_OUT
    if node.kind is Kind.CUSTOM:
        op = CUSTOM_OPS.get(node.params.get("name"))
        if op is None:
            raise UnknownKind(f"{node.id}: custom op {node.params.get('name')!r} has no declared prune class")
        return PruneClass(op.prune_class)
    raise UnknownKind(f"{node.id}: unknown kind {node.kind}")


class UnionFind:
    def __init__(self, n=0):
        self.parent = list(range(n))

    def add(self):
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller index wins so roots are stable under re-runs
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


@dataclass
class Source:
    node: str
    width: int
    kind: str  # "filter" | "input" | "opaque"


@dataclass
class ChannelTrace:
    """Per-position provenance of every node output."""

    sources: list
    src: dict  # node id -> int array (source index per position)
    idx: dict  # node id -> int array (channel index within that source)
    uf: UnionFind
    pinned: dict  # source index -> set of reasons
    filter_source: dict  # InOut node id -> source index

    def cls(self, s):
        return self.uf.find(s)


def _pin(trace, sources, reason):
    for s in np.unique(sources):
        trace.pinned.setdefault(int(s), set()).add(reason)


def _new_source(trace, node_id, width, kind):
    s = len(trace.sources)
    trace.sources.append(Source(node_id, width, kind))
    trace.uf.add()
    trace.src[node_id] = np.full(width, s, dtype=np.int64)
    trace.idx[node_id] = np.arange(width, dtype=np.int64)
    return s


def _tie(trace, a_src, a_idx, b_src, b_idx):
    """Elementwise tie of two provenance vectors (add-like node)."""
    pairs = set(zip(a_src.tolist(), a_idx.tolist(), b_src.tolist(), b_idx.tolist()))
    bad = set()
    for sa, ia, sb, ib in sorted(pairs):
        if sa == sb and ia == ib:
            continue
        if ia != ib or trace.sources[sa].width != trace.sources[sb].width:
            bad.update((sa, sb))
        else:
            trace.uf.union(sa, sb)
    if bad:
        _pin(trace, np.array(sorted(bad)), "misaligned")


def trace_channels(graph):
    """Propagate channel provenance through ``graph`` (shape-annotated)."""
    trace = ChannelTrace([], {}, {}, UnionFind(), {}, {})
    for nid in graph.topo_order():
        node = graph.nodes[nid]
        k, p = node.kind, node.params
        cls = classify_node(node, graph)
        ins = node.inputs
        if k is Kind.INPUT:
            s = _new_source(trace, nid, node.shape[0], "input")
            _pin(trace, [s], "input")
            continue
        x_src = trace.src[ins[0]] if ins else None
        x_idx = trace.idx[ins[0]] if ins else None
        if k is Kind.OUTPUT:
            _pin(trace, x_src, "output")
            trace.src[nid], trace.idx[nid] = x_src, x_idx
        elif cls is PruneClass.IN_OUT:
            width = node.shape[0]
            if k is Kind.CUSTOM:
                s = _new_source(trace, nid, width, "opaque")
                _pin(trace, [s], "custom")
                _pin(trace, x_src, "custom")
                continue
            s = _new_source(trace, nid, width, "filter")
            trace.filter_source[nid] = s
            if k is Kind.CONV2D and p.get("groups", 1) > 1:
                _pin(trace, [s], "grouped-conv")
                _pin(trace, x_src, "grouped-conv")
        elif cls is PruneClass.OUT_OUT:
            if k is Kind.ECA:
                _pin(trace, x_src, "eca")
            if k is Kind.CHANNEL_SHUFFLE:
                perm = np.asarray(p["perm"]) if p.get("perm") is not None else shuffle_perm(len(x_src), p["groups"])
                trace.src[nid], trace.idx[nid] = x_src[perm], x_idx[perm]
            else:
                trace.src[nid], trace.idx[nid] = x_src, x_idx
        elif cls is PruneClass.IN_IN:
            for other in ins[1:]:
                _tie(trace, x_src, x_idx, trace.src[other], trace.idx[other])
            trace.src[nid], trace.idx[nid] = x_src, x_idx
        elif k is Kind.CONCAT:
            trace.src[nid] = np.concatenate([trace.src[i] for i in ins])
            trace.idx[nid] = np.concatenate([trace.idx[i] for i in ins])
        elif k is Kind.SPLIT:
            sizes = p["sizes"]
            bounds = np.cumsum((0,) + tuple(sizes))
            for j in range(len(sizes)):
                inside = set(x_src[bounds[j] : bounds[j + 1]].tolist())
                outside = set(x_src[: bounds[j]].tolist()) | set(x_src[bounds[j + 1] :].tolist())
                if inside & outside:
                    _pin(trace, np.array(sorted(inside & outside)), "split")
            a, b = bounds[p["index"]], bounds[p["index"] + 1]
            trace.src[nid], trace.idx[nid] = x_src[a:b], x_idx[a:b]
        elif k is Kind.FLATTEN:
            in_shape = graph.nodes[ins[0]].shape
            rep = int(np.prod(in_shape[1:])) if len(in_shape) > 1 else 1
            trace.src[nid], trace.idx[nid] = np.repeat(x_src, rep), np.repeat(x_idx, rep)
        elif k is Kind.PERMUTE:
            if p["order"][0] != 0:
                raise UnsupportedReshape(f"{nid}: permute {p['order']} moves the channel axis")
            trace.src[nid], trace.idx[nid] = x_src, x_idx
        else:  # Dummy-class custom ops
            s = _new_source(trace, nid, node.shape[0], "opaque")
            _pin(trace, [s], "custom")
            _pin(trace, x_src, "custom")
    return trace


@dataclass
class PruneGroup:
    id: int
    width: int
    filters: tuple  # InOut node ids whose filter dimension is in the group
    members: tuple  # (node id, "filter" | "channel")
    offsets: dict = field(default_factory=dict)  # member id -> first position of the group in its input
    protected: bool = False
    reasons: tuple = ()
    root: int = -1  # union-find root (internal)

    def member_ids(self, dim=None):
        return [n for n, d in self.members if dim is None or d == dim]


_SLICE_MEMBER_KINDS = {Kind.BATCHNORM, Kind.ECA, Kind.CONCAT, Kind.SPLIT, Kind.CHANNEL_SHUFFLE}


def build_groups(graph, protect=(), trace=None):
    """Discover pruning groups; ``protect`` holds fnmatch patterns over weight keys."""
    trace = trace_channels(graph) if trace is None else trace
    order = graph.topo_order()
    roots = {}
    for nid in order:
        if nid in trace.filter_source:
            r = trace.cls(trace.filter_source[nid])
            roots.setdefault(r, []).append(nid)
    reasons = {}
    for s, why in trace.pinned.items():
        reasons.setdefault(trace.cls(s), set()).update(why)
    groups = []
    for gid, (root, filters) in enumerate(roots.items()):
        widths = {trace.sources[trace.filter_source[f]].width for f in filters}
        if len(widths) != 1:
            raise InconsistentWidth(f"filters {filters} are tied but have widths {sorted(widths)}")
        members = [(f, "filter") for f in filters]
        offsets = {}
        for nid in order:
            node = graph.nodes[nid]
            if not node.inputs or node.kind is Kind.OUTPUT:
                continue
            cls = classify_node(node, graph)
            if not (cls is PruneClass.IN_OUT or node.kind in _SLICE_MEMBER_KINDS or (
                    node.kind is Kind.CONV2D and cls is PruneClass.OUT_OUT)):
                continue
            pos = _member_positions(trace, node, root)
            if pos:
                members.append((nid, "channel"))
                offsets[nid] = pos[0]
        why = tuple(sorted(reasons.get(root, ())))
        groups.append(PruneGroup(gid, widths.pop(), tuple(filters), tuple(members), offsets, bool(why), why, root))
    if protect:
        mark_protected(graph, protect, groups)
    return groups


def _member_positions(trace, node, root):
    """Positions (over the concatenated inputs) whose channel belongs to ``root``."""
    pos, base = [], 0
    seen = set()
    for src_id in node.inputs:
        if src_id in seen and node.kind is not Kind.CONCAT:
            continue
        seen.add(src_id)
        src = trace.src[src_id]
        hits = [base + i for i, s in enumerate(src.tolist()) if trace.cls(s) == root]
        pos.extend(hits)
        base += len(src)
        if node.kind is not Kind.CONCAT:
            break
    return pos


def mark_protected(graph, patterns, groups):
    """Flag groups whose filter/OutOut members own a weight key matching a pattern.

    Returns the set of matching group ids (already-protected groups included).
    """
    hit = set()
    all_keys = [k for n in graph for k in n.weights.values()]
    for pat in patterns:
        if not any(fnmatchcase(k, pat) for k in all_keys):
            warnings.warn(f"protection pattern {pat!r} matches no weight key", PatternMatchesNothing, stacklevel=2)
    for g in groups:
        keys = []
        for nid, dim in g.members:
            node = graph.nodes[nid]
            if dim == "filter" or classify_node(node, graph) is PruneClass.OUT_OUT:
                keys.extend(node.weights.values())
        if any(fnmatchcase(k, pat) for k in keys for pat in patterns):
            hit.add(g.id)
            if "pattern" not in g.reasons:
                g.reasons = tuple(sorted(g.reasons + ("pattern",)))
            g.protected = True
    return hit


def format_groups(groups):
    rows = [("group", "width", "protected", "members")]
    for g in groups:
        mem = ", ".join(f"{n}.{d}" for n, d in g.members)
        flag = ",".join(g.reasons) if g.protected else "-"
        rows.append((str(g.id), str(g.width), flag, mem))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = [f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:<{widths[2]}}  {r[3]}" for r in rows]
    return "\n".join(lines)


def groups_to_json(groups):
    return [
        {
            "id": g.id,
            "width": g.width,
            "filters": list(g.filters),
            "members": [[n, d] for n, d in g.members],
            "offsets": g.offsets,
            "protected": g.protected,
            "reasons": list(g.reasons),
        }
        for g in groups
    ]
