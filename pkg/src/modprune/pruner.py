"""Random index selection, structural slicing and the masked-twin oracle.

Kept channels are chosen per group from
``numpy.random.Generator(PCG64(SeedSequence([seed, group_id])))``: the first
``keep`` entries of a permutation of ``range(width)``, sorted.  PCG64 and
``Generator.permutation`` are fixed algorithms, so a selection depends only on
``(seed, group id, width, keep)``.

Slicing is driven by the channel trace: a position of any tensor survives iff
its channel is kept in the channel's group (or the channel belongs to no
prunable group).  Every parametric node is then sliced along its output axis
with its own mask and along its input axis with its input's mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EquivalenceFailure, RemapConflict, WidthUnderflow
from .graph import Graph, Kind, conv_style, count_params_macs, validate_graph
from .groups import build_groups, trace_channels
from .interpreter import forward


@dataclass
class IndexSelection:
    indices: dict  # group id -> sorted kept channel indices
    seed: int = 0

    def to_json(self):
        d = {"seed": self.seed, "indices": {str(k): list(map(int, v)) for k, v in sorted(self.indices.items())}}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls({int(k): list(v) for k, v in d["indices"].items()}, int(d.get("seed", 0)))


def _rng(seed, gid):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(gid)])))


def select_indices(plan, groups, seed):
    """Kept indices for every group; ``plan`` maps group id -> keep (or is a SparsityPlan)."""
    keeps = plan.keeps() if hasattr(plan, "keeps") else dict(plan)
    out = {}
    for g in groups:
        keep = g.width if g.protected else int(keeps.get(g.id, g.width))
        if not 1 <= keep <= g.width:
            raise WidthUnderflow(f"group {g.id}: keep {keep} outside [1, {g.width}]")
        if keep == g.width:
            out[g.id] = list(range(g.width))
        else:
            out[g.id] = sorted(int(i) for i in _rng(seed, g.id).permutation(g.width)[:keep])
    return IndexSelection(out, int(seed))


def _indices(selection):
    return selection.indices if isinstance(selection, IndexSelection) else dict(selection)


def channel_masks(graph, selection, trace=None, groups=None):
    """Boolean keep-mask over the output positions of every node."""
    trace = trace_channels(graph) if trace is None else trace
    groups = build_groups(graph, trace=trace) if groups is None else groups
    by_id = {g.id: g for g in groups}
    kept = {}
    for gid, idx in _indices(selection).items():
        if gid not in by_id:
            raise RemapConflict(f"selection names unknown group {gid}")
        g = by_id[gid]
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) < 1:
            raise WidthUnderflow(f"group {gid} would keep no channels")
        if len(np.unique(idx)) != len(idx) or idx.min() < 0 or idx.max() >= g.width:
            raise RemapConflict(f"group {gid}: indices must be unique and in [0, {g.width})")
        if g.protected and len(idx) != g.width:
            raise RemapConflict(f"group {gid} is protected ({','.join(g.reasons)}) but the selection drops channels")
        m = np.zeros(g.width, dtype=bool)
        m[idx] = True
        kept[g.root] = m
    masks = {}
    for nid in graph.nodes:
        src, idx = trace.src[nid], trace.idx[nid]
        m = np.ones(len(src), dtype=bool)
        for r, km in kept.items():
            hit = np.array([trace.cls(s) == r for s in src.tolist()], dtype=bool)
            if hit.any():
                m[hit] = km[idx[hit]]
        masks[nid] = m
    return masks


def _slice(arr, axis, mask):
    return arr if mask.all() else np.compress(mask, arr, axis=axis)


def apply_prune(graph, selection, trace=None, groups=None):
    """Return a new, validated graph with the unselected channels removed."""
    masks = channel_masks(graph, selection, trace, groups)
    nodes, weights = {}, {}

    def put(key, arr):
        if key in weights and (weights[key].shape != arr.shape or not np.array_equal(weights[key], arr)):
            raise RemapConflict(f"weight {key!r} is shared by nodes that need different slices")
        weights[key] = arr

    for nid, node in graph.nodes.items():
        k, p = node.kind, dict(node.params)
        W = {role: graph.weights[key] for role, key in node.weights.items()}
        out_m = masks[nid]
        in_m = masks[node.inputs[0]] if node.inputs else None
        new = dict(W)
        if k is Kind.CONV2D and conv_style(graph, node) == "depthwise":
            new["weight"] = _slice(W["weight"], 0, in_m)
            if "bias" in W:
                new["bias"] = _slice(W["bias"], 0, in_m)
            p["out"] = p["groups"] = int(in_m.sum())
        elif k in (Kind.CONV2D, Kind.DEFORM_CONV2D, Kind.LINEAR):
            if k is Kind.CONV2D and p.get("groups", 1) > 1 and not (in_m.all() and out_m.all()):
                raise RemapConflict(f"{nid}: grouped convolution cannot be sliced")
            new["weight"] = _slice(_slice(W["weight"], 0, out_m), 1, in_m)
            if "bias" in W:
                new["bias"] = _slice(W["bias"], 0, out_m)
            if k is Kind.DEFORM_CONV2D:
                new["offset_weight"] = _slice(W["offset_weight"], 1, in_m)
            p["out"] = int(out_m.sum())
        elif k is Kind.BATCHNORM:
            new = {role: _slice(a, 0, in_m) for role, a in W.items()}
        elif k is Kind.ECA and not in_m.all():
            raise RemapConflict(f"{nid}: channels feeding an ECA cannot be pruned")
        elif k is Kind.SPLIT:
            bounds = np.cumsum((0,) + tuple(p["sizes"]))
            sizes = tuple(int(in_m[a:b].sum()) for a, b in zip(bounds[:-1], bounds[1:]))
            if min(sizes) < 1:
                raise WidthUnderflow(f"{nid}: a split segment would lose every channel")
            p["sizes"] = sizes
        elif k is Kind.CHANNEL_SHUFFLE and not in_m.all():
            from .kernels import shuffle_perm

            perm = np.asarray(p["perm"]) if p.get("perm") is not None else shuffle_perm(len(in_m), p["groups"])
            new_pos = np.cumsum(in_m) - 1
            p["perm"] = tuple(int(new_pos[j]) for j in perm if in_m[j])
        if out_m.sum() < 1:
            raise WidthUnderflow(f"{nid}: no channels left")
        for role, arr in new.items():
            put(node.weights[role], arr)
        nodes[nid] = replace(node, params=p, shape=None)
    return validate_graph(Graph(nodes, weights, graph.name))


# ---------------------------------------------------------------------------
# masked twin


def masked_twin(graph, selection, trace=None, groups=None):
    """Original-width copy of ``graph`` in which pruned channels contribute nothing.

    Pruned filters lose their weights, biases and BN parameters, and every
    consumer's input slice for a pruned channel is zeroed.
    """
    masks = channel_masks(graph, selection, trace, groups)
    weights = {k: v.copy() for k, v in graph.weights.items()}
    for nid, node in graph.nodes.items():
        k = node.kind
        out_m = ~masks[nid]
        in_m = ~masks[node.inputs[0]] if node.inputs else None
        w = {role: weights[key] for role, key in node.weights.items()}
        if k is Kind.CONV2D and conv_style(graph, node) == "depthwise":
            w["weight"][in_m] = 0
            if "bias" in w:
                w["bias"][in_m] = 0
        elif k in (Kind.CONV2D, Kind.DEFORM_CONV2D, Kind.LINEAR):
            w["weight"][out_m] = 0
            w["weight"][:, in_m] = 0
            if "bias" in w:
                w["bias"][out_m] = 0
            if k is Kind.DEFORM_CONV2D:
                w["offset_weight"][:, in_m] = 0
        elif k is Kind.BATCHNORM:
            w["gamma"][in_m] = 0
            w["beta"][in_m] = 0
    return Graph(dict(graph.nodes), weights, graph.name)


@dataclass
class EquivalenceReport:
    max_abs_diff: float
    per_output: dict = field(default_factory=dict)
    trials: int = 0
    tol: float = 1e-5

    @property
    def passed(self):
        return self.max_abs_diff <= self.tol

    def to_json(self):
        return json.dumps({"max_abs_diff": self.max_abs_diff, "per_output": self.per_output, "trials": self.trials,
                           "tol": self.tol, "passed": self.passed}, indent=2, sort_keys=True) + "\n"


def random_inputs(graph, rng):
    return {nid: rng.standard_normal(graph.nodes[nid].shape).astype(np.float32) for nid in graph.inputs}


def verify_pruned(original, pruned, selection, trials=3, seed=0, tol=1e-5, dtype=np.float32):
    """Compare the pruned graph with the masked twin of the original on random inputs."""
    if any(n.shape is None for n in original):
        original = validate_graph(original)
    twin = masked_twin(original, selection)
    rng = np.random.default_rng(seed)
    worst, per_out, first = 0.0, {}, None
    for _ in range(trials):
        xs = random_inputs(original, rng)
        a = forward(twin, xs, dtype=dtype)
        b = forward(pruned, xs, dtype=dtype)
        for oid in original.outputs:
            if a[oid].shape != b[oid].shape:
                raise EquivalenceFailure(float("inf"), oid)
            d = float(np.max(np.abs(a[oid].astype(np.float64) - b[oid]))) if a[oid].size else 0.0
            per_out[oid] = max(per_out.get(oid, 0.0), d)
            if d > tol and first is None:
                first = oid
            worst = max(worst, d)
    if first is not None:
        raise EquivalenceFailure(worst, _first_divergent(twin, pruned, original, selection, rng) or first)
    return EquivalenceReport(worst, per_out, trials, tol)


def _first_divergent(twin, pruned, original, selection, rng):
    """Earliest node (topological order) whose kept channels disagree."""
    masks = channel_masks(original, selection)
    xs = random_inputs(original, rng)
    a = forward(twin, xs, dtype=np.float64, keep_all=True)
    b = forward(pruned, xs, dtype=np.float64, keep_all=True)
    for nid in original.topo_order():
        if nid not in b:
            continue
        ka = a[nid][masks[nid]] if a[nid].ndim and len(masks[nid]) == a[nid].shape[0] else a[nid]
        if ka.shape == b[nid].shape and np.max(np.abs(ka - b[nid]), initial=0.0) > 1e-6 * (1 + np.abs(ka).max(initial=0)):
            return nid
    return None


# ---------------------------------------------------------------------------
# reporting


def report_rows(baseline, others):
    """Rows of ``(name, macs, params, d_macs_pct, d_params_pct)`` relative to ``baseline``."""
    p0, m0 = count_params_macs(baseline)
    rows = [(baseline.name or "baseline", m0, p0, 0.0, 0.0)]
    for g in others:
        p, m = count_params_macs(g)
        rows.append((g.name or "pruned", m, p, 100.0 * (m - m0) / m0, 100.0 * (p - p0) / p0))
    return rows


def _pct(x):
    return "0.0%" if abs(x) < 0.05 else f"{x:+.1f}%"


def format_report(rows):
    lines = [f"{'model':<20} {'MACs(G)':>10} {'dMACs':>8} {'Params(M)':>10} {'dParams':>8}"]
    for name, m, p, dm, dp in rows:
        lines.append(f"{name:<20} {m / 1e9:>10.6f} {_pct(dm):>8} {p / 1e6:>10.6f} {_pct(dp):>8}")
    return "\n".join(lines)


def report_json(rows):
    return json.dumps([
        {"model": n, "macs": m, "params": p, "macs_delta_pct": round(dm, 6), "params_delta_pct": round(dp, 6)}
        for n, m, p, dm, dp in rows
    ], indent=2, sort_keys=True) + "\n"
