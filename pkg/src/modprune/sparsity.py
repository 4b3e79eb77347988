"""Layer/group sparsity allocation and integer channel budgets.

A sparsity ratio is the fraction of weights *removed*.  Methods:

* ``uniform``     every group gets ``rho_global``;
* ``erk``         per-layer Erdos-Renyi-Kernel ratio, minimum over the group;
* ``ha-synflow``  per-modality ratio from pre-fusion SynFlow scores, applied
                  either directly (``ha_base="uniform"``) or in place of
                  ``rho_global`` inside the ERK formula (``ha_base="erk"``).

Channel pruning removes weights on both sides of a layer, so a group ratio is
not its channel ratio.  ``match_params`` (default on) rescales the group ratios
by one common factor and then nudges single groups by one channel so that the
pruned parameter count lands as close as possible to ``rho_global``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateScore, NoFusionFound
from .graph import Kind, conv_style
from .groups import PruneClass, build_groups, classify_node, trace_channels
from .modality import Tag, find_fusion_stages, prefusion_nodes, propagate_tags

METHODS = ("uniform", "erk", "ha-synflow")


@dataclass(frozen=True)
class LayerDims:
    n_in: int
    n_out: int
    k1: int | None = None
    k2: int | None = None


def erk_ratio(dims, rho_global):
    """ERK sparsity for one layer, clipped below at 0."""
    if dims.k1 is None:
        num = dims.n_in + dims.n_out
        den = dims.n_in * dims.n_out
    else:
        num = dims.n_in + dims.n_out + dims.k1 + dims.k2
        den = dims.n_in * dims.n_out * dims.k1 * dims.k2
    return max(0.0, rho_global * (1.0 - num / den))


def layer_dims(graph, node_id):
    node = graph.nodes[node_id]
    n_in = graph.nodes[node.inputs[0]].shape[0]
    if node.kind is Kind.LINEAR:
        return LayerDims(n_in, node.params["out"])
    k1, k2 = node.params["kernel"]
    return LayerDims(n_in // node.params.get("groups", 1), node.params["out"], k1, k2)


def group_sparsity(groups, layer_rho):
    """Group ratio = the smallest member-layer ratio; protected groups get 0."""
    out = {}
    for g in groups:
        out[g.id] = 0.0 if g.protected else min(layer_rho[f] for f in g.filters)
    return out


def ha_synflow_sparsity(scores, rho_global, rho_max=0.95, log_base="e"):
    """Per-modality ratios from modality scores; returns ``(rho_m, rho_mixed)``.

    ``rho_m = rho_g + (1 - rho_g) * log(mean_score / score_m)`` clipped to
    ``[0, rho_max]``; modules mixing modalities take the mean of the ``rho_m``.
    """
    if len(scores) < 2:
        raise DegenerateScore(f"need at least two scored modalities, got {len(scores)}")
    vals = list(scores.values())
    if any(not math.isfinite(v) or v <= 0 for v in vals):
        raise DegenerateScore(f"modality scores must be positive and finite: {scores}")
    log = {"e": math.log, "10": math.log10}[str(log_base)]
    mean = sum(vals) / len(vals)
    rho = {}
    for m, s in scores.items():
        r = rho_global + (1.0 - rho_global) * log(mean / s)
        rho[m] = min(max(r, 0.0), rho_max)
    mixed = sum(rho.values()) / len(rho)
    return rho, mixed


def channel_budget(width, rho):
    """Channels kept: ``max(1, round_half_up(width * (1 - rho)))``."""
    return max(1, int(math.floor(width * (1.0 - rho) + 0.5)))


# ---------------------------------------------------------------------------
# parameter model: pruned parameter count as a function of per-group keeps


class ParamModel:
    """Exact pruned parameter count for given per-class keep counts."""

    def __init__(self, graph, trace=None, groups=None):
        self.graph = graph
        self.trace = trace_channels(graph) if trace is None else trace
        self.groups = build_groups(graph, trace=self.trace) if groups is None else groups
        self.root_of = {g.id: g.root for g in self.groups}
        self.width = {g.root: g.width for g in self.groups}
        self._terms = []
        for node in graph:
            if not node.weights:
                continue
            cin = self._class_counts(node.inputs[0])
            own = self.trace.cls(self.trace.filter_source[node.id]) if node.id in self.trace.filter_source else None
            self._terms.append((node, cin, own))
        self.total = sum(int(graph.weights[k].size) for n in graph for k in n.weights.values())

    def _class_counts(self, tensor_id):
        counts = {}
        for s in self.trace.src[tensor_id].tolist():
            r = self.trace.cls(s)
            counts[r] = counts.get(r, 0) + 1
        return counts

    def _kept(self, counts, keep):
        n = 0.0
        for r, c in counts.items():
            if r in keep:
                n += c * keep[r] / self.width[r]
            else:
                n += c
        return n

    def count(self, keeps):
        """``keeps``: group id -> kept channels."""
        keep = {self.root_of[g]: k for g, k in keeps.items()}
        total = 0.0
        for node, cin, own in self._terms:
            k, p = node.kind, node.params
            n_in = self._kept(cin, keep)
            n_out = keep.get(own, node.shape[0]) if own is not None else node.shape[0]
            bias = 1 if "bias" in node.weights else 0
            if k is Kind.CONV2D:
                k1, k2 = p["kernel"]
                style = conv_style(self.graph, node)
                if style == "depthwise":
                    total += n_in * (k1 * k2 + bias)
                elif style == "grouped":
                    total += self.graph.weight_count(node.id)
                else:
                    total += n_out * (n_in * k1 * k2 + bias)
            elif k is Kind.DEFORM_CONV2D:
                k1, k2 = p["kernel"]
                K = k1 * k2
                total += 3 * K * (n_in * K + 1) + n_out * (n_in * K + bias)
            elif k is Kind.LINEAR:
                total += n_out * (n_in + bias)
            elif k is Kind.BATCHNORM:
                total += 4 * n_in
            else:
                total += self.graph.weight_count(node.id)
        return int(round(total))

    def sparsity(self, keeps):
        return 1.0 - self.count(keeps) / self.total


def match_budget(model, groups, rho, target, rho_max=0.95):
    """Channel keeps whose parameter sparsity is closest to ``target``.

    First a common scale ``s`` on the group ratios is bisected, then single
    groups move by one channel while that strictly reduces the gap.
    """
    free = [g for g in groups if not g.protected and rho[g.id] > 0]

    def keeps_for(s):
        return {g.id: (channel_budget(g.width, min(rho_max, s * rho[g.id])) if g in free else g.width) for g in groups}

    if not free or target <= 0:
        return keeps_for(1.0 if target > 0 else 0.0)
    hi = rho_max / min(rho[g.id] for g in free)
    if model.sparsity(keeps_for(hi)) < target:
        best = keeps_for(hi)
    else:
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if model.sparsity(keeps_for(mid)) >= target:
                hi = mid
            else:
                lo = mid
        a, b = keeps_for(lo), keeps_for(hi)
        best = a if abs(model.sparsity(a) - target) < abs(model.sparsity(b) - target) else b
    gap = abs(model.sparsity(best) - target)
    floor = {g.id: channel_budget(g.width, rho_max) for g in free}
    for _ in range(10 * len(free) * max(g.width for g in free)):
        move = None
        for g in free:
            for d in (-1, 1):
                k = best[g.id] + d
                if k < floor[g.id] or k > g.width:
                    continue
                trial = dict(best)
                trial[g.id] = k
                t = abs(model.sparsity(trial) - target)
                if t < gap - 1e-12:
                    gap, move = t, trial
        if move is None:
            break
        best = move
    return best


# ---------------------------------------------------------------------------
# plans


@dataclass
class PlanConfig:
    method: str = "erk"
    sparsity: float = 0.5
    seed: int = 0
    ha_base: str = "erk"
    prefusion_depth: int = 1
    rho_max: float = 0.95
    log_base: str = "e"
    protect: tuple = ()
    match_params: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if self.ha_base not in ("erk", "uniform"):
            raise ValueError(f"ha_base must be erk or uniform, got {self.ha_base!r}")
        if str(self.log_base) not in ("e", "10"):
            raise ValueError(f"log_base must be e or 10, got {self.log_base!r}")
        if not 0.0 <= self.rho_max < 1.0:
            raise ValueError(f"rho_max must lie in [0, 1), got {self.rho_max}")
        self.protect = tuple(self.protect)


@dataclass
class GroupPlan:
    id: int
    width: int
    rho: float
    channel_rho: float
    keep: int
    protected: bool
    tag: str
    notes: list = field(default_factory=list)


@dataclass
class SparsityPlan:
    model: str
    config: PlanConfig
    groups: list
    modality: dict = field(default_factory=dict)
    params_before: int = 0
    params_after: int = 0
    notes: list = field(default_factory=list)

    @property
    def achieved(self):
        return 1.0 - self.params_after / self.params_before if self.params_before else 0.0

    def keeps(self):
        return {g.id: g.keep for g in self.groups}

    def to_json(self):
        d = {
            "model": self.model,
            "config": asdict(self.config),
            "groups": [asdict(g) for g in self.groups],
            "modality": self.modality,
            "params_before": self.params_before,
            "params_after": self.params_after,
            "achieved_param_sparsity": self.achieved,
            "notes": self.notes,
        }
        d["config"]["protect"] = list(self.config.protect)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        cfg = PlanConfig(**d["config"])
        groups = [GroupPlan(**g) for g in d["groups"]]
        return cls(d["model"], cfg, groups, d.get("modality", {}), d["params_before"], d["params_after"],
                   d.get("notes", []))


def _group_tags(groups, tags):
    from .modality import join

    return {g.id: join(tags[f] for f in g.filters) for g in groups}


def make_plan(graph, config):
    """Allocate per-group sparsity for ``graph`` and turn it into channel keeps."""
    trace = trace_channels(graph)
    groups = build_groups(graph, protect=config.protect, trace=trace)
    tags = propagate_tags(graph)
    gtags = _group_tags(groups, tags)
    rho_g = config.sparsity
    notes = {g.id: [] for g in groups}
    plan_notes = []
    modality = {}
    base = {g.id: rho_g for g in groups}  # the "global" ratio each group feeds into its rule
    method = config.method
    if method == "ha-synflow":
        from .saliency import linearize, modality_scores, synflow_scores

        try:
            stages = find_fusion_stages(graph, tags, config.prefusion_depth)
        except NoFusionFound:
            stages = None
            plan_notes.append(f"no fusion stage: ha-synflow falls back to {config.ha_base}")
        if stages is not None:
            sal = synflow_scores(linearize(graph))
            ms = modality_scores(sal, graph, prefusion_nodes(stages))
            rho_m, rho_mixed = ha_synflow_sparsity(ms.scores, rho_g, config.rho_max, config.log_base)
            modality = {
                "fusion_stages": [st.node for st in stages],
                "scores": {t.value: v for t, v in ms.scores.items()},
                "counts": {t.value: v for t, v in ms.counts.items()},
                "prefusion": {t.value: v for t, v in ms.nodes.items()},
                "rho": {t.value: v for t, v in rho_m.items()},
                "rho_mixed": rho_mixed,
                "R": sal.R,
            }
            for g in groups:
                t = gtags[g.id]
                if t is Tag.BOTH:
                    base[g.id] = rho_mixed
                    notes[g.id].append("modality:both")
                elif t in rho_m:
                    base[g.id] = rho_m[t]
                    notes[g.id].append(f"modality:{t.value}")
                else:
                    notes[g.id].append("modality:untagged")
        method = config.ha_base
    if method == "erk":
        layer = {}
        for g in groups:
            for f in g.filters:
                layer[f] = erk_ratio(layer_dims(graph, f), base[g.id])
        rho = group_sparsity(groups, layer)
        for g in groups:
            if len(g.filters) > 1:
                notes[g.id].append("min-in-group")
    else:
        rho = {g.id: (0.0 if g.protected else base[g.id]) for g in groups}
    rho = {gid: min(max(r, 0.0), config.rho_max) for gid, r in rho.items()}
    for g in groups:
        if g.protected:
            notes[g.id].append("protected:" + ",".join(g.reasons))
    model = ParamModel(graph, trace, groups)
    if config.match_params:
        keeps = match_budget(model, groups, rho, rho_g, config.rho_max)
    else:
        keeps = {g.id: (g.width if g.protected else channel_budget(g.width, rho[g.id])) for g in groups}
    plans = [
        GroupPlan(g.id, g.width, float(rho[g.id]), 1.0 - keeps[g.id] / g.width, int(keeps[g.id]), g.protected,
                  gtags[g.id].value, notes[g.id])
        for g in groups
    ]
    return SparsityPlan(graph.name, config, plans, modality, model.total, model.count(keeps), plan_notes)
