"""Modality tags, fusion stages and pre-fusion node sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import NoFusionFound
from .graph import Kind
from .groups import PruneClass, classify_node


class Tag(str, Enum):
    VISION = "vision"
    RADAR = "radar"
    BOTH = "both"
    NONE = "none"


_SINGLE = {"vision": Tag.VISION, "radar": Tag.RADAR}


def join(tags):
    """Least upper bound: none < vision, radar < both."""
    s = {t for t in tags if t is not Tag.NONE}
    if not s:
        return Tag.NONE
    if len(s) == 1:
        return s.pop()
    return Tag.BOTH


def propagate_tags(graph):
    tags = {}
    for nid in graph.topo_order():
        node = graph.nodes[nid]
        if node.kind is Kind.INPUT:
            tags[nid] = _SINGLE[node.params["modality"]]
        else:
            tags[nid] = join(tags[s] for s in node.inputs)
    return tags


@dataclass
class FusionStage:
    node: str
    prefusion: dict = field(default_factory=dict)  # modality Tag -> sorted list of node ids


def _prefusion(graph, start, depth):
    """InOut ancestors of ``start`` (inclusive) within ``depth`` parametric hops."""
    found = []
    frontier = [start]
    for _ in range(depth):
        nxt = []
        seen = set()
        while frontier:
            nid = frontier.pop()
            if nid in seen:
                continue
            seen.add(nid)
            node = graph.nodes[nid]
            if node.kind is Kind.INPUT:
                continue
            if classify_node(node, graph) is PruneClass.IN_OUT and node.weights:
                if nid not in found:
                    found.append(nid)
                nxt.extend(node.inputs)
            else:
                frontier.extend(node.inputs)
        frontier = nxt
    return found


def find_fusion_stages(graph, tags=None, depth=1):
    """Fusion nodes are tagged both with no predecessor tagged both."""
    tags = propagate_tags(graph) if tags is None else tags
    stages = []
    for nid in graph.topo_order():
        node = graph.nodes[nid]
        if tags[nid] is not Tag.BOTH or any(tags[s] is Tag.BOTH for s in node.inputs):
            continue
        pre = {}
        for s in node.inputs:
            t = tags[s]
            if t is Tag.NONE:
                continue
            for pn in _prefusion(graph, s, depth):
                pre.setdefault(t, [])
                if pn not in pre[t]:
                    pre[t].append(pn)
        stages.append(FusionStage(nid, {t: sorted(v) for t, v in sorted(pre.items())}))
    if not stages:
        raise NoFusionFound("graph never combines more than one input modality")
    return stages


def prefusion_nodes(stages):
    """Union of pre-fusion sets per modality across all stages."""
    out = {}
    for st in stages:
        for t, ids in st.prefusion.items():
            bucket = out.setdefault(t, [])
            bucket.extend(i for i in ids if i not in bucket)
    return out
