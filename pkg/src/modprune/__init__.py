"""Structural pruning at initialization for multi-modal network graphs."""

from .errors import ModPruneError
from .graph import Graph, Kind, Node, count_params_macs, infer_shapes, validate_graph
from .groups import PruneClass, build_groups, classify_node, mark_protected
from .interpreter import deform_conv2d, forward, radar_conv
from .manifest import load_model, save_model
from .modality import Tag, find_fusion_stages, propagate_tags
from .power import PowerTrace, avp, eps, load_trace
from .pruner import IndexSelection, apply_prune, select_indices, verify_pruned
from .saliency import linearize, modality_scores, synflow_scores
from .sparsity import PlanConfig, channel_budget, erk_ratio, group_sparsity, ha_synflow_sparsity, make_plan
from .zoo import ZOO, load_zoo

__version__ = "0.1.0"
