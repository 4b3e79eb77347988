"""``modprune`` command line.

Exit codes: 0 success, 1 usage error, 2 validation/input failure,
3 pruned graph not equivalent to its masked original.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import EquivalenceFailure, ModPruneError
from .graph import count_params_macs
from .groups import build_groups, format_groups, groups_to_json
from .interpreter import forward
from .manifest import MANIFEST_NAME, load_model, pack_tensors, save_model, unpack_tensors
from .modality import find_fusion_stages, prefusion_nodes, propagate_tags
from .power import avp, eps, load_trace
from .pruner import IndexSelection, apply_prune, format_report, report_json, report_rows, select_indices, verify_pruned
from .saliency import linearize, modality_scores, synflow_scores
from .sparsity import SparsityPlan, make_plan
from .zoo import ZOO, load_zoo

log = logging.getLogger("modprune")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def open_model(ref, seed=0):
    """A saved model directory, or a zoo model named by the path's last component."""
    p = Path(ref)
    if (p / MANIFEST_NAME).is_file():
        return load_model(p)
    if p.name in ZOO:
        return load_zoo(p.name, seed)
    raise ModPruneError(f"{ref!r} is neither a model directory nor a zoo model ({', '.join(ZOO)})")


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _config(args):
    return RunConfig(
        subcommand=args.cmd,
        model=getattr(args, "model", None),
        method=args.method,
        sparsity=args.sparsity,
        seed=args.seed,
        ha_base=args.ha_base,
        prefusion_depth=args.prefusion_depth,
        rho_max=args.rho_max,
        log_base=args.log_base,
        protect=tuple(args.protect),
        match_params=not args.no_match_params,
        outputs={"plan": args.out},
        verbosity=args.verbose,
    )


def cmd_validate(args):
    g = open_model(args.model)
    params, macs = count_params_macs(g)
    print(f"{g.name}: {len(g.nodes)} nodes, {params} params, {macs} MACs")
    for nid in g.topo_order():
        n = g.nodes[nid]
        log.info("%-28s %-16s %s", nid, n.kind.value, "x".join(map(str, n.shape)))
    return EXIT_OK


def cmd_groups(args):
    g = open_model(args.model)
    groups = build_groups(g, protect=tuple(args.protect))
    if args.json:
        _write(args.json, json.dumps(groups_to_json(groups), indent=2, sort_keys=True) + "\n")
    else:
        print(format_groups(groups))
    return EXIT_OK


def cmd_modality(args):
    g = open_model(args.model)
    tags = propagate_tags(g)
    stages = find_fusion_stages(g, tags, args.prefusion_depth)
    d = {
        "tags": {nid: tags[nid].value for nid in g.topo_order()},
        "fusion_stages": [{"node": s.node, "prefusion": {t.value: v for t, v in s.prefusion.items()}} for s in stages],
    }
    _write(args.json or "-", json.dumps(d, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_saliency(args):
    g = open_model(args.model)
    sal = synflow_scores(linearize(g))
    d = {"R": sal.R, "nodes": {nid: float(v) for nid, v in sorted(sal.summed().items())}}
    try:
        stages = find_fusion_stages(g, depth=args.prefusion_depth)
        ms = modality_scores(sal, g, prefusion_nodes(stages))
        d["modality"] = {t.value: v for t, v in ms.scores.items()}
    except ModPruneError as e:
        log.warning("no modality scores: %s", e)
    _write(args.json or "-", json.dumps(d, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_plan(args):
    cfg = _config(args)
    g = open_model(args.model)
    plan = make_plan(g, cfg.plan_config())
    _write(args.out, plan.to_json())
    log.info("achieved parameter sparsity %.4f (target %.4f)", plan.achieved, cfg.sparsity)
    return EXIT_OK


def cmd_prune(args):
    g = open_model(args.model)
    plan = SparsityPlan.from_json(Path(args.plan).read_text(encoding="utf-8"))
    groups = build_groups(g, protect=plan.config.protect)
    sel = select_indices(plan, groups, args.seed)
    pruned = apply_prune(g, sel, groups=groups)
    pruned.name = g.name
    out = save_model(pruned, args.out)
    (out / "selection.json").write_text(sel.to_json(), encoding="utf-8")
    p0, p1 = count_params_macs(g)[0], count_params_macs(pruned)[0]
    print(f"params {p0} -> {p1} ({100.0 * (p1 - p0) / p0:+.1f}%), written to {out}")
    return EXIT_OK


def cmd_verify(args):
    orig = open_model(args.original)
    pruned = open_model(args.pruned)
    sel_path = args.selection or str(Path(args.pruned) / "selection.json")
    sel = IndexSelection.from_json(Path(sel_path).read_text(encoding="utf-8"))
    rep = verify_pruned(orig, pruned, sel, trials=args.trials, seed=args.seed, tol=args.tol)
    if args.json:
        _write(args.json, rep.to_json())
    print(f"equivalent: max |diff| = {rep.max_abs_diff:.3e} <= {rep.tol:g}")
    return EXIT_OK


def cmd_run(args):
    g = open_model(args.model)
    inputs = unpack_tensors(Path(args.input).read_bytes())
    outs = forward(g, inputs)
    Path(args.out).write_bytes(pack_tensors({k: outs[k] for k in g.outputs}))
    return EXIT_OK


def cmd_power(args):
    tr = load_trace(args.trace, tuple(args.background_window) if args.background_window else None)
    d = {"eps_j": eps(tr), "avp_w": avp(tr), "duration_s": tr.duration, "n_samples": tr.n_samples,
         "background_w": tr.background}
    if args.json:
        _write(args.json, json.dumps(d, indent=2, sort_keys=True) + "\n")
    print(f"EPS {d['eps_j']:.1f} J  AVP {d['avp_w']:.1f} W  duration {d['duration_s']:g} s  N_s {d['n_samples']}")
    return EXIT_OK


def cmd_report(args):
    base = open_model(args.baseline)
    others = [open_model(m) for m in args.models]
    for ref, g in zip(args.models, others):
        g.name = Path(ref).name
    base.name = Path(args.baseline).name
    rows = report_rows(base, others)
    print(format_report(rows))
    if args.json:
        _write(args.json, report_json(rows))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="modprune", description="Structural pruning analysis for multi-modal graphs.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)
    sub.required = True

    def model_cmd(name, fn, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("model", help="model directory or zoo name")
        s.set_defaults(fn=fn)
        return s

    model_cmd("validate", cmd_validate, "parse, validate and summarise a model")
    s = model_cmd("groups", cmd_groups, "print pruning groups")
    s.add_argument("--protect", action="append", default=[], metavar="GLOB")
    s.add_argument("--json")
    s = model_cmd("modality", cmd_modality, "modality tags and fusion stages")
    s.add_argument("--prefusion-depth", type=int, default=1)
    s.add_argument("--json")
    s = model_cmd("saliency", cmd_saliency, "SynFlow scores")
    s.add_argument("--prefusion-depth", type=int, default=1)
    s.add_argument("--json")

    s = model_cmd("plan", cmd_plan, "allocate per-group sparsity")
    s.add_argument("--method", choices=("uniform", "erk", "ha-synflow"), default="erk")
    s.add_argument("--sparsity", type=float, default=0.5)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--ha-base", choices=("erk", "uniform"), default="erk")
    s.add_argument("--prefusion-depth", type=int, default=1)
    s.add_argument("--rho-max", type=float, default=0.95)
    s.add_argument("--log-base", choices=("e", "10"), default="e")
    s.add_argument("--protect", action="append", default=[], metavar="GLOB")
    s.add_argument("--no-match-params", action="store_true", help="use raw channel budgets")
    s.add_argument("--out", default="plan.json")

    s = model_cmd("prune", cmd_prune, "apply a plan")
    s.add_argument("--plan", required=True)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("verify", help="check a pruned model against its masked original")
    s.add_argument("original")
    s.add_argument("pruned")
    s.add_argument("--selection")
    s.add_argument("--trials", type=int, default=3)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--json")
    s.set_defaults(fn=cmd_verify)

    s = model_cmd("run", cmd_run, "evaluate a model on tensors from a blob")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("power", help="EPS and AVP of a power trace")
    s.add_argument("trace")
    s.add_argument("--background-window", nargs=2, type=float, metavar=("T0", "T1"))
    s.add_argument("--json")
    s.set_defaults(fn=cmd_power)

    s = sub.add_parser("report", help="MACs/params table against a baseline")
    s.add_argument("baseline")
    s.add_argument("models", nargs="+")
    s.add_argument("--json")
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.cmd == "plan":
            _config(args)  # range checks
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"modprune: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except EquivalenceFailure as e:
        print(f"modprune: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except (ModPruneError, OSError, ValueError, KeyError) as e:
        print(f"modprune: error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
