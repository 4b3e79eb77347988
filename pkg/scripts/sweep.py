"""Prune a zoo model with each method and print a MACs/Params comparison table.

Every pruned model is checked against its masked twin before it enters the table.
"""
import argparse
import sys

from modprune.groups import build_groups
from modprune.pruner import apply_prune, format_report, report_json, report_rows, select_indices, verify_pruned
from modprune.sparsity import METHODS, PlanConfig, make_plan
from modprune.zoo import ZOO, load_zoo


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="mini_achelous", choices=sorted(ZOO))
    ap.add_argument("--sparsity", type=float, nargs="+", default=[0.3, 0.5])
    ap.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    args = ap.parse_args()

    g = load_zoo(args.model)
    groups = build_groups(g)
    pruned = []
    for rho in args.sparsity:
        for method in args.methods:
            plan = make_plan(g, PlanConfig(method=method, sparsity=rho, seed=args.seed))
            sel = select_indices(plan, groups, args.seed)
            p = apply_prune(g, sel, groups=groups)
            verify_pruned(g, p, sel, seed=args.seed)
            p.name = f"{method}@{rho:g}"
            pruned.append(p)
            for note in plan.notes:
                print(f"# {p.name}: {note}", file=sys.stderr)
    rows = report_rows(g, pruned)
    print(report_json(rows) if args.json else format_report(rows), end="" if args.json else "\n")


if __name__ == "__main__":
    main()
