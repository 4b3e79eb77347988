"""Acceptance criteria. Each test prints one PASS/FAIL line with its wall time."""
import math
import re
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

import oracles
from dag_oracle import oracle_groups, random_dag
from synflow_oracle import fd_gradient_error, linear_only
from modprune import kernels as K
from modprune.cli import main
from modprune.graph import count_params_macs, validate_graph
from modprune.groups import build_groups
from modprune.interpreter import deform_conv2d
from modprune.power import PowerTrace, avp, eps, format_trace, parse_trace
from modprune.pruner import apply_prune, format_report, report_rows, select_indices, verify_pruned
from modprune.saliency import check_conservation, linearize, synflow_scores
from modprune.sparsity import LayerDims, PlanConfig, erk_ratio, ha_synflow_sparsity, make_plan
from modprune.zoo import ZOO, load_zoo


@pytest.fixture
def criterion(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    @contextmanager
    def run(n, desc, budget):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            ok = time.perf_counter() - t0 < budget
        finally:
            dt = time.perf_counter() - t0
            line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {desc} ({dt:.2f}s, budget {budget:g}s)"
            with capman.global_and_fixture_disabled():
                print("\n" + line, flush=True)
        assert dt < budget, f"criterion {n} took {dt:.1f}s"

    return run


def test_1_erk_closed_form(criterion):
    with criterion(1, "ERK closed form", 1):
        cases = [
            (LayerDims(24, 32, 3, 3), 0.5, 0.5 * (1 - 62 / 6912)),
            (LayerDims(100, 10), 0.5, 0.5 * (1 - 110 / 1000)),
            (LayerDims(64, 128, 1, 1), 0.3, 0.3 * (1 - 194 / 8192)),
            (LayerDims(16, 16, 5, 3), 0.7, 0.7 * (1 - 40 / 3840)),
        ]
        assert abs(cases[0][2] - 0.4955150462962963) <= 1e-15
        for dims, rho, want in cases:
            assert abs(erk_ratio(dims, rho) - want) <= 1e-12 * want


def test_2_ha_synflow_arithmetic(criterion):
    with criterion(2, "HA-SynFlow worked example and fixed point", 1):
        rho, mixed = ha_synflow_sparsity({"vision": 2.0, "radar": 1.0}, 0.5)
        assert abs(rho["vision"] - 0.35616) <= 1e-5 and abs(rho["radar"] - 0.70273) <= 1e-5
        assert abs(mixed - 0.52945) <= 1e-5
        assert abs(rho["vision"] - (0.5 + 0.5 * math.log(0.75))) <= 1e-9
        assert abs(rho["radar"] - (0.5 + 0.5 * math.log(1.5))) <= 1e-9
        for rg in (0.0, 0.3, 0.5, 0.9):
            r, m = ha_synflow_sparsity({"vision": 0.25, "radar": 0.25}, rg)
            assert r == {"vision": rg, "radar": rg} and m == rg


def test_3_synflow_correctness(criterion):
    with criterion(3, "SynFlow gradients and conservation", 30):
        small = [n for n in ZOO if count_params_macs(load_zoo(n))[0] <= 5000]
        assert len(small) >= 3
        for name in small:
            assert fd_gradient_error(load_zoo(name)) <= 1e-4, name
        for seed in range(3):
            lin = linearize(linear_only(seed))
            sal = synflow_scores(lin)
            rows = check_conservation(lin, sal)
            assert rows and max(r[4] for r in rows) <= 1e-6 * sal.R


def test_4_grouping(criterion):
    with criterion(4, "grouping vs union-find oracle on 200 DAGs", 30):
        for seed in range(200):
            g = random_dag(seed)
            assert len(g.nodes) <= 30
            groups = build_groups(g)
            og, opinned, ocons = oracle_groups(g)
            assert {frozenset(x.filters) for x in groups if not x.protected} == og, seed
            assert {f for x in groups if x.protected for f in x.filters} == opinned, seed
            for x in groups:
                if not x.protected:
                    assert set(x.member_ids("channel")) == ocons[x.filters[0]], seed
        f = {fl: gr for gr in build_groups(load_zoo("vrfn_fusion")) for fl in gr.filters}
        assert set(f["vis.conv_b"].filters) == {"vis.conv_b", "vis.shortcut"}
        assert f["vis.proj"] is not f["vrfn.ecac.conv"]
        assert f["vrfn.ecac.conv"].offsets["vrfn.cat"] == 0 and f["vis.proj"].offsets["vrfn.cat"] == 8


def test_5_prune_equivalence(criterion):
    with criterion(5, "prune equivalence over zoo x methods x sparsity x seeds", 300):
        for name in ZOO:
            g = load_zoo(name)
            groups = build_groups(g)
            for method in ("uniform", "erk", "ha-synflow"):
                for rho in (0.3, 0.5):
                    plan = make_plan(g, PlanConfig(method=method, sparsity=rho))
                    if method != "ha-synflow":
                        assert abs(plan.achieved - rho) <= 0.03, (name, method, rho, plan.achieved)
                    for seed in range(5):
                        sel = select_indices(plan, groups, seed)
                        pruned = apply_prune(g, sel, groups=groups)
                        validate_graph(pruned)
                        rep = verify_pruned(g, pruned, sel, seed=seed)
                        assert rep.max_abs_diff <= 1e-5, (name, method, rho, seed)
                        assert count_params_macs(pruned)[0] == plan.params_after


def test_6_radar_conv_semantics(criterion):
    with criterion(6, "deformable conv semantics", 30):
        rng = np.random.default_rng(6)
        for h, w in ((6, 5), (8, 8)):
            x = rng.standard_normal((3, h, w))
            wt, b = rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
            y = deform_conv2d(x, np.zeros((18, h, w)), np.ones((9, h, w)), wt, b, 1, (1, 1))
            assert np.abs(y - K.conv2d(x, wt, b, 1, (1, 1))).max() <= 1e-5
            assert np.abs(y - oracles.conv2d(x, wt, b, 1, (1, 1))).max() <= 1e-5
        for stride in (1, 2):
            for _ in range(3):
                x = rng.standard_normal((2, 7, 6))
                wt, b = rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
                oh, ow = (7 - 1) // stride + 1, (6 - 1) // stride + 1
                off = rng.uniform(-2.5, 2.5, (18, oh, ow))
                mod = rng.uniform(0, 1, (9, oh, ow))
                y = deform_conv2d(x, off, mod, wt, b, stride, (1, 1))
                assert np.abs(y - oracles.deform_conv2d(x, off, mod, wt, b, stride, (1, 1))).max() <= 1e-5


def test_7_energy_formulas(criterion):
    with criterion(7, "EPS and AVP formulas", 5):
        tr = PowerTrace(np.linspace(0, 10, 11), np.full(11, 20.0), 5.0, 100)
        assert eps(tr) == 1.5 and avp(tr) == 15.0
        rng = np.random.default_rng(7)
        t = np.cumsum(rng.uniform(0.01, 0.1, 200))
        tr = PowerTrace(t, rng.uniform(8, 40, 200), 6.0, 37)
        assert abs(avp(tr) * tr.duration - tr.n_samples * eps(tr)) <= 4 * np.finfo(float).eps * tr.n_samples * eps(tr)
        n, net, bg = 500, 120.0, 18.0
        t = np.linspace(0.0, 741.1 * n / net, 1001)
        got = eps(parse_trace(format_trace(t, np.full_like(t, bg + net), n, background=bg)))
        assert abs(got - 741.1) <= 1e-3 * 741.1 and f"{got:.1f}" == "741.1"


def test_8_determinism(criterion, tmp_path):
    with criterion(8, "byte-identical plans and blobs across runs", 60):
        for name in ("vrfn_fusion", "mini_achelous"):
            for method in ("erk", "ha-synflow"):
                files = []
                for run in ("a", "b"):
                    d = tmp_path / name / method / run
                    assert main(["plan", name, "--method", method, "--sparsity", "0.5",
                                 "--out", str(d / "plan.json")]) == 0
                    assert main(["prune", name, "--plan", str(d / "plan.json"), "--seed", "123",
                                 "--out", str(d / "m")]) == 0
                    files.append([(d / f).read_bytes() for f in
                                  ("plan.json", "m/model.manifest", "m/weights.mpw", "m/selection.json")])
                assert files[0] == files[1]


def test_9_report(criterion, tmp_path, capsys):
    with criterion(9, "signed MACs and Params deltas", 10):
        g = load_zoo("mini_achelous")
        plan = tmp_path / "plan.json"
        assert main(["plan", "mini_achelous", "--method", "erk", "--sparsity", "0.5", "--out", str(plan)]) == 0
        assert main(["prune", "mini_achelous", "--plan", str(plan), "--out", str(tmp_path / "p")]) == 0
        capsys.readouterr()
        assert main(["report", "mini_achelous", str(tmp_path / "p")]) == 0
        cols = capsys.readouterr().out.strip().splitlines()[-1].split()
        for c in (cols[2], cols[4]):
            assert re.fullmatch(r"-\d+\.\d%", c), c
        rows = report_rows(g, [apply_prune(g, select_indices(make_plan(g, PlanConfig(sparsity=0.5)), build_groups(g), 0))])
        assert rows[1][3] < 0 and rows[1][4] < 0
        assert format_report(rows).splitlines()[-1].split()[2] == cols[2]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
