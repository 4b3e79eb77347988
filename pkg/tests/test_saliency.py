import numpy as np
import pytest

from synflow_oracle import fd_gradient_error, linear_only
from modprune.errors import EmptyModality, NonFiniteScore, UnsupportedForSaliency
from modprune.graph import count_params_macs
from modprune.modality import Tag, find_fusion_stages, prefusion_nodes
from modprune.saliency import check_conservation, linearize, modality_scores, synflow_scores
from modprune.zoo import GraphBuilder


class TestGradients:
    @pytest.mark.parametrize("name", ["rcnet_block", "inverted_block", "vrfn_fusion"])
    def test_matches_finite_differences(self, zoo, name):
        assert count_params_macs(zoo[name])[0] <= 5000
        assert fd_gradient_error(zoo[name]) <= 1e-4

    def test_linear_only_graph(self):
        assert fd_gradient_error(linear_only()) <= 1e-4

    def test_ones_input_sum(self):
        # one 1x1 conv on a 1x1 map: R = sum_o (sum_i |w_oi| + |b_o|)
        b = GraphBuilder()
        b.output("y", b.conv("c", b.input("x", "vision", (3, 1, 1)), 2, 1))
        g = b.build()
        sal = synflow_scores(linearize(g))
        w, bias = g.weights["c.weight"], g.weights["c.bias"]
        assert sal.R == pytest.approx(np.abs(w).sum() + np.abs(bias).sum(), rel=1e-12)
        np.testing.assert_allclose(sal.scores["c.weight"], np.abs(w), rtol=1e-12)


class TestConservation:
    def test_linear_graph(self):
        g = linear_only()
        lin = linearize(g)
        sal = synflow_scores(lin)
        rows = check_conservation(lin, sal)
        assert rows and max(r[4] for r in rows) <= 1e-6 * sal.R

    def test_zoo(self, zoo):
        for g in zoo.values():
            lin = linearize(g)
            sal = synflow_scores(lin)
            rows = check_conservation(lin, sal)
            assert max((r[4] for r in rows), default=0.0) <= 1e-6 * sal.R

    def test_scores_nonnegative(self, zoo):
        sal = synflow_scores(linearize(zoo["mini_achelous"]))
        assert all(np.all(s >= 0) for s in sal.scores.values())


class TestModalityScore:
    def test_hand_mean(self, zoo):
        g = zoo["vrfn_fusion"]
        sal = synflow_scores(linearize(g))
        ms = modality_scores(sal, g, prefusion_nodes(find_fusion_stages(g)))
        s = sal.scores["vis.proj.weight"]
        assert ms.scores[Tag.VISION] == pytest.approx(np.abs(s).sum() / s.size, rel=1e-12)
        assert ms.counts == {Tag.VISION: 256, Tag.RADAR: 64}

    def test_empty_modality(self, zoo):
        g = zoo["vrfn_fusion"]
        sal = synflow_scores(linearize(g))
        with pytest.raises(EmptyModality):
            modality_scores(sal, g, {Tag.RADAR: []})


class TestErrors:
    def test_mul_has_no_linearization(self):
        b = GraphBuilder()
        x = b.input("x", "vision", (2, 2, 2))
        b.output("y", b.custom("m", "mul", x, x))
        with pytest.raises(UnsupportedForSaliency):
            linearize(b.build())

    def test_overflow(self):
        b = GraphBuilder()
        x = b.input("x", "vision", (64, 1, 1))
        for i in range(120):
            x = b.conv(f"c{i}", x, 64, 1)
        b.output("y", x)
        g = b.build()
        for k in g.weights:
            g.weights[k] = np.full_like(g.weights[k], 10.0)
        with pytest.raises(NonFiniteScore):
            synflow_scores(linearize(g))
