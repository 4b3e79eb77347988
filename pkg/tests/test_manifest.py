import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modprune.errors import MissingWeight, ParseError
from modprune.interpreter import forward
from modprune.manifest import (
    format_manifest,
    load_manifest,
    load_model,
    pack_tensors,
    parse_manifest,
    save_model,
    save_weights,
    unpack_tensors,
)

SMALL = """modprune-manifest 1
# comment line
name tiny
input x modality=radar shape=2x4x4
conv2d c inputs=x out=3 kernel=3 stride=1 padding=1 bias=false weights=weight:c.w  # trailing comment
output y inputs=c
"""


class TestText:
    def test_parse_small(self):
        name, nodes = parse_manifest(SMALL)
        assert name == "tiny"
        c = nodes[1]
        assert c.params["kernel"] == (3, 3) and c.params["padding"] == (1, 1) and c.params["groups"] == 1
        assert c.weights == {"weight": "c.w"}

    def test_load_small(self):
        blob = pack_tensors({"c.w": np.ones((3, 2, 3, 3))})
        g = load_manifest(SMALL, blob)
        assert g.nodes["c"].shape == (3, 4, 4)

    @pytest.mark.parametrize("text,match", [
        ("bogus\n", "must start"),
        ("modprune-manifest 1\nwidget a\n", "unknown kind"),
        ("modprune-manifest 1\nrelu a inputs=x colour=red\n", "unknown field"),
        ("modprune-manifest 1\nconv2d c inputs=x out=3 kernel=3 padding=1\n", "stride"),
        ("modprune-manifest 1\ninput a modality=lidar shape=1x1x1\n", "modality"),
        ("modprune-manifest 1\nrelu a\nrelu a\n", "duplicate"),
        ("modprune-manifest 1\nconv2d c out=x kernel=3 stride=1 padding=1\n", "bad value"),
    ])
    def test_parse_errors(self, text, match):
        with pytest.raises(ParseError, match=match):
            parse_manifest(text)

    def test_missing_blob_entry(self):
        with pytest.raises(MissingWeight, match="c.w"):
            load_manifest(SMALL, pack_tensors({}))

    def test_zoo_text_round_trip(self, zoo):
        for g in zoo.values():
            text = format_manifest(g)
            assert format_manifest(load_manifest(text, save_weights(g))) == text


class TestBlob:
    def test_header_layout(self):
        blob = pack_tensors({"a": np.array([1.5], np.float32)})
        assert blob[:4] == b"MPW1"
        assert struct.unpack_from("<II", blob, 4) == (1, 1)
        assert blob[12:13] == b"a"
        assert struct.unpack_from("<II", blob, 13) == (1, 1)
        assert struct.unpack_from("<f", blob, 21) == (1.5,)
        assert len(blob) == 25

    def test_truncated(self):
        blob = pack_tensors({"a": np.zeros((2, 3))})
        with pytest.raises(ParseError, match="truncated"):
            unpack_tensors(blob[:-1])
        with pytest.raises(ParseError, match="truncated"):
            unpack_tensors(blob[:10])

    def test_trailing_and_magic(self):
        blob = pack_tensors({"a": np.zeros(2)})
        with pytest.raises(ParseError, match="trailing"):
            unpack_tensors(blob + b"\0")
        with pytest.raises(ParseError, match="MPW1"):
            unpack_tensors(b"XXXX" + blob[4:])

    @settings(max_examples=50, deadline=None)
    @given(st.dictionaries(
        st.text("abcxyz._0123", min_size=1, max_size=12),
        st.lists(st.integers(1, 4), min_size=0, max_size=3),
        max_size=5,
    ), st.integers(0, 2**32 - 1))
    def test_round_trip(self, shapes, seed):
        rng = np.random.default_rng(seed)
        tensors = {k: rng.standard_normal(s).astype(np.float32) for k, s in shapes.items()}
        back = unpack_tensors(pack_tensors(tensors))
        assert list(back) == list(tensors)
        for k in tensors:
            assert back[k].shape == tensors[k].shape
            assert back[k].tobytes() == tensors[k].tobytes()


def test_saved_model_reproduces_outputs(zoo, tmp_path):
    for name, g in zoo.items():
        back = load_model(save_model(g, tmp_path / name))
        rng = np.random.default_rng(0)
        xs = {i: rng.standard_normal(g.nodes[i].shape).astype(np.float32) for i in g.inputs}
        a, b = forward(g, xs), forward(back, xs)
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()
        assert save_weights(back) == save_weights(g)
