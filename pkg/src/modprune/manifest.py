"""Manifest text format, ``MPW1`` weight blobs and model directories.

The grammar is documented in ``docs/manifest.md``.  A model directory holds
``model.manifest`` and ``weights.mpw``.
"""

from __future__ import annotations

import shlex
import struct
from pathlib import Path

import numpy as np

from .errors import MissingWeight, ParseError
from .graph import Graph, Kind, Node, as_f32, validate_graph

HEADER = "modprune-manifest 1"
MAGIC = b"MPW1"
MANIFEST_NAME = "model.manifest"
BLOB_NAME = "weights.mpw"


def _int(v):
    return int(v)


def _pair(v):
    parts = v.split("x")
    if len(parts) == 1:
        return (int(parts[0]), int(parts[0]))
    if len(parts) == 2:
        return (int(parts[0]), int(parts[1]))
    raise ValueError(v)


def _dims(v):
    return tuple(int(d) for d in v.split("x"))


def _ints(v):
    return tuple(int(d) for d in v.split(","))


def _bool(v):
    if v in ("true", "1"):
        return True
    if v in ("false", "0"):
        return False
    raise ValueError(v)


FIELD_PARSERS = {
    "modality": str,
    "shape": _dims,
    "out": _int,
    "kernel": _pair,
    "stride": _int,
    "padding": _pair,
    "groups": _int,
    "bias": _bool,
    "eps": float,
    "size": _int,
    "scale": _int,
    "mode": str,
    "sizes": _ints,
    "index": _int,
    "perm": _ints,
    "k": _int,
    "order": _ints,
    "name": str,
    "cls": str,
}

# kind -> (required fields, defaults)
KIND_FIELDS = {
    Kind.INPUT: (("modality", "shape"), {}),
    Kind.OUTPUT: ((), {}),
    Kind.CONV2D: (("out", "kernel", "stride", "padding"), {"groups": 1, "bias": True}),
    Kind.DEFORM_CONV2D: (("out", "kernel", "stride", "padding"), {"bias": True}),
    Kind.LINEAR: (("out",), {"bias": True}),
    Kind.BATCHNORM: ((), {"eps": 1e-5}),
    Kind.RELU: ((), {}),
    Kind.SIGMOID: ((), {}),
    Kind.AVGPOOL: (("kernel", "stride", "padding"), {}),
    Kind.ADAPTIVE_AVGPOOL: ((), {"size": 1}),
    Kind.UPSAMPLE: (("scale",), {"mode": "nearest"}),
    Kind.ADD: ((), {}),
    Kind.CONCAT: ((), {}),
    Kind.SPLIT: (("sizes", "index"), {}),
    Kind.CHANNEL_SHUFFLE: (("groups",), {"perm": None}),
    Kind.ECA: (("k",), {}),
    Kind.FLATTEN: ((), {}),
    Kind.PERMUTE: (("order",), {}),
    Kind.CUSTOM: (("name",), {"cls": None}),
}


def normalize_params(kind, params, node_id="?"):
    """Fill defaults and check required fields for ``kind``."""
    required, defaults = KIND_FIELDS[kind]
    out = dict(defaults)
    out.update(params)
    for f in required:
        if out.get(f) is None:
            raise ParseError(f"{node_id}: {kind.value} requires field {f!r}")
    extra = set(out) - set(required) - set(defaults)
    if extra:
        raise ParseError(f"{node_id}: unexpected field(s) {sorted(extra)} for {kind.value}")
    if kind is Kind.INPUT and out["modality"] not in ("vision", "radar"):
        raise ParseError(f"{node_id}: modality must be vision or radar, got {out['modality']!r}")
    if kind is Kind.UPSAMPLE and out["mode"] != "nearest":
        raise ParseError(f"{node_id}: only nearest upsampling is supported")
    if kind in (Kind.CONV2D, Kind.DEFORM_CONV2D, Kind.AVGPOOL) and out["stride"] < 1:
        raise ParseError(f"{node_id}: stride must be >= 1")
    return out


def parse_manifest(text):
    """Parse manifest text into ``(name, [Node])`` without touching weights."""
    lines = text.splitlines()
    body = [(i + 1, ln.strip()) for i, ln in enumerate(lines)]
    body = [(i, ln) for i, ln in body if ln and not ln.startswith("#")]
    if not body or body[0][1] != HEADER:
        raise ParseError(f"manifest must start with {HEADER!r}")
    name = ""
    nodes = []
    seen = set()
    for lineno, line in body[1:]:
        try:
            tokens = shlex.split(line, comments=True)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        if not tokens:
            continue
        if tokens[0] == "name":
            if len(tokens) != 2:
                raise ParseError(f"line {lineno}: expected 'name <model-name>'")
            name = tokens[1]
            continue
        if len(tokens) < 2:
            raise ParseError(f"line {lineno}: expected '<kind> <id> [field=value ...]'")
        try:
            kind = Kind(tokens[0])
        except ValueError:
            raise ParseError(f"line {lineno}: unknown kind {tokens[0]!r}") from None
        nid = tokens[1]
        if nid in seen:
            raise ParseError(f"line {lineno}: duplicate node id {nid!r}")
        seen.add(nid)
        inputs, weights, params = (), {}, {}
        for tok in tokens[2:]:
            key, eq, val = tok.partition("=")
            if not eq or not val:
                raise ParseError(f"line {lineno}: malformed field {tok!r}")
            if key == "inputs":
                inputs = tuple(val.split(","))
            elif key == "weights":
                for item in val.split(","):
                    role, colon, wkey = item.partition(":")
                    if not colon or not wkey:
                        raise ParseError(f"line {lineno}: weight entry {item!r} must be role:key")
                    weights[role] = wkey
            elif key in FIELD_PARSERS:
                try:
                    params[key] = FIELD_PARSERS[key](val)
                except ValueError:
                    raise ParseError(f"line {lineno}: bad value {val!r} for {key!r}") from None
            else:
                raise ParseError(f"line {lineno}: unknown field {key!r}")
        params = normalize_params(kind, params, nid)
        nodes.append(Node(nid, kind, inputs, params, weights))
    return name, nodes


def _fmt(key, val):
    if key in ("kernel", "padding"):
        return f"{val[0]}x{val[1]}"
    if key == "shape":
        return "x".join(str(d) for d in val)
    if key in ("sizes", "perm", "order"):
        return ",".join(str(d) for d in val)
    if key == "bias":
        return "true" if val else "false"
    if key == "eps":
        return repr(float(val))
    return str(val)


def format_manifest(graph):
    lines = [HEADER]
    if graph.name:
        lines.append(f"name {graph.name}")
    for node in graph:
        toks = [node.kind.value, node.id]
        if node.inputs:
            toks.append("inputs=" + ",".join(node.inputs))
        for key in FIELD_PARSERS:
            val = node.params.get(key)
            if val is None:
                continue
            toks.append(f"{key}={_fmt(key, val)}")
        if node.weights:
            toks.append("weights=" + ",".join(f"{r}:{k}" for r, k in node.weights.items()))
        lines.append(" ".join(toks))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# MPW1 blobs: magic, u32 count, per entry (u32 keylen, key, u32 rank, u32 dims...),
# then float32 payloads in header order.  Everything little-endian.


def pack_tensors(tensors):
    header = [MAGIC, struct.pack("<I", len(tensors))]
    payload = []
    for key, arr in tensors.items():
        kb = key.encode("utf-8")
        arr = as_f32(arr)
        header.append(struct.pack("<I", len(kb)) + kb)
        header.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        payload.append(arr.astype("<f4").tobytes())
    return b"".join(header + payload)


def unpack_tensors(blob):
    if blob[:4] != MAGIC:
        raise ParseError("weight blob does not start with MPW1")
    try:
        (count,) = struct.unpack_from("<I", blob, 4)
        pos = 8
        entries = []
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            key = blob[pos : pos + klen].decode("utf-8")
            pos += klen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            entries.append((key, dims))
        out = {}
        for key, dims in entries:
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(blob):
                raise ParseError(f"weight blob truncated in payload of {key!r}")
            out[key] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * n
    except struct.error as exc:
        raise ParseError(f"weight blob header is truncated: {exc}") from None
    if pos != len(blob):
        raise ParseError(f"weight blob has {len(blob) - pos} trailing bytes")
    return out


def _blob_order(graph):
    keys = []
    for node in graph:
        for key in node.weights.values():
            if key not in keys:
                keys.append(key)
    keys += sorted(k for k in graph.weights if k not in keys)
    return keys


def save_weights(graph):
    return pack_tensors({k: graph.weights[k] for k in _blob_order(graph)})


def load_manifest(text, blob):
    """Parse, attach weights, validate and infer shapes."""
    name, nodes = parse_manifest(text)
    weights = unpack_tensors(blob) if isinstance(blob, (bytes, bytearray)) else dict(blob)
    for node in nodes:
        for role, key in node.weights.items():
            if key not in weights:
                raise MissingWeight(f"{node.id}: weight {key!r} ({role}) is missing from the blob")
    graph = Graph({n.id: n for n in nodes}, weights, name)
    return validate_graph(graph)


def save_model(graph, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / MANIFEST_NAME).write_text(format_manifest(graph), encoding="utf-8")
    (d / BLOB_NAME).write_bytes(save_weights(graph))
    return d


def load_model(directory):
    d = Path(directory)
    graph = load_manifest((d / MANIFEST_NAME).read_text(encoding="utf-8"), (d / BLOB_NAME).read_bytes())
    if not graph.name:
        graph.name = d.name
    return graph
