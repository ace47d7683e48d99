"""Implicit-surface computation graphs: the genotype of evolved shapes.

A shape is the sub-zero level set of a function F: R^3 -> R; points with
F < 0 are interior.  F is encoded as a DAG with three distinguished input
nodes carrying the coordinates x, y, z and a single output node.  Every
non-input node computes

    value = activation( reduction({ w_e * value(src_e) }) ) + bias

where reduction is one of sum/max/min and activation one of id/sq/abs
(identity, square, absolute value).  Four primitive constructors cover
sphere, cylinder, cube and cone:

    sphere   F = x^2 + y^2 + z^2 - R^2
    cylinder F = max((x^2 + y^2)/R^2, |z|/H) - 1
    cube     F = max(|x|, |y|, |z|) - L/2
    cone     F = max((x^2 + y^2)/R^2 - z^2/H^2, -z, z - H)

Two rewrites generate every other shape reachable by evolution: an affine
transform (rotation + global scale + translation, realized by inserting
three fresh input nodes) and CSG composition (union/intersection/
difference, realized by merging inputs and adding one min/max output).

Graphs are immutable after construction; all operations build new graphs
with nodes relabeled 0..k-1 in topological order.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from math import isfinite

import numpy as np

REDUCTIONS = ("sum", "max", "min")
ACTIVATIONS = ("id", "sq", "abs")
PRIMITIVE_KINDS = ("sphere", "cylinder", "cube", "cone")

# Parameter ranges used when sampling fresh primitives, sized so initial
# shapes sit well inside the canonical [-1,1]^3 domain.
PARAM_RANGES = {"radius": (0.3, 0.6), "side": (0.6, 1.2), "height": (0.4, 0.9)}


class GraphError(ValueError):
    """Base class for genotype construction/parse failures."""


class InvalidParameterError(GraphError):
    pass


class GraphParseError(GraphError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    bias: float = 0.0
    reduction: str = "sum"
    activation: str = "id"


class CsgOp(Enum):
    UNION = "union"
    INTERSECTION = "intersection"
    DIFFERENCE = "difference"  # ordered: first minus second


@dataclass(frozen=True)
class AffineTransform:
    """Coordinate map T(p) = (scale * rotation)^-1 p - translation.

    Applying it to a shape translates the shape by `translation`, then
    rotates and scales it about the origin.
    """

    rotation: np.ndarray  # (3,3), orthonormal, det +1
    scale: float
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise InvalidParameterError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise InvalidParameterError("rotation must have determinant +1")
        if not (isfinite(self.scale) and self.scale > 0):
            raise InvalidParameterError(f"scale must be positive, got {self.scale}")
        if not np.all(np.isfinite(tr)):
            raise InvalidParameterError("translation must be finite")

    @property
    def matrix(self) -> np.ndarray:
        """(scale * rotation)^-1, i.e. rotation.T / scale."""
        return self.rotation.T / self.scale

    def apply(self, points: np.ndarray) -> np.ndarray:
        """T applied to one point (3,) or a batch (N,3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.matrix.T - self.translation

    @staticmethod
    def identity() -> "AffineTransform":
        return AffineTransform(np.eye(3), 1.0, np.zeros(3))

    @staticmethod
    def random(
        rng: np.random.Generator,
        scale_range: tuple[float, float] = (0.5, 2.0),
        translation_range: float = 0.5,
        rotation_max_angle: float = np.pi,
    ) -> "AffineTransform":
        """Scale log-uniform, translation uniform per axis.

        With rotation_max_angle >= pi the rotation is uniform over SO(3);
        smaller values draw a uniform axis and a uniform angle in
        [0, rotation_max_angle], giving jitter-scale rotations that let
        desk-scale runs refine placements incrementally.
        """
        from .rand import random_rotation

        lo, hi = scale_range
        scale = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        translation = rng.uniform(-translation_range, translation_range, size=3)
        if rotation_max_angle >= np.pi:
            rotation = random_rotation(rng)
        else:
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(0.0, rotation_max_angle)
            rotation = _axis_angle(axis, angle)
        return AffineTransform(rotation, scale, translation)


def _axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    t = 1.0 - c
    return np.array(
        [
            [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
            [x * y * t + z * s, c + y * y * t, y * z * t - x * s],
            [x * z * t - y * s, y * z * t + x * s, c + z * z * t],
        ]
    )


@dataclass(frozen=True)
class ShapeGraph:
    """Immutable computation graph; `nodes` is topologically ordered."""

    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int, float], ...]  # (src, dst, weight)
    input_ids: tuple[int, int, int]
    output_id: int

    @cached_property
    def _in_edges(self) -> dict[int, tuple[tuple[int, ...], np.ndarray]]:
        per: dict[int, list[tuple[int, float]]] = {n.id: [] for n in self.nodes}
        for src, dst, w in self.edges:
            per[dst].append((src, w))
        return {
            nid: (tuple(s for s, _ in lst), np.array([w for _, w in lst]))
            for nid, lst in per.items()
        }

    @cached_property
    def _plan(self) -> list[tuple[int, tuple[int, ...], np.ndarray, str, str, float]]:
        """Evaluation steps for non-input nodes, in topological order."""
        input_set = set(self.input_ids)
        return [
            (node.id, *self._in_edges[node.id], node.reduction, node.activation, node.bias)
            for node in self.nodes
            if node.id not in input_set
        ]

    @cached_property
    def _tables(self):
        """The plan flattened into arrays for the jitted interpreter."""
        dsts, starts, counts, reds, acts, biases = [], [], [], [], [], []
        srcs: list[int] = []
        weights: list[float] = []
        for dst, in_srcs, in_ws, reduction, activation, bias in self._plan:
            dsts.append(dst)
            starts.append(len(srcs))
            counts.append(len(in_srcs))
            srcs.extend(in_srcs)
            weights.extend(in_ws)
            reds.append(REDUCTIONS.index(reduction))
            acts.append(ACTIVATIONS.index(activation))
            biases.append(bias)
        return (
            np.array(dsts, dtype=np.int64),
            np.array(starts, dtype=np.int64),
            np.array(counts, dtype=np.int64),
            np.array(srcs, dtype=np.int64),
            np.array(weights, dtype=np.float64),
            np.array(reds, dtype=np.int64),
            np.array(acts, dtype=np.int64),
            np.array(biases, dtype=np.float64),
        )

    @property
    def node_count(self) -> int:
        return len(self.nodes)


def node_count(graph: ShapeGraph) -> int:
    """All nodes, inputs and output included."""
    return graph.node_count


# ------------------------------------------------------------------
# Construction / validation
# ------------------------------------------------------------------

def _build_graph(
    nodes: list[Node],
    edges: list[tuple[int, int, float]],
    input_ids: tuple[int, int, int],
    output_id: int,
    err: type[GraphError] = GraphError,
) -> ShapeGraph:
    """Validate, prune dead nodes, and relabel ids 0..k-1 in topo order."""
    ids = [n.id for n in nodes]
    id_set = set(ids)
    if len(ids) != len(id_set):
        raise err("duplicate node id")
    if len(set(input_ids)) != 3 or any(i not in id_set for i in input_ids):
        raise err(f"inputs must be 3 distinct existing node ids, got {input_ids}")
    if output_id not in id_set:
        raise err(f"output: unknown node id {output_id}")
    if output_id in input_ids:
        raise err("output: output node cannot be an input node")
    for node in nodes:
        if node.reduction not in REDUCTIONS:
            raise err(f"reduction: unknown value {node.reduction!r} on node {node.id}")
        if node.activation not in ACTIVATIONS:
            raise err(f"activation: unknown value {node.activation!r} on node {node.id}")
        if not isfinite(node.bias):
            raise err(f"bias: non-finite value on node {node.id}")
    input_set = set(input_ids)
    for src, dst, w in edges:
        if src not in id_set:
            raise err(f"edges.src: unknown node id {src}")
        if dst not in id_set:
            raise err(f"edges.dst: unknown node id {dst}")
        if dst in input_set:
            raise err(f"edges.dst: edge into input node {dst}")
        if not isfinite(w):
            raise err(f"edges.w: non-finite weight on edge {src}->{dst}")

    # Kahn topological sort; detects cycles.
    succ: dict[int, list[int]] = {i: [] for i in ids}
    pred: dict[int, list[int]] = {i: [] for i in ids}
    indeg = {i: 0 for i in ids}
    for src, dst, _ in edges:
        succ[src].append(dst)
        pred[dst].append(src)
        indeg[dst] += 1
    ready = deque(i for i in ids if indeg[i] == 0)
    order: list[int] = []
    while ready:
        nid = ready.popleft()
        order.append(nid)
        for nxt in succ[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(order) != len(ids):
        raise err("edges: graph contains a cycle")

    # Keep nodes reachable from some input that also reach the output.
    fwd = set(input_ids)
    for nid in order:
        if nid not in fwd and any(p in fwd for p in pred[nid]):
            fwd.add(nid)
    back = {output_id}
    for nid in reversed(order):
        if nid not in back and any(s in back for s in succ[nid]):
            back.add(nid)
    if output_id not in fwd:
        raise err("output: output node is not reachable from any input")
    live = (fwd & back) | input_set | {output_id}

    relabel: dict[int, int] = {}
    by_id = {n.id: n for n in nodes}
    # Inputs first (x, y, z order), then remaining live nodes in topo order.
    new_nodes: list[Node] = []
    for nid in input_ids:
        relabel[nid] = len(new_nodes)
        new_nodes.append(Node(id=len(new_nodes)))  # inputs carry no op
    for nid in order:
        if nid in live and nid not in relabel:
            old = by_id[nid]
            new_id = len(new_nodes)
            relabel[nid] = new_id
            new_nodes.append(Node(new_id, old.bias, old.reduction, old.activation))
    new_edges = tuple(
        (relabel[src], relabel[dst], float(w))
        for src, dst, w in edges
        if src in live and dst in live
    )
    return ShapeGraph(
        nodes=tuple(new_nodes),
        edges=new_edges,
        input_ids=(0, 1, 2),
        output_id=relabel[output_id],
    )


# ------------------------------------------------------------------
# Primitives
# ------------------------------------------------------------------

def make_primitive(kind: str, **params: float) -> ShapeGraph:
    """Canonical graph for one of sphere/cylinder/cube/cone.

    Parameters: sphere(radius); cylinder(radius, height); cube(side);
    cone(radius, height).  All must be positive.
    """
    for name, value in params.items():
        if not (isfinite(value) and value > 0):
            raise InvalidParameterError(f"{kind}: {name} must be positive, got {value}")

    x, y, z = 0, 1, 2
    nodes = [Node(x), Node(y), Node(z)]
    edges: list[tuple[int, int, float]] = []

    if kind == "sphere":
        r = params.pop("radius")
        _expect_no_extra(kind, params)
        for i, c in enumerate((x, y, z)):
            nodes.append(Node(3 + i, activation="sq"))
            edges.append((c, 3 + i, 1.0))
        nodes.append(Node(6, bias=-r * r, reduction="sum"))
        edges += [(3, 6, 1.0), (4, 6, 1.0), (5, 6, 1.0)]
        out = 6
    elif kind == "cylinder":
        r, h = params.pop("radius"), params.pop("height")
        _expect_no_extra(kind, params)
        nodes += [
            Node(3, activation="sq"),  # (x/R)^2
            Node(4, activation="sq"),  # (y/R)^2
            Node(5, reduction="sum"),  # (x^2+y^2)/R^2
            Node(6, activation="abs"),  # |z|/H
            Node(7, bias=-1.0, reduction="max"),
        ]
        edges += [
            (x, 3, 1.0 / r),
            (y, 4, 1.0 / r),
            (3, 5, 1.0),
            (4, 5, 1.0),
            (z, 6, 1.0 / h),
            (5, 7, 1.0),
            (6, 7, 1.0),
        ]
        out = 7
    elif kind == "cube":
        side = params.pop("side")
        _expect_no_extra(kind, params)
        for i, c in enumerate((x, y, z)):
            nodes.append(Node(3 + i, activation="abs"))
            edges.append((c, 3 + i, 1.0))
        nodes.append(Node(6, bias=-side / 2.0, reduction="max"))
        edges += [(3, 6, 1.0), (4, 6, 1.0), (5, 6, 1.0)]
        out = 6
    elif kind == "cone":
        r, h = params.pop("radius"), params.pop("height")
        _expect_no_extra(kind, params)
        nodes += [
            Node(3, activation="sq"),  # (x/R)^2
            Node(4, activation="sq"),  # (y/R)^2
            Node(5, activation="sq"),  # (z/H)^2
            Node(6, reduction="sum"),  # (x^2+y^2)/R^2 - z^2/H^2
            Node(7),  # -z
            Node(8, bias=-h),  # z - H
            Node(9, reduction="max"),
        ]
        edges += [
            (x, 3, 1.0 / r),
            (y, 4, 1.0 / r),
            (z, 5, 1.0 / h),
            (3, 6, 1.0),
            (4, 6, 1.0),
            (5, 6, -1.0),
            (z, 7, -1.0),
            (z, 8, 1.0),
            (6, 9, 1.0),
            (7, 9, 1.0),
            (8, 9, 1.0),
        ]
        out = 9
    else:
        raise InvalidParameterError(f"unknown primitive kind {kind!r}")

    return _build_graph(nodes, edges, (x, y, z), out, err=InvalidParameterError)


def _expect_no_extra(kind: str, params: dict) -> None:
    if params:
        raise InvalidParameterError(f"{kind}: unexpected parameters {sorted(params)}")


def random_primitive(kind: str, rng: np.random.Generator) -> ShapeGraph:
    """Primitive of the given kind with parameters from PARAM_RANGES."""
    def draw(name: str) -> float:
        lo, hi = PARAM_RANGES[name]
        return float(rng.uniform(lo, hi))

    if kind == "sphere":
        return make_primitive(kind, radius=draw("radius"))
    if kind == "cube":
        return make_primitive(kind, side=draw("side"))
    if kind in ("cylinder", "cone"):
        return make_primitive(kind, radius=draw("radius"), height=draw("height"))
    raise InvalidParameterError(f"unknown primitive kind {kind!r}")


# ------------------------------------------------------------------
# Evaluation
# ------------------------------------------------------------------

_ACT = {"id": lambda v: v, "sq": lambda v: v * v, "abs": abs}


def evaluate(graph: ShapeGraph, point) -> float:
    """Scalar evaluation of F at one 3D point (pure python path)."""
    px, py, pz = (float(c) for c in point)
    vals: dict[int, float] = dict(zip(graph.input_ids, (px, py, pz)))
    input_set = set(graph.input_ids)
    for node in graph.nodes:
        if node.id in input_set:
            continue
        srcs, ws = graph._in_edges[node.id]
        terms = [w * vals[s] for s, w in zip(srcs, ws)]
        if node.reduction == "sum":
            acc = 0.0
            for t in terms:
                acc += t
        elif node.reduction == "max":
            acc = max(terms)
        else:
            acc = min(terms)
        vals[node.id] = _ACT[node.activation](acc) + node.bias
    return vals[graph.output_id]


try:
    from numba import njit as _njit

    @_njit(cache=True)
    def _interp_kernel(pts, buf, out, lo, hi, out_row, dsts, starts, counts, srcs, ws, reds, acts, biases):
        npts = hi - lo
        for i in range(3):
            row = buf[i]
            for j in range(npts):
                row[j] = pts[lo + j, i]
        for k in range(dsts.shape[0]):
            row = buf[dsts[k]]
            s0 = starts[k]
            src = buf[srcs[s0]]
            w = ws[s0]
            for j in range(npts):
                row[j] = src[j] * w
            red = reds[k]
            for e in range(1, counts[k]):
                src = buf[srcs[s0 + e]]
                w = ws[s0 + e]
                if red == 0:
                    for j in range(npts):
                        row[j] = row[j] + src[j] * w
                elif red == 1:
                    for j in range(npts):
                        v = src[j] * w
                        if v > row[j]:
                            row[j] = v
                else:
                    for j in range(npts):
                        v = src[j] * w
                        if v < row[j]:
                            row[j] = v
            act = acts[k]
            if act == 1:
                for j in range(npts):
                    row[j] = row[j] * row[j]
            elif act == 2:
                for j in range(npts):
                    row[j] = abs(row[j])
            bias = biases[k]
            for j in range(npts):
                row[j] = row[j] + bias
        src = buf[out_row]
        for j in range(npts):
            out[lo + j] = src[j]

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

_CHUNK = 4096  # keep the per-chunk work buffer inside the L2 cache


def evaluate_batch(graph: ShapeGraph, points) -> np.ndarray:
    """Vectorized F over an (N,3) array of points; returns shape (N,).

    Node ids double as row indices into one work buffer; accumulation
    order matches the scalar path so both give identical floats.  A
    jitted interpreter handles the bulk when numba is available; the
    numpy fallback computes the same sequence of operations.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.float64)
    if _HAVE_NUMBA:
        tables = graph._tables
        out = np.empty(n, dtype=np.float64)
        buf = np.empty((graph.node_count, min(n, _CHUNK)), dtype=np.float64)
        for lo in range(0, n, _CHUNK):
            hi = min(lo + _CHUNK, n)
            _interp_kernel(
                pts, buf[:, : hi - lo], out, lo, hi, graph.output_id, *tables
            )
        return out
    return _evaluate_batch_numpy(graph, pts)


def _evaluate_batch_numpy(graph: ShapeGraph, pts: np.ndarray) -> np.ndarray:
    n = pts.shape[0]
    buf = np.empty((graph.node_count, n), dtype=np.float64)
    for i, nid in enumerate(graph.input_ids):
        buf[nid] = pts[:, i]
    scratch = np.empty(n, dtype=np.float64)
    for dst, srcs, ws, reduction, activation, bias in graph._plan:
        row = buf[dst]
        np.multiply(buf[srcs[0]], ws[0], out=row)
        fold = np.add if reduction == "sum" else (
            np.maximum if reduction == "max" else np.minimum
        )
        for s, w in zip(srcs[1:], ws[1:]):
            np.multiply(buf[s], w, out=scratch)
            fold(row, scratch, out=row)
        if activation == "sq":
            np.multiply(row, row, out=row)
        elif activation == "abs":
            np.abs(row, out=row)
        row += bias
    return buf[graph.output_id].copy()


# ------------------------------------------------------------------
# Rewrites
# ------------------------------------------------------------------

def transform(graph: ShapeGraph, t: AffineTransform) -> ShapeGraph:
    """Graph computing F(T(p)): three fresh inputs are inserted and the old
    input nodes become weighted-sum nodes with bias -translation."""
    offset = 3  # fresh inputs take ids 0,1,2; shift everything else
    remap = {nid: nid + offset for nid in (n.id for n in graph.nodes)}
    m = t.matrix
    nodes = [Node(0), Node(1), Node(2)]
    edges: list[tuple[int, int, float]] = []
    old_inputs = set(graph.input_ids)
    for node in graph.nodes:
        if node.id in old_inputs:
            axis = graph.input_ids.index(node.id)
            nodes.append(Node(remap[node.id], bias=-float(t.translation[axis])))
            for j in range(3):
                edges.append((j, remap[node.id], float(m[axis, j])))
        else:
            nodes.append(Node(remap[node.id], node.bias, node.reduction, node.activation))
    for src, dst, w in graph.edges:
        edges.append((remap[src], remap[dst], w))
    return _build_graph(nodes, edges, (0, 1, 2), remap[graph.output_id])


_COMPOSE = {
    # (reduction of new output, weight on a's output, weight on b's output)
    CsgOp.UNION: ("min", 1.0, 1.0),
    CsgOp.INTERSECTION: ("max", 1.0, 1.0),
    CsgOp.DIFFERENCE: ("max", 1.0, -1.0),  # max(F_a, -F_b)
}


def compose(a: ShapeGraph, b: ShapeGraph, op: CsgOp) -> ShapeGraph:
    """Merge inputs of two graphs and join their outputs through a fresh
    min/max node: union=min(Fa,Fb), intersection=max(Fa,Fb),
    difference=max(Fa,-Fb)."""
    nodes = list(a.nodes)
    edges = list(a.edges)
    base = len(a.nodes)
    remap_b: dict[int, int] = {}
    for i, nid in enumerate(b.input_ids):
        remap_b[nid] = a.input_ids[i]
    for node in b.nodes:
        if node.id in remap_b:
            continue
        remap_b[node.id] = base
        nodes.append(Node(base, node.bias, node.reduction, node.activation))
        base += 1
    for src, dst, w in b.edges:
        edges.append((remap_b[src], remap_b[dst], w))
    red, wa, wb = _COMPOSE[op]
    out = base
    nodes.append(Node(out, reduction=red))
    edges.append((a.output_id, out, wa))
    edges.append((remap_b[b.output_id], out, wb))
    return _build_graph(nodes, edges, a.input_ids, out)


# ------------------------------------------------------------------
# Serialization (the on-disk genotype format)
# ------------------------------------------------------------------

def to_dict(graph: ShapeGraph) -> dict:
    return {
        "inputs": list(graph.input_ids),
        "output": graph.output_id,
        "nodes": [
            {"id": n.id, "bias": n.bias, "reduction": n.reduction, "activation": n.activation}
            for n in graph.nodes
        ],
        "edges": [{"src": s, "dst": d, "w": w} for s, d, w in graph.edges],
    }


def serialize(graph: ShapeGraph) -> str:
    return json.dumps(to_dict(graph), indent=1, sort_keys=True)


def from_dict(data: dict) -> ShapeGraph:
    if not isinstance(data, dict):
        raise GraphParseError("top-level: expected a JSON object")
    for field in ("inputs", "output", "nodes", "edges"):
        if field not in data:
            raise GraphParseError(f"{field}: missing required field")
    inputs = data["inputs"]
    if not (isinstance(inputs, list) and len(inputs) == 3):
        raise GraphParseError("inputs: expected a list of exactly 3 node ids")
    nodes = []
    for i, nd in enumerate(data["nodes"]):
        try:
            nodes.append(
                Node(
                    id=int(nd["id"]),
                    bias=float(nd.get("bias", 0.0)),
                    reduction=str(nd.get("reduction", "sum")),
                    activation=str(nd.get("activation", "id")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphParseError(f"nodes[{i}]: {exc}") from exc
    edges = []
    for i, ed in enumerate(data["edges"]):
        try:
            edges.append((int(ed["src"]), int(ed["dst"]), float(ed["w"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphParseError(f"edges[{i}]: {exc}") from exc
    try:
        output = int(data["output"])
        input_ids = (int(inputs[0]), int(inputs[1]), int(inputs[2]))
    except (TypeError, ValueError) as exc:
        raise GraphParseError(f"inputs/output: {exc}") from exc
    return _build_graph(nodes, edges, input_ids, output, err=GraphParseError)


def deserialize(text: str) -> ShapeGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"json: {exc}") from exc
    return from_dict(data)
