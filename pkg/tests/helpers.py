"""Shared test oracles, deliberately independent of the library code paths
they check: closed-form primitive formulas, a standalone OBJ reader, mesh
topology checks and a brute-force shadow test."""

from __future__ import annotations

import numpy as np

from shapevo.graph import (
    AffineTransform,
    CsgOp,
    ShapeGraph,
    compose,
    make_primitive,
    transform,
)


def closed_form(kind: str, params: dict, pts: np.ndarray) -> np.ndarray:
    """Direct numpy transcription of the four primitive formulas."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if kind == "sphere":
        r = params["radius"]
        return x**2 + y**2 + z**2 - r**2
    if kind == "cylinder":
        r, h = params["radius"], params["height"]
        return np.maximum((x**2 + y**2) / r**2, np.abs(z) / h) - 1.0
    if kind == "cube":
        side = params["side"]
        return np.maximum(np.abs(x), np.maximum(np.abs(y), np.abs(z))) - side / 2.0
    if kind == "cone":
        r, h = params["radius"], params["height"]
        return np.maximum(
            (x**2 + y**2) / r**2 - z**2 / h**2, np.maximum(-z, z - h)
        )
    raise ValueError(kind)


PRIMITIVE_CASES = [
    ("sphere", {"radius": 1.0}),
    ("sphere", {"radius": 0.37}),
    ("cylinder", {"radius": 0.8, "height": 0.5}),
    ("cube", {"side": 1.3}),
    ("cone", {"radius": 0.6, "height": 0.9}),
]


def random_params(kind: str, rng: np.random.Generator) -> dict:
    if kind == "sphere":
        return {"radius": float(rng.uniform(0.2, 1.5))}
    if kind == "cube":
        return {"side": float(rng.uniform(0.3, 2.0))}
    return {"radius": float(rng.uniform(0.2, 1.2)), "height": float(rng.uniform(0.2, 1.2))}


def random_graph(rng: np.random.Generator, max_ops: int = 3) -> ShapeGraph:
    """Random composite of transformed primitives, for property tests."""
    kinds = ("sphere", "cylinder", "cube", "cone")
    kind = kinds[int(rng.integers(4))]
    graph = make_primitive(kind, **random_params(kind, rng))
    for _ in range(int(rng.integers(0, max_ops + 1))):
        action = int(rng.integers(2))
        if action == 0:
            graph = transform(graph, AffineTransform.random(rng))
        else:
            kind = kinds[int(rng.integers(4))]
            other = make_primitive(kind, **random_params(kind, rng))
            op = (CsgOp.UNION, CsgOp.INTERSECTION, CsgOp.DIFFERENCE)[int(rng.integers(3))]
            graph = compose(graph, other, op)
    return graph


def parse_obj(text: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reference OBJ reader: vertices, normals, faces (0-based)."""
    verts, norms, faces = [], [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "vn":
            norms.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(tok.split("/")[0]) - 1 for tok in parts[1:4]])
    return (
        np.array(verts, dtype=float).reshape(-1, 3),
        np.array(norms, dtype=float).reshape(-1, 3),
        np.array(faces, dtype=int).reshape(-1, 3),
    )


def edge_use_counts(faces: np.ndarray) -> np.ndarray:
    """How many triangles use each undirected edge."""
    edges = np.sort(
        np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1
    )
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return counts


def is_watertight(faces: np.ndarray) -> bool:
    return bool(len(faces)) and bool(np.all(edge_use_counts(faces) == 2))


def brute_force_occluded(
    origins: np.ndarray, origin_faces: np.ndarray, verts: np.ndarray,
    faces: np.ndarray, light: np.ndarray, eps: float = 1e-6,
) -> np.ndarray:
    """Any-hit along `light` testing every triangle (no culling)."""
    out = np.zeros(len(origins), dtype=bool)
    A = verts[faces[:, 0]]
    e1 = verts[faces[:, 1]] - A
    e2 = verts[faces[:, 2]] - A
    pvec = np.cross(np.broadcast_to(light, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-15
    safe = np.where(ok, det, 1.0)
    for i, (origin, src) in enumerate(zip(origins, origin_faces)):
        tvec = origin - A
        u = np.einsum("ij,ij->i", tvec, pvec) / safe
        qvec = np.cross(tvec, e1)
        v = (qvec @ light) / safe
        t = np.einsum("ij,ij->i", e2, qvec) / safe
        hit = (
            ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
            & (np.arange(len(faces)) != src)
        )
        out[i] = bool(hit.any())
    return out
