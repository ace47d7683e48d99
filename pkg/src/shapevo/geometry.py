"""Voxelization, volumetric IoU, triviality tests and isosurface meshing.

All shapes live in the canonical cube [-1,1]^3.  Occupancy is sampled at
voxel centers (occupied iff F < 0).  Meshes come from marching cubes on a
regular point lattice; before extraction the field is clamped against the
bounding cube (shrunk by half a cell) so shapes that spill over the domain
still produce closed surfaces strictly inside the lattice.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from skimage import measure

from .graph import ShapeGraph, evaluate_batch

CANONICAL_BOUNDS = (-1.0, 1.0)

# Triviality thresholds: sub-voxel slivers and near-identical copies of a
# parent are discarded without rejecting genuine refinements.
MIN_OCCUPIED_VOXELS = 4
FULL_FRACTION = 0.999
PARENT_IOU = 0.99

_SURFACE_TIE = 1e-9  # |F| below this counts as a surface tie, not interior


class GeometryError(ValueError):
    pass


class IncompatibleGridError(GeometryError):
    pass


class Verdict(Enum):
    OK = "ok"
    EMPTY = "empty"
    DEGENERATE = "degenerate-equal-to-parent"
    FULL = "full"


@dataclass(frozen=True)
class VoxelGrid:
    resolution: int
    bounds: tuple[float, float]
    occupancy: np.ndarray  # (res, res, res) bool, index order x, y, z

    def __post_init__(self):
        lo, hi = self.bounds
        if not hi > lo:
            raise GeometryError(f"degenerate bounds {self.bounds}")
        if self.occupancy.shape != (self.resolution,) * 3:
            raise GeometryError("occupancy shape does not match resolution")

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    @property
    def fraction(self) -> float:
        return self.count / self.occupancy.size

    def compatible(self, other: "VoxelGrid") -> bool:
        return self.resolution == other.resolution and self.bounds == other.bounds


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64
    normals: np.ndarray  # (V, 3) float64, unit, pointing toward F > 0

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def area(self) -> float:
        if self.is_empty:
            return 0.0
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return float(np.linalg.norm(cross, axis=1).sum() / 2.0)


def empty_mesh() -> TriangleMesh:
    z = np.zeros((0, 3))
    return TriangleMesh(z, np.zeros((0, 3), dtype=np.int64), z.copy())


# ------------------------------------------------------------------
# Voxelization and IoU
# ------------------------------------------------------------------

_center_cache: dict[tuple[int, tuple[float, float]], np.ndarray] = {}


def voxel_centers(resolution: int, bounds: tuple[float, float] = CANONICAL_BOUNDS) -> np.ndarray:
    """(res^3, 3) array of voxel-center coordinates, x fastest-varying last."""
    key = (resolution, bounds)
    if key not in _center_cache:
        lo, hi = bounds
        step = (hi - lo) / resolution
        axis = lo + step * (np.arange(resolution) + 0.5)
        xs, ys, zs = np.meshgrid(axis, axis, axis, indexing="ij")
        _center_cache[key] = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    return _center_cache[key]


def voxelize(
    graph: ShapeGraph,
    resolution: int = 32,
    bounds: tuple[float, float] = CANONICAL_BOUNDS,
) -> VoxelGrid:
    """Occupancy grid: voxel (i,j,k) is occupied iff F(center) < 0."""
    if resolution < 2:
        raise GeometryError(f"resolution must be >= 2, got {resolution}")
    values = evaluate_batch(graph, voxel_centers(resolution, bounds))
    occ = (values < 0.0).reshape(resolution, resolution, resolution)
    return VoxelGrid(resolution, bounds, occ)


def iou(a: VoxelGrid, b: VoxelGrid) -> float:
    """Intersection over union of occupied sets; 0 when both are empty."""
    if not a.compatible(b):
        raise IncompatibleGridError(
            f"grids differ: {a.resolution}@{a.bounds} vs {b.resolution}@{b.bounds}"
        )
    inter = int(np.count_nonzero(a.occupancy & b.occupancy))
    union = int(np.count_nonzero(a.occupancy | b.occupancy))
    return inter / union if union else 0.0


def classify_trivial(child: VoxelGrid, parent_a: VoxelGrid, parent_b: VoxelGrid) -> Verdict:
    """Detect children not worth keeping: (near-)empty, domain-filling, or
    indistinguishable from either parent."""
    for parent in (parent_a, parent_b):
        if not child.compatible(parent):
            raise IncompatibleGridError("child and parent grids are incompatible")
    if child.count < MIN_OCCUPIED_VOXELS:
        return Verdict.EMPTY
    if child.fraction > FULL_FRACTION:
        return Verdict.FULL
    if iou(child, parent_a) > PARENT_IOU or iou(child, parent_b) > PARENT_IOU:
        return Verdict.DEGENERATE
    return Verdict.OK


# ------------------------------------------------------------------
# Marching cubes
# ------------------------------------------------------------------

def _lattice(resolution: int, bounds: tuple[float, float]) -> tuple[np.ndarray, float]:
    lo, hi = bounds
    axis = np.linspace(lo, hi, resolution)
    return axis, axis[1] - axis[0]


def marching_cubes(
    graph: ShapeGraph,
    resolution: int = 64,
    bounds: tuple[float, float] = CANONICAL_BOUNDS,
) -> TriangleMesh:
    """Extract the F = 0 isosurface on a resolution^3 point lattice.

    Vertex normals are normalized central-difference gradients of the
    (clamped) field at the vertex positions, so they point toward F > 0;
    face windings are made consistent with them.  An empty isosurface
    yields an empty mesh.
    """
    if resolution < 2:
        raise GeometryError(f"resolution must be >= 2, got {resolution}")
    axis, step = _lattice(resolution, bounds)
    xs, ys, zs = np.meshgrid(axis, axis, axis, indexing="ij")
    points = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    field = _confined(graph, points, bounds, step).reshape((resolution,) * 3)
    if not (field.min() < 0.0 < field.max()):
        return empty_mesh()
    verts, faces, _, _ = measure.marching_cubes(field, level=0.0, spacing=(step,) * 3)
    verts = verts.astype(np.float64) + bounds[0]
    faces = faces.astype(np.int64)

    normals = _gradient_normals(graph, verts, bounds, step)
    faces = _orient_faces(verts, faces, normals)
    faces = _drop_degenerate(verts, faces)
    return TriangleMesh(verts, faces, normals)


def _confined(
    graph: ShapeGraph, points: np.ndarray, bounds: tuple[float, float], step: float
) -> np.ndarray:
    """max(F, cube boundary) with the cube shrunk by half a lattice cell, so
    boundary lattice points are strictly exterior and surfaces close."""
    values = evaluate_batch(graph, points)
    lo, hi = bounds
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0 - step / 2.0
    wall = np.max(np.abs(points - center), axis=1) - half
    return np.maximum(values, wall)


def _gradient_normals(
    graph: ShapeGraph, verts: np.ndarray, bounds: tuple[float, float], step: float
) -> np.ndarray:
    if len(verts) == 0:
        return verts.copy()
    h = step / 4.0
    grad = np.empty_like(verts)
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = h
        fp = _confined(graph, verts + offset, bounds, step)
        fm = _confined(graph, verts - offset, bounds, step)
        grad[:, axis] = (fp - fm) / (2.0 * h)
    norms = np.linalg.norm(grad, axis=1)
    norms[norms < 1e-20] = 1.0
    return grad / norms[:, None]


def _orient_faces(verts: np.ndarray, faces: np.ndarray, normals: np.ndarray) -> np.ndarray:
    if len(faces) == 0:
        return faces
    tri = verts[faces]
    geo = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    mean_n = normals[faces].mean(axis=1)
    flip = np.einsum("ij,ij->i", geo, mean_n) < 0.0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def _drop_degenerate(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    if len(faces) == 0:
        return faces
    distinct = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    tri = verts[faces]
    areas = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    return faces[distinct & (areas > 1e-14)]


# ------------------------------------------------------------------
# Export / debug
# ------------------------------------------------------------------

def export_obj(mesh: TriangleMesh) -> str:
    """Wavefront OBJ text with v/vn records and faces referencing both."""
    lines = ["# shapevo mesh"]
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for n in mesh.normals:
        lines.append(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
    for f in mesh.faces:
        a, b, c = (int(i) + 1 for i in f)
        lines.append(f"f {a}//{a} {b}//{b} {c}//{c}")
    return "\n".join(lines) + "\n"


def dump_rle(grid: VoxelGrid) -> str:
    """Run-length-encoded occupancy dump (diagnostics only)."""
    flat = grid.occupancy.reshape(-1)
    runs: list[str] = []
    if flat.size:
        changes = np.flatnonzero(np.diff(flat.view(np.int8)))
        starts = np.concatenate([[0], changes + 1])
        ends = np.concatenate([changes + 1, [flat.size]])
        runs = [f"{'1' if flat[s] else '0'}x{e - s}" for s, e in zip(starts, ends)]
    return f"voxels {grid.resolution} {grid.bounds[0]} {grid.bounds[1]} " + " ".join(runs)
