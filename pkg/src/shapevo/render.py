"""Deterministic software renderer for shaded grayscale + normal datasets.

Each view is an orthographic camera (rotation only) with a directional
light given in camera space, at most 60 degrees off the view axis.  The
camera looks along -z in camera space; +z points from the scene toward
the camera.  Per pixel we cast one primary ray, shade the nearest hit
with intensity = max(0, n.l) (albedo 1, no ambient), and cast one shadow
ray toward the light: occluded pixels get intensity 0 (hard shadows).
Ray casting is exact; a uniform 2D grid only culls candidate triangles,
so results are identical to brute force and independent of scheduling.

Outputs per (shape, view): 16-bit grayscale PNG, camera-space normal map
as a 3-channel little-endian PFM (background zeroed, rows bottom-to-top),
an 8-bit mask PNG, and a JSON file with rotation/light/window.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, marching_cubes
from .graph import ShapeGraph
from .rand import random_rotation

LIGHT_CONE_DEG = 60.0
DEFAULT_WINDOW = 2.0 * math.sqrt(3.0)  # the canonical cube is never clipped
DEFAULT_IMAGE_SIZE = 128

_SHADOW_EPS = 1e-6
_CULL_GRID = 128


class RenderError(RuntimeError):
    pass


class EmptyShapeError(RenderError):
    pass


@dataclass(frozen=True)
class ViewSpec:
    rotation: np.ndarray  # (3,3) world -> camera
    light: np.ndarray  # (3,) unit, camera space, z >= cos(60 deg)
    image_size: int = DEFAULT_IMAGE_SIZE
    window: float = DEFAULT_WINDOW  # full side length, world units

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        light = np.asarray(self.light, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "light", light)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise RenderError("camera rotation is not orthonormal")
        if abs(np.linalg.norm(light) - 1.0) > 1e-9:
            raise RenderError("light direction must be a unit vector")
        if light[2] < math.cos(math.radians(LIGHT_CONE_DEG)) - 1e-9:
            raise RenderError("light direction exceeds the 60 degree cone")
        if self.image_size < 1:
            raise RenderError("image size must be positive")
        if self.window < DEFAULT_WINDOW - 1e-9:
            raise RenderError("window does not cover the canonical cube")

    def to_dict(self) -> dict:
        return {
            "rotation": [[float(v) for v in row] for row in self.rotation],
            "light": [float(v) for v in self.light],
            "window": float(self.window),
            "image_size": int(self.image_size),
        }

    @staticmethod
    def from_dict(data: dict) -> "ViewSpec":
        return ViewSpec(
            rotation=np.array(data["rotation"], dtype=np.float64),
            light=np.array(data["light"], dtype=np.float64),
            image_size=int(data.get("image_size", DEFAULT_IMAGE_SIZE)),
            window=float(data.get("window", DEFAULT_WINDOW)),
        )


@dataclass(frozen=True)
class RenderSample:
    image: np.ndarray  # (H,W) float64 in [0,1]
    normals: np.ndarray  # (H,W,3) float64, camera space, background 0
    mask: np.ndarray  # (H,W) bool


def sample_view(rng: np.random.Generator, image_size: int = DEFAULT_IMAGE_SIZE) -> ViewSpec:
    """Camera uniform over SO(3); light uniform over the 60-degree cap
    around the +z (toward-camera) axis."""
    rotation = random_rotation(rng)
    cos_cap = math.cos(math.radians(LIGHT_CONE_DEG))
    cos_t = rng.uniform(cos_cap, 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    light = np.array([sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t])
    light /= np.linalg.norm(light)
    return ViewSpec(rotation=rotation, light=light, image_size=image_size)


# ------------------------------------------------------------------
# Ray casting
# ------------------------------------------------------------------

def render(mesh: TriangleMesh, view: ViewSpec) -> RenderSample:
    n = view.image_size
    image = np.zeros((n, n))
    normals = np.zeros((n, n, 3))
    mask = np.zeros((n, n), dtype=bool)
    if mesh.is_empty:
        return RenderSample(image, normals, mask)

    verts = mesh.vertices @ view.rotation.T
    vnormals = mesh.normals @ view.rotation.T
    hit = _primary_pass(verts, vnormals, mesh.faces, n, view.window)
    if hit is None:
        return RenderSample(image, normals, mask)
    rows, cols, points, hit_n, hit_face = hit

    lam = np.maximum(0.0, hit_n @ view.light)
    lit = lam > 0.0
    if np.any(lit):
        shadowed = _occluded(
            points[lit], hit_face[lit], verts, mesh.faces, view.light
        )
        lam_lit = lam[lit]
        lam_lit[shadowed] = 0.0
        lam[lit] = lam_lit

    mask[rows, cols] = True
    image[rows, cols] = lam
    normals[rows, cols] = hit_n
    return RenderSample(image, normals, mask)


def _primary_pass(verts, vnormals, faces, n, window):
    """Nearest hit per pixel for orthographic rays along -z.

    Returns (rows, cols, hit points, unit camera-facing normals, face ids)
    or None when nothing is hit.
    """
    pw = window / n
    tri2 = verts[faces][:, :, :2]  # (F,3,2)
    lo = tri2.min(axis=1)
    hi = tri2.max(axis=1)
    # Pixel centers: x_j = -window/2 + (j+.5)*pw ; y_i = window/2 - (i+.5)*pw
    j_lo = np.ceil((lo[:, 0] + window / 2) / pw - 0.5).astype(np.int64)
    j_hi = np.floor((hi[:, 0] + window / 2) / pw - 0.5).astype(np.int64)
    i_lo = np.ceil((window / 2 - hi[:, 1]) / pw - 0.5).astype(np.int64)
    i_hi = np.floor((window / 2 - lo[:, 1]) / pw - 0.5).astype(np.int64)
    j_lo = np.clip(j_lo, 0, n - 1)
    j_hi = np.clip(j_hi, -1, n - 1)
    i_lo = np.clip(i_lo, 0, n - 1)
    i_hi = np.clip(i_hi, -1, n - 1)
    nj = np.maximum(0, j_hi - j_lo + 1)
    ni = np.maximum(0, i_hi - i_lo + 1)
    counts = ni * nj
    total = int(counts.sum())
    if total == 0:
        return None

    face_rep = np.repeat(np.arange(len(faces)), counts)
    starts = np.cumsum(counts) - counts
    offs = np.arange(total) - np.repeat(starts, counts)
    nj_rep = np.repeat(nj, counts)
    rows = np.repeat(i_lo, counts) + offs // nj_rep
    cols = np.repeat(j_lo, counts) + offs % nj_rep

    px = -window / 2 + (cols + 0.5) * pw
    py = window / 2 - (rows + 0.5) * pw
    a = verts[faces[face_rep, 0]]
    b = verts[faces[face_rep, 1]]
    c = verts[faces[face_rep, 2]]
    denom = _cross2(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1], c[:, 0] - a[:, 0], c[:, 1] - a[:, 1])
    ok = np.abs(denom) > 1e-18
    denom = np.where(ok, denom, 1.0)
    wb = _cross2(px - a[:, 0], py - a[:, 1], c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]) / denom
    wc = _cross2(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1], px - a[:, 0], py - a[:, 1]) / denom
    wa = 1.0 - wb - wc
    inside = ok & (wa >= 0.0) & (wb >= 0.0) & (wc >= 0.0)
    if not np.any(inside):
        return None

    face_rep = face_rep[inside]
    rows, cols = rows[inside], cols[inside]
    wa, wb, wc = wa[inside], wb[inside], wc[inside]
    a, b, c = a[inside], b[inside], c[inside]
    depth = wa * a[:, 2] + wb * b[:, 2] + wc * c[:, 2]

    # Winner per pixel: maximal depth (closest to the camera), face id as
    # a deterministic tie-break.
    pix = rows * n + cols
    order = np.lexsort((face_rep, depth, pix))
    pix_sorted = pix[order]
    last = np.flatnonzero(np.r_[pix_sorted[1:] != pix_sorted[:-1], True])
    win = order[last]

    wa, wb, wc = wa[win], wb[win], wc[win]
    face_rep = face_rep[win]
    rows, cols = rows[win], cols[win]
    fa, fb, fc = faces[face_rep, 0], faces[face_rep, 1], faces[face_rep, 2]
    points = (
        wa[:, None] * verts[fa] + wb[:, None] * verts[fb] + wc[:, None] * verts[fc]
    )
    normal = (
        wa[:, None] * vnormals[fa] + wb[:, None] * vnormals[fb] + wc[:, None] * vnormals[fc]
    )
    length = np.linalg.norm(normal, axis=1)
    length[length < 1e-20] = 1.0
    normal /= length[:, None]
    flip = normal[:, 2] < 0.0
    normal[flip] = -normal[flip]
    return rows, cols, points, normal, face_rep


def _cross2(ax, ay, bx, by):
    return ax * by - ay * bx


def _light_basis(light: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(light)))] = 1.0
    u = np.cross(light, axis)
    u /= np.linalg.norm(u)
    v = np.cross(light, u)
    return u, v


def _occluded(origins, origin_faces, verts, faces, light) -> np.ndarray:
    """Exact any-hit along the constant light direction for each origin.

    Triangles are culled by a uniform grid in the plane orthogonal to the
    light; intersections use Moller-Trumbore with t > eps and the origin's
    own triangle excluded.
    """
    u, v = _light_basis(light)
    proj = np.stack([verts @ u, verts @ v], axis=1)
    tri = proj[faces]  # (F,3,2)
    lo = tri.min(axis=1)
    hi = tri.max(axis=1)
    gmin = lo.min(axis=0) - 1e-9
    gmax = hi.max(axis=0) + 1e-9
    extent = np.maximum(gmax - gmin, 1e-9)
    cell = extent / _CULL_GRID

    fj_lo = np.clip((lo[:, 0] - gmin[0]) // cell[0], 0, _CULL_GRID - 1).astype(np.int64)
    fj_hi = np.clip((hi[:, 0] - gmin[0]) // cell[0], 0, _CULL_GRID - 1).astype(np.int64)
    fi_lo = np.clip((lo[:, 1] - gmin[1]) // cell[1], 0, _CULL_GRID - 1).astype(np.int64)
    fi_hi = np.clip((hi[:, 1] - gmin[1]) // cell[1], 0, _CULL_GRID - 1).astype(np.int64)
    nj = fj_hi - fj_lo + 1
    ni = fi_hi - fi_lo + 1
    counts = ni * nj
    total = int(counts.sum())
    face_rep = np.repeat(np.arange(len(faces)), counts)
    starts = np.cumsum(counts) - counts
    offs = np.arange(total) - np.repeat(starts, counts)
    nj_rep = np.repeat(nj, counts)
    cell_i = np.repeat(fi_lo, counts) + offs // nj_rep
    cell_j = np.repeat(fj_lo, counts) + offs % nj_rep
    cell_id = cell_i * _CULL_GRID + cell_j

    order = np.argsort(cell_id, kind="stable")
    cell_sorted = cell_id[order]
    face_sorted = face_rep[order]
    cell_starts = np.searchsorted(cell_sorted, np.arange(_CULL_GRID * _CULL_GRID + 1))

    ou = origins @ u
    ov = origins @ v
    qj = np.clip((ou - gmin[0]) // cell[0], 0, _CULL_GRID - 1).astype(np.int64)
    qi = np.clip((ov - gmin[1]) // cell[1], 0, _CULL_GRID - 1).astype(np.int64)
    qcell = qi * _CULL_GRID + qj
    span = cell_starts[qcell + 1] - cell_starts[qcell]
    which = np.flatnonzero(span > 0)
    if which.size == 0:
        return np.zeros(len(origins), dtype=bool)
    point_rep = np.repeat(which, span[which])
    local = np.arange(len(point_rep)) - np.repeat(
        np.cumsum(span[which]) - span[which], span[which]
    )
    cand_face = face_sorted[cell_starts[qcell[point_rep]] + local]

    A = verts[faces[cand_face, 0]]
    e1 = verts[faces[cand_face, 1]] - A
    e2 = verts[faces[cand_face, 2]] - A
    pvec = np.cross(np.broadcast_to(light, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-15
    det = np.where(ok, det, 1.0)
    tvec = origins[point_rep] - A
    bu = np.einsum("ij,ij->i", tvec, pvec) / det
    qvec = np.cross(tvec, e1)
    bv = (qvec @ light) / det
    t = np.einsum("ij,ij->i", e2, qvec) / det
    hits = (
        ok
        & (bu >= 0.0)
        & (bv >= 0.0)
        & (bu + bv <= 1.0)
        & (t > _SHADOW_EPS)
        & (cand_face != origin_faces[point_rep])
    )
    return np.bincount(point_rep[hits], minlength=len(origins)) > 0


# ------------------------------------------------------------------
# Image formats
# ------------------------------------------------------------------

def write_png(image) -> bytes:
    """16-bit grayscale PNG; [0,1] mapped linearly to 0..65535."""
    arr = np.asarray(image, dtype=np.float64)
    q = np.round(np.clip(arr, 0.0, 1.0) * 65535.0).astype(">u2")
    return _png_bytes(q.tobytes(), q.shape[1], q.shape[0], bit_depth=16)


def write_mask_png(mask) -> bytes:
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    return _png_bytes(arr.tobytes(), arr.shape[1], arr.shape[0], bit_depth=8)


def _png_bytes(pixels: bytes, width: int, height: int, bit_depth: int) -> bytes:
    stride = width * bit_depth // 8
    raw = bytearray()
    for row in range(height):
        raw.append(0)  # filter: none
        raw += pixels[row * stride : (row + 1) * stride]

    def chunk(tag: bytes, payload: bytes) -> bytes:
        crc = zlib.crc32(tag + payload)
        return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)

    ihdr = struct.pack(">IIBBBBB", width, height, bit_depth, 0, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(bytes(raw), 6))
        + chunk(b"IEND", b"")
    )


def write_pfm(data) -> bytes:
    """3-channel little-endian PFM (scale -1.0), rows bottom-to-top."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise RenderError(f"expected (H,W,3) data, got {arr.shape}")
    h, w = arr.shape[:2]
    return f"PF\n{w} {h}\n-1.0\n".encode("ascii") + arr[::-1].tobytes()


def read_pfm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise RenderError("not a PFM stream")
    w, h = (int(tok) for tok in parts[1].split())
    scale = float(parts[2])
    channels = 3 if parts[0] == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(parts[3], dtype=dtype, count=w * h * channels)
    arr = arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)
    return np.asarray(arr[::-1], dtype=np.float32)


# ------------------------------------------------------------------
# Dataset layout: <shape-dir>/<view>.png|.normals.pfm|.mask.png|.view.json
# ------------------------------------------------------------------

def write_render_sample(directory: Path, index: int, sample: RenderSample, view: ViewSpec) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{index}.png").write_bytes(write_png(sample.image))
    (directory / f"{index}.normals.pfm").write_bytes(write_pfm(sample.normals))
    (directory / f"{index}.mask.png").write_bytes(write_mask_png(sample.mask))
    (directory / f"{index}.view.json").write_text(
        json.dumps(view.to_dict(), sort_keys=True, indent=1)
    )


def render_shape_dataset(
    graph: ShapeGraph,
    directory: Path,
    views: int,
    rng: np.random.Generator,
    *,
    mesh_resolution: int = 64,
    image_size: int = DEFAULT_IMAGE_SIZE,
    on_empty: str = "blank",
) -> TriangleMesh:
    """Render `views` samples of a shape into the dataset layout.

    An empty isosurface either raises EmptyShapeError (on_empty="error")
    or produces all-background samples (on_empty="blank").
    """
    mesh = marching_cubes(graph, resolution=mesh_resolution)
    if mesh.is_empty and on_empty == "error":
        raise EmptyShapeError("shape has an empty isosurface")
    for index in range(views):
        view = sample_view(rng, image_size=image_size)
        sample = render(mesh, view)
        write_render_sample(Path(directory), index, sample, view)
    return mesh
