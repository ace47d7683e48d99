"""Benchmark target shapes for standalone (IoU-driven) runs.

The "bite" target is a sphere with a spherical chunk removed; it is
exactly expressible as two primitives plus one difference, so evolution
can in principle reach IoU 1.  The heart and torus grids are classic
closed-form surfaces used by the long-running reproduction script; they
are not graph-expressible and exist only as voxel grids.
"""

from __future__ import annotations

import numpy as np

from .fitness import TargetSpec
from .geometry import VoxelGrid, voxel_centers
from .graph import AffineTransform, CsgOp, ShapeGraph, compose, make_primitive, transform


def bite_graph() -> ShapeGraph:
    body = make_primitive("sphere", radius=0.75)
    cutter = make_primitive("sphere", radius=0.45)
    shifted = transform(
        cutter, AffineTransform(np.eye(3), 1.0, np.array([0.55, 0.35, 0.0]))
    )
    return compose(body, shifted, CsgOp.DIFFERENCE)


def bite_target(resolution: int = 32) -> TargetSpec:
    from .geometry import voxelize

    return TargetSpec(name="bite", grid=voxelize(bite_graph(), resolution=resolution))


def _grid_from_field(values: np.ndarray, resolution: int) -> VoxelGrid:
    occ = (values < 0.0).reshape((resolution,) * 3)
    return VoxelGrid(resolution, (-1.0, 1.0), occ)


def heart_target(resolution: int = 32) -> TargetSpec:
    """Taubin heart surface, scaled to sit inside the canonical cube."""
    pts = voxel_centers(resolution) / 0.7
    x, y, z = pts[:, 0], pts[:, 2], pts[:, 1]  # heart axis along canonical y
    f = (x**2 + 2.25 * y**2 + z**2 - 1.0) ** 3 - x**2 * z**3 - 0.1125 * y**2 * z**3
    return TargetSpec(name="heart", grid=_grid_from_field(f, resolution))


def torus_target(resolution: int = 32, major: float = 0.6, minor: float = 0.3) -> TargetSpec:
    pts = voxel_centers(resolution)
    ring = np.sqrt(pts[:, 0] ** 2 + pts[:, 1] ** 2) - major
    f = ring**2 + pts[:, 2] ** 2 - minor**2
    return TargetSpec(name="torus", grid=_grid_from_field(f, resolution))


BUILTIN_TARGETS = {
    "bite": bite_target,
    "heart": heart_target,
    "torus": torus_target,
}


def desk_config(**overrides):
    """Benchmark settings for laptop-scale standalone runs.

    Jitter-scale transforms (small rotations, mild scale/translation)
    let a 100x100 population refine placements within ~150 iterations;
    the full-range defaults only pay off at population thousands.
    """
    from .evolution import EvolutionConfig

    base = dict(
        n=100,
        m=100,
        max_iterations=150,
        rotation_max_angle=0.3,
        scale_range=(0.85, 1.2),
        translation_range=0.25,
        checkpoint_every=0,
    )
    base.update(overrides)
    return EvolutionConfig(**base)
