"""Seeded randomness for the whole engine.

Every random draw goes through numpy's PCG64 generator so that a run is
fully determined by its 64-bit seed.  Derived streams are built with
`numpy.random.SeedSequence(seed, spawn_key=...)`, which is stable across
platforms and numpy versions; per-shape streams therefore do not depend
on the order in which shapes happen to be processed.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng", "derive_rng", "random_rotation"]


def make_rng(seed: int) -> np.random.Generator:
    """Top-level generator for a run."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive_rng(seed: int, *key: int | str) -> np.random.Generator:
    """Independent stream identified by (seed, key).

    String key parts are hashed to integers first; the resulting stream
    depends only on the values, never on call order.
    """
    parts = tuple(
        k if isinstance(k, int) else int.from_bytes(k.encode(), "little") % (2**63)
        for k in key
    )
    seq = np.random.SeedSequence(seed, spawn_key=parts)
    return np.random.Generator(np.random.PCG64(seq))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix drawn uniformly from SO(3) (unit-quaternion method)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )
