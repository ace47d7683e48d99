"""Synthetic dataset builders shared by the evaluator tests.

Datasets are written directly in the wire formats (16-bit grayscale PNG,
little-endian bottom-up PFM, 8-bit mask PNG) so the reader is exercised
against the layout contract, not against any writer of ours.
"""

import struct
import zlib
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def png_16bit(gray: np.ndarray) -> bytes:
    q = np.round(np.clip(gray, 0, 1) * 65535).astype(">u2")
    h, w = q.shape
    raw = b"".join(b"\x00" + row.tobytes() for row in q)

    def chunk(tag, payload):
        return (
            struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload))
        )

    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 16, 0, 0, 0, 0))
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )


def pfm_3ch(data: np.ndarray) -> bytes:
    arr = np.asarray(data, dtype="<f4")
    h, w = arr.shape[:2]
    return f"PF\n{w} {h}\n-1.0\n".encode() + arr[::-1].tobytes()


def lit_sphere_view(size: int, light, rng=None, noise=0.0):
    """Analytic sphere normals + Lambert image, the simplest learnable pair."""
    ax = np.linspace(-1, 1, size)
    xs, ys = np.meshgrid(ax, ax, indexing="xy")
    rho2 = xs**2 + ys**2
    mask = rho2 < 0.81
    nz = np.sqrt(np.clip(0.81 - rho2, 0, None)) / 0.9
    normals = np.zeros((size, size, 3), dtype=np.float32)
    normals[..., 0] = np.where(mask, xs / 0.9, 0)
    normals[..., 1] = np.where(mask, -ys / 0.9, 0)
    normals[..., 2] = np.where(mask, nz, 0)
    light = np.asarray(light, dtype=np.float32)
    image = np.clip(np.einsum("ijk,k->ij", normals, light), 0, 1)
    if noise and rng is not None:
        image = np.clip(image + rng.normal(0, noise, image.shape), 0, 1)
    return image, normals, mask


def write_view(directory: Path, index: int, image, normals, mask) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{index}.png").write_bytes(png_16bit(image))
    (directory / f"{index}.normals.pfm").write_bytes(pfm_3ch(normals))
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(
        directory / f"{index}.mask.png"
    )


@pytest.fixture
def sphere_dataset(tmp_path):
    """Two shape directories plus a validation directory, 32x32 views."""
    rng = np.random.default_rng(0)
    lights = [(0.0, 0.0, 1.0), (0.4, 0.1, 0.9), (-0.3, 0.2, 0.93), (0.1, -0.4, 0.91)]
    dirs = {}
    for name, which in (("a", (0, 1)), ("b", (2, 3)), ("validation", (1, 2))):
        directory = tmp_path / name
        for i, li in enumerate(which):
            light = np.asarray(lights[li])
            light = light / np.linalg.norm(light)
            image, normals, mask = lit_sphere_view(32, light, rng, noise=0.0)
            write_view(directory, i, image, normals, mask)
        dirs[name] = directory
    return dirs
