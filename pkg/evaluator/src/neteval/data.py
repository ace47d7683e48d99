"""Reading the renderer's dataset layout.

A shape dataset directory holds, per view index i: `i.png` (16-bit
grayscale image), `i.normals.pfm` (3-channel little-endian float map,
rows stored bottom-to-top), `i.mask.png` (8-bit, nonzero = foreground).
Directories are treated as read-only; loaded views are cached in memory.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

_VIEW_RE = re.compile(r"^(\d+)\.normals\.pfm$")


class DatasetError(RuntimeError):
    pass


def read_pfm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise DatasetError("not a PFM stream")
    width, height = (int(tok) for tok in parts[1].split())
    scale = float(parts[2])
    channels = 3 if parts[0] == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(parts[3], dtype=dtype, count=width * height * channels)
    shape = (height, width, channels) if channels == 3 else (height, width)
    return np.asarray(arr.reshape(shape)[::-1], dtype=np.float32)


def _read_gray(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        peak = 255.0 if img.mode == "L" else 65535.0
        arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DatasetError(f"{path}: expected grayscale")
    return (arr / peak).astype(np.float32)


class View:
    """One (image, normals, mask) triple as float32 arrays."""

    __slots__ = ("image", "normals", "mask")

    def __init__(self, image: np.ndarray, normals: np.ndarray, mask: np.ndarray):
        self.image = image  # (H, W)
        self.normals = normals  # (H, W, 3)
        self.mask = mask  # (H, W) bool


_cache: dict[Path, list[View]] = {}


def load_dataset(directory: Path) -> list[View]:
    directory = Path(directory)
    if directory in _cache:
        return _cache[directory]
    views: list[View] = []
    indices = sorted(
        int(m.group(1))
        for m in (_VIEW_RE.match(p.name) for p in directory.iterdir())
        if m is not None
    )
    if not indices:
        raise DatasetError(f"{directory}: no views found")
    for i in indices:
        normals = read_pfm((directory / f"{i}.normals.pfm").read_bytes())
        image = _read_gray(directory / f"{i}.png")
        with Image.open(directory / f"{i}.mask.png") as m:
            mask = np.asarray(m) > 0
        views.append(View(image, normals, mask))
    _cache[directory] = views
    return views


def find_dataset_dirs(root: Path) -> list[Path]:
    """All directories under (or equal to) root that contain views."""
    root = Path(root)
    hits = {p.parent for p in root.rglob("*.normals.pfm")}
    return sorted(hits)


def load_tree(root: Path) -> list[View]:
    views: list[View] = []
    for directory in find_dataset_dirs(root):
        views.extend(load_dataset(directory))
    if not views:
        raise DatasetError(f"{root}: no views found")
    return views
