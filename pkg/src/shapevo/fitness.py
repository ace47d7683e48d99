"""Fitness evaluators and normal-prediction quality metrics.

Two evaluators ship with the engine: a volumetric-IoU evaluator against a
fixed target grid (standalone runs), and a client for an external
evaluator subprocess speaking newline-delimited JSON over stdio (joint
runs).  The protocol:

    -> {"type":"hello","protocol":1,"config":{...}}   <- {"type":"ready"}
    -> {"type":"evaluate","iter":t,"candidate":"<id>","dataset":"<dir>"}
        <- {"type":"fitness","candidate":"<id>","fitness":f,"aux":{"val_mae":m}}
    -> {"type":"commit","iter":t,"candidate":"<id>"}  <- {"type":"committed","candidate":"<id>"}
    -> {"type":"shutdown"}                            <- (exit 0)

`hello.config` carries the validation directory, a scratch workdir, the
run seed and render settings.  Responses may arrive out of request order;
they are matched by candidate id.  Any {"type":"error"} reply, malformed
line, timeout or early exit surfaces as an EvaluatorError.
"""

from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import VoxelGrid, iou, voxelize
from .graph import ShapeGraph, deserialize
from .rand import derive_rng
from .render import render_shape_dataset

PROTOCOL_VERSION = 1

_DEG = math.pi / 180.0
# Inclusive thresholds get a hair of slack so an exactly-30-degree error
# still counts as within 30 degrees after the arccos round-trip.
_THRESH_SLACK = 1e-12


class FitnessError(ValueError):
    pass


class EmptyMaskError(FitnessError):
    pass


class EvaluatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class NormalMetrics:
    n_mae: float  # mean angle error, radians
    n_mse: float  # mean squared distance between unit vectors
    frac_11_25: float
    frac_22_5: float
    frac_30: float


def _unit(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.maximum(norms, 1e-12)


def normal_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> NormalMetrics:
    """Angle statistics between predicted and true normals on mask pixels.

    Angles are arccos of the clamped dot product of the unit-normalized
    vectors, evaluated in the chord form 2*asin(|p-g|/2), which is the
    same function but exact at 0 (identical inputs score exactly 0).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape[:-1] != mask.shape:
        raise FitnessError(f"shape mismatch: {pred.shape} vs {gt.shape} vs {mask.shape}")
    if not mask.any():
        raise EmptyMaskError("no pixels to score")
    p = _unit(pred[mask])
    g = _unit(gt[mask])
    sq = np.einsum("ij,ij->i", p - g, p - g)
    angles = 2.0 * np.arcsin(np.clip(np.sqrt(sq) / 2.0, 0.0, 1.0))
    frac = lambda deg: float(np.mean(angles <= deg * _DEG + _THRESH_SLACK))
    return NormalMetrics(
        n_mae=float(angles.mean()),
        n_mse=float(sq.mean()),
        frac_11_25=frac(11.25),
        frac_22_5=frac(22.5),
        frac_30=frac(30.0),
    )


# ------------------------------------------------------------------
# Targets
# ------------------------------------------------------------------

@dataclass(frozen=True)
class TargetSpec:
    name: str
    grid: VoxelGrid

    def __post_init__(self):
        if self.grid.count == 0:
            raise FitnessError(f"target {self.name!r} has empty occupancy")


def target_from_graph(graph: ShapeGraph, name: str = "graph", resolution: int = 32) -> TargetSpec:
    return TargetSpec(name=name, grid=voxelize(graph, resolution=resolution))


def target_from_obj(path: Path, resolution: int = 32) -> TargetSpec:
    """Voxelize a closed OBJ mesh by z-ray parity at voxel centers."""
    verts, faces = _read_obj(Path(path))
    grid = _voxelize_mesh(verts, faces, resolution)
    return TargetSpec(name=Path(path).stem, grid=grid)


def load_target(path: Path, resolution: int = 32) -> TargetSpec:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return target_from_obj(path, resolution=resolution)
    graph = deserialize(path.read_text())
    return target_from_graph(graph, name=path.stem, resolution=resolution)


def _read_obj(path: Path) -> tuple[np.ndarray, np.ndarray]:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
            for k in range(1, len(idx) - 1):  # fan-triangulate
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise FitnessError(f"{path}: no usable geometry")
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def _voxelize_mesh(verts: np.ndarray, faces: np.ndarray, resolution: int) -> VoxelGrid:
    lo, hi = -1.0, 1.0
    step = (hi - lo) / resolution
    centers = lo + step * (np.arange(resolution) + 0.5)
    # Tiny irrational offsets keep rays away from edges and vertices.
    rx = centers + step * 1e-5 * 0.6180339887
    ry = centers + step * 1e-5 * 0.4142135623

    tri = verts[faces]
    occ = np.zeros((resolution, resolution, resolution), dtype=bool)
    a2, b2, c2 = tri[:, 0, :2], tri[:, 1, :2], tri[:, 2, :2]
    denom = (b2[:, 0] - a2[:, 0]) * (c2[:, 1] - a2[:, 1]) - (b2[:, 1] - a2[:, 1]) * (
        c2[:, 0] - a2[:, 0]
    )
    ok = np.abs(denom) > 1e-18
    for i, x in enumerate(rx):
        dx = x - a2[:, 0]
        for j, y in enumerate(ry):
            dy = y - a2[:, 1]
            wb = (dx * (c2[:, 1] - a2[:, 1]) - dy * (c2[:, 0] - a2[:, 0])) / np.where(ok, denom, 1.0)
            wc = ((b2[:, 0] - a2[:, 0]) * dy - (b2[:, 1] - a2[:, 1]) * dx) / np.where(ok, denom, 1.0)
            wa = 1.0 - wb - wc
            inside = ok & (wa >= 0) & (wb >= 0) & (wc >= 0)
            if not inside.any():
                continue
            zs = (
                wa[inside] * tri[inside, 0, 2]
                + wb[inside] * tri[inside, 1, 2]
                + wc[inside] * tri[inside, 2, 2]
            )
            zs.sort()
            occ[i, j, :] = np.searchsorted(zs, centers) % 2 == 1
    return VoxelGrid(resolution, (lo, hi), occ)


# ------------------------------------------------------------------
# Evaluators
# ------------------------------------------------------------------

class FitnessEvaluator:
    """Assigns one finite, non-negative score per requested individual."""

    stop_requested: bool = False

    def evaluate(self, individuals, iteration: int) -> list[tuple[int, float, dict]]:
        raise NotImplementedError

    def commit(self, candidate_id: int, iteration: int) -> None:
        pass

    def close(self) -> None:
        pass


class IoUEvaluator(FitnessEvaluator):
    """Volumetric IoU against a fixed target; optionally signals the loop
    to stop once some shape reaches `stop_fitness`."""

    def __init__(self, target: TargetSpec, stop_fitness: float | None = None):
        self.target = target
        self.stop_fitness = stop_fitness
        self.stop_requested = False

    def evaluate(self, individuals, iteration: int) -> list[tuple[int, float, dict]]:
        results = []
        for ind in individuals:
            grid = ind.voxels
            if grid is None or not grid.compatible(self.target.grid):
                grid = voxelize(
                    ind.genotype,
                    resolution=self.target.grid.resolution,
                    bounds=self.target.grid.bounds,
                )
            score = iou(grid, self.target.grid)
            results.append((ind.id, score, {}))
        if self.stop_fitness is not None and any(
            s >= self.stop_fitness for _, s, _ in results
        ):
            self.stop_requested = True
        return results


def iou_fitness(individual, target: TargetSpec) -> float:
    """IoU of one individual's occupancy against the target grid."""
    grid = getattr(individual, "voxels", None)
    if grid is None or not grid.compatible(target.grid):
        grid = voxelize(
            individual.genotype,
            resolution=target.grid.resolution,
            bounds=target.grid.bounds,
        )
    return iou(grid, target.grid)


class ExternalEvaluator(FitnessEvaluator):
    """Client side of the subprocess evaluator protocol.

    Renders each candidate's views into the dataset layout, then asks the
    evaluator for a score per candidate.  `commit` is forwarded after each
    selection so the evaluator can retain the winning snapshot.
    """

    def __init__(
        self,
        command: str | list[str],
        *,
        workdir: Path,
        validation_dir: Path,
        seed: int,
        views_per_shape: int = 8,
        mesh_resolution: int = 64,
        image_size: int = 128,
        workers: int = 1,
        response_timeout: float = 1800.0,
        extra_config: dict | None = None,
    ):
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.views_per_shape = views_per_shape
        self.mesh_resolution = mesh_resolution
        self.image_size = image_size
        self.workers = max(1, workers)
        self.timeout = response_timeout
        self.stop_requested = False

        args = shlex.split(command) if isinstance(command, str) else list(command)
        self._stderr = open(self.workdir / "evaluator.stderr.log", "wb")
        try:
            self._proc = subprocess.Popen(
                args,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=self._stderr,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise EvaluatorError(f"cannot start evaluator {args!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

        config = {
            "validation": str(validation_dir),
            "workdir": str(self.workdir),
            "seed": int(seed),
            "views_per_shape": int(views_per_shape),
            "image_size": int(image_size),
        }
        if extra_config:
            config.update(extra_config)
        self._send({"type": "hello", "protocol": PROTOCOL_VERSION, "config": config})
        ready = self._recv()
        if ready.get("type") != "ready":
            raise EvaluatorError(f"expected ready, got {ready!r}")

    def _pump(self) -> None:
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)

    def _send(self, message: dict) -> None:
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EvaluatorError(f"evaluator pipe closed: {exc}") from exc

    def _recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise EvaluatorError(f"evaluator response timed out after {self.timeout}s")
        if line is None:
            raise EvaluatorError(
                f"evaluator exited (code {self._proc.poll()}); see evaluator.stderr.log"
            )
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvaluatorError(f"malformed evaluator response {line!r}: {exc}") from exc
        if message.get("type") == "error":
            raise EvaluatorError(f"evaluator error: {message.get('message', '')}")
        return message

    def _render_dataset(self, ind) -> Path:
        directory = self.workdir / "datasets" / str(ind.id)
        if not directory.exists():
            rng = derive_rng(self.seed, "render", ind.id)
            render_shape_dataset(
                ind.genotype,
                directory,
                self.views_per_shape,
                rng,
                mesh_resolution=self.mesh_resolution,
                image_size=self.image_size,
                on_empty="blank",
            )
        return directory

    def evaluate(self, individuals, iteration: int) -> list[tuple[int, float, dict]]:
        individuals = sorted(individuals, key=lambda ind: ind.id)
        if not individuals:
            return []
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                dirs = list(pool.map(self._render_dataset, individuals))
        else:
            dirs = [self._render_dataset(ind) for ind in individuals]

        for ind, directory in zip(individuals, dirs):
            self._send(
                {
                    "type": "evaluate",
                    "iter": int(iteration),
                    "candidate": str(ind.id),
                    "dataset": str(directory),
                }
            )
        pending = {str(ind.id) for ind in individuals}
        scores: dict[str, tuple[float, dict]] = {}
        while pending:
            message = self._recv()
            if message.get("type") != "fitness":
                raise EvaluatorError(f"expected fitness, got {message!r}")
            cand = str(message.get("candidate"))
            if cand not in pending:
                raise EvaluatorError(f"fitness for unexpected candidate {cand!r}")
            fitness = message.get("fitness")
            if not isinstance(fitness, (int, float)) or not math.isfinite(fitness) or fitness < 0:
                raise EvaluatorError(f"invalid fitness {fitness!r} for candidate {cand}")
            scores[cand] = (float(fitness), message.get("aux") or {})
            pending.discard(cand)
        return [(ind.id, *scores[str(ind.id)]) for ind in individuals]

    def commit(self, candidate_id: int, iteration: int) -> None:
        self._send({"type": "commit", "iter": int(iteration), "candidate": str(candidate_id)})
        reply = self._recv()
        if reply.get("type") != "committed" or str(reply.get("candidate")) != str(candidate_id):
            raise EvaluatorError(f"expected committed for {candidate_id}, got {reply!r}")

    def close(self) -> None:
        if getattr(self, "_proc", None) is None:
            return
        try:
            if self._proc.poll() is None:
                self._send({"type": "shutdown"})
                self._proc.wait(timeout=30)
        except (EvaluatorError, subprocess.TimeoutExpired):
            self._proc.kill()
        finally:
            self._stderr.close()


# ------------------------------------------------------------------
# Held-out synthetic validation renders (joint-mode default)
# ------------------------------------------------------------------

def render_validation_set(
    directory: Path,
    seed: int,
    *,
    views: int = 4,
    mesh_resolution: int = 64,
    image_size: int = 128,
) -> None:
    """A small fixed family of shapes rendered with a held-out stream."""
    from .graph import AffineTransform, CsgOp, compose, make_primitive, transform

    sphere = make_primitive("sphere", radius=0.55)
    cube = make_primitive("cube", side=0.9)
    shifted = transform(
        sphere, AffineTransform(np.eye(3), 1.0, np.array([0.45, 0.2, 0.0]))
    )
    shapes = {
        "sphere": sphere,
        "cube": cube,
        "bitten": compose(sphere, shifted, CsgOp.DIFFERENCE),
        "pair": compose(cube, shifted, CsgOp.UNION),
    }
    for name, graph in shapes.items():
        rng = derive_rng(seed, "validation", name)
        render_shape_dataset(
            graph,
            Path(directory) / name,
            views,
            rng,
            mesh_resolution=mesh_resolution,
            image_size=image_size,
            on_empty="blank",
        )
