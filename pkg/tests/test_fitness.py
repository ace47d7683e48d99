import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest

from shapevo.evolution import Individual
from shapevo.fitness import (
    EmptyMaskError,
    EvaluatorError,
    ExternalEvaluator,
    IoUEvaluator,
    TargetSpec,
    iou_fitness,
    load_target,
    normal_metrics,
    target_from_graph,
)
from shapevo.geometry import export_obj, marching_cubes, voxelize
from shapevo.graph import make_primitive
from shapevo.rand import make_rng
from shapevo.targets import bite_graph, bite_target

ECHO = Path(__file__).parent / "echo_evaluator.py"


def rand_hemisphere(rng, n):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = np.abs(v[:, 2])
    return v


def pixel_weighted_hemisphere(rng, n):
    """Normals distributed like the pixels of rendered surfaces: a visible
    surface element contributes pixels in proportion to its projected area,
    so the per-pixel density on the +z hemisphere is proportional to n_z."""
    z = np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, 2 * np.pi, n)
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


# ------------------------------------------------------------------
# normal_metrics
# ------------------------------------------------------------------

def test_metrics_identical():
    rng = make_rng(0)
    gt = rand_hemisphere(rng, 256).reshape(16, 16, 3)
    mask = np.ones((16, 16), dtype=bool)
    m = normal_metrics(gt, gt, mask)
    assert m.n_mae == 0.0
    assert m.n_mse == 0.0
    assert m.frac_11_25 == m.frac_22_5 == m.frac_30 == 1.0


def test_metrics_uniform_30_degree_error():
    gt = np.tile([0.0, 0.0, 1.0], (8, 8, 1))
    ang = math.radians(30)
    pred = np.tile([0.0, -math.sin(ang), math.cos(ang)], (8, 8, 1))
    mask = np.ones((8, 8), dtype=bool)
    m = normal_metrics(pred, gt, mask)
    assert m.n_mae == pytest.approx(math.pi / 6, abs=1e-9)
    assert m.frac_30 == 1.0  # inclusive threshold
    assert m.frac_22_5 == 0.0
    assert m.frac_11_25 == 0.0


def test_metrics_random_hemisphere_baseline():
    # a predictor emitting uniform-random +z hemisphere normals, scored
    # against pixel-weighted ground truth, has mean angle error 1.1627
    rng = make_rng(123)
    n = 1_000_000
    pred = rand_hemisphere(rng, n).reshape(1000, 1000, 3)
    gt = pixel_weighted_hemisphere(rng, n).reshape(1000, 1000, 3)
    mask = np.ones((1000, 1000), dtype=bool)
    m = normal_metrics(pred, gt, mask)
    assert m.n_mae == pytest.approx(1.1627, abs=0.02)
    assert m.frac_11_25 <= m.frac_22_5 <= m.frac_30


def test_metrics_mse_cosine_identity():
    rng = make_rng(5)
    pred = rand_hemisphere(rng, 400).reshape(20, 20, 3)
    gt = rand_hemisphere(rng, 400).reshape(20, 20, 3)
    mask = rng.uniform(size=(20, 20)) > 0.3
    m = normal_metrics(pred, gt, mask)
    dots = np.einsum("ij,ij->i", pred[mask], gt[mask])
    assert m.n_mse == pytest.approx(float(np.mean(2 - 2 * dots)), abs=1e-9)


def test_metrics_rotation_invariant():
    from shapevo.rand import random_rotation

    rng = make_rng(6)
    pred = rand_hemisphere(rng, 100).reshape(10, 10, 3)
    gt = rand_hemisphere(rng, 100).reshape(10, 10, 3)
    mask = np.ones((10, 10), dtype=bool)
    rot = random_rotation(rng)
    a = normal_metrics(pred, gt, mask)
    b = normal_metrics(pred @ rot.T, gt @ rot.T, mask)
    assert a.n_mae == pytest.approx(b.n_mae, abs=1e-9)
    assert a.n_mse == pytest.approx(b.n_mse, abs=1e-9)


def test_metrics_empty_mask_raises():
    z = np.zeros((4, 4, 3))
    with pytest.raises(EmptyMaskError):
        normal_metrics(z, z, np.zeros((4, 4), dtype=bool))


# ------------------------------------------------------------------
# IoU fitness
# ------------------------------------------------------------------

def _individual(graph, id=0):
    return Individual(id=id, genotype=graph, voxels=voxelize(graph, 32))


def test_iou_fitness_exact_match():
    target = bite_target()
    assert iou_fitness(_individual(bite_graph()), target) == 1.0


def test_iou_fitness_empty_genotype():
    from shapevo.graph import AffineTransform, transform

    far = transform(
        make_primitive("sphere", radius=0.2),
        AffineTransform(np.eye(3), 1.0, np.array([5.0, 0, 0])),
    )
    assert iou_fitness(_individual(far), bite_target()) == 0.0


def test_iou_fitness_sphere_vs_cube():
    target = target_from_graph(make_primitive("cube", side=2.0), "cube")
    got = iou_fitness(_individual(make_primitive("sphere", radius=1.0)), target)
    assert got == pytest.approx(math.pi / 6, abs=0.02)


def test_iou_evaluator_stop_signal():
    target = bite_target()
    ev = IoUEvaluator(target, stop_fitness=0.99)
    results = ev.evaluate([_individual(bite_graph(), id=3)], 0)
    assert results[0][0] == 3 and results[0][1] == 1.0
    assert ev.stop_requested


def test_target_from_obj_round_trip(tmp_path):
    graph = make_primitive("sphere", radius=0.62)
    mesh = marching_cubes(graph, 64)
    path = tmp_path / "sphere.obj"
    path.write_text(export_obj(mesh))
    from_mesh = load_target(path)
    from_graph = target_from_graph(graph, "direct")
    from shapevo.geometry import iou

    assert iou(from_mesh.grid, from_graph.grid) > 0.97


def test_target_requires_occupancy():
    from shapevo.geometry import VoxelGrid

    empty = VoxelGrid(8, (-1.0, 1.0), np.zeros((8, 8, 8), dtype=bool))
    with pytest.raises(ValueError):
        TargetSpec(name="empty", grid=empty)


# ------------------------------------------------------------------
# External evaluator protocol
# ------------------------------------------------------------------

def echo_command(log: Path, behavior: str = "ok") -> str:
    return f"{sys.executable} {ECHO} {log} {behavior}"


def make_pop(count=3):
    return [
        _individual(make_primitive("sphere", radius=0.3 + 0.05 * i), id=i)
        for i in range(count)
    ]


def test_external_evaluate_matches_formula(tmp_path):
    log = tmp_path / "log.jsonl"
    ev = ExternalEvaluator(
        echo_command(log),
        workdir=tmp_path / "wd",
        validation_dir=tmp_path / "val",
        seed=1,
        views_per_shape=1,
        mesh_resolution=16,
        image_size=32,
    )
    try:
        results = ev.evaluate(make_pop(3), 0)
        assert [(cid, fit) for cid, fit, _ in results] == [(0, 0.0), (1, 1.0), (2, 2.0)]
        ev.commit(2, 0)
    finally:
        ev.close()
    requests = [json.loads(l) for l in log.read_text().splitlines()]
    kinds = [r["type"] for r in requests]
    assert kinds == ["hello", "evaluate", "evaluate", "evaluate", "commit", "shutdown"]
    assert requests[0]["protocol"] == 1
    assert "validation" in requests[0]["config"]
    # datasets rendered into the layout before the request went out
    dataset = Path(requests[1]["dataset"])
    assert (dataset / "0.png").exists() and (dataset / "0.view.json").exists()


def test_external_commit_unknown_id_raises(tmp_path):
    ev = ExternalEvaluator(
        echo_command(tmp_path / "log.jsonl"),
        workdir=tmp_path / "wd",
        validation_dir=tmp_path / "val",
        seed=1,
        views_per_shape=1,
        mesh_resolution=16,
        image_size=32,
    )
    try:
        ev.evaluate(make_pop(2), 0)
        with pytest.raises(EvaluatorError, match="unknown candidate"):
            ev.commit(999, 0)
    finally:
        ev.close()


def test_external_evaluator_death_surfaces(tmp_path):
    ev = ExternalEvaluator(
        echo_command(tmp_path / "log.jsonl", "die-on-evaluate"),
        workdir=tmp_path / "wd",
        validation_dir=tmp_path / "val",
        seed=1,
        views_per_shape=1,
        mesh_resolution=16,
        image_size=32,
    )
    try:
        with pytest.raises(EvaluatorError, match="exited"):
            ev.evaluate(make_pop(1), 0)
    finally:
        ev.close()


def test_external_malformed_response(tmp_path):
    ev = ExternalEvaluator(
        echo_command(tmp_path / "log.jsonl", "garbage-on-evaluate"),
        workdir=tmp_path / "wd",
        validation_dir=tmp_path / "val",
        seed=1,
        views_per_shape=1,
        mesh_resolution=16,
        image_size=32,
    )
    try:
        with pytest.raises(EvaluatorError, match="malformed"):
            ev.evaluate(make_pop(1), 0)
    finally:
        ev.close()


def test_external_missing_command():
    with pytest.raises(EvaluatorError, match="cannot start"):
        ExternalEvaluator(
            "/nonexistent/evaluator-binary",
            workdir=Path("/tmp/shapevo-nocmd"),
            validation_dir=Path("/tmp"),
            seed=0,
        )
