import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapevo.graph import (
    AffineTransform,
    CsgOp,
    GraphParseError,
    InvalidParameterError,
    compose,
    deserialize,
    evaluate,
    evaluate_batch,
    make_primitive,
    node_count,
    random_primitive,
    serialize,
    to_dict,
    transform,
)
from shapevo.rand import make_rng

from helpers import PRIMITIVE_CASES, closed_form, random_graph, random_params

# Canonical primitive layouts, pinned as regression constants.
EXPECTED_NODE_COUNTS = {"sphere": 7, "cylinder": 8, "cube": 7, "cone": 10}


def test_primitive_point_values():
    assert evaluate(make_primitive("sphere", radius=1.0), (0, 0, 0)) == -1.0
    assert evaluate(make_primitive("sphere", radius=1.0), (1, 0, 0)) == 0.0
    assert evaluate(make_primitive("cube", side=2.0), (1, 1, 1)) == 0.0
    assert evaluate(make_primitive("cone", radius=1.0, height=1.0), (0, 0, 0.5)) == -0.25
    assert evaluate(make_primitive("cylinder", radius=1.0, height=1.0), (0, 0, 2)) == 1.0


@pytest.mark.parametrize("kind,params", PRIMITIVE_CASES)
def test_primitive_matches_closed_form(kind, params):
    rng = make_rng(7)
    graph = make_primitive(kind, **params)
    pts = rng.uniform(-2, 2, size=(1000, 3))
    got = evaluate_batch(graph, pts)
    want = closed_form(kind, params, pts)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_primitive_matches_closed_form_random_params(seed):
    rng = make_rng(seed)
    kind = ("sphere", "cylinder", "cube", "cone")[seed % 4]
    params = random_params(kind, rng)
    pts = rng.uniform(-2, 2, size=(50, 3))
    np.testing.assert_allclose(
        evaluate_batch(make_primitive(kind, **params), pts),
        closed_form(kind, params, pts),
        rtol=0,
        atol=1e-12,
    )


@pytest.mark.parametrize("kind,bad", [
    ("sphere", {"radius": 0.0}),
    ("sphere", {"radius": -1.0}),
    ("cube", {"side": -0.5}),
    ("cone", {"radius": 1.0, "height": 0.0}),
])
def test_primitive_rejects_nonpositive_params(kind, bad):
    with pytest.raises(InvalidParameterError):
        make_primitive(kind, **bad)


def test_node_counts_pinned():
    for kind, expected in EXPECTED_NODE_COUNTS.items():
        graph = random_primitive(kind, make_rng(0))
        assert node_count(graph) == expected


def test_batch_matches_scalar_path():
    graph = make_primitive("sphere", radius=1.0)
    pts = make_rng(3).uniform(-1.5, 1.5, size=(200, 3))
    batch = evaluate_batch(graph, pts)
    scalars = np.array([evaluate(graph, p) for p in pts])
    np.testing.assert_array_equal(batch, scalars)
    # sign pattern over the full grid
    from shapevo.geometry import voxel_centers

    grid = voxel_centers(32)
    np.testing.assert_array_equal(
        evaluate_batch(graph, grid) < 0,
        np.array([evaluate(graph, p) < 0 for p in grid]),
    )


def test_batch_edge_cases():
    graph = make_primitive("cube", side=1.0)
    assert evaluate_batch(graph, np.zeros((0, 3))).shape == (0,)
    single = evaluate_batch(graph, [(0.1, 0.2, 0.3)])
    assert single.shape == (1,)
    assert single[0] == evaluate(graph, (0.1, 0.2, 0.3))


def test_transform_translation_and_scale():
    sphere = make_primitive("sphere", radius=1.0)
    moved = transform(sphere, AffineTransform(np.eye(3), 1.0, np.array([2.0, 0, 0])))
    assert evaluate(moved, (2, 0, 0)) == pytest.approx(-1.0, abs=1e-12)
    scaled = transform(sphere, AffineTransform(np.eye(3), 2.0, np.zeros(3)))
    assert evaluate(scaled, (2, 0, 0)) == pytest.approx(0.0, abs=1e-12)


def test_transform_matches_definition():
    # evaluate(transform(G,t), p) == evaluate(G, T(p)) for random G, t, p
    rng = make_rng(11)
    for _ in range(100):
        graph = random_graph(rng)
        t = AffineTransform.random(rng)
        moved = transform(graph, t)
        pts = rng.uniform(-1.5, 1.5, size=(20, 3))
        np.testing.assert_allclose(
            evaluate_batch(moved, pts),
            evaluate_batch(graph, t.apply(pts)),
            rtol=0,
            atol=1e-10,
        )


def test_transform_rejects_bad_inputs():
    with pytest.raises(InvalidParameterError):
        AffineTransform(np.eye(3) * 2.0, 1.0, np.zeros(3))  # not orthonormal
    with pytest.raises(InvalidParameterError):
        AffineTransform(np.diag([1.0, 1.0, -1.0]), 1.0, np.zeros(3))  # det -1
    with pytest.raises(InvalidParameterError):
        AffineTransform(np.eye(3), 0.0, np.zeros(3))


def test_compose_values():
    s = make_primitive("sphere", radius=1.0)
    far = transform(s, AffineTransform(np.eye(3), 1.0, np.array([3.0, 0, 0])))
    assert evaluate(compose(s, far, CsgOp.UNION), (0, 0, 0)) == pytest.approx(-1.0)
    assert evaluate(compose(s, far, CsgOp.INTERSECTION), (0, 0, 0)) == pytest.approx(8.0)
    diff = compose(s, s, CsgOp.DIFFERENCE)
    pts = make_rng(5).uniform(-2, 2, size=(500, 3))
    assert np.all(evaluate_batch(diff, pts) >= 0.0)


def test_compose_matches_min_max():
    rng = make_rng(13)
    for _ in range(25):
        a, b = random_graph(rng), random_graph(rng)
        pts = rng.uniform(-1.5, 1.5, size=(50, 3))
        fa, fb = evaluate_batch(a, pts), evaluate_batch(b, pts)
        np.testing.assert_array_equal(
            evaluate_batch(compose(a, b, CsgOp.UNION), pts), np.minimum(fa, fb)
        )
        np.testing.assert_array_equal(
            evaluate_batch(compose(a, b, CsgOp.INTERSECTION), pts), np.maximum(fa, fb)
        )
        np.testing.assert_array_equal(
            evaluate_batch(compose(a, b, CsgOp.DIFFERENCE), pts), np.maximum(fa, -fb)
        )


def test_compose_size_arithmetic():
    # merged inputs plus one fresh output node
    rng = make_rng(17)
    for _ in range(20):
        a, b = random_graph(rng), random_graph(rng)
        merged = compose(a, b, CsgOp.UNION)
        assert node_count(merged) == node_count(a) + node_count(b) - 3 + 1


def test_determinism_bitwise():
    rng = make_rng(23)
    graph = random_graph(rng)
    pts = rng.uniform(-1, 1, size=(64, 3))
    first = evaluate_batch(graph, pts)
    second = evaluate_batch(graph, pts)
    np.testing.assert_array_equal(first, second)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_serialize_round_trip(seed):
    rng = make_rng(seed)
    graph = random_graph(rng)
    back = deserialize(serialize(graph))
    pts = rng.uniform(-1.5, 1.5, size=(100, 3))
    np.testing.assert_array_equal(evaluate_batch(graph, pts), evaluate_batch(back, pts))
    assert node_count(back) == node_count(graph)


def test_primitive_round_trip_each_kind():
    rng = make_rng(29)
    for kind, params in PRIMITIVE_CASES:
        graph = make_primitive(kind, **params)
        back = deserialize(serialize(graph))
        pts = rng.uniform(-2, 2, size=(100, 3))
        np.testing.assert_array_equal(
            evaluate_batch(graph, pts), evaluate_batch(back, pts)
        )


def test_deserialize_rejects_bad_edge():
    data = to_dict(make_primitive("sphere", radius=1.0))
    data["edges"].append({"src": 99, "dst": data["output"], "w": 1.0})
    with pytest.raises(GraphParseError, match="src"):
        deserialize(json.dumps(data))


def test_deserialize_rejects_malformed():
    with pytest.raises(GraphParseError, match="json"):
        deserialize("not json {")
    with pytest.raises(GraphParseError, match="nodes"):
        deserialize(json.dumps({"inputs": [0, 1, 2], "output": 3, "edges": []}))
    data = to_dict(make_primitive("cube", side=1.0))
    data["nodes"][4]["reduction"] = "median"
    with pytest.raises(GraphParseError, match="reduction"):
        deserialize(json.dumps(data))


def test_deserialize_rejects_cycle():
    data = to_dict(make_primitive("sphere", radius=1.0))
    data["edges"].append({"src": data["output"], "dst": 3, "w": 1.0})
    with pytest.raises(GraphParseError, match="cycle"):
        deserialize(json.dumps(data))


def test_dead_nodes_pruned_on_deserialize():
    data = to_dict(make_primitive("sphere", radius=1.0))
    data["nodes"].append({"id": 50, "bias": 0.0, "reduction": "sum", "activation": "id"})
    data["edges"].append({"src": 0, "dst": 50, "w": 1.0})  # never reaches output
    back = deserialize(json.dumps(data))
    assert node_count(back) == 7
