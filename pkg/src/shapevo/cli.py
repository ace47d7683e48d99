"""Command-line entry points: evolve, render, inspect.

Exit codes: 0 success, 2 config/parse error, 3 evaluator failure,
4 degenerate geometry.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .evolution import EvolutionConfig, EvolutionError, evolve
from .fitness import (
    EvaluatorError,
    ExternalEvaluator,
    IoUEvaluator,
    load_target,
    render_validation_set,
)
from .geometry import export_obj, marching_cubes, voxelize
from .graph import GraphError, deserialize, serialize, to_dict
from .rand import make_rng
from .render import EmptyShapeError, render_shape_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EVALUATOR = 3
EXIT_GEOMETRY = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapevo")
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("evolve", help="run the genetic loop")
    ev.add_argument("--config", type=Path, help="JSON file mirroring EvolutionConfig")
    ev.add_argument("--out", type=Path, required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--workers", type=int, default=1)
    mode = ev.add_mutually_exclusive_group(required=True)
    mode.add_argument("--target", type=Path, help="target shape (.obj or graph .json)")
    mode.add_argument("--evaluator", type=str, help="external evaluator command")
    ev.add_argument("--no-fitness-propagation", action="store_true")
    ev.add_argument("--no-diversity", action="store_true")
    ev.add_argument("--no-trivial-discard", action="store_true")

    rd = sub.add_parser("render", help="render a graph into the dataset layout")
    rd.add_argument("--graph", type=Path, required=True)
    rd.add_argument("--views", type=int, default=8)
    rd.add_argument("--seed", type=int, default=0)
    rd.add_argument("--out", type=Path, required=True)

    ins = sub.add_parser("inspect", help="summarize a graph JSON file")
    ins.add_argument("--graph", type=Path, required=True)
    ins.add_argument("--obj", type=Path, help="also export a 64^3 mesh")
    return parser


def _load_graph(path: Path):
    try:
        return deserialize(path.read_text())
    except OSError as exc:
        raise GraphError(f"{path}: {exc}") from exc


def _load_config(args) -> EvolutionConfig:
    data: dict = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise EvolutionError(f"config: {exc}") from exc
    if args.evaluator and not any(
        k in data for k in ("selection", "q_div", "diversity_fraction")
    ):
        config = EvolutionConfig.joint_defaults(**data)
    else:
        config = EvolutionConfig.from_dict(data)
    config.seed = args.seed
    config.workers = args.workers
    if args.no_diversity:
        config.diversity_fraction = 0.0
    if args.no_fitness_propagation:
        config.fitness_propagation = False
    if args.no_trivial_discard:
        config.trivial_discard = False
    return config


def cmd_evolve(args) -> int:
    try:
        config = _load_config(args)
        out: Path = args.out
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True))
        if args.target is not None:
            target = load_target(args.target, resolution=config.voxel_resolution)
            evaluator = IoUEvaluator(target, stop_fitness=config.stop_fitness)
        else:
            validation = config.validation_dir
            if validation is None:
                validation = out / "validation"
                render_validation_set(
                    validation,
                    config.seed,
                    views=config.views_per_shape,
                    mesh_resolution=config.mesh_resolution,
                    image_size=config.image_size,
                )
            evaluator = ExternalEvaluator(
                args.evaluator,
                workdir=out / "evaluator",
                validation_dir=Path(validation),
                seed=config.seed,
                views_per_shape=config.views_per_shape,
                mesh_resolution=config.mesh_resolution,
                image_size=config.image_size,
                workers=config.workers,
            )
    except (EvolutionError, GraphError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EvaluatorError as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR

    try:
        result = evolve(config, evaluator, out_dir=out)
    except EvaluatorError as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    finally:
        evaluator.close()

    best = result.best
    (out / "best.json").write_text(serialize(best.genotype))
    mesh = marching_cubes(best.genotype, resolution=config.mesh_resolution)
    (out / "best.obj").write_text(export_obj(mesh))
    print(
        f"done: {result.iterations_run} iterations, "
        f"best fitness {best.fitness:.4f} (individual {best.id})"
    )
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        graph = _load_graph(args.graph)
    except GraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        render_shape_dataset(
            graph,
            args.out,
            views=args.views,
            rng=make_rng(args.seed),
            on_empty="error",
        )
    except EmptyShapeError:
        print("error: empty shape", file=sys.stderr)
        return EXIT_GEOMETRY
    print(f"wrote {args.views} views to {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        graph = _load_graph(args.graph)
    except GraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    grid = voxelize(graph, resolution=32)
    print(f"nodes: {graph.node_count}")
    print(f"edges: {len(graph.edges)}")
    print(f"occupancy: {grid.fraction:.4f} ({grid.count} voxels at 32^3)")
    if grid.count:
        idx = grid.occupancy.nonzero()
        lo, hi = grid.bounds
        step = (hi - lo) / grid.resolution
        mins = [lo + step * (int(axis.min()) + 0.5) for axis in idx]
        maxs = [lo + step * (int(axis.max()) + 0.5) for axis in idx]
        print(
            "occupied bounds: "
            + " ".join(f"[{a:.3f},{b:.3f}]" for a, b in zip(mins, maxs))
        )
    else:
        print("occupied bounds: empty")
    if args.obj is not None:
        mesh = marching_cubes(graph, resolution=64)
        Path(args.obj).write_text(export_obj(mesh))
        print(f"mesh: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces -> {args.obj}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "evolve":
        return cmd_evolve(args)
    if args.command == "render":
        return cmd_render(args)
    return cmd_inspect(args)


if __name__ == "__main__":
    sys.exit(main())
