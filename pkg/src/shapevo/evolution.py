"""The genetic loop: spawn by transform+CSG, score, propagate, select.

Each iteration spawns m children from random parent pairs (each parent
gets an independent random rotation/scale/translation before a random
union/intersection/difference), discards trivial or over-budget children
at spawn time, scores everything not yet scored, propagates each child's
score back to its parents (max), and selects n survivors: elites first,
then a fitness share (rank weights q_fit^r or roulette), then a diversity
share weighted by graph-size rank (q_div^s, smallest first).

Determinism: the whole trajectory is a function of (config, seed).  Raw
scores are assigned once per individual and are what curves report;
propagated scores only steer selection.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .geometry import Verdict, VoxelGrid, classify_trivial, marching_cubes, export_obj, voxelize
from .graph import (
    AffineTransform,
    CsgOp,
    PRIMITIVE_KINDS,
    ShapeGraph,
    compose,
    from_dict,
    random_primitive,
    to_dict,
    transform,
)
from .rand import make_rng

CURVE_COLUMNS = ("iteration", "best_fitness", "mean_fitness", "mean_node_count", "wall_seconds")
SPAWN_ATTEMPTS = 20


class EvolutionError(RuntimeError):
    pass


@dataclass
class Individual:
    id: int
    genotype: ShapeGraph
    fitness: float | None = None  # raw score, assigned once
    propagated: float | None = None
    parents: tuple[int, int] | None = None  # None for the initial population
    birth_iteration: int = 0
    voxels: VoxelGrid | None = None
    op: str | None = None  # composition op that produced this child
    trivial: bool = False  # flagged at spawn; removed at selection
    cloned: bool = False  # filler clone created when the pool ran short

    @property
    def size(self) -> int:
        return self.genotype.node_count


@dataclass
class Population:
    individuals: list[Individual]
    iteration: int = 0


@dataclass
class EvolutionConfig:
    n: int = 100  # population size
    m: int = 100  # children per iteration
    beta: float = 16.0  # node-cap slope
    cap_base: float = 64.0  # node cap at iteration 0
    selection: str = "rank"  # "rank" (standalone) or "roulette" (joint)
    q_fit: float = 0.2
    q_div: float = 0.2  # 0.5 in joint mode
    diversity_fraction: float = 0.5  # 0.1 in joint mode
    scale_range: tuple[float, float] = (0.5, 2.0)
    translation_range: float = 0.5
    rotation_max_angle: float = float(np.pi)  # pi = uniform over SO(3)
    # Optional two-scale translation mixture: each parent side draws its
    # translation from [-translation_fine, translation_fine] with
    # probability fine_fraction, else from the full translation_range.
    # Coarse draws deliver new pieces across the domain; fine draws let
    # children refine an arrangement they inherited.
    translation_fine: float | None = None
    fine_fraction: float = 0.5
    elitism: int = 1
    max_iterations: int = 150
    seed: int = 0
    voxel_resolution: int = 32
    mesh_resolution: int = 64
    image_size: int = 128
    views_per_shape: int = 8
    checkpoint_every: int = 10
    workers: int = 1
    stop_fitness: float | None = None
    fitness_propagation: bool = True
    trivial_discard: bool = True
    validation_dir: str | None = None

    def __post_init__(self):
        if self.n <= 0 or self.m < 0:
            raise EvolutionError("population and child counts must be positive")
        if not 0.0 <= self.diversity_fraction <= 1.0:
            raise EvolutionError("diversity_fraction must be in [0,1]")
        if self.selection not in ("rank", "roulette"):
            raise EvolutionError(f"unknown selection mode {self.selection!r}")
        if self.scale_range[0] <= 0 or self.scale_range[1] < self.scale_range[0]:
            raise EvolutionError(f"bad scale range {self.scale_range}")

    @staticmethod
    def joint_defaults(**overrides) -> "EvolutionConfig":
        """Presets for runs driven by an external evaluator."""
        base = dict(selection="roulette", q_div=0.5, diversity_fraction=0.1)
        base.update(overrides)
        return EvolutionConfig(**base)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @staticmethod
    def from_dict(data: dict) -> "EvolutionConfig":
        known = {f.name for f in fields(EvolutionConfig)}
        unknown = set(data) - known
        if unknown:
            raise EvolutionError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "scale_range" in kwargs:
            kwargs["scale_range"] = tuple(kwargs["scale_range"])
        return EvolutionConfig(**kwargs)


@dataclass
class CurvePoint:
    iteration: int
    best_fitness: float
    mean_fitness: float
    mean_node_count: float
    wall_seconds: float


@dataclass
class EvolutionResult:
    population: Population
    curve: list[CurvePoint]
    best: Individual
    iterations_run: int
    stopped_early: bool


# ------------------------------------------------------------------
# Population construction
# ------------------------------------------------------------------

def init_population(config: EvolutionConfig, rng: np.random.Generator) -> Population:
    """n primitives cycling sphere/cylinder/cube/cone with random sizes."""
    individuals = []
    for i in range(config.n):
        kind = PRIMITIVE_KINDS[i % len(PRIMITIVE_KINDS)]
        genotype = random_primitive(kind, rng)
        individuals.append(
            Individual(
                id=i,
                genotype=genotype,
                voxels=voxelize(genotype, resolution=config.voxel_resolution),
            )
        )
    return Population(individuals=individuals, iteration=0)


def resource_cap(t: int, config: EvolutionConfig) -> float:
    return config.cap_base + config.beta * t


def enforce_resource_cap(individual: Individual, t: int, config: EvolutionConfig) -> bool:
    """True iff the genotype fits the linear node budget at iteration t."""
    return individual.size <= resource_cap(t, config)


def _random_transform(rng: np.random.Generator, config: EvolutionConfig) -> AffineTransform:
    translation = config.translation_range
    if config.translation_fine is not None and rng.uniform() < config.fine_fraction:
        translation = config.translation_fine
    return AffineTransform.random(
        rng, config.scale_range, translation, config.rotation_max_angle
    )


def spawn_children(
    pop: Population,
    rng: np.random.Generator,
    config: EvolutionConfig,
    t: int,
    next_id: int,
) -> list[Individual]:
    """m children; each retried up to SPAWN_ATTEMPTS times until it fits the
    node budget and is not a trivial composition.  A child that never
    succeeds is emitted anyway, flagged trivial, and dies at selection."""
    children: list[Individual] = []
    survivors = pop.individuals
    if config.m > 0 and len(survivors) < 2:
        raise EvolutionError("need at least 2 survivors to spawn children")
    cap = resource_cap(t, config)
    for k in range(config.m):
        child = None
        for _ in range(SPAWN_ATTEMPTS):
            ia, ib = rng.choice(len(survivors), size=2, replace=False)
            pa, pb = survivors[int(ia)], survivors[int(ib)]
            ta = _random_transform(rng, config)
            tb = _random_transform(rng, config)
            op = CsgOp(("union", "intersection", "difference")[int(rng.integers(3))])
            # a composed child always has |A| + |B| + 4 nodes; skip the
            # build entirely when that already blows the budget
            if pa.size + pb.size + 4 > cap:
                child = None
                continue
            genotype = compose(transform(pa.genotype, ta), transform(pb.genotype, tb), op)
            child = Individual(
                id=next_id + k,
                genotype=genotype,
                parents=(pa.id, pb.id),
                birth_iteration=t,
                op=op.value,
            )
            child.voxels = voxelize(genotype, resolution=config.voxel_resolution)
            if config.trivial_discard:
                verdict = classify_trivial(child.voxels, pa.voxels, pb.voxels)
                if verdict is not Verdict.OK:
                    child.trivial = True
                    continue
            child.trivial = False
            break
        if child is None:
            # every attempt violated the budget: emit a flagged minimal child
            pa, pb = survivors[0], survivors[1]
            genotype = compose(pa.genotype, pb.genotype, CsgOp.UNION)
            child = Individual(
                id=next_id + k,
                genotype=genotype,
                parents=(pa.id, pb.id),
                birth_iteration=t,
                op=CsgOp.UNION.value,
                trivial=True,
            )
        if child.voxels is None:
            child.voxels = voxelize(child.genotype, resolution=config.voxel_resolution)
        children.append(child)
    return children


# ------------------------------------------------------------------
# Scoring
# ------------------------------------------------------------------

def propagate_fitness(
    parent_scores: dict[int, float],
    child_scores: dict[int, float],
    parentage: dict[int, tuple[int, int]],
) -> dict[int, float]:
    """Each parent takes the max of its own score and its children's.
    Children keep their scores; one propagation step per iteration."""
    updated = dict(parent_scores)
    for child_id, parents in parentage.items():
        score = child_scores[child_id]
        for pid in parents:
            if pid in updated and score > updated[pid]:
                updated[pid] = score
    return updated


# ------------------------------------------------------------------
# Selection
# ------------------------------------------------------------------

def _weighted_without_replacement(
    candidates: list[Individual],
    weights: np.ndarray,
    count: int,
    rng: np.random.Generator,
) -> list[Individual]:
    """Sequential draws proportional to fixed per-candidate weights; falls
    back to uniform whenever the remaining weights sum to zero."""
    chosen: list[Individual] = []
    avail = list(range(len(candidates)))
    for _ in range(min(count, len(candidates))):
        w = weights[avail]
        total = w.sum()
        if total > 0 and np.isfinite(total):
            idx = int(rng.choice(len(avail), p=w / total))
        else:
            idx = int(rng.integers(len(avail)))
        chosen.append(candidates[avail.pop(idx)])
    return chosen


def _rank_weights(order: list[Individual], q: float) -> dict[int, float]:
    return {ind.id: q**r for r, ind in enumerate(order)}


def select(
    pool: list[Individual],
    config: EvolutionConfig,
    rng: np.random.Generator,
    t: int,
    next_id: int = 0,
) -> list[Individual]:
    """n survivors out of the scored pool.

    Trivial and over-budget individuals are dropped first.  Elites are the
    top `elitism` by (propagated, raw, lower id).  Of the rest, a
    (1 - diversity_fraction) share is drawn by fitness (rank weights
    q_fit^r, or roulette proportional to propagated fitness) and the
    remaining share by size rank (q_div^s, smallest graph first); both
    draws are without replacement with weights fixed up front.  If the
    pool runs short the survivors are topped up with flagged clones.
    """
    candidates = [
        ind for ind in pool if not ind.trivial and enforce_resource_cap(ind, t, config)
    ]
    for ind in candidates:
        if ind.propagated is None:
            ind.propagated = ind.fitness
    by_fitness = sorted(
        candidates, key=lambda i: (-(i.propagated or 0.0), -(i.fitness or 0.0), i.id)
    )
    elites = by_fitness[: max(0, config.elitism)]
    elite_ids = {e.id for e in elites}
    rest = [ind for ind in by_fitness if ind.id not in elite_ids]

    remaining = config.n - len(elites)
    div_count = int(remaining * config.diversity_fraction + 0.5)
    fit_count = remaining - div_count

    if config.selection == "rank":
        rank_w = _rank_weights(rest, config.q_fit)
        fit_weights = np.array([rank_w[i.id] for i in rest])
    else:  # roulette: proportional to fitness
        fit_weights = np.array([max(0.0, i.propagated or 0.0) for i in rest])
    fit_picks = _weighted_without_replacement(rest, fit_weights, fit_count, rng)
    picked = elite_ids | {i.id for i in fit_picks}

    left = [ind for ind in rest if ind.id not in picked]
    by_size = sorted(left, key=lambda i: (i.size, i.id))
    size_w = _rank_weights(by_size, config.q_div)
    div_weights = np.array([size_w[i.id] for i in by_size])
    div_picks = _weighted_without_replacement(by_size, div_weights, div_count, rng)

    survivors = elites + fit_picks + div_picks
    # Top up with remaining candidates, then flagged clones, if the
    # filtered pool left fewer than n survivors.
    if len(survivors) < config.n:
        picked = {i.id for i in survivors}
        spare = sorted(
            (i for i in candidates if i.id not in picked), key=lambda i: i.id
        )
        survivors.extend(spare[: config.n - len(survivors)])
    base = list(survivors)
    fill_id = next_id
    while base and len(survivors) < config.n:
        clone = copy.copy(base[(len(survivors) - len(base)) % len(base)])
        clone.id = fill_id
        clone.cloned = True
        fill_id += 1
        survivors.append(clone)
    return survivors


# ------------------------------------------------------------------
# The loop
# ------------------------------------------------------------------

def _apply_scores(individuals: list[Individual], results) -> None:
    scores = {cid: (fit, aux) for cid, fit, aux in results}
    for ind in individuals:
        ind.fitness = scores[ind.id][0]


def _stats(population: Population, wall: float) -> CurvePoint:
    raw = [ind.fitness or 0.0 for ind in population.individuals]
    sizes = [ind.size for ind in population.individuals]
    return CurvePoint(
        iteration=population.iteration,
        best_fitness=max(raw),
        mean_fitness=float(np.mean(raw)),
        mean_node_count=float(np.mean(sizes)),
        wall_seconds=wall,
    )


def curves_csv(curve: list[CurvePoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CURVE_COLUMNS)
    for p in curve:
        writer.writerow(
            [p.iteration, repr(p.best_fitness), repr(p.mean_fitness),
             repr(p.mean_node_count), repr(p.wall_seconds)]
        )
    return buf.getvalue()


def individual_to_dict(ind: Individual) -> dict:
    return {
        "id": ind.id,
        "fitness": ind.fitness,
        "propagated": ind.propagated,
        "parents": list(ind.parents) if ind.parents else [],
        "birth_iteration": ind.birth_iteration,
        "op": ind.op,
        "trivial": ind.trivial,
        "cloned": ind.cloned,
        "genotype": to_dict(ind.genotype),
    }


def individual_from_dict(data: dict) -> Individual:
    parents = tuple(data.get("parents") or []) or None
    return Individual(
        id=int(data["id"]),
        genotype=from_dict(data["genotype"]),
        fitness=data.get("fitness"),
        propagated=data.get("propagated"),
        parents=parents,
        birth_iteration=int(data.get("birth_iteration", 0)),
        op=data.get("op"),
        trivial=bool(data.get("trivial", False)),
        cloned=bool(data.get("cloned", False)),
    )


def _write_checkpoint(out_dir: Path, population: Population, curve: list[CurvePoint], config: EvolutionConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    t = population.iteration
    payload = {
        "iteration": t,
        "individuals": [individual_to_dict(ind) for ind in population.individuals],
    }
    (out_dir / f"population-{t}.json").write_text(json.dumps(payload, sort_keys=True))
    (out_dir / "curves.csv").write_text(curves_csv(curve))
    best = max(population.individuals, key=lambda i: (i.fitness or 0.0, -i.id))
    mesh = marching_cubes(best.genotype, resolution=config.mesh_resolution)
    (out_dir / f"best-{t}.obj").write_text(export_obj(mesh))


def evolve(
    config: EvolutionConfig,
    evaluator,
    out_dir: Path | None = None,
) -> EvolutionResult:
    """Run the loop: spawn -> evaluate -> propagate -> select -> commit.

    Writes population-<t>.json / curves.csv / best-<t>.obj checkpoints
    every `checkpoint_every` iterations (and at the end) when out_dir is
    given.  An evaluator failure checkpoints, then re-raises.
    """
    start = time.perf_counter()
    rng = make_rng(config.seed)
    out = Path(out_dir) if out_dir is not None else None

    population = init_population(config, rng)
    next_id = config.n
    curve: list[CurvePoint] = []
    stopped_early = False
    evaluated_since_commit: list[Individual] = []

    def checkpoint() -> None:
        if out is not None:
            _write_checkpoint(out, population, curve, config)

    try:
        results = evaluator.evaluate(population.individuals, 0)
        _apply_scores(population.individuals, results)
    except Exception:
        checkpoint()
        raise
    evaluated_since_commit.extend(population.individuals)
    curve.append(_stats(population, time.perf_counter() - start))
    if config.checkpoint_every and out is not None:
        checkpoint()

    iterations_run = 0
    for t in range(1, config.max_iterations + 1):
        if evaluator.stop_requested:
            stopped_early = True
            break
        children = spawn_children(population, rng, config, t, next_id)
        next_id += len(children)
        try:
            results = evaluator.evaluate(children, t)
        except Exception:
            checkpoint()
            raise
        _apply_scores(children, results)
        evaluated_since_commit.extend(children)

        pool = population.individuals + children
        if config.fitness_propagation and children:
            parent_scores = {i.id: i.fitness or 0.0 for i in population.individuals}
            child_scores = {c.id: c.fitness or 0.0 for c in children}
            parentage = {c.id: c.parents for c in children if c.parents}
            updated = propagate_fitness(parent_scores, child_scores, parentage)
            for ind in pool:
                ind.propagated = updated.get(ind.id, ind.fitness)
        else:
            for ind in pool:
                ind.propagated = ind.fitness

        survivors = select(pool, config, rng, t, next_id)
        next_id += sum(1 for s in survivors if s.cloned and s.id >= next_id)
        population = Population(individuals=survivors, iteration=t)
        iterations_run = t

        if evaluated_since_commit:
            best_new = max(evaluated_since_commit, key=lambda i: (i.fitness or 0.0, -i.id))
            try:
                evaluator.commit(best_new.id, t)
            except Exception:
                checkpoint()
                raise
            evaluated_since_commit = []

        curve.append(_stats(population, time.perf_counter() - start))
        if out is not None and config.checkpoint_every and t % config.checkpoint_every == 0:
            checkpoint()

    checkpoint()
    best = max(population.individuals, key=lambda i: (i.fitness or 0.0, -i.id))
    return EvolutionResult(
        population=population,
        curve=curve,
        best=best,
        iterations_run=iterations_run,
        stopped_early=stopped_early,
    )
