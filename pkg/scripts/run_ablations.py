"""Ablation sweep on the desk-scale bite target.

Toggles fitness propagation, the diversity share, and trivial-composition
discarding in all requested combinations, recording iterations-to-IoU
thresholds per seed into a CSV for plotting.

    python scripts/run_ablations.py --seeds 5 --out runs/ablations.csv
"""

import argparse
import csv
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from shapevo.evolution import evolve
from shapevo.fitness import IoUEvaluator
from shapevo.targets import bite_target, desk_config

VARIANTS = {
    "all-enabled": {},
    "no-fitness-propagation": {"fitness_propagation": False},
    "no-diversity": {"diversity_fraction": 0.0},
    "no-trivial-discard": {"trivial_discard": False},
}


def iterations_to(result, level):
    for point in result.curve:
        if point.best_fitness >= level:
            return point.iteration
    return None


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--iterations", type=int, default=150)
    parser.add_argument("--level", type=float, default=0.85)
    parser.add_argument("--out", type=Path, default=Path("ablations.csv"))
    parser.add_argument(
        "--variants", nargs="*", choices=sorted(VARIANTS), default=sorted(VARIANTS)
    )
    args = parser.parse_args()

    target = bite_target()
    rows = []
    for name in args.variants:
        overrides = VARIANTS[name]
        for seed in range(args.seeds):
            config = desk_config(
                seed=seed, max_iterations=args.iterations,
                stop_fitness=args.level, **overrides,
            )
            start = time.perf_counter()
            result = evolve(config, IoUEvaluator(target, stop_fitness=args.level))
            hit = iterations_to(result, args.level)
            rows.append(
                {
                    "variant": name,
                    "seed": seed,
                    "iterations_to_level": hit if hit is not None else "",
                    "best_fitness": f"{result.best.fitness:.4f}",
                    "wall_seconds": f"{time.perf_counter() - start:.1f}",
                }
            )
            print(rows[-1])
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
