"""Desk-scale standalone benchmark: evolve the two-sphere "bite" target.

Runs the same configuration as the acceptance suite (n=100, m=100,
jitter-scale transforms) over several seeds and reports best IoU and the
iteration at which 0.90 was first reached.

    python scripts/run_desk_benchmark.py --seeds 5 --out runs/desk
"""

import argparse
import statistics
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from shapevo.evolution import evolve
from shapevo.fitness import IoUEvaluator
from shapevo.targets import bite_target, desk_config


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--iterations", type=int, default=150)
    parser.add_argument("--stop", type=float, default=0.90)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    target = bite_target()
    bests = []
    for seed in range(args.seeds):
        config = desk_config(
            seed=seed, max_iterations=args.iterations, stop_fitness=args.stop
        )
        out_dir = args.out / f"seed-{seed}" if args.out else None
        start = time.perf_counter()
        result = evolve(config, IoUEvaluator(target, stop_fitness=args.stop), out_dir=out_dir)
        elapsed = time.perf_counter() - start
        hit = next(
            (p.iteration for p in result.curve if p.best_fitness >= args.stop), None
        )
        bests.append(result.best.fitness)
        print(
            f"seed {seed}: best IoU {result.best.fitness:.4f}, "
            f"reached {args.stop} at iteration {hit}, "
            f"{result.iterations_run} iterations in {elapsed:.0f}s"
        )
    print(f"median best IoU over {args.seeds} seeds: {statistics.median(bests):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
