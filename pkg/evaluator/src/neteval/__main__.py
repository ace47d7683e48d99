import argparse
import sys

from .server import Server
from .train import EvalConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="neteval")
    parser.add_argument("--tau", type=int, default=100, help="fine-tune steps per candidate")
    parser.add_argument("--batch", type=int, default=4)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--width", type=int, default=16, help="base channel width")
    args = parser.parse_args(argv)
    config = EvalConfig(
        tau=args.tau, batch_size=args.batch, learning_rate=args.lr, width=args.width
    )
    return Server(config).serve_forever()


if __name__ == "__main__":
    sys.exit(main())
