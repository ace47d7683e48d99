"""Protocol server: newline-delimited JSON requests on stdin, replies on
stdout.

    <- {"type":"hello","protocol":1,"config":{...}}    -> {"type":"ready"}
    <- {"type":"evaluate","iter":t,"candidate":"<id>","dataset":"<dir>"}
        -> {"type":"fitness","candidate":"<id>","fitness":f,
            "aux":{"val_mae":m,"base_hash":h}}
    <- {"type":"commit","iter":t,"candidate":"<id>"}   -> {"type":"committed",...}
    <- {"type":"shutdown"}                             -> (exit 0)

State per run: current weights, the growing list of committed training
directories, and an on-disk snapshot per candidate evaluated since the
last commit (workdir/snapshots/<id>.pt).  Committing keeps exactly the
named snapshot, makes it the current network, appends its dataset to the
training list, and deletes every other snapshot.  Evaluations never
write into dataset directories.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import torch

from .data import DatasetError
from .model import NormalNet
from .train import EvalConfig, fine_tune, validate, weight_hash

PROTOCOL_VERSION = 1


class Server:
    def __init__(self, config: EvalConfig, stdin=None, stdout=None):
        self.config = config
        self.stdin = stdin or sys.stdin
        self.stdout = stdout or sys.stdout
        self.workdir: Path | None = None
        self.validation: Path | None = None
        self.state: dict | None = None  # current network weights
        self.datasets: list[str] = []  # committed training directories
        self.snapshots: dict[str, Path] = {}  # candidate -> snapshot file
        self.snapshot_meta: dict[str, dict] = {}
        self.last_committed: str | None = None
        self.history: list[dict] = []

    # -- plumbing ---------------------------------------------------

    def _reply(self, message: dict) -> None:
        self.stdout.write(json.dumps(message) + "\n")
        self.stdout.flush()

    def _error(self, text: str) -> None:
        self._reply({"type": "error", "message": text})

    def _save_state_file(self) -> None:
        payload = {
            "datasets": self.datasets,
            "history": self.history,
            "committed": self.last_committed,
        }
        (self.workdir / "state.json").write_text(json.dumps(payload, indent=1))

    # -- handlers ---------------------------------------------------

    def handle_hello(self, request: dict) -> None:
        if request.get("protocol") != PROTOCOL_VERSION:
            self._error(f"unsupported protocol {request.get('protocol')}")
            return
        cfg = request.get("config") or {}
        self.workdir = Path(cfg["workdir"])
        self.validation = Path(cfg["validation"])
        self.config.seed = int(cfg.get("seed", self.config.seed))
        (self.workdir / "snapshots").mkdir(parents=True, exist_ok=True)
        torch.manual_seed(self.config.seed)
        model = NormalNet(width=self.config.width)
        self.state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        self._save_state_file()
        self._reply({"type": "ready"})

    def handle_evaluate(self, request: dict) -> None:
        candidate = str(request["candidate"])
        iteration = int(request.get("iter", 0))
        dataset = Path(request["dataset"])
        base_hash = weight_hash(self.state)
        rng = np.random.default_rng((self.config.seed, iteration))
        try:
            dirs = [Path(d) for d in self.datasets] + [dataset]
            state, diverged = fine_tune(self.state, dirs, self.config, rng)
        except (DatasetError, OSError) as exc:
            self._error(f"candidate {candidate}: {exc}")
            return
        if diverged:
            self._reply(
                {
                    "type": "fitness",
                    "candidate": candidate,
                    "fitness": 0.0,
                    "aux": {"val_mae": 1e30, "diverged": True, "base_hash": base_hash},
                }
            )
            return
        val_mae = validate(state, self.validation, self.config)
        path = self.workdir / "snapshots" / f"{candidate}.pt"
        torch.save(state, path)
        self.snapshots[candidate] = path
        self.snapshot_meta[candidate] = {
            "iter": iteration,
            "dataset": str(dataset),
            "val_mae": val_mae,
        }
        fitness = 1.0 / max(val_mae, 1e-9)
        self._reply(
            {
                "type": "fitness",
                "candidate": candidate,
                "fitness": fitness,
                "aux": {"val_mae": val_mae, "base_hash": base_hash},
            }
        )

    def handle_commit(self, request: dict) -> None:
        candidate = str(request["candidate"])
        if candidate not in self.snapshots:
            if candidate == self.last_committed:  # idempotent re-commit
                self._reply({"type": "committed", "candidate": candidate})
                return
            self._error(f"unknown candidate {candidate}")
            return
        keep = self.snapshots.pop(candidate)
        meta = self.snapshot_meta.pop(candidate)
        self.state = torch.load(keep, weights_only=True)
        self.datasets.append(meta["dataset"])
        self.history.append(
            {"iter": meta["iter"], "candidate": candidate, "val_mae": meta["val_mae"]}
        )
        for path in self.snapshots.values():
            path.unlink(missing_ok=True)
        self.snapshots = {}
        self.snapshot_meta = {}
        self.last_committed = candidate
        self._save_state_file()
        self._reply({"type": "committed", "candidate": candidate})

    # -- loop -------------------------------------------------------

    def serve_forever(self) -> int:
        for line in self.stdin:
            line = line.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except json.JSONDecodeError as exc:
                self._error(f"bad request: {exc}")
                continue
            kind = request.get("type")
            if kind == "hello":
                self.handle_hello(request)
            elif kind == "evaluate":
                if self.state is None:
                    self._error("evaluate before hello")
                    continue
                self.handle_evaluate(request)
            elif kind == "commit":
                if self.state is None:
                    self._error("commit before hello")
                    continue
                self.handle_commit(request)
            elif kind == "shutdown":
                return 0
            else:
                self._error(f"unknown request type {kind!r}")
        return 0
