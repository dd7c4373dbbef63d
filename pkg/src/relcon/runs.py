"""Run directories and manifests.

Every artifact-producing command records a manifest: the config snapshot
and seeds, sha256 digests of its inputs (taken before any work starts),
the artifacts it wrote, and wall-clock plus step counts. The manifest is
written once at completion and not touched afterwards.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

__all__ = ["file_digest", "RunManifest"]


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, run_dir: str | Path, command: str, config: dict, seeds: list[int]):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._t0 = time.monotonic()
        self._data = {
            "command": command,
            "config": config,
            "seeds": seeds,
            "inputs": {},
            "artifacts": [],
            "steps": 0,
            "wall_clock_s": None,
        }
        self._finalized = False

    def add_input(self, path: str | Path) -> None:
        p = Path(path)
        if p.is_dir():
            for child in sorted(p.iterdir()):
                if child.is_file():
                    self._data["inputs"][str(child)] = file_digest(child)
        else:
            self._data["inputs"][str(p)] = file_digest(p)

    def add_artifact(self, path: str | Path) -> None:
        self._data["artifacts"].append(str(path))

    def set_steps(self, steps: int) -> None:
        self._data["steps"] = steps

    def finalize(self) -> Path:
        if self._finalized:
            raise RuntimeError("manifest already finalized")
        self._data["wall_clock_s"] = round(time.monotonic() - self._t0, 3)
        out = self.run_dir / "manifest.json"
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self._data, f, indent=2, sort_keys=True)
            f.write("\n")
        self._finalized = True
        return out
