"""Run manifests: a reproducibility record written by every CLI command.

The manifest lists the resolved configuration, the seeds used, every
input and output file with its SHA-256 content hash, and wall-clock
timings per stage.  Re-running a command with the configuration and
seeds recorded here must reproduce the listed output hashes exactly.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__

__all__ = ["sha256_file", "RunManifest", "StageTimer"]


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class StageTimer:
    """Accumulates named wall-clock durations."""

    def __init__(self):
        self.timings_s: dict[str, float] = {}
        self._mark = time.perf_counter()

    def lap(self, stage: str) -> None:
        now = time.perf_counter()
        self.timings_s[stage] = round(now - self._mark, 6)
        self._mark = now


@dataclass
class RunManifest:
    command: str
    arguments: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    timings_s: dict = field(default_factory=dict)
    tool: str = "mrsi-cs"
    version: str = __version__

    def add_input(self, path: str | Path) -> None:
        self.inputs.append({"path": str(path), "sha256": sha256_file(path)})

    def add_output(self, path: str | Path) -> None:
        self.outputs.append({"path": str(path), "sha256": sha256_file(path)})

    def write(self, path: str | Path) -> None:
        doc = {
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "arguments": self.arguments,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings_s": self.timings_s,
        }
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
