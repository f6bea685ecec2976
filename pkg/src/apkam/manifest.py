"""Run manifests: enough provenance to replay a command bit-identically."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .util import dump_json, load_json, sha256_file

TOOL_VERSION = "0.1.0"


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    out_dir: str
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    figures: Dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None
    version: str = TOOL_VERSION

    def add_input(self, path):
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path):
        self.outputs[str(path)] = sha256_file(path)

    def add_figure(self, path):
        self.figures[str(path)] = sha256_file(path)

    def to_json(self) -> dict:
        return {"command": self.command, "argv": self.argv,
                "out_dir": self.out_dir, "inputs": self.inputs,
                "outputs": self.outputs, "figures": self.figures,
                "seed": self.seed, "version": self.version}

    def save(self, path):
        dump_json(self.to_json(), path)

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = load_json(path)
        return cls(command=d["command"], argv=d["argv"], out_dir=d["out_dir"],
                   inputs=d.get("inputs", {}), outputs=d.get("outputs", {}),
                   figures=d.get("figures", {}), seed=d.get("seed"),
                   version=d.get("version", "unknown"))

    def compare_outputs(self, renames: Dict[str, str]) -> List[str]:
        """Names whose re-run hashes differ; empty means bit-identical."""
        bad = []
        for old, digest in {**self.outputs, **self.figures}.items():
            new = renames.get(old, old)
            if sha256_file(new) != digest:
                bad.append(new)
        return bad
