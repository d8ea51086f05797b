"""Checked-in benchmark cases.

Each case lives in ``data/<name>/``:

- ``plan.txt``: the call sequence
- ``manifest.json``: tool kinds and durations
- ``config.json``: a run config pointing at the two files above
- ``case.json``: expected graph summary and virtual makespans per strategy
  and processor count for fault-free runs, with a ``source`` note on how
  they were obtained
- ``book.json`` (optional): scripted planner answers
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

from parcall.callseq import CallSequence, parse_sequence
from parcall.config import RunConfig
from parcall.manifest import ToolManifest
from parcall.relation import RelationGraph, build_frg


def data_dir() -> Path:
    return Path(str(resources.files("parcall.corpus").joinpath("data")))


def case_names() -> list[str]:
    return sorted(p.name for p in data_dir().iterdir() if (p / "case.json").is_file())


@dataclass(frozen=True)
class BenchmarkCase:
    name: str
    description: str
    processors: int
    summary: dict
    makespans: dict[str, dict[int, Fraction]]
    source: str
    config: RunConfig

    @property
    def plan_text(self) -> str:
        return self.config.plan_text()

    def sequence(self) -> CallSequence:
        return parse_sequence(self.plan_text)

    def manifest(self, faults: bool = True) -> ToolManifest:
        m = self.config.manifest()
        return m if faults else ToolManifest(m.tools, {}, m.io_capacity)

    def graph(self) -> RelationGraph:
        return build_frg(self.sequence(), self.manifest())

    def expected_makespan(self, strategy: str, processors: int) -> Fraction:
        return self.makespans[strategy][processors]


def load_case(name: str) -> BenchmarkCase:
    folder = data_dir() / name
    if not (folder / "case.json").is_file():
        raise KeyError(f"no benchmark case named {name!r}; known: {', '.join(case_names())}")
    raw = json.loads((folder / "case.json").read_text(encoding="utf-8"))
    makespans = {
        strategy: {int(p): Fraction(v) for p, v in row.items()} for strategy, row in raw["makespans"].items()
    }
    return BenchmarkCase(
        name=raw["name"],
        description=raw.get("description", ""),
        processors=int(raw["processors"]),
        summary=raw["summary"],
        makespans=makespans,
        source=raw.get("source", ""),
        config=RunConfig.load(folder / "config.json"),
    )


def load_all() -> list[BenchmarkCase]:
    return [load_case(n) for n in case_names()]
