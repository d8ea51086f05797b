"""Run configuration files: which plan, which tools, how to run it."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from parcall.manifest import FaultDirective, ToolManifest
from parcall.planner import FewShot, HttpPlanner, MockPlanner, Planner, load_few_shots

PLANNERS = ("mock", "http")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    plan_path: Path | None = None
    manifest_path: Path | None = None
    strategy: str = "COORDINATED"
    processors: int = 1
    seed: int = 0
    clock: str = "virtual"
    planner: str = "mock"
    fault_injections: dict[str, FaultDirective] = field(default_factory=dict)
    name: str = ""
    query: str = ""
    # Scripted answers for the mock planner.
    plan_book: Path | None = None
    few_shots_path: Path | None = None

    def __post_init__(self) -> None:
        if self.planner not in PLANNERS:
            raise ConfigError(f"planner must be one of {', '.join(PLANNERS)}, got {self.planner!r}")
        if self.processors < 1:
            raise ConfigError("processors must be at least 1")

    @classmethod
    def from_json(cls, raw: dict[str, Any], base: Path | None = None) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values = dict(raw)
        for key in ("plan_path", "manifest_path", "plan_book", "few_shots_path"):
            if values.get(key) is not None:
                path = Path(values[key])
                values[key] = path if base is None or path.is_absolute() else base / path
        values["fault_injections"] = {
            cid: FaultDirective.from_json(d) for cid, d in (raw.get("fault_injections") or {}).items()
        }
        try:
            return cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad run config: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_json(raw, path.parent)

    def plan_text(self) -> str:
        if self.plan_path is None:
            raise ConfigError("run config has no plan_path")
        return Path(self.plan_path).read_text(encoding="utf-8")

    def manifest(self) -> ToolManifest:
        if self.manifest_path is None:
            base = ToolManifest()
        else:
            base = ToolManifest.load(self.manifest_path)
        return base.with_faults(self.fault_injections) if self.fault_injections else base

    def make_planner(self) -> Planner:
        if self.planner == "http":
            return HttpPlanner.from_env()
        if self.plan_book is None:
            return MockPlanner()
        return MockPlanner.load(self.plan_book)

    def few_shots(self) -> tuple[FewShot, ...]:
        return load_few_shots(self.few_shots_path)
