"""Tool manifest: per-tool kind, I/O mode, resource profile and simulated cost."""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from parcall.callseq import SELF


class Kind(enum.Enum):
    INOUT = "inout"
    COMPUTE = "compute"


class Mode(enum.Enum):
    BLOCK = "block"
    NONBLOCK = "nonblock"


class FaultKind(enum.Enum):
    TRANSIENT = "transient"  # fails the first `fail_times` executions
    DATA = "data"            # fails until the call's resolved inputs change
    PERMANENT = "permanent"  # always fails


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ResourceProfile:
    cpu: float = 0.0
    mem: float = 0.0
    gpu_mem: float = 0.0
    io: float = 0.0

    def __post_init__(self) -> None:
        for name, value in self.as_dict().items():
            if not value >= 0:
                raise ManifestError(f"resource profile component {name} must be >= 0, got {value}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cpu, self.mem, self.gpu_mem, self.io)

    def as_dict(self) -> dict[str, float]:
        return {"cpu": self.cpu, "mem": self.mem, "gpu_mem": self.gpu_mem, "io": self.io}

    @classmethod
    def for_kind(cls, kind: Kind) -> ResourceProfile:
        # Binary model: compute = (1, 0, 0, LOW), I/O = (0, 0, 0, HIGH).
        if kind is Kind.COMPUTE:
            return cls(cpu=1.0, mem=0.0, gpu_mem=0.0, io=0.0)
        return cls(cpu=0.0, mem=0.0, gpu_mem=0.0, io=1.0)


@dataclass(frozen=True)
class Duration:
    """Fixed or uniformly distributed virtual duration in milliseconds."""

    low: Fraction
    high: Fraction

    def __post_init__(self) -> None:
        if self.low <= 0 or self.high < self.low:
            raise ManifestError(f"durations must satisfy 0 < low <= high, got {self.low}..{self.high}")

    @classmethod
    def fixed(cls, value: float | int | Fraction) -> Duration:
        v = Fraction(value)
        return cls(v, v)

    def sample(self, rng: random.Random) -> Fraction:
        if self.low == self.high:
            return self.low
        if self.low.denominator == 1 and self.high.denominator == 1:
            return Fraction(rng.randint(int(self.low), int(self.high)))
        # Quantized to 1/1000 ms so every event time has an exact decimal form.
        value = Fraction(round(rng.uniform(float(self.low), float(self.high)) * 1000), 1000)
        return min(self.high, max(self.low, value))

    def to_json(self) -> Any:
        if self.low == self.high:
            return _num(self.low)
        return {"uniform": [_num(self.low), _num(self.high)]}

    @classmethod
    def from_json(cls, raw: Any) -> Duration:
        if isinstance(raw, (int, float)):
            return cls.fixed(Fraction(str(raw)))
        if isinstance(raw, dict) and "uniform" in raw:
            lo, hi = raw["uniform"]
            return cls(Fraction(str(lo)), Fraction(str(hi)))
        raise ManifestError(f"cannot read duration {raw!r}; use a number or {{'uniform': [lo, hi]}}")


def _num(x: Fraction) -> int | float:
    return int(x) if x.denominator == 1 else float(x)


DEFAULT_COMPUTE_MS = Fraction(100)
DEFAULT_INOUT_MS = Fraction(5)


@dataclass(frozen=True)
class ToolSpec:
    name: str
    kind: Kind
    mode: Mode | None = None
    profile: ResourceProfile | None = None
    duration: Duration | None = None
    # Constant result returned by the synthetic tool; None derives one from the arguments.
    result: Any = None
    description: str = ""

    def __post_init__(self) -> None:
        if self.kind is Kind.COMPUTE and self.mode is not None:
            raise ManifestError(f"tool {self.name}: only inout tools carry a block/nonblock mode")
        if self.kind is Kind.INOUT and self.mode is None:
            object.__setattr__(self, "mode", Mode.BLOCK)
        if self.profile is None:
            object.__setattr__(self, "profile", ResourceProfile.for_kind(self.kind))
        if self.duration is None:
            d = DEFAULT_COMPUTE_MS if self.kind is Kind.COMPUTE else DEFAULT_INOUT_MS
            object.__setattr__(self, "duration", Duration.fixed(d))

    def to_json(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind.value}
        if self.mode is not None:
            out["mode"] = self.mode.value
        assert self.profile is not None and self.duration is not None
        out["profile"] = self.profile.as_dict()
        out["duration"] = self.duration.to_json()
        if self.result is not None:
            out["result"] = self.result
        if self.description:
            out["description"] = self.description
        return out

    @classmethod
    def from_json(cls, raw: dict) -> ToolSpec:
        try:
            name = raw["name"]
            kind = Kind(raw.get("kind", "compute"))
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"bad tool entry {raw!r}: {exc}") from None
        mode = Mode(raw["mode"]) if raw.get("mode") is not None else None
        profile = ResourceProfile(**raw["profile"]) if "profile" in raw else None
        duration = Duration.from_json(raw["duration"]) if "duration" in raw else None
        return cls(
            name=name, kind=kind, mode=mode, profile=profile, duration=duration,
            result=raw.get("result"), description=raw.get("description", ""),
        )


SELF_TOOL = ToolSpec(SELF, Kind.INOUT, Mode.BLOCK, description="the model's own reasoning")


@dataclass(frozen=True)
class FaultDirective:
    kind: FaultKind = FaultKind.TRANSIENT
    fail_times: int = 1
    message: str = "injected fault"

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "fail_times": self.fail_times, "message": self.message}

    @classmethod
    def from_json(cls, raw: dict) -> FaultDirective:
        kind = raw.get("kind", raw.get("fault_kind", "transient"))
        return cls(FaultKind(kind), int(raw.get("fail_times", 1)), raw.get("message", "injected fault"))


@dataclass
class ToolManifest:
    tools: dict[str, ToolSpec] = field(default_factory=dict)
    # Per-call fault injections keyed by call ID text ("s3").
    faults: dict[str, FaultDirective] = field(default_factory=dict)
    io_capacity: int = 64

    def __contains__(self, name: object) -> bool:
        return name == SELF or name in self.tools

    def tool(self, name: str) -> ToolSpec:
        if name in self.tools:
            return self.tools[name]
        if name == SELF:
            return SELF_TOOL
        raise KeyError(name)

    def names(self) -> list[str]:
        return sorted(set(self.tools) | {SELF})

    def to_json(self) -> dict:
        out: dict[str, Any] = {"tools": [t.to_json() for t in self.tools.values()], "io_capacity": self.io_capacity}
        if self.faults:
            out["faults"] = {k: v.to_json() for k, v in self.faults.items()}
        return out

    @classmethod
    def from_json(cls, raw: dict) -> ToolManifest:
        tools_raw = raw.get("tools", [])
        if isinstance(tools_raw, dict):
            tools_raw = [{"name": k, **v} for k, v in tools_raw.items()]
        tools: dict[str, ToolSpec] = {}
        for entry in tools_raw:
            spec = ToolSpec.from_json(entry)
            if spec.name in tools:
                raise ManifestError(f"tool {spec.name} is declared twice")
            tools[spec.name] = spec
        faults = {k: FaultDirective.from_json(v) for k, v in raw.get("faults", {}).items()}
        io_capacity = int(raw.get("io_capacity", 64))
        if io_capacity < 1:
            raise ManifestError("io_capacity must be positive")
        return cls(tools, faults, io_capacity)

    @classmethod
    def load(cls, path: str | Path) -> ToolManifest:
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def with_faults(self, faults: dict[str, FaultDirective]) -> ToolManifest:
        return ToolManifest(dict(self.tools), {**self.faults, **faults}, self.io_capacity)

    def describe(self) -> str:
        """One line per tool, used in planner prompts."""
        lines = []
        for name in self.names():
            t = self.tool(name)
            desc = f" - {t.description}" if t.description else ""
            lines.append(f"{name} ({t.kind.value}){desc}")
        return "\n".join(lines)
