"""Argument resolution and the synthetic tool executor."""

from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from collections.abc import Mapping
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Any

from parcall.callseq import Array, Binary, CallId, Expression, FunctionCall, Number, Ref, Text
from parcall.manifest import FaultKind, Kind, ToolManifest


class ToolFault(Exception):
    """A tool invocation failed; carries the call and the arguments it saw."""

    def __init__(self, call: CallId | None, message: str, context: Mapping[str, Any] | None = None):
        super().__init__(message)
        self.call = call
        self.message = message
        self.context = dict(context or {})


class TypeFault(ToolFault):
    pass


class UnresolvedRef(ToolFault):
    pass


def _number(value: Decimal) -> int | float:
    if value == value.to_integral_value():
        return int(value)
    return float(value)


def _as_text(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True, ensure_ascii=False)


def _arith(op: str, left: Any, right: Any) -> int | float:
    for side in (left, right):
        if isinstance(side, bool) or not isinstance(side, (int, float)):
            raise TypeFault(None, f"operator {op} needs numbers, got {type(side).__name__} {side!r}")
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if right == 0:
        raise TypeFault(None, "division by zero")
    if isinstance(left, int) and isinstance(right, int) and left % right == 0:
        return left // right
    return left / right


def evaluate(expr: Expression, results: Mapping[CallId, Any]) -> Any:
    if isinstance(expr, Ref):
        if expr.id not in results:
            raise UnresolvedRef(None, f"{expr.id} has no result yet")
        return results[expr.id]
    if isinstance(expr, Number):
        return _number(expr.value)
    if isinstance(expr, Text):
        out = []
        for part in expr.parts:
            if isinstance(part, CallId):
                if part not in results:
                    raise UnresolvedRef(None, f"{part} has no result yet")
                out.append(_as_text(results[part]))
            else:
                out.append(part)
        return "".join(out)
    if isinstance(expr, Array):
        return [evaluate(item, results) for item in expr.items]
    if isinstance(expr, Binary):
        return _arith(expr.op, evaluate(expr.left, results), evaluate(expr.right, results))
    raise TypeError(f"not an expression: {expr!r}")


def resolve_args(call: FunctionCall, results: Mapping[CallId, Any]) -> dict[str, Any]:
    """Replace refs with results and evaluate arithmetic, keeping argument order."""
    resolved = {}
    for name, expr in call.args.items():
        try:
            resolved[name] = evaluate(expr, results)
        except ToolFault as exc:
            raise type(exc)(call.id, f"{call.id} argument {name}: {exc.message}", resolved) from None
    return resolved


def canonical(value: Any) -> str:
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class Outcome:
    call: CallId
    ok: bool
    duration: Fraction
    args: dict[str, Any]
    value: Any = None
    error: str = ""


class SyntheticExecutor:
    """Deterministic stand-in for real tools.

    Durations depend only on (seed, call, attempt), so they do not change
    with dispatch order or strategy. Fault directives from the manifest
    decide whether an execution fails.
    """

    def __init__(self, manifest: ToolManifest, seed: int = 0):
        self.manifest = manifest
        self.seed = seed
        self._runs: dict[CallId, int] = {}
        self._data_fault_inputs: dict[CallId, str] = {}
        self._lock = threading.Lock()

    def runs(self, cid: CallId) -> int:
        return self._runs.get(cid, 0)

    def _duration(self, call: FunctionCall, attempt: int) -> Fraction:
        tool = self.manifest.tool(call.function)
        assert tool.duration is not None
        return tool.duration.sample(random.Random(f"{self.seed}/{call.id}/{attempt}"))

    def _injected(self, call: FunctionCall, attempt: int, fingerprint: str) -> str | None:
        directive = self.manifest.faults.get(str(call.id))
        if directive is None:
            return None
        if directive.kind is FaultKind.PERMANENT:
            return directive.message
        if directive.kind is FaultKind.TRANSIENT:
            return directive.message if attempt <= directive.fail_times else None
        # Data fault: keeps failing until the call sees different inputs.
        first = self._data_fault_inputs.setdefault(call.id, fingerprint)
        return directive.message if first == fingerprint else None

    def execute(self, call: FunctionCall, results: Mapping[CallId, Any]) -> Outcome:
        with self._lock:
            attempt = self._runs.get(call.id, 0) + 1
            self._runs[call.id] = attempt
            duration = self._duration(call, attempt)
            try:
                args = resolve_args(call, results)
            except ToolFault as exc:
                return Outcome(call.id, False, duration, exc.context, error=exc.message)
            fingerprint = canonical({"function": call.function, "args": args})
            message = self._injected(call, attempt, fingerprint)
        if message is not None:
            return Outcome(call.id, False, duration, args, error=f"{call.function}: {message}")
        tool = self.manifest.tool(call.function)
        if tool.result is not None:
            value = tool.result
        else:
            value = f"{call.function}:{hashlib.sha256(fingerprint.encode()).hexdigest()[:12]}"
        return Outcome(call.id, True, duration, args, value)


def occupy(kind: Kind, ms: float, time_scale: float = 1.0) -> None:
    """Spend wall-clock time like a real tool: spin for compute, sleep for I/O."""
    seconds = ms * time_scale / 1000.0
    if kind is Kind.INOUT:
        time.sleep(seconds)
        return
    # Hashing a large buffer is real CPU work that runs outside the GIL,
    # so spinning threads actually occupy separate cores.
    deadline = time.perf_counter() + seconds
    while time.perf_counter() < deadline:
        hashlib.sha256(_SPIN_BLOCK).digest()


_SPIN_BLOCK = bytes(64 * 1024)
