"""Compile-time plan repair and runtime fault recovery."""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

from parcall.callseq import CallId, CallSequence, CompileError, FunctionCall, parse_call, parse_sequence
from parcall.callseq import render_call, validate_against_registry
from parcall.engine import Session
from parcall.executor import Outcome
from parcall.manifest import ToolManifest
from parcall.planner import FewShot, NoPlanAvailable, Planner, PlannerRequest, PlannerUnavailable, RequestKind
from parcall.relation import RelationGraph
from parcall.trace import Event


class FatalError(RuntimeError):
    def __init__(self, message: str, attempts: int, last_error: CompileError | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.last_error = last_error


class RepairRejected(ValueError):
    pass


class FaultClass(enum.Enum):
    SELF_CONTAINED = "self-contained"
    DATA_DEPENDENT = "data-dependent"
    UNKNOWN = "unknown"


class Probe(enum.Enum):
    RECOVERED = "recovered"
    STILL_FAILING = "still-failing"


class Status(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass
class Fault:
    call: CallId
    message: str
    context: dict[str, Any] = field(default_factory=dict)
    kind: FaultClass = FaultClass.UNKNOWN

    @classmethod
    def from_outcome(cls, outcome: Outcome) -> Fault:
        return cls(outcome.call, outcome.error, dict(outcome.args))


@dataclass
class RecoveryState:
    max_attempts: int = 2
    attempts: int = 0
    failed: set[CallId] = field(default_factory=set)
    completed: set[CallId] = field(default_factory=set)
    recovery_points: set[CallId] = field(default_factory=set)
    repair_requests: int = 0
    rejected: list[str] = field(default_factory=list)
    declined: list[CallId] = field(default_factory=list)


@dataclass
class RecoveryResult:
    status: Status
    state: RecoveryState
    faults: dict[CallId, Fault]
    recovered: list[CallId]


# -- compile time ------------------------------------------------------------


def compile_plan(text: str, manifest: ToolManifest) -> CallSequence:
    seq = parse_sequence(text)
    validate_against_registry(seq, manifest)
    return seq


def _retranslate_temperature(base: float, retry: int) -> float:
    return min(1.0, base + 0.3 * retry)


def compile_time_recover(
    text: str,
    error: CompileError,
    planner: Planner,
    manifest: ToolManifest,
    query: str = "",
    few_shots: tuple[FewShot, ...] = (),
    max_repairs: int = 2,
    max_retranslations: int = 2,
    temperature: float = 0.0,
) -> CallSequence:
    """Ask the planner to fix ``text``; fall back to fresh translations at rising temperature."""
    attempts = 0
    for _ in range(max_repairs):
        attempts += 1
        context = f"Error: {error.render()}\nSequence:\n{text.rstrip()}"
        req = PlannerRequest(RequestKind.REPAIR_COMPILE, query, manifest, few_shots, context, temperature)
        fixed = planner.repair(req).plan_text
        if fixed is None:
            continue
        text = fixed
        try:
            return compile_plan(text, manifest)
        except CompileError as exc:
            error = exc
    for retry in range(1, max_retranslations + 1):
        attempts += 1
        req = PlannerRequest(
            RequestKind.TRANSLATE, query, manifest, few_shots,
            temperature=_retranslate_temperature(temperature, retry),
        )
        fresh = planner.translate(req).plan_text
        if fresh is None:
            continue
        try:
            return compile_plan(fresh, manifest)
        except CompileError as exc:
            error = exc
    raise FatalError("unable to handle the user query", attempts, error)


def translate_and_compile(
    query: str,
    planner: Planner,
    manifest: ToolManifest,
    few_shots: tuple[FewShot, ...] = (),
    max_repairs: int = 2,
    max_retranslations: int = 2,
) -> CallSequence:
    text = planner.translate(PlannerRequest(RequestKind.TRANSLATE, query, manifest, few_shots)).plan_text
    if text is None:
        raise FatalError("unable to handle the user query", 0)
    try:
        return compile_plan(text, manifest)
    except CompileError as exc:
        return compile_time_recover(
            text, exc, planner, manifest, query, few_shots, max_repairs, max_retranslations
        )


# -- runtime -----------------------------------------------------------------


def classify_and_reexecute(fault: Fault, session: Session) -> Probe:
    """Run the failed call once more with the same inputs."""
    outcome = session.run_phase({fault.call})
    if fault.call in outcome.completed:
        fault.kind = FaultClass.SELF_CONTAINED
        return Probe.RECOVERED
    fault.kind = FaultClass.DATA_DEPENDENT
    return Probe.STILL_FAILING


def find_recovery_points(fail: CallId, graph: RelationGraph) -> set[CallId]:
    """Closest data parents of ``fail`` (lowest rank among them), or ``fail`` itself."""
    parents = graph.preds(fail)
    if not parents:
        return {fail}
    lowest = min(graph.rank[p] for p in parents)
    return {p for p in parents if graph.rank[p] == lowest}


def collect_context(point: CallId, faults: Iterable[Fault], graph: RelationGraph) -> str:
    lines = [f"Call to replace: {render_call(graph[point].call)}"]
    for fault in faults:
        lines.append(f"Failed call: {render_call(graph[fault.call].call)}")
        lines.append(f"Error from {fault.call}: {fault.message}")
        if fault.context:
            shown = ", ".join(f"{k}={v!r}" for k, v in fault.context.items())
            lines.append(f"Inputs of {fault.call}: {shown}")
    return "\n".join(lines)


def repair_call(
    point: CallId,
    context: str,
    planner: Planner,
    manifest: ToolManifest,
    graph: RelationGraph,
    query: str = "",
    few_shots: tuple[FewShot, ...] = (),
) -> FunctionCall | None:
    """Ask for a replacement of ``point``. None when the planner declines.

    Raises RepairRejected when the answer does not parse, renames the call,
    switches between inout and compute, or changes which results it uses.
    """
    req = PlannerRequest(RequestKind.REPAIR_RUNTIME, query, manifest, few_shots, context)
    text = planner.repair(req).plan_text
    if text is None:
        return None
    try:
        new = parse_call(text)
        validate_against_registry(CallSequence((new,)), manifest)
    except CompileError as exc:
        raise RepairRejected(f"replacement for {point} does not compile: {exc.render()}") from None
    old = graph[point]
    if new.id != point:
        raise RepairRejected(f"replacement for {point} is named {new.id}")
    new_kind = manifest.tool(new.function).kind
    if new_kind is not old.kind:
        raise RepairRejected(f"replacement for {point} turns a {old.kind.value} call into {new_kind.value}")
    if new.refs() != old.call.refs():
        want = ", ".join(sorted(map(str, old.call.refs()))) or "none"
        raise RepairRejected(f"replacement for {point} must use exactly the results {want}")
    return new


def runtime_recover(
    faults: Mapping[CallId, Fault],
    session: Session,
    planner: Planner | None,
    max_attempts: int = 2,
    query: str = "",
    few_shots: tuple[FewShot, ...] = (),
) -> RecoveryResult:
    """Probe, localize, repair and re-run until no fault is left or attempts run out."""
    state = RecoveryState(max_attempts=max_attempts, failed=set(faults), completed=set(session.completed))
    failing = dict(faults)
    recovered: list[CallId] = []
    repaired: dict[CallId, set[CallId]] = {}

    def settle(fault: Fault) -> None:
        cid = fault.call
        how = fault.kind.value
        if cid in repaired:
            how += "; re-ran from " + ", ".join(sorted(map(str, repaired[cid]), key=lambda s: int(s[1:])))
        session.emit(Event.RECOVERED, cid, None, how)
        recovered.append(cid)

    while failing and state.attempts < max_attempts:
        state.attempts += 1
        points: dict[CallId, list[Fault]] = {}
        for cid in sorted(failing):
            fault = failing[cid]
            if classify_and_reexecute(fault, session) is Probe.RECOVERED:
                del failing[cid]
                settle(fault)
                continue
            for pt in find_recovery_points(cid, session.graph):
                points.setdefault(pt, []).append(fault)
        if not points:
            break
        state.recovery_points.update(points)

        for pt in sorted(points):
            if planner is None:
                continue
            state.repair_requests += 1
            context = collect_context(pt, points[pt], session.graph)
            try:
                new = repair_call(pt, context, planner, session.manifest, session.graph, query, few_shots)
            except (RepairRejected, NoPlanAvailable, PlannerUnavailable) as exc:
                # An unusable or missing answer leaves the point as it was.
                state.rejected.append(str(exc))
                continue
            if new is None:
                state.declined.append(pt)
            else:
                session.graph = session.graph.replace_node(pt, new)
        for pt, fs in points.items():
            for f in fs:
                repaired.setdefault(f.call, set()).add(pt)

        targets = session.runnable(set(points) | session.graph.descendants(points))
        outcome = session.run_phase(targets)
        still = {cid: f for cid, f in failing.items() if cid not in session.completed}
        for cid, out in outcome.failures.items():
            still[cid] = Fault.from_outcome(out)
            state.failed.add(cid)
        for cid in sorted(failing):
            if cid in session.completed:
                settle(failing[cid])
        failing = still

    state.completed = set(session.completed)
    status = Status.SUCCESS if not failing else Status.FAILURE
    return RecoveryResult(status, state, failing, recovered)
