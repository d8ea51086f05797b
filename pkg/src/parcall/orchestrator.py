"""One complete run: main phase, runtime recovery, resume, summary."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from parcall.callseq import CallId
from parcall.engine import RunOptions, Session
from parcall.executor import SyntheticExecutor
from parcall.manifest import ToolManifest
from parcall.planner import FewShot, Planner
from parcall.recovery import Fault, Status, runtime_recover
from parcall.relation import RelationGraph
from parcall.trace import Event, TraceLog


@dataclass
class RecoveryStats:
    errors_raised: int = 0
    errors_fixed: int = 0
    attempts: int = 0

    def to_json(self) -> dict:
        return {"errors_raised": self.errors_raised, "errors_fixed": self.errors_fixed, "attempts": self.attempts}


@dataclass
class RunResult:
    ok: bool
    session: Session
    recovery: RecoveryStats
    tokens: dict[str, int]
    error: str = ""
    rounds: list[Any] = field(default_factory=list)

    @property
    def trace(self) -> TraceLog:
        return self.session.trace

    @property
    def status(self) -> str:
        return "ok" if self.ok else "failed"


def orchestrate(
    graph: RelationGraph,
    manifest: ToolManifest,
    options: RunOptions | None = None,
    planner: Planner | None = None,
    query: str = "",
    few_shots: tuple[FewShot, ...] = (),
    meta: dict[str, Any] | None = None,
    planner_tokens: dict[str, int] | None = None,
) -> RunResult:
    """Run ``graph`` to completion, recovering from faults through ``planner``.

    ``planner_tokens`` seeds the token totals with what translation already
    spent; repair requests made here are added on top.
    """
    options = options or RunOptions()
    session = Session(graph, manifest, options, executor=SyntheticExecutor(manifest, options.seed))
    header = {"schema": "parcall.trace/1", "options": options.to_json(), "calls": len(graph)}
    header.update(meta or {})
    session.emit(Event.META, None, None, json.dumps(header, sort_keys=True))

    start_tokens = dict(planner.tokens) if planner else {"input": 0, "output": 0}
    stats = RecoveryStats()
    raised: set[CallId] = set()
    ok = True
    error = ""
    rounds = []

    session.run_phase(graph.ids)
    # Each round either fails for good or completes at least one more call.
    for _ in range(len(graph) + 1):
        if not session.failed:
            remaining = [c for c in graph.ids if c not in session.completed]
            if not remaining:
                break
            session.run_phase(session.runnable(remaining))
            continue
        faults = {cid: Fault.from_outcome(out) for cid, out in sorted(session.failed.items())}
        raised.update(faults)
        result = runtime_recover(faults, session, planner, options.max_attempts, query, few_shots)
        rounds.append(result)
        stats.attempts += result.state.attempts
        raised.update(result.state.failed)
        if result.status is Status.FAILURE:
            ok = False
            error = "; ".join(f"{cid}: {f.message}" for cid, f in sorted(result.faults.items()))
            break
    else:  # pragma: no cover - guarded by the progress argument above
        ok = False
        error = "recovery did not converge"

    stats.errors_raised = len(raised)
    stats.errors_fixed = len(raised - set(session.failed))
    if ok and len(session.completed) != len(graph):
        ok = False
        error = error or "not every call completed"

    tokens = {"input": 0, "output": 0}
    if planner_tokens:
        tokens = {k: tokens[k] + planner_tokens.get(k, 0) for k in tokens}
    if planner:
        tokens = {k: tokens[k] + planner.tokens[k] - start_tokens[k] for k in tokens}

    summary = {
        "status": "ok" if ok else "failed",
        "tokens": tokens,
        "recovery": stats.to_json(),
        "error": error,
    }
    session.emit(Event.SUMMARY, None, None, json.dumps(summary, sort_keys=True))
    return RunResult(ok, session, stats, tokens, error, rounds)
