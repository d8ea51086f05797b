"""Strategy runs, reports built from traces, scaling sweeps and comparison tables."""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from parcall.callseq import CallSequence, parse_sequence
from parcall.engine import RunOptions
from parcall.manifest import ToolManifest
from parcall.orchestrator import RunResult, orchestrate
from parcall.planner import FewShot, Planner
from parcall.relation import CapacityVector, MutexModel, RelationGraph, build_frg
from parcall.trace import Event, TraceEvent, load_trace, time_value

REPORT_SCHEMA = "parcall.report/1"
STRATEGY_ORDER = ("SEQUENTIAL", "DIRECT_PARALLEL", "COORDINATED")


@dataclass(frozen=True)
class Interval:
    start: Fraction
    end: Fraction
    processor: str | None
    ok: bool

    def to_json(self) -> dict:
        return {
            "start": time_value(self.start),
            "end": time_value(self.end),
            "processor": self.processor,
            "ok": self.ok,
        }


@dataclass
class RunReport:
    strategy: str
    processors: int
    seed: int
    makespan: Fraction
    intervals: dict[str, list[Interval]]
    utilization: dict[str, float]
    tokens: dict[str, int]
    recovery: dict[str, int]
    status: str
    results: dict[str, Any]
    speedup_vs: dict[str, float] = field(default_factory=dict)
    name: str = ""

    @property
    def label(self) -> str:
        base = f"{self.strategy}@p{self.processors}"
        return f"{self.name}:{base}" if self.name else base

    def speedup_over(self, other: RunReport) -> float:
        """How many times faster this run is than ``other``."""
        if self.makespan == 0:
            return 1.0 if other.makespan == 0 else float("inf")
        return float(Fraction(other.makespan) / Fraction(self.makespan))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "strategy": self.strategy,
            "processors": self.processors,
            "seed": self.seed,
            "status": self.status,
            "makespan": time_value(self.makespan),
            "speedup_vs": {k: round(v, 6) for k, v in sorted(self.speedup_vs.items())},
            "utilization": {k: round(v, 6) for k, v in self.utilization.items()},
            "tokens": dict(self.tokens),
            "recovery": dict(self.recovery),
            "intervals": {k: [i.to_json() for i in v] for k, v in self.intervals.items()},
            "results": self.results,
        }

    def dumps(self) -> str:
        return json.dumps({"schema": REPORT_SCHEMA, **self.to_json()}, indent=2, sort_keys=True, ensure_ascii=False)

    def render(self) -> str:
        lines = [
            f"{self.label}  status={self.status}  makespan={_fmt(self.makespan)}",
            f"recovery: {self.recovery.get('errors_raised', 0)} raised, "
            f"{self.recovery.get('errors_fixed', 0)} fixed, {self.recovery.get('attempts', 0)} attempts",
            f"planner tokens: {self.tokens.get('input', 0)} in, {self.tokens.get('output', 0)} out",
        ]
        if self.utilization:
            lines.append("utilization: " + "  ".join(f"{p}={u:.2f}" for p, u in self.utilization.items()))
        rows = [["call", "start", "end", "where", "outcome"]]
        for call, spans in self.intervals.items():
            for span in spans:
                rows.append([call, _fmt(span.start), _fmt(span.end), span.processor or "-",
                             "ok" if span.ok else "failed"])
        return "\n".join(lines) + "\n" + _align(rows)


def _union_length(spans: list[tuple[Fraction, Fraction]]) -> Fraction:
    total = Fraction(0)
    cur_start = cur_end = None
    for start, end in sorted(spans):
        if cur_end is None or start > cur_end:
            if cur_end is not None:
                total += cur_end - cur_start
            cur_start, cur_end = start, end
        else:
            cur_end = max(cur_end, end)
    if cur_end is not None:
        total += cur_end - cur_start
    return total


def report_from_trace(events: Iterable[TraceEvent], name: str = "") -> RunReport:
    """Rebuild the full report from trace records alone."""
    meta: dict[str, Any] = {}
    summary: dict[str, Any] = {}
    open_starts: dict[str, list[tuple[Fraction, str | None, str]]] = {}
    intervals: dict[str, list[Interval]] = {}
    kinds: dict[str, str] = {}
    results: dict[str, Any] = {}
    order: list[str] = []
    makespan = Fraction(0)
    for ev in events:
        t = Fraction(ev.t)
        if ev.event is Event.META:
            meta = json.loads(ev.detail)
        elif ev.event is Event.SUMMARY:
            summary = json.loads(ev.detail)
        elif ev.event is Event.SCHEDULED and ev.call not in order:
            order.append(ev.call)
        elif ev.event is Event.STARTED:
            open_starts.setdefault(ev.call, []).append((t, ev.processor, ev.detail))
            kinds[ev.call] = ev.detail
        elif ev.event in (Event.FINISHED, Event.FAILED):
            start, proc, _ = open_starts[ev.call].pop(0)
            intervals.setdefault(ev.call, []).append(Interval(start, t, proc, ev.event is Event.FINISHED))
            makespan = max(makespan, t)
            if ev.event is Event.FINISHED:
                results[ev.call] = json.loads(ev.detail.partition("=")[2])
            else:
                results.pop(ev.call, None)
    options = meta.get("options", {})
    processors = int(options.get("processors", 1))
    busy: dict[str, list[tuple[Fraction, Fraction]]] = {f"p{i}": [] for i in range(1, processors + 1)}
    for call, spans in intervals.items():
        if kinds.get(call) != "compute":
            continue
        for span in spans:
            if span.processor in busy:
                busy[span.processor].append((span.start, span.end))
    utilization = {
        p: float(_union_length(spans) / makespan) if makespan else 0.0 for p, spans in busy.items()
    }

    def by_plan(call: str) -> int:
        return int(call[1:])

    strategy = options.get("strategy", "COORDINATED")
    report = RunReport(
        strategy=strategy,
        processors=processors,
        seed=int(options.get("seed", 0)),
        makespan=makespan,
        intervals={c: intervals[c] for c in sorted(intervals, key=by_plan)},
        utilization=utilization,
        tokens=summary.get("tokens", {"input": 0, "output": 0}),
        recovery=summary.get("recovery", {"errors_raised": 0, "errors_fixed": 0, "attempts": 0}),
        status=summary.get("status", "incomplete"),
        results={c: results[c] for c in sorted(results, key=by_plan)},
        name=name or meta.get("name", ""),
    )
    report.speedup_vs = {report.label: 1.0}
    return report


def _graph(plan: str | CallSequence | RelationGraph, manifest: ToolManifest,
           capacity: CapacityVector | None = None, model: MutexModel = MutexModel.SIMPLIFIED) -> RelationGraph:
    if isinstance(plan, RelationGraph):
        return plan
    seq = parse_sequence(plan) if isinstance(plan, str) else plan
    return build_frg(seq, manifest, capacity, model)


def run(
    plan: str | CallSequence | RelationGraph,
    manifest: ToolManifest,
    strategy: str = "COORDINATED",
    processors: int = 1,
    seed: int = 0,
    clock: str = "virtual",
    *,
    planner: Planner | None = None,
    query: str = "",
    few_shots: tuple[FewShot, ...] = (),
    name: str = "",
    capacity: CapacityVector | None = None,
    model: MutexModel = MutexModel.SIMPLIFIED,
    planner_tokens: dict[str, int] | None = None,
    **options: Any,
) -> tuple[RunReport, RunResult]:
    """Execute a plan under one strategy; the report is derived from the written trace."""
    graph = _graph(plan, manifest, capacity, model)
    opts = RunOptions(strategy=strategy, processors=processors, seed=seed, clock=clock, **options)
    meta = {"name": name} if name else None
    result = orchestrate(graph, manifest, opts, planner, query, few_shots, meta, planner_tokens)
    text = result.trace.dumps()
    report = report_from_trace(load_trace(text.split("\n")), name)
    return report, result


@dataclass(frozen=True)
class SweepRow:
    strategy: str
    processors: int
    makespan: Fraction
    speedup: float


@dataclass
class SweepTable:
    rows: list[SweepRow]
    baseline: Fraction
    name: str = ""

    def processors(self) -> list[int]:
        return sorted({r.processors for r in self.rows})

    def strategies(self) -> list[str]:
        present = {r.strategy for r in self.rows}
        return [s for s in STRATEGY_ORDER if s in present]

    def cell(self, strategy: str, p: int) -> SweepRow:
        for r in self.rows:
            if r.strategy == strategy and r.processors == p:
                return r
        raise KeyError((strategy, p))

    def render(self) -> str:
        procs = self.processors()
        header = ["strategy"] + [f"p={p}" for p in procs]
        body = []
        for s in self.strategies():
            line = [s]
            for p in procs:
                r = self.cell(s, p)
                line.append(f"{_fmt(r.makespan)} ({r.speedup:.2f}x)")
            body.append(line)
        title = f"makespan (speedup vs SEQUENTIAL@p1 = {_fmt(self.baseline)})"
        if self.name:
            title = f"{self.name}: {title}"
        return title + "\n" + _align([header] + body)

    def to_json(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "kind": "sweep",
            "name": self.name,
            "baseline": time_value(self.baseline),
            "rows": [
                {
                    "strategy": r.strategy,
                    "processors": r.processors,
                    "makespan": time_value(r.makespan),
                    "speedup": round(r.speedup, 6),
                }
                for r in self.rows
            ],
        }


def _fmt(value: Fraction) -> str:
    v = time_value(value)
    return str(v) if isinstance(v, int) else f"{v:.3f}"


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def scaling_sweep(
    plan: str | CallSequence | RelationGraph,
    manifest: ToolManifest,
    processors_list: Sequence[int],
    seed: int = 0,
    strategies: Sequence[str] = STRATEGY_ORDER,
    name: str = "",
    **options: Any,
) -> SweepTable:
    """Run every strategy at every processor count; speedups are against SEQUENTIAL at p=1."""
    graph = _graph(plan, manifest)
    baseline_report, _ = run(graph, manifest, "SEQUENTIAL", 1, seed, **options)
    rows = []
    for strategy in strategies:
        for p in processors_list:
            report, _ = run(graph, manifest, strategy, p, seed, **options)
            rows.append(SweepRow(strategy, p, report.makespan, report.speedup_over(baseline_report)))
    return SweepTable(rows, baseline_report.makespan, name)


def compare_report(reports: Sequence[RunReport]) -> tuple[str, dict]:
    """Aligned text table plus a schema-versioned dump; fills in ``speedup_vs``."""
    if not reports:
        raise ValueError("nothing to compare: no reports given")
    rank = {s: i for i, s in enumerate(STRATEGY_ORDER)}
    ordered = sorted(reports, key=lambda r: (r.name, rank.get(r.strategy, len(rank)), r.processors))
    for r in ordered:
        r.speedup_vs = {o.label: r.speedup_over(o) for o in ordered}
    base = ordered[0]
    header = ["run", "status", "makespan", f"speedup vs {base.label}", "errors", "fixed", "attempts", "tokens"]
    rows = [header]
    for r in ordered:
        rows.append([
            r.label,
            r.status,
            _fmt(r.makespan),
            f"{r.speedup_over(base):.2f}x",
            str(r.recovery.get("errors_raised", 0)),
            str(r.recovery.get("errors_fixed", 0)),
            str(r.recovery.get("attempts", 0)),
            str(r.tokens.get("input", 0) + r.tokens.get("output", 0)),
        ])
    dump = {"schema": REPORT_SCHEMA, "kind": "comparison", "reports": [r.to_json() for r in ordered]}
    return _align(rows), dump
