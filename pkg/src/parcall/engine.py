"""Execution runtimes: a deterministic virtual clock and real threads.

Both runtimes drive the same scheduler and dispatcher objects. The virtual
one interleaves them cooperatively on a discrete-event clock; the real one
runs the scheduler on its own thread, talks to it over channels and runs
tools on worker threads.
"""

from __future__ import annotations

import heapq
import itertools
import json
import random
import threading
import time
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from parcall.callseq import CallId
from parcall.coordinator import (
    STRATEGIES,
    DispatchConfig,
    Dispatcher,
    InternalDeadlock,
    Job,
    PhaseOutcome,
)
from parcall.executor import Outcome, SyntheticExecutor, occupy
from parcall.manifest import ToolManifest
from parcall.relation import RelationGraph
from parcall.scheduler import Batch, Channel, ChannelClosed, Scheduler, run_scheduler
from parcall.trace import Event, TraceLog


class OrchestrationError(RuntimeError):
    pass


class VirtualClock:
    """Event heap keyed by (time, insertion sequence)."""

    def __init__(self) -> None:
        self.now = Fraction(0)
        self._heap: list[tuple[Fraction, int, Callable[[], None]]] = []
        self._seq = itertools.count()

    def schedule(self, at: Fraction, action: Callable[[], None]) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({at} < {self.now})")
        heapq.heappush(self._heap, (at, next(self._seq), action))

    @property
    def pending(self) -> int:
        return len(self._heap)

    def step(self) -> None:
        """Advance to the next event time and fire everything due then."""
        if not self._heap:
            raise InternalDeadlock(f"no events left at t={self.now} but work remains")
        t = self._heap[0][0]
        self.now = t
        while self._heap and self._heap[0][0] == t:
            _, _, action = heapq.heappop(self._heap)
            action()

    def run_until(self, ready: Callable[[], bool]) -> None:
        while not ready():
            self.step()


@dataclass
class RunOptions:
    strategy: str = "COORDINATED"
    processors: int = 1
    seed: int = 0
    clock: str = "virtual"
    strict: bool = False
    spread_io: bool = False
    step_overhead: Fraction = Fraction(0)
    io_capacity: int | None = None
    # Real mode only: wall seconds per virtual millisecond, relative to 1 ms.
    time_scale: float = 0.01
    max_attempts: int = 2

    def __post_init__(self) -> None:
        self.strategy = self.strategy.upper()
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy}; choose from {', '.join(STRATEGIES)}")
        if self.processors < 1:
            raise ValueError("processors must be >= 1")
        if self.clock not in ("virtual", "real"):
            raise ValueError("clock must be 'virtual' or 'real'")
        if self.max_attempts < 0:
            raise ValueError("max_attempts must be >= 0")
        self.step_overhead = Fraction(self.step_overhead)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "processors": self.processors,
            "seed": self.seed,
            "clock": self.clock,
            "strict": self.strict,
            "spread_io": self.spread_io,
            "step_overhead": float(self.step_overhead) if self.step_overhead.denominator != 1 else int(self.step_overhead),
            "io_capacity": self.io_capacity,
            "max_attempts": self.max_attempts,
        }


def result_text(value: Any) -> str:
    return "result=" + json.dumps(value, sort_keys=True, ensure_ascii=False)


class Session:
    """Mutable state of one orchestration: graph, results, trace and clock."""

    def __init__(
        self,
        graph: RelationGraph,
        manifest: ToolManifest,
        options: RunOptions | None = None,
        trace: TraceLog | None = None,
        executor: SyntheticExecutor | None = None,
    ):
        self.graph = graph
        self.manifest = manifest
        self.options = options or RunOptions()
        self.trace = trace if trace is not None else TraceLog()
        self.executor = executor or SyntheticExecutor(manifest, self.options.seed)
        self.results: dict[CallId, Any] = {}
        self.completed: set[CallId] = set()
        self.failed: dict[CallId, Outcome] = {}
        self.rng = random.Random(self.options.seed)
        self.clock = VirtualClock()
        self._t0 = time.perf_counter()

    @property
    def virtual(self) -> bool:
        return self.options.clock == "virtual"

    def now(self) -> Fraction | float:
        if self.virtual:
            return self.clock.now
        elapsed_ms = (time.perf_counter() - self._t0) * 1000.0
        return round(elapsed_ms / self.options.time_scale, 3)

    def emit(self, event: Event, call: object = None, processor: str | None = None, detail: str = "") -> None:
        self.trace.emit(self.now(), event, call, processor, detail)

    def _dispatch_config(self) -> DispatchConfig:
        io_capacity = self.options.io_capacity or self.manifest.io_capacity
        return DispatchConfig(
            processors=self.options.processors,
            io_capacity=io_capacity,
            seed=self.options.seed,
            spread_io=self.options.spread_io,
            step_overhead=self.options.step_overhead,
            rng=self.rng,
        )

    def runnable(self, targets: Iterable[CallId]) -> set[CallId]:
        """Drop targets whose inputs can be neither reused nor recomputed here."""
        keep = set(targets)
        changed = True
        while changed:
            changed = False
            for cid in list(keep):
                if any(p not in keep and p not in self.completed for p in self.graph.preds(cid)):
                    keep.discard(cid)
                    changed = True
        return keep

    def run_phase(self, targets: Iterable[CallId]) -> PhaseOutcome:
        """Execute ``targets`` (and nothing else) until done or the first failure drains."""
        targets = set(targets)
        for cid in targets:
            self.completed.discard(cid)
            self.results.pop(cid, None)
        dispatcher = STRATEGIES[self.options.strategy](self.graph, targets, self._dispatch_config())
        scheduler = Scheduler(
            self.graph,
            targets,
            completed=self.completed,
            strict=self.options.strict,
            on_release=self._scheduled,
        )
        runtime: VirtualRuntime | RealRuntime
        if self.virtual:
            runtime = VirtualRuntime(self, dispatcher, scheduler)
        else:
            runtime = RealRuntime(self, dispatcher, scheduler)
        outcome = runtime.run()
        self.completed.update(outcome.completed)
        for cid in outcome.completed:
            self.failed.pop(cid, None)
        self.failed.update(outcome.failures)
        return outcome

    def _scheduled(self, batch: Batch) -> None:
        for cid in batch:
            self.emit(Event.SCHEDULED, cid, None, f"rank={self.graph.rank[cid]}")

    def _dispatch_detail(self, job: Job) -> str:
        if job.proc == "io-pool":
            return "async"
        return "exclusive" if job.exclusive else "shared"

    def _finish(self, outcome: Outcome, proc: str) -> None:
        if outcome.ok:
            self.results[outcome.call] = outcome.value
            self.emit(Event.FINISHED, outcome.call, proc, result_text(outcome.value))
        else:
            self.emit(Event.FAILED, outcome.call, proc, outcome.error)


class VirtualRuntime:
    def __init__(self, session: Session, dispatcher: Dispatcher, scheduler: Scheduler):
        self.session = session
        self.clock = session.clock
        self.dispatcher = dispatcher
        self.scheduler = scheduler

    def now(self) -> Fraction:
        return self.clock.now

    def wait_until(self, ready: Callable[[], bool]) -> None:
        self.clock.run_until(ready)

    def wait_any(self) -> None:
        self.clock.step()

    def report(self, done: list[CallId]) -> None:
        for batch in self.scheduler.on_completed(done):
            self.dispatcher.receive(batch)

    def pause_scheduler(self) -> None:
        pass

    def launch(self, job: Job, dispatcher: Dispatcher) -> None:
        s = self.session
        dispatcher.on_launch(job)
        t = self.clock.now + job.delay
        for seg in job.segments:
            outcomes = []
            for cid in seg:
                node = s.graph[cid]
                out = s.executor.execute(node.call, s.results)
                s.emit(Event.DISPATCHED, cid, job.proc, s._dispatch_detail(job))
                self.clock.schedule(t, lambda c=cid, k=node.kind.value: s.emit(Event.STARTED, c, job.proc, k))
                t += out.duration
                outcomes.append(out)
            for out in outcomes:
                self.clock.schedule(t, lambda o=out: self._done(o, job))
        self.clock.schedule(t, lambda: dispatcher.on_job_done(job))

    def _done(self, outcome: Outcome, job: Job) -> None:
        self.session._finish(outcome, job.proc)
        self.dispatcher.on_call_done(outcome, self.clock.now, self)

    def run(self) -> PhaseOutcome:
        first = self.scheduler.start()
        if first:
            self.dispatcher.receive(first)
        return self.dispatcher.run(self)


class RealRuntime:
    """Scheduler thread, listener thread and tool workers around one condition."""

    POLL = 0.05

    def __init__(self, session: Session, dispatcher: Dispatcher, scheduler: Scheduler):
        self.session = session
        self.dispatcher = dispatcher
        self.scheduler = scheduler
        self.cond = threading.Condition()
        self.to_coord = Channel("sched->coord")
        self.from_coord = Channel("coord->sched")
        self.error: BaseException | None = None
        self._received = 0
        cfg = dispatcher.config
        self.cpu_workers = ThreadPoolExecutor(max_workers=cfg.processors, thread_name_prefix="proc")
        self.io_workers = ThreadPoolExecutor(
            max_workers=cfg.io_capacity + len(session.graph), thread_name_prefix="io"
        )
        self._sched_thread = threading.Thread(target=self._scheduler_body, name="scheduler", daemon=True)
        self._listener = threading.Thread(target=self._listen, name="listener", daemon=True)

    def now(self) -> float:
        return float(self.session.now())

    def _check(self) -> None:
        if self.error is not None:
            raise OrchestrationError(f"scheduler failed: {self.error}") from self.error

    def wait_until(self, ready: Callable[[], bool]) -> None:
        while not ready():
            self._check()
            self.cond.wait(self.POLL)

    def wait_any(self) -> None:
        self._check()
        d = self.dispatcher
        quiet = (
            not d.jobs_in_flight
            and not d._has_work()
            and not self._sched_thread.is_alive()
            and self._received == self.to_coord.sent
        )
        if quiet and not d.finished:
            raise InternalDeadlock("scheduler has stopped and nothing is running")
        self.cond.wait(self.POLL)

    def report(self, done: list[CallId]) -> None:
        self.from_coord.send(list(done))

    def pause_scheduler(self) -> None:
        try:
            self.from_coord.send(None)
        except ChannelClosed:
            pass

    def launch(self, job: Job, dispatcher: Dispatcher) -> None:
        s = self.session
        dispatcher.on_launch(job)
        planned = []
        for seg in job.segments:
            outs = []
            for cid in seg:
                outs.append(s.executor.execute(s.graph[cid].call, s.results))
                s.emit(Event.DISPATCHED, cid, job.proc, s._dispatch_detail(job))
            planned.append(outs)
        pool = self.cpu_workers if job.exclusive else self.io_workers
        pool.submit(self._work, job, planned)

    def _work(self, job: Job, planned: list[list[Outcome]]) -> None:
        s = self.session
        scale = s.options.time_scale
        try:
            if job.delay:
                time.sleep(float(job.delay) * scale / 1000.0)
            for outs in planned:
                for out in outs:
                    node = s.graph[out.call]
                    s.emit(Event.STARTED, out.call, job.proc, node.kind.value)
                    occupy(node.kind, float(out.duration), scale)
                with self.cond:
                    for out in outs:
                        s._finish(out, job.proc)
                        self.dispatcher.on_call_done(out, s.now(), self)
                    self.cond.notify_all()
        except BaseException as exc:  # keep the coordinator from waiting forever
            self.error = exc
        finally:
            with self.cond:
                self.dispatcher.on_job_done(job)
                self.cond.notify_all()

    def _scheduler_body(self) -> None:
        try:
            run_scheduler(self.scheduler, self.to_coord, self.from_coord)
        except ChannelClosed:
            pass
        except BaseException as exc:
            self.error = exc
        with self.cond:
            self.cond.notify_all()

    def _listen(self) -> None:
        while True:
            try:
                batch = self.to_coord.recv()
            except ChannelClosed:
                return
            with self.cond:
                self.dispatcher.receive(batch)
                self._received += 1
                self.cond.notify_all()

    def run(self) -> PhaseOutcome:
        self._listener.start()
        self._sched_thread.start()
        try:
            with self.cond:
                return self.dispatcher.run(self)
        finally:
            self.from_coord.close()
            self.to_coord.close()
            self._sched_thread.join()
            self._listener.join()
            self.cpu_workers.shutdown(wait=True)
            self.io_workers.shutdown(wait=True)
