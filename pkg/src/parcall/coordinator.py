"""Mapping released batches onto processors.

A dispatcher owns the pending queue, the processor pool and the async I/O
pool. It never blocks on its own: waiting, launching and completion
reporting go through a runtime object, which is either the virtual clock
or real threads. The three strategies share one main loop and differ only
in what they do with the queue when a processor is free.
"""

from __future__ import annotations

import random
from collections import deque
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Protocol

from parcall.callseq import CallId
from parcall.executor import Outcome
from parcall.manifest import Kind, Mode
from parcall.relation import RelationGraph
from parcall.scheduler import Batch

IO_POOL = "io-pool"


class InternalDeadlock(RuntimeError):
    """Work remains but nothing is running and nothing can start."""


@dataclass
class Job:
    proc: str
    segments: list[list[CallId]]
    exclusive: bool
    delay: Fraction = Fraction(0)


class Runtime(Protocol):
    def now(self) -> Fraction | float: ...

    def wait_until(self, ready: Callable[[], bool]) -> None: ...

    def wait_any(self) -> None: ...

    def launch(self, job: Job, dispatcher: Dispatcher) -> None: ...

    def report(self, done: list[CallId]) -> None: ...

    def pause_scheduler(self) -> None: ...


class ProcessorPool:
    def __init__(self, size: int):
        if size < 1:
            raise ValueError("need at least one processor")
        self.ids = [f"p{i}" for i in range(1, size + 1)]
        self.busy: dict[str, Job | None] = {p: None for p in self.ids}
        # Every call currently placed on a processor, exclusive or not.
        self.hosted: dict[str, set[CallId]] = {p: set() for p in self.ids}
        self.log: list[tuple[CallId, Any, str]] = []

    @property
    def size(self) -> int:
        return len(self.ids)

    def idle(self) -> list[str]:
        return [p for p in self.ids if self.busy[p] is None]

    def occupy(self, proc: str, job: Job) -> None:
        assert self.busy[proc] is None, f"{proc} is already busy"
        self.busy[proc] = job

    def release(self, proc: str) -> None:
        self.busy[proc] = None


def spare_procs(pool: ProcessorPool, runtime: Runtime | None = None) -> set[str]:
    """All idle processors, waiting first (through ``runtime``) until there is one."""
    if runtime is not None:
        runtime.wait_until(lambda: bool(pool.idle()))
    return set(pool.idle())


class AsyncIoPool:
    def __init__(self, capacity: int = 64):
        if capacity < 1:
            raise ValueError("async I/O capacity must be positive")
        self.capacity = capacity
        self.in_flight: set[CallId] = set()
        self.backlog: deque[CallId] = deque()
        self.peak = 0

    def admit(self, cid: CallId) -> bool:
        """Take a slot for ``cid`` if one is free, else queue it."""
        if len(self.in_flight) < self.capacity:
            self.in_flight.add(cid)
            self.peak = max(self.peak, len(self.in_flight))
            return True
        self.backlog.append(cid)
        return False

    def finish(self, cid: CallId) -> CallId | None:
        """Free the slot of ``cid``; return the next backlogged call now admitted."""
        self.in_flight.discard(cid)
        if self.backlog and len(self.in_flight) < self.capacity:
            nxt = self.backlog.popleft()
            self.in_flight.add(nxt)
            return nxt
        return None


class PendingQueue:
    def __init__(self) -> None:
        self._q: deque[Batch] = deque()

    def push_back(self, batch: Batch) -> None:
        self._q.append(batch)

    def push_front(self, batch: Batch) -> None:
        self._q.appendleft(batch)

    def pop_front(self) -> Batch:
        return self._q.popleft()

    def take_all(self) -> list[Batch]:
        out = list(self._q)
        self._q.clear()
        return out

    def clear(self) -> None:
        self._q.clear()

    def __len__(self) -> int:
        return len(self._q)

    def __iter__(self) -> Iterator[Batch]:
        return iter(self._q)

    def __bool__(self) -> bool:
        return bool(self._q)


@dataclass
class DispatchConfig:
    processors: int = 1
    io_capacity: int = 64
    seed: int = 0
    spread_io: bool = False
    step_overhead: Fraction = Fraction(0)
    rng: random.Random | None = None


@dataclass
class PhaseOutcome:
    completed: list[CallId] = field(default_factory=list)
    failures: dict[CallId, Outcome] = field(default_factory=dict)
    outcomes: dict[CallId, Outcome] = field(default_factory=dict)


class Dispatcher:
    """Main loop shared by every strategy."""

    name = "base"

    def __init__(self, graph: RelationGraph, targets: Iterable[CallId], config: DispatchConfig):
        self.graph = graph
        self.targets = set(targets)
        self.config = config
        self.rng = config.rng or random.Random(config.seed)
        self.pool = ProcessorPool(self._pool_size())
        self.io_pool = AsyncIoPool(config.io_capacity)
        self.queue = PendingQueue()
        self.running: dict[CallId, str] = {}
        self.jobs_in_flight = 0
        self.draining = False
        self.result = PhaseOutcome()
        self._unreported: list[tuple[Any, int, CallId]] = []
        self._io_rr = 0

    def _pool_size(self) -> int:
        return self.config.processors

    # -- state changes driven by the runtime --------------------------------

    def receive(self, batch: Batch) -> None:
        if not self.draining:
            self.queue.push_back(batch)

    def on_launch(self, job: Job) -> None:
        self.jobs_in_flight += 1
        if job.exclusive and job.proc != IO_POOL:
            self.pool.occupy(job.proc, job)
        for seg in job.segments:
            for cid in seg:
                self.running[cid] = job.proc
                if job.proc in self.pool.hosted:
                    self.pool.hosted[job.proc].add(cid)

    def on_call_done(self, outcome: Outcome, t: Any, runtime: Runtime) -> None:
        cid = outcome.call
        proc = self.running.pop(cid)
        self.result.outcomes[cid] = outcome
        if proc in self.pool.hosted:
            self.pool.hosted[proc].discard(cid)
            self.pool.log.append((cid, t, proc))
        if outcome.ok:
            self.result.completed.append(cid)
            self._unreported.append((t, self.graph.order_key(cid), cid))
        else:
            self.result.failures[cid] = outcome
            self._drain(runtime)
        if proc == IO_POOL:
            nxt = self.io_pool.finish(cid)
            if nxt is not None and not self.draining:
                runtime.launch(Job(IO_POOL, [[nxt]], exclusive=False), self)

    def on_job_done(self, job: Job) -> None:
        self.jobs_in_flight -= 1
        if job.exclusive and job.proc != IO_POOL:
            self.pool.release(job.proc)

    def _drain(self, runtime: Runtime) -> None:
        if self.draining:
            return
        self.draining = True
        self.queue.clear()
        self.io_pool.backlog.clear()
        self._on_drain()
        runtime.pause_scheduler()

    def _on_drain(self) -> None:
        pass

    @property
    def finished(self) -> bool:
        if self.jobs_in_flight:
            return False
        if self.draining:
            return True
        return len(self.result.completed) == len(self.targets)

    # -- main loop -----------------------------------------------------------

    def _report(self, runtime: Runtime) -> None:
        if self.draining or not self._unreported:
            return
        self._unreported.sort()
        done = [cid for _, _, cid in self._unreported]
        self._unreported.clear()
        runtime.report(done)

    def _can_take(self) -> bool:
        return bool(self.pool.idle())

    def _has_work(self) -> bool:
        return bool(self.queue)

    def run(self, runtime: Runtime) -> PhaseOutcome:
        while not self.finished:
            runtime.wait_until(lambda: self._can_take() or self.finished)
            if self.finished:
                break
            self._report(runtime)
            if self.draining or not self._has_work():
                if self.finished:
                    break
                runtime.wait_any()
                continue
            self._take(runtime)
        return self.result

    def _take(self, runtime: Runtime) -> None:
        raise NotImplementedError

    # -- helpers -------------------------------------------------------------

    def _kind(self, cid: CallId) -> Kind:
        return self.graph[cid].kind

    def _is_nonblocking(self, cid: CallId) -> bool:
        node = self.graph[cid]
        return node.kind is Kind.INOUT and node.mode is Mode.NONBLOCK

    def _to_io_pool(self, cid: CallId, runtime: Runtime) -> None:
        if self.io_pool.admit(cid):
            runtime.launch(Job(IO_POOL, [[cid]], exclusive=False), self)


class Coordinator(Dispatcher):
    """Inout calls first, mutex calls on distinct processors, overflow pushed
    back to the front of the queue.

    Inout calls never hold a processor, so they are not made to wait for a
    spare one: whenever completions are reported, the inout calls of every
    queued batch start at once. Only exclusive calls wait for spares.
    """

    name = "COORDINATED"

    def _can_take(self) -> bool:
        if self.pool.idle():
            return True
        if self.draining:
            return False
        return bool(self._unreported) or any(self._inout_part(b) for b in self.queue)

    def _contended(self, cid: CallId, members: set[CallId]) -> bool:
        partners = self.graph.partners(cid)
        return any(p in members or p in self.running for p in partners)

    def _inout_part(self, batch: Batch) -> list[CallId]:
        members = set(batch)
        return [
            c for c in batch
            if self._kind(c) is Kind.INOUT and (self._is_nonblocking(c) or not self._contended(c, members))
        ]

    def _start_inout(self, calls: list[CallId], runtime: Runtime) -> None:
        spares = sorted(self.pool.idle(), key=self.pool.ids.index) or list(self.pool.ids)
        blocking = []
        for cid in calls:
            if self._is_nonblocking(cid):
                self._to_io_pool(cid, runtime)
            else:
                blocking.append(cid)
        if not blocking:
            return
        if self.config.spread_io:
            for cid in blocking:
                proc = spares[self._io_rr % len(spares)]
                self._io_rr += 1
                runtime.launch(Job(proc, [[cid]], exclusive=False), self)
        else:
            proc = self.rng.choice(spares)
            for cid in blocking:
                runtime.launch(Job(proc, [[cid]], exclusive=False), self)

    def _take(self, runtime: Runtime) -> None:
        rest = []
        for batch in self.queue.take_all():
            inout = self._inout_part(batch)
            if inout:
                self._start_inout(inout, runtime)
            left = tuple(c for c in batch if c not in inout)
            if left:
                rest.append(left)
        # Lower ranks first, then plan order: a batch released early may sit
        # deeper in the graph than one released later.
        rest.sort(key=lambda b: min((self.graph.rank[c], self.graph.order_key(c)) for c in b))
        for batch in rest:
            self.queue.push_back(batch)

        spares = sorted(self.pool.idle(), key=self.pool.ids.index)
        if not spares or not self.queue:
            return
        # What is left of the front batch: mutex calls and lone compute calls.
        batch = self.queue.pop_front()
        free = list(spares)
        remainder = []
        for cid in batch:
            partners = self.graph.partners(cid)
            spot = next((p for p in free if not (self.pool.hosted[p] & partners)), None)
            if spot is None:
                remainder.append(cid)
                continue
            free.remove(spot)
            runtime.launch(Job(spot, [[cid]], exclusive=True), self)
        if remainder:
            self.queue.push_front(tuple(remainder))


class DirectParallel(Dispatcher):
    """Single event-loop thread: every released call starts at once, but the
    compute calls of a batch share the thread and finish together."""

    name = "DIRECT_PARALLEL"

    def _pool_size(self) -> int:
        return 1

    def _take(self, runtime: Runtime) -> None:
        segments = []
        for batch in self.queue.take_all():
            seg = []
            for cid in batch:
                if self._is_nonblocking(cid):
                    self._to_io_pool(cid, runtime)
                elif self._kind(cid) is Kind.INOUT:
                    runtime.launch(Job("p1", [[cid]], exclusive=False), self)
                else:
                    seg.append(cid)
            if seg:
                segments.append(seg)
        if segments:
            runtime.launch(Job("p1", segments, exclusive=True), self)


class Sequential(Dispatcher):
    """One call at a time in plan order, like a step-by-step agent loop."""

    name = "SEQUENTIAL"

    def __init__(self, graph: RelationGraph, targets: Iterable[CallId], config: DispatchConfig):
        super().__init__(graph, targets, config)
        self.ready: set[CallId] = set()

    def _pool_size(self) -> int:
        return 1

    def receive(self, batch: Batch) -> None:
        if not self.draining:
            self.ready.update(batch)

    def _on_drain(self) -> None:
        self.ready.clear()

    def _has_work(self) -> bool:
        return bool(self.ready)

    def _take(self, runtime: Runtime) -> None:
        cid = min(self.ready, key=self.graph.order_key)
        self.ready.discard(cid)
        runtime.launch(Job("p1", [[cid]], exclusive=True, delay=self.config.step_overhead), self)


STRATEGIES: dict[str, type[Dispatcher]] = {
    cls.name: cls for cls in (Coordinator, DirectParallel, Sequential)
}
