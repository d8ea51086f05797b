"""Dependency-driven release of call batches to the coordinator."""

from __future__ import annotations

import queue
from collections.abc import Callable, Collection, Iterable
from typing import Any

from parcall.callseq import CallId
from parcall.relation import RelationGraph

Batch = tuple[CallId, ...]


class ChannelClosed(RuntimeError):
    pass


_CLOSED = object()


class Channel:
    """Unbounded FIFO between the scheduler and coordinator threads."""

    def __init__(self, name: str = ""):
        self.name = name
        self._q: queue.Queue[Any] = queue.Queue()
        self._closed = False
        self.sent = 0

    def send(self, item: Any) -> None:
        if self._closed:
            raise ChannelClosed(f"channel {self.name} is closed")
        self.sent += 1
        self._q.put(item)

    def recv(self, timeout: float | None = None) -> Any:
        try:
            item = self._q.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"nothing on channel {self.name}") from None
        if item is _CLOSED:
            self._q.put(_CLOSED)  # wake any other reader too
            raise ChannelClosed(f"channel {self.name} closed by peer")
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._q.put(_CLOSED)


class Scheduler:
    """Release calls once every data predecessor has completed.

    ``targets`` limits the run to a subset of the graph; calls in
    ``completed`` count as already satisfied. A target whose predecessor is
    neither completed nor a target is never released, so callers should
    close the target set under predecessors first.

    With ``strict`` the release rule is the literal rank-successor rule: when
    a call completes, every successor exactly one rank above it is released,
    whether or not its other inputs are ready.
    """

    def __init__(
        self,
        graph: RelationGraph,
        targets: Iterable[CallId] | None = None,
        completed: Collection[CallId] = (),
        strict: bool = False,
        on_release: Callable[[Batch], None] | None = None,
    ):
        self.graph = graph
        self.targets = set(graph.ids if targets is None else targets)
        self.strict = strict
        self.on_release = on_release
        self.sent: set[CallId] = set()
        done = set(completed)
        self._remaining = {
            c: sum(1 for p in graph.preds(c) if p not in done) for c in self.targets
        }

    @property
    def finished(self) -> bool:
        return len(self.sent) == len(self.targets)

    def _emit(self, calls: Iterable[CallId]) -> Batch | None:
        batch = tuple(sorted(calls, key=self.graph.order_key))
        if not batch:
            return None
        self.sent.update(batch)
        if self.on_release:
            self.on_release(batch)
        return batch

    def start(self) -> Batch | None:
        # For a full run these are exactly the rank-1 calls.
        return self._emit(c for c, n in self._remaining.items() if n == 0)

    def on_completed(self, done: Iterable[CallId]) -> list[Batch]:
        """Feed completions in the order they happened; one batch per completion."""
        batches = []
        for cid in done:
            released = []
            for nxt in self.graph.succs(cid):
                if nxt not in self.targets or nxt in self.sent:
                    continue
                self._remaining[nxt] -= 1
                if self.strict:
                    if self.graph.rank[nxt] == self.graph.rank[cid] + 1:
                        released.append(nxt)
                elif self._remaining[nxt] == 0:
                    released.append(nxt)
            batch = self._emit(released)
            if batch:
                batches.append(batch)
        return batches


def run_scheduler(scheduler: Scheduler, to_coord: Channel, from_coord: Channel) -> None:
    """Thread body: push batches, wait for completion reports, repeat until all are sent.

    Completion reports are lists of call IDs; ``None`` pauses the scheduler
    for good (the coordinator is draining after a failure).
    """
    first = scheduler.start()
    if first:
        to_coord.send(first)
    while not scheduler.finished:
        done = from_coord.recv()
        if done is None:
            return
        for batch in scheduler.on_completed(done):
            to_coord.send(batch)
