"""Function-call relation graph: def-use edges, ranks and mutual exclusion."""

from __future__ import annotations

import enum
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass, field, replace

from parcall.callseq import CallId, CallSequence, FunctionCall, validate_against_registry
from parcall.manifest import Kind, Mode, ResourceProfile, ToolManifest

Edge = tuple[CallId, CallId]
Pair = frozenset  # frozenset[CallId] of size 2


class CycleError(ValueError):
    pass


class MutexModel(enum.Enum):
    SIMPLIFIED = "simplified"
    GENERAL = "general"


@dataclass(frozen=True)
class CapacityVector:
    """Per-processor capacity used by the resource-contention test."""

    cpu: float = 1.0
    mem: float = 1.0
    gpu_mem: float = 1.0
    io: float = 64.0

    def __post_init__(self) -> None:
        for name, value in zip(("cpu", "mem", "gpu_mem", "io"), self.as_tuple()):
            if not value > 0:
                raise ValueError(f"capacity {name} must be > 0, got {value}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cpu, self.mem, self.gpu_mem, self.io)


@dataclass(frozen=True)
class Node:
    call: FunctionCall
    kind: Kind
    profile: ResourceProfile
    mode: Mode | None = None

    @property
    def id(self) -> CallId:
        return self.call.id

    @property
    def is_compute(self) -> bool:
        return self.kind is Kind.COMPUTE


def build_data_edges(seq: CallSequence | Iterable[FunctionCall]) -> set[Edge]:
    """Edge (a, b) for every call b whose arguments mention a's ID."""
    edges: set[Edge] = set()
    for call in seq:
        for used in call.refs():
            edges.add((used, call.id))
    return edges


def assign_ranks(calls: Iterable[CallId], edges: Iterable[Edge]) -> dict[CallId, int]:
    """Kahn-style rank assignment with a FIFO worklist.

    Sources get rank 1. A call is ranked when its last incoming edge is
    consumed, at one more than the rank of the call that consumed it. FIFO
    order pops calls in non-decreasing rank, so the result equals one plus
    the longest path from any source.
    """
    order = list(calls)
    position = {c: i for i, c in enumerate(order)}
    succs: dict[CallId, list[CallId]] = {c: [] for c in order}
    indeg: dict[CallId, int] = {c: 0 for c in order}
    for a, b in set(edges):
        if a not in position or b not in position:
            raise KeyError(f"edge {a}->{b} mentions an unknown call")
        succs[a].append(b)
        indeg[b] += 1
    for c in order:
        succs[c].sort(key=position.__getitem__)

    rank: dict[CallId, int] = {}
    queue = deque(c for c in order if indeg[c] == 0)
    for c in queue:
        rank[c] = 1
    while queue:
        cur = queue.popleft()
        for nxt in succs[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                rank[nxt] = rank[cur] + 1
                queue.append(nxt)
    if len(rank) != len(order):
        stuck = sorted(c for c in order if c not in rank)
        raise CycleError("data edges form a cycle through " + ", ".join(map(str, stuck)))
    return rank


def mutex_general(a: ResourceProfile, b: ResourceProfile, capacity: CapacityVector) -> bool:
    """True when some resource would be oversubscribed by running both."""
    return any(x + y > c for x, y, c in zip(a.as_tuple(), b.as_tuple(), capacity.as_tuple()))


def build_mutex_pairs(
    nodes: Iterable[Node],
    rank: dict[CallId, int],
    capacity: CapacityVector | None = None,
    model: MutexModel = MutexModel.SIMPLIFIED,
) -> set[Pair]:
    capacity = capacity or CapacityVector()
    by_rank: dict[int, list[Node]] = {}
    for node in nodes:
        by_rank.setdefault(rank[node.id], []).append(node)
    pairs: set[Pair] = set()
    for group in by_rank.values():
        if model is MutexModel.SIMPLIFIED:
            group = [n for n in group if n.is_compute]
        for i, a in enumerate(group):
            for b in group[i + 1 :]:
                if model is MutexModel.SIMPLIFIED or mutex_general(a.profile, b.profile, capacity):
                    pairs.add(frozenset((a.id, b.id)))
    return pairs


@dataclass(frozen=True)
class RelationGraph:
    nodes: dict[CallId, Node]
    data_edges: frozenset[Edge]
    mutex_pairs: frozenset[Pair]
    rank: dict[CallId, int]
    _preds: dict[CallId, tuple[CallId, ...]] = field(repr=False, compare=False, default_factory=dict)
    _succs: dict[CallId, tuple[CallId, ...]] = field(repr=False, compare=False, default_factory=dict)
    _partners: dict[CallId, frozenset[CallId]] = field(repr=False, compare=False, default_factory=dict)
    _pos: dict[CallId, int] = field(repr=False, compare=False, default_factory=dict)

    __hash__ = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        order = self._pos
        order.update({c: i for i, c in enumerate(self.nodes)})
        preds: dict[CallId, list[CallId]] = {c: [] for c in self.nodes}
        succs: dict[CallId, list[CallId]] = {c: [] for c in self.nodes}
        for a, b in self.data_edges:
            preds[b].append(a)
            succs[a].append(b)
        partners: dict[CallId, set[CallId]] = {c: set() for c in self.nodes}
        for pair in self.mutex_pairs:
            a, b = tuple(pair)
            partners[a].add(b)
            partners[b].add(a)
        self._preds.update({c: tuple(sorted(v, key=order.__getitem__)) for c, v in preds.items()})
        self._succs.update({c: tuple(sorted(v, key=order.__getitem__)) for c, v in succs.items()})
        self._partners.update({c: frozenset(v) for c, v in partners.items()})

    @property
    def ids(self) -> list[CallId]:
        return list(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, cid: CallId) -> Node:
        return self.nodes[cid]

    def preds(self, cid: CallId) -> tuple[CallId, ...]:
        return self._preds[cid]

    def succs(self, cid: CallId) -> tuple[CallId, ...]:
        return self._succs[cid]

    def partners(self, cid: CallId) -> frozenset[CallId]:
        return self._partners[cid]

    def descendants(self, roots: Iterable[CallId]) -> set[CallId]:
        seen: set[CallId] = set()
        stack = list(roots)
        while stack:
            for nxt in self._succs[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def order_key(self, cid: CallId) -> int:
        return self._pos[cid]

    def replace_node(self, cid: CallId, call: FunctionCall) -> RelationGraph:
        """Swap in a repaired call; edges, mutex pairs and ranks are kept."""
        nodes = dict(self.nodes)
        nodes[cid] = replace(nodes[cid], call=call)
        return RelationGraph(nodes, self.data_edges, self.mutex_pairs, dict(self.rank))

    def summary(self) -> dict:
        hist: dict[int, int] = {}
        for r in self.rank.values():
            hist[r] = hist.get(r, 0) + 1
        return {
            "calls": len(self.nodes),
            "data_edges": len(self.data_edges),
            "mutex_pairs": len(self.mutex_pairs),
            "rank_histogram": {str(k): hist[k] for k in sorted(hist)},
        }

    def to_dict(self) -> dict:
        pos = {c: i for i, c in enumerate(self.nodes)}
        return {
            "nodes": [
                {
                    "id": str(n.id),
                    "function": n.call.function,
                    "kind": n.kind.value,
                    "mode": n.mode.value if n.mode else None,
                    "rank": self.rank[n.id],
                    "profile": n.profile.as_dict(),
                }
                for n in self.nodes.values()
            ],
            "data_edges": [[str(a), str(b)] for a, b in sorted(self.data_edges, key=lambda e: (pos[e[0]], pos[e[1]]))],
            "mutex_pairs": sorted(
                ([str(x) for x in sorted(p, key=pos.__getitem__)] for p in self.mutex_pairs),
                key=lambda p: [pos[CallId.parse(x)] for x in p],
            ),
        }


def build_frg(
    seq: CallSequence,
    manifest: ToolManifest,
    capacity: CapacityVector | None = None,
    model: MutexModel = MutexModel.SIMPLIFIED,
) -> RelationGraph:
    """Build the graph in the order calls -> data edges -> ranks -> mutex pairs."""
    validate_against_registry(seq, manifest)
    nodes: dict[CallId, Node] = {}
    for call in seq:
        tool = manifest.tool(call.function)
        assert tool.profile is not None
        nodes[call.id] = Node(call, tool.kind, tool.profile, tool.mode)
    edges = build_data_edges(seq)
    rank = assign_ranks(nodes, edges)
    pairs = build_mutex_pairs(nodes.values(), rank, capacity, model)
    return RelationGraph(nodes, frozenset(edges), frozenset(pairs), rank)
