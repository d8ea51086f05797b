"""Planners turn queries into plan text and repair broken plans or calls.

``MockPlanner`` replays a scripted plan book and is what the tests and
the benchmarks use. ``HttpPlanner`` talks to a chat-completion endpoint.
"""

from __future__ import annotations

import enum
import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Protocol

from parcall.manifest import ToolManifest


class PlannerUnavailable(RuntimeError):
    pass


class NoPlanAvailable(LookupError):
    pass


class RequestKind(enum.Enum):
    TRANSLATE = "translate"
    REPAIR_COMPILE = "repair_compile"
    REPAIR_RUNTIME = "repair_runtime"


FewShot = tuple[str, str]


@dataclass(frozen=True)
class PlannerRequest:
    kind: RequestKind
    query: str
    manifest: ToolManifest
    few_shots: tuple[FewShot, ...] = ()
    error_context: str | None = None
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is not RequestKind.TRANSLATE and not self.error_context:
            raise ValueError("repair requests need an error context")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class PlannerResponse:
    # None means the planner declined to answer.
    plan_text: str | None
    token_counts: dict[str, int] = field(default_factory=lambda: {"input": 0, "output": 0})


def count_tokens(text: str | None) -> int:
    return len(text.split()) if text else 0


_INSTRUCTIONS = {
    RequestKind.TRANSLATE: (
        "Translate the query into a sequence of function calls, one per line, "
        "in the form `sN: function(arg=value, ...)`. Use sN to pass the result of an "
        "earlier call. Only use the functions listed below. Reply with the plan only."
    ),
    RequestKind.REPAIR_COMPILE: (
        "The function call sequence below failed to compile. Fix it and reply with "
        "the complete corrected sequence only."
    ),
    RequestKind.REPAIR_RUNTIME: (
        "A function call failed while running. Reply with one replacement line for the "
        "call shown, keeping its ID and the results it uses. You may change its arguments "
        "or pick another function of the same kind. Reply `null` to give up."
    ),
}


def render_prompt(req: PlannerRequest) -> str:
    parts = [_INSTRUCTIONS[req.kind], "", "Functions:", req.manifest.describe()]
    for query, plan in req.few_shots:
        parts += ["", f"Query: {query}", "Plan:", plan.rstrip()]
    parts += ["", f"Query: {req.query}"]
    if req.error_context:
        parts += ["", req.error_context.rstrip()]
    parts += ["Plan:" if req.kind is not RequestKind.REPAIR_RUNTIME else "Replacement:"]
    return "\n".join(parts)


class Planner(Protocol):
    tokens: dict[str, int]
    calls: int

    def translate(self, req: PlannerRequest) -> PlannerResponse: ...

    def repair(self, req: PlannerRequest) -> PlannerResponse: ...


class _Accounting:
    def __init__(self) -> None:
        self.tokens = {"input": 0, "output": 0}
        self.calls = 0

    def _account(self, prompt: str, text: str | None, counts: dict[str, int] | None = None) -> PlannerResponse:
        counts = counts or {"input": count_tokens(prompt), "output": count_tokens(text)}
        self.tokens["input"] += counts["input"]
        self.tokens["output"] += counts["output"]
        self.calls += 1
        return PlannerResponse(text, counts)


@dataclass
class BookEntry:
    query: str
    responses: list[str | None]
    kind: RequestKind | None = None
    match: str | None = None

    def serves(self, req: PlannerRequest) -> bool:
        if not req.query.startswith(self.query):
            return False
        if self.kind is not None:
            if self.kind is not req.kind:
                return False
        elif (req.kind is RequestKind.TRANSLATE) != (self.match is None):
            return False
        return self.match is None or self.match in (req.error_context or "")

    @classmethod
    def from_json(cls, raw: dict) -> BookEntry:
        responses = raw.get("responses")
        if not isinstance(responses, list) or not responses:
            raise ValueError(f"plan book entry for {raw.get('query')!r} needs a non-empty responses list")
        kind = RequestKind(raw["kind"]) if raw.get("kind") else None
        return cls(raw.get("query", ""), list(responses), kind, raw.get("match"))

    def to_json(self) -> dict:
        out: dict[str, Any] = {"query": self.query, "responses": self.responses}
        if self.kind:
            out["kind"] = self.kind.value
        if self.match is not None:
            out["match"] = self.match
        return out


class MockPlanner(_Accounting):
    """Scripted planner.

    Each book entry serves requests whose query starts with the entry's
    query. Translate requests go to entries without ``match``; repair
    requests go to entries whose ``match`` text occurs in the error
    context, unless ``kind`` says otherwise. Responses cycle per entry.
    """

    def __init__(self, book: list[BookEntry | dict] | None = None):
        super().__init__()
        self.book = [e if isinstance(e, BookEntry) else BookEntry.from_json(e) for e in book or []]
        self.counters = [0] * len(self.book)
        self.log: list[PlannerRequest] = []

    @classmethod
    def load(cls, path: str | Path) -> MockPlanner:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(raw["entries"] if isinstance(raw, dict) else raw)

    def state(self) -> dict:
        return {"counters": list(self.counters), "tokens": dict(self.tokens), "calls": self.calls}

    def _answer(self, req: PlannerRequest) -> PlannerResponse:
        self.log.append(req)
        for i, entry in enumerate(self.book):
            if entry.serves(req):
                text = entry.responses[self.counters[i] % len(entry.responses)]
                self.counters[i] += 1
                return self._account(render_prompt(req), text)
        raise NoPlanAvailable(f"no scripted {req.kind.value} answer for query {req.query!r}")

    def translate(self, req: PlannerRequest) -> PlannerResponse:
        if req.kind is not RequestKind.TRANSLATE:
            raise ValueError("translate() needs a TRANSLATE request")
        return self._answer(req)

    def repair(self, req: PlannerRequest) -> PlannerResponse:
        if req.kind is RequestKind.TRANSLATE:
            raise ValueError("repair() needs a repair request")
        return self._answer(req)


ENV_URL = "PARCALL_PLANNER_URL"
ENV_TOKEN = "PARCALL_PLANNER_TOKEN"
ENV_MODEL = "PARCALL_PLANNER_MODEL"
ENV_TIMEOUT = "PARCALL_PLANNER_TIMEOUT"

_FENCE = re.compile(r"^```[a-zA-Z]*\n(.*?)\n?```\s*$", re.S)


class HttpPlanner(_Accounting):
    """Minimal chat-completions client configured from the environment."""

    def __init__(self, url: str, model: str, token: str | None = None, timeout: float = 60.0):
        super().__init__()
        self.url = url
        self.model = model
        self.token = token
        self.timeout = timeout

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> HttpPlanner:
        env = dict(os.environ if env is None else env)
        if not env.get(ENV_URL):
            raise PlannerUnavailable(f"set {ENV_URL} to use the HTTP planner")
        return cls(
            env[ENV_URL],
            env.get(ENV_MODEL, "gpt-4o-mini"),
            env.get(ENV_TOKEN),
            float(env.get(ENV_TIMEOUT, "60")),
        )

    def _post(self, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        request = urllib.request.Request(self.url, json.dumps(body).encode(), headers, method="POST")
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise PlannerUnavailable(f"planner endpoint {self.url} failed: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise PlannerUnavailable(f"planner endpoint returned invalid JSON: {exc}") from exc

    def _answer(self, req: PlannerRequest) -> PlannerResponse:
        prompt = render_prompt(req)
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": req.temperature,
        }
        raw = self._post(body)
        try:
            text = raw["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise PlannerUnavailable(f"unexpected planner response shape: {str(raw)[:200]}") from None
        text = text.strip()
        fenced = _FENCE.match(text)
        if fenced:
            text = fenced.group(1).strip()
        if text.lower() == "null":
            text = None
        usage = raw.get("usage") or {}
        counts = None
        if "prompt_tokens" in usage:
            # The endpoint's own counts beat the whitespace estimate.
            counts = {"input": int(usage["prompt_tokens"]), "output": int(usage.get("completion_tokens", 0))}
        return self._account(prompt, text, counts)

    def translate(self, req: PlannerRequest) -> PlannerResponse:
        return self._answer(req)

    def repair(self, req: PlannerRequest) -> PlannerResponse:
        return self._answer(req)


def parse_few_shots(text: str) -> tuple[FewShot, ...]:
    """Read examples written as ``Query: ...`` followed by ``Plan:`` and plan lines,
    separated by lines of three dashes."""
    shots = []
    for block in re.split(r"^---\s*$", text, flags=re.M):
        block = block.strip()
        if not block:
            continue
        m = re.match(r"Query:\s*(.*?)\s*\nPlan:\s*\n(.*)", block, re.S)
        if not m:
            raise ValueError(f"few-shot block must be 'Query: ...' then 'Plan:'; got {block[:60]!r}")
        shots.append((m.group(1), m.group(2).strip() + "\n"))
    return tuple(shots)


def load_few_shots(path: str | Path | None = None) -> tuple[FewShot, ...]:
    if path is None:
        text = resources.files("parcall").joinpath("fewshots.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_few_shots(text)
