"""Random plans and a matching synthetic tool registry for property tests."""

from __future__ import annotations

import random

from parcall.manifest import Duration, Kind, Mode, ToolManifest, ToolSpec

COMPUTE_TOOLS = ("analyze", "train", "render")
INOUT_TOOLS = ("search", "fetch", "self")
NONBLOCK_TOOLS = ("download",)


def synthetic_manifest(jitter: bool = False, io_capacity: int = 64) -> ToolManifest:
    """Tools used by generated plans. ``jitter`` draws durations from ranges."""
    compute = Duration(50, 150) if jitter else Duration.fixed(100)
    inout = Duration(2, 10) if jitter else Duration.fixed(5)
    tools = {}
    for name in COMPUTE_TOOLS:
        tools[name] = ToolSpec(name, Kind.COMPUTE, duration=compute)
    for name in INOUT_TOOLS:
        tools[name] = ToolSpec(name, Kind.INOUT, Mode.BLOCK, duration=inout)
    for name in NONBLOCK_TOOLS:
        tools[name] = ToolSpec(name, Kind.INOUT, Mode.NONBLOCK, duration=inout)
    return ToolManifest(tools, io_capacity=io_capacity)


def generate_random_plan(seed: int, n_calls: int, max_rank: int = 4, compute_fraction: float = 0.5) -> str:
    """Plan text whose call ranks never exceed ``max_rank``.

    Calls are laid out level by level. A call on level L uses at least one
    call from level L-1 and possibly some from lower levels, so its rank is
    exactly L.
    """
    if n_calls < 1:
        raise ValueError("n_calls must be >= 1")
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    rng = random.Random(seed)
    if n_calls == 1:
        return 's1: self(question="q0")\n'

    levels = [1]
    for _ in range(n_calls - 1):
        step = 1 if levels[-1] < max_rank and rng.random() < 0.35 else 0
        levels.append(levels[-1] + step)
    by_level: dict[int, list[int]] = {}
    lines = []
    for i, level in enumerate(levels, start=1):
        if rng.random() < compute_fraction:
            fn = rng.choice(COMPUTE_TOOLS)
        else:
            fn = rng.choice(INOUT_TOOLS + NONBLOCK_TOOLS)
        args = []
        if level > 1:
            uses = {rng.choice(by_level[level - 1])}
            lower = [c for lv in range(1, level) for c in by_level[lv]]
            for c in rng.sample(lower, k=min(len(lower), rng.randint(0, 2))):
                uses.add(c)
            refs = sorted(uses)
            style = rng.randrange(3)
            if style == 0:
                args += [f"s{c}" for c in refs]
            elif style == 1:
                args.append("inputs=[" + ", ".join(f"s{c}" for c in refs) + "]")
            else:
                args.append('text="' + " and ".join("{s%d}" % c for c in refs) + '"')
        else:
            args.append(f'query="item {i}"')
        if rng.random() < 0.3:
            args.append(f"k={rng.randint(1, 20)}")
        lines.append(f"s{i}: {fn}({', '.join(args)})")
        by_level.setdefault(level, []).append(i)
    return "\n".join(lines) + "\n"
