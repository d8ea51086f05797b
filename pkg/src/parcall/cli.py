"""Command-line driver.

Exit codes: 0 success, 1 the run itself failed, 2 bad usage, bad input
files or a plan that does not compile.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from parcall.callseq import CompileError, validate_against_registry
from parcall.config import ConfigError, RunConfig
from parcall.corpus import case_names, load_case
from parcall.manifest import ManifestError
from parcall.planner import NoPlanAvailable, PlannerUnavailable
from parcall.recovery import FatalError, compile_plan, translate_and_compile
from parcall.relation import RelationGraph, build_frg
from parcall.simlab import STRATEGY_ORDER, report_from_trace, run, scaling_sweep
from parcall.trace import Event, load_trace

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _plural(n: int, word: str) -> str:
    return f"{n} {word}" if n == 1 else f"{n} {word}s"


def parse_procs(text: str) -> list[int]:
    """``"1..8"``, ``"1,2,4"`` or ``"3"``."""
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
            procs = list(range(lo, hi + 1))
        else:
            procs = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad processor list {text!r}; use a..b or a,b,c") from None
    if not procs or min(procs) < 1:
        raise UsageError(f"bad processor list {text!r}")
    return procs


def resolve_config(target: str, args: argparse.Namespace) -> RunConfig:
    """A run config file, a plan file, or the name of a checked-in case."""
    path = Path(target)
    if path.is_file():
        if path.suffix == ".json":
            config = RunConfig.load(path)
        else:
            sibling = path.parent / "manifest.json"
            config = RunConfig(plan_path=path, manifest_path=sibling if sibling.is_file() else None)
    elif target in case_names():
        config = load_case(target).config
    else:
        raise UsageError(f"{target}: no such file or benchmark case")

    changes = {}
    if args.manifest:
        changes["manifest_path"] = Path(args.manifest)
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.clock:
        changes["clock"] = args.clock
    if args.planner:
        changes["planner"] = args.planner
    if getattr(args, "strategy", None):
        changes["strategy"] = args.strategy
    return replace(config, **changes) if changes else config


def _graph(config: RunConfig) -> tuple[RelationGraph, dict[str, int]]:
    """Compile the configured plan, or translate the configured query."""
    manifest = config.manifest()
    if config.plan_path is not None:
        seq = compile_plan(config.plan_text(), manifest)
        return build_frg(seq, manifest), {"input": 0, "output": 0}
    if not config.query:
        raise UsageError("the run config needs a plan_path or a query")
    planner = config.make_planner()
    before = dict(planner.tokens)
    seq = translate_and_compile(config.query, planner, manifest, config.few_shots())
    validate_against_registry(seq, manifest)
    spent = {k: planner.tokens[k] - before[k] for k in before}
    return build_frg(seq, manifest), spent


def _emit(text: str, args: argparse.Namespace) -> None:
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _run_options(args: argparse.Namespace) -> dict:
    return {"strict": args.strict_alg2, "spread_io": args.spread_io, "step_overhead": args.step_overhead}


def cmd_check(args: argparse.Namespace) -> int:
    config = resolve_config(args.target, args)
    graph, _ = _graph(config)
    s = graph.summary()
    if args.json:
        _emit(json.dumps(s, sort_keys=True), args)
    else:
        _emit(", ".join([
            _plural(s["calls"], "call"), _plural(s["data_edges"], "data edge"), _plural(s["mutex_pairs"], "mutex pair"),
        ]), args)
    return EXIT_OK


def cmd_graph(args: argparse.Namespace) -> int:
    config = resolve_config(args.target, args)
    graph, _ = _graph(config)
    if args.json:
        _emit(json.dumps(graph.to_dict(), indent=2), args)
        return EXIT_OK
    rows = []
    for node in graph.nodes.values():
        kind = node.kind.value + (f"/{node.mode.value}" if node.mode else "")
        uses = ", ".join(str(p) for p in sorted(graph.preds(node.id), key=graph.order_key)) or "-"
        rows.append(f"{str(node.id):<5} rank {graph.rank[node.id]}  {node.call.function:<12} {kind:<14} uses {uses}")
    pairs = graph.to_dict()["mutex_pairs"]
    rows.append("mutex: " + (", ".join("{" + ", ".join(p) + "}" for p in pairs) if pairs else "none"))
    _emit("\n".join(rows), args)
    return EXIT_OK


def _single_run(args: argparse.Namespace, config: RunConfig, narrate: bool = False) -> int:
    graph, spent = _graph(config)
    planner = config.make_planner()
    processors = args.procs if args.procs is not None else config.processors
    report, result = run(
        graph, config.manifest(), config.strategy, processors, config.seed, config.clock,
        planner=planner, query=config.query, few_shots=config.few_shots(), name=config.name,
        planner_tokens=spent, **_run_options(args),
    )
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            result.trace.write(fh)
    if args.json:
        _emit(report.dumps(), args)
    else:
        text = report.render()
        if narrate:
            story = []
            for ev in result.trace.events:
                if ev.event in (Event.FAILED, Event.RECOVERED):
                    story.append(f"t={ev.t} {ev.event.value:<9} {ev.call}: {ev.detail}")
            for rnd in result.rounds:
                for cid in rnd.state.declined:
                    story.append(f"planner declined to replace {cid}; it was re-run unchanged")
                for note in rnd.state.rejected:
                    story.append(f"repair not applied: {note}")
            text = "\n".join(story or ["no faults were raised"]) + "\n\n" + text
        _emit(text, args)
    if not result.ok:
        print(f"run failed: {result.error}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    return _single_run(args, resolve_config(args.target, args))


def cmd_recover_demo(args: argparse.Namespace) -> int:
    return _single_run(args, resolve_config(args.target, args), narrate=True)


def cmd_sweep(args: argparse.Namespace) -> int:
    config = resolve_config(args.target, args)
    graph, _ = _graph(config)
    procs = parse_procs(args.procs) if args.procs else list(range(1, config.processors + 1))
    strategies = [args.strategy.upper()] if args.strategy else list(STRATEGY_ORDER)
    table = scaling_sweep(
        graph, config.manifest(), procs, config.seed, strategies, config.name,
        clock=config.clock, **_run_options(args),
    )
    _emit(json.dumps(table.to_json(), indent=2) if args.json else table.render(), args)
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    if args.target == "-":
        events = load_trace(sys.stdin.read().split("\n"))
    else:
        if not Path(args.target).is_file():
            raise UsageError(f"{args.target}: no such trace file")
        events = load_trace(args.target)
    report = report_from_trace(events)
    _emit(report.dumps() if args.json else report.render(), args)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--out", metavar="PATH", help="write output here instead of stdout")

    running = argparse.ArgumentParser(add_help=False)
    running.add_argument("--manifest", metavar="PATH", help="tool manifest (overrides the config)")
    running.add_argument("--seed", type=int)
    running.add_argument("--clock", choices=("virtual", "real"))
    running.add_argument("--planner", choices=("mock", "http"))
    running.add_argument("--strict-alg2", action="store_true",
                         help="release successors by rank order as well as readiness")
    running.add_argument("--spread-io", action="store_true", help="round-robin inout calls over processors")
    running.add_argument("--step-overhead", type=float, default=0.0, metavar="MS",
                         help="per-step planner delay for SEQUENTIAL")

    strategy = argparse.ArgumentParser(add_help=False)
    strategy.add_argument("--strategy", type=str.upper, choices=STRATEGY_ORDER)

    parser = argparse.ArgumentParser(prog="parcall", description="Parallel function-call orchestration lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common, running], help="compile a plan and summarize its graph")
    p.add_argument("target", help="plan file, run config or case name")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("graph", parents=[common, running], help="show nodes, ranks, edges and mutex pairs")
    p.add_argument("target")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("run", parents=[common, running, strategy], help="execute a plan once")
    p.add_argument("target")
    p.add_argument("--procs", type=int)
    p.add_argument("--trace", metavar="PATH", help="also write the event trace")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common, running, strategy], help="makespans over processor counts")
    p.add_argument("target")
    p.add_argument("--procs", metavar="A..B", help="processor counts, e.g. 1..8 or 1,2,4")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("recover-demo", parents=[common, running, strategy],
                       help="run a case with injected faults and narrate the recovery")
    p.add_argument("target", nargs="?", default="parallelqa83")
    p.add_argument("--procs", type=int)
    p.add_argument("--trace", metavar="PATH")
    p.set_defaults(func=cmd_recover_demo)

    p = sub.add_parser("replay", parents=[common], help="rebuild a report from a trace file ('-' for stdin)")
    p.add_argument("target")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CompileError as exc:
        print(f"compile error: {exc.render()}", file=sys.stderr)
    except FatalError as exc:
        detail = f" ({exc.last_error.render()})" if exc.last_error else ""
        print(f"{exc}{detail} after {exc.attempts} attempts", file=sys.stderr)
    except (UsageError, ConfigError, ManifestError, PlannerUnavailable, NoPlanAvailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
