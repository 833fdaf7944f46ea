"""Command line entry point: ``rolemesh run`` and ``rolemesh generate``."""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .errors import RolemeshError
from .harness.runner import emit_report, run
from .harness.scenario import Toggles, load_scenario

TOGGLE_FLAGS = ("no_monitor", "no_gap_narrow", "no_memory", "no_self_reflection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rolemesh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario file or a directory of them")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", type=Path, help="scenario file")
    src.add_argument("--suite", type=Path, help="directory of scenario files, run concurrently")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", type=Path, help="write the report here instead of stdout")
    p.add_argument("--format", choices=("text", "structured"), default="text")
    for flag in TOGGLE_FLAGS:
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")
    p.add_argument("--backend", choices=("scripted", "remote"), default="scripted")
    p.add_argument("--endpoint", help="remote backend URL (default: $ROLEMESH_ENDPOINT)")
    p.add_argument("--jobs", type=int, default=4, help="worker threads for --suite")

    g = sub.add_parser("generate", help="author a scenario suite with recorded scripts")
    g.add_argument("--kind", choices=("pipeline", "team", "clean"), required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    for flag in TOGGLE_FLAGS:
        g.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true",
                       help="record the scripts with this ablation switched on")
    return parser


def _run_one(path: Path, args) -> tuple[str, bool]:
    loaded = load_scenario(path)
    toggles = loaded.toggles.merged(**{f: getattr(args, f) for f in TOGGLE_FLAGS})
    reasoner = None
    if args.backend == "remote":
        from .reasoner.remote import RemoteReasoner

        reasoner = RemoteReasoner(args.endpoint)
    report = run(loaded, args.seed, reasoner=reasoner, toggles=toggles)
    return emit_report(report, args.format), report.success


def cmd_run(args) -> int:
    if args.scenario is not None:
        paths = [args.scenario]
    else:
        paths = sorted(args.suite.glob("*.yaml"))
        if not paths:
            print(f"no scenario files in {args.suite}", file=sys.stderr)
            return 2
    try:
        if len(paths) == 1:
            results = [_run_one(paths[0], args)]
        else:
            with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
                results = list(pool.map(lambda p: _run_one(p, args), paths))
    except RolemeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = "".join(r for r, _ in results) if args.format == "structured" else "\n".join(r for r, _ in results)
    if args.report is not None:
        args.report.write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if all(ok for _, ok in results) else 1


def cmd_generate(args) -> int:
    from .harness.authoring import generate_suite, write_suite

    toggles = Toggles(**{f: getattr(args, f) for f in TOGGLE_FLAGS})
    paths = write_suite(generate_suite(args.kind, args.count, args.seed, toggles), args.out)
    print(f"wrote {len(paths)} scenario(s) to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_generate(args)


if __name__ == "__main__":
    sys.exit(main())
