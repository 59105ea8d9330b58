"""Command-line front end: ``mltx simulate``, ``mltx check`` and ``mltx fuzz``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path as FsPath

from .errors import MltxError
from .executor import SCHEDULERS, Trace, run
from .fuzz import FuzzConfig, fuzz
from .serializability import check_serializable
from .workload import load_workload

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ROUND_LIMIT = 2
EXIT_VIOLATION = 3


def _default_seed() -> int:
    raw = os.environ.get("MLTX_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"mltx: MLTX_SEED must be an integer, got {raw!r}") from None


def _range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("-")
    try:
        pair = (int(lo), int(hi)) if sep else (int(lo), int(lo))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO-HI, got {text!r}") from None
    return pair


def _abort_after(text: str) -> tuple[str, int]:
    machine, sep, k = text.partition("=")
    if not sep or not machine:
        raise argparse.ArgumentTypeError(f"expected MACHINE=K, got {text!r}")
    try:
        return machine, int(k)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MACHINE=K, got {text!r}") from None


def _err(msg: str):
    print(f"mltx: {msg}", file=sys.stderr)


def cmd_simulate(args) -> int:
    try:
        wl = load_workload(args.workload)
    except OSError as exc:
        _err(f"cannot read workload {args.workload}: {exc.strerror or exc}")
        return EXIT_ERROR
    except MltxError as exc:
        _err(f"{args.workload}: {exc}")
        return EXIT_ERROR
    if args.max_rounds is not None and args.max_rounds <= 0:
        _err("--max-rounds must be positive")
        return EXIT_ERROR
    unknown = [m for m, _ in args.abort_after if m not in wl.machine_ids]
    if unknown:
        _err(f"--abort-after names unknown machine(s): {', '.join(unknown)}")
        return EXIT_ERROR
    trace = run(wl, args.seed, args.scheduler, args.max_rounds, strict=args.strict_subsumption,
                suspend=args.suspend, stagger=args.stagger, abort_after=dict(args.abort_after))
    try:
        trace.write(args.out)
    except OSError as exc:
        _err(f"cannot write trace {args.out}: {exc.strerror or exc}")
        return EXIT_ERROR
    f = trace.footer
    _err(f"{f['status']}: {f['rounds']} rounds, committed {f['committed']}, aborted {f['aborted']}")
    return EXIT_OK if trace.completed else EXIT_ROUND_LIMIT


def cmd_check(args) -> int:
    try:
        wl = load_workload(args.workload)
        trace = Trace.read(args.trace)
        verdict = check_serializable(trace, wl)
    except OSError as exc:
        _err(f"cannot read {exc.filename}: {exc.strerror or exc}")
        return EXIT_ERROR
    except MltxError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_ERROR
    print(verdict.to_json())
    if not verdict.serializable:
        _err(f"not serializable: first divergence at machine {verdict.failure['machine']}, "
             f"position {verdict.failure['position']}")
        return EXIT_VIOLATION
    return EXIT_OK


def _write_artifacts(outdir: FsPath, o):
    outdir.mkdir(parents=True, exist_ok=True)
    stem = outdir / f"run{o.index:05d}-seed{o.seed}"
    stem.with_suffix(".wl").write_text(o.workload_text or "", encoding="utf-8")
    stem.with_suffix(".trace.jsonl").write_text(o.trace_text or "", encoding="utf-8")
    report = {"index": o.index, "seed": o.seed, "scheduler": o.scheduler, "status": o.status,
              "serializable": o.serializable, "final_store_match": o.final_store_match,
              "failure": o.failure, "audit": o.audit, "error": o.error}
    stem.with_suffix(".json").write_text(json.dumps(report, indent=2, ensure_ascii=False), encoding="utf-8")
    return stem


def cmd_fuzz(args) -> int:
    try:
        cfg = FuzzConfig(
            machines=args.machines, depth=args.depth, locations=args.locations, steps=args.steps,
            partial_ratio=args.partial_ratio, runs=args.runs, seed=args.seed, scheduler=args.scheduler,
            strict=args.strict_subsumption, adversarial=args.adversarial, stagger=args.stagger,
        )
    except ValueError as exc:
        _err(str(exc))
        return EXIT_ERROR
    artifacts = FsPath(args.artifacts)

    def report(o):
        if o.violation:
            stem = _write_artifacts(artifacts, o)
            _err(f"violation in run {o.index} (seed {o.seed}, {o.scheduler}); "
                 f"replay with: mltx simulate --workload {stem}.wl --seed {o.seed} "
                 f"--scheduler {o.scheduler}{' --strict-subsumption' if cfg.strict else ''}"
                 f"{' --stagger' if cfg.stagger else ''} --out replay.jsonl")

    summary = fuzz(cfg, jobs=args.jobs, keep_going=args.keep_going, on_outcome=report)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return EXIT_VIOLATION if summary.violations else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mltx", description="Simulate and check multi-level transaction runs.")
    sub = p.add_subparsers(dest="command", required=True)
    seed = _default_seed()

    s = sub.add_parser("simulate", help="run a workload and write its trace")
    s.add_argument("--workload", required=True)
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--scheduler", choices=SCHEDULERS, default="rr")
    s.add_argument("--strict-subsumption", action="store_true",
                   help="only ancestors block; descendants' locks are ignored")
    s.add_argument("--max-rounds", type=int, default=None)
    s.add_argument("--stagger", action="store_true", help="machines join at seeded rounds")
    s.add_argument("--suspend", action="store_true", help="skip machines whose locks cannot be granted")
    s.add_argument("--abort-after", type=_abort_after, action="append", default=[], metavar="MACHINE=K",
                   help="force MACHINE to request abort after K fired steps")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check", help="check a trace for serializability")
    c.add_argument("--workload", required=True)
    c.add_argument("--trace", required=True)
    c.set_defaults(func=cmd_check)

    f = sub.add_parser("fuzz", help="generate, simulate and check random workloads")
    f.add_argument("--runs", type=int, default=500)
    f.add_argument("--seed", type=int, default=seed)
    f.add_argument("--machines", type=_range, default=(2, 5), metavar="LO-HI")
    f.add_argument("--depth", type=_range, default=(1, 3), metavar="LO-HI")
    f.add_argument("--locations", type=_range, default=(2, 8), metavar="LO-HI")
    f.add_argument("--steps", type=_range, default=(4, 12), metavar="LO-HI")
    f.add_argument("--partial-ratio", type=float, default=0.5)
    f.add_argument("--scheduler", choices=(*SCHEDULERS, "both"), default="both")
    f.add_argument("--strict-subsumption", action="store_true")
    f.add_argument("--adversarial", action="store_true", help="allow incompatible partials and related writes")
    f.add_argument("--stagger", action="store_true")
    f.add_argument("--keep-going", action="store_true")
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("--artifacts", default="mltx-fuzz-failures")
    f.set_defaults(func=cmd_fuzz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
