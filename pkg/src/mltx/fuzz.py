"""Random workload generation and the generate, simulate, check loop."""
from __future__ import annotations

import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

from .audit import audit_lock_before_touch, audit_two_phase
from .errors import MltxError
from .executor import run
from .serializability import check_serializable
from .values import Path, format_value
from .workload import parse_workload

FAMILIES = ("add", "xor")


@dataclass
class FuzzConfig:
    machines: tuple = (2, 5)
    depth: tuple = (1, 3)
    locations: tuple = (2, 8)
    steps: tuple = (4, 12)
    partial_ratio: float = 0.5
    runs: int = 500
    seed: int = 0
    scheduler: str = "both"  # rr | random | both (alternating)
    strict: bool = False
    adversarial: bool = False
    stagger: bool = False

    def __post_init__(self):
        for name in ("machines", "depth", "locations", "steps"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"{name} range {lo}..{hi} is empty or not positive")
        if self.depth[1] > 4:
            raise ValueError("tree depth is limited to 4")
        if not 0.0 <= self.partial_ratio <= 1.0:
            raise ValueError("partial ratio must lie in [0, 1]")
        if self.scheduler not in ("rr", "random", "both"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.runs < 0:
            raise ValueError("runs must be non-negative")

    def run_seed(self, i: int) -> int:
        return (self.seed * 1_000_003 + i) % (2**31)

    def scheduler_for(self, i: int) -> str:
        if self.scheduler == "both":
            return "rr" if i % 2 == 0 else "random"
        return self.scheduler


# -- workload generation -----------------------------------------------------

def _gen_tree(rng, depth_left, budget):
    if depth_left <= 1 or budget[0] <= 1 or rng.random() < 0.35:
        budget[0] -= 1
        return rng.randint(0, 20)
    node = {}
    for k in range(rng.randint(1, 3)):
        if budget[0] <= 0:
            break
        node[f"n{k}"] = _gen_tree(rng, depth_left - 1, budget)
    return node or rng.randint(0, 20)


def _same_shape(rng, tree):
    if isinstance(tree, dict):
        return {k: _same_shape(rng, v) for k, v in tree.items()}
    return rng.randint(0, 20)


def _nodes(tree, prefix):
    """All (path, subtree) pairs below ``prefix``, including it."""
    out = [(prefix, tree)]
    if isinstance(tree, dict):
        for k, v in tree.items():
            out.extend(_nodes(v, prefix.child(k)))
    return out


def _related(a: Path, b: Path) -> bool:
    n = min(len(a.segments), len(b.segments))
    return a.segments[:n] == b.segments[:n]


def generate_workload(cfg: FuzzConfig, rng: random.Random) -> str:
    """Text of a random workload; every location is shared by every machine."""
    budget = [rng.randint(*cfg.locations)]
    roots = {}
    i = 0
    while budget[0] > 0 or not roots:
        roots[f"r{i}"] = _gen_tree(rng, rng.randint(*cfg.depth), budget)
        i += 1
    family = {r: rng.choice(FAMILIES) for r in roots}
    nodes = [(p, t) for r, tree in roots.items() for p, t in _nodes(tree, Path((r,)))]
    leaves = [p for p, t in nodes if not isinstance(t, dict)]
    interior = [(p, t) for p, t in nodes if isinstance(t, dict)]

    lines = [f"init /{r} = {format_value(t)}" for r, t in roots.items()]
    for m in range(1, rng.randint(*cfg.machines) + 1):
        lines += ["", f"machine M{m}"]
        lines += [f"  shared /{r}" for r in roots]
        for _ in range(rng.randint(*cfg.steps)):
            lines += ["  step:", *_gen_step(cfg, rng, leaves, interior, family)]
    return "\n".join(lines) + "\n"


def _gen_step(cfg, rng, leaves, interior, family):
    reads = rng.sample(leaves, k=min(len(leaves), rng.choice((0, 0, 1, 1, 2))))
    if interior and rng.random() < 0.1:
        reads.append(rng.choice(interior)[0])
    body = [f"    read {p}" for p in dict.fromkeys(reads)]
    leaf_reads = [p for p in reads if p in leaves]
    if leaf_reads and rng.random() < 0.15:
        body.append(f"    guard read({rng.choice(leaf_reads)}) >= {rng.randint(0, 15)}")

    def operand():
        if leaf_reads and rng.random() < 0.4:
            return f"read({rng.choice(leaf_reads)}) + {rng.randint(-3, 3)}"
        if rng.random() < 0.1:
            return f"choose([{', '.join(str(rng.randint(0, 9)) for _ in range(3))}])"
        return str(rng.randint(-5, 15))

    written: list[Path] = []
    for _ in range(rng.choice((1, 1, 1, 2))):
        if rng.random() < cfg.partial_ratio:
            loc = rng.choice(leaves)
            if cfg.adversarial:
                op = rng.choice(("add", "xor", "mul"))
            else:
                op = family[loc.segments[0]]
            arg = "choose([-1, 1])" if op == "mul" else operand()
            instr = f"    partial {loc} {op} {arg}"
        elif interior and rng.random() < 0.15:
            loc, tree = rng.choice(interior)
            instr = f"    write {loc} := {format_value(_same_shape(rng, tree))}"
        else:
            loc = rng.choice(leaves)
            instr = f"    write {loc} := {operand()}"
        if not cfg.adversarial and any(_related(loc, w) for w in written):
            continue
        written.append(loc)
        body.append(instr)
    return body


# -- the loop ----------------------------------------------------------------

@dataclass
class FuzzOutcome:
    index: int
    seed: int
    scheduler: str
    status: str
    committed: int
    aborted: int
    deadlocks: int
    serializable: bool
    final_store_match: bool | None
    audit: list = field(default_factory=list)
    failure: dict | None = None
    error: str | None = None
    workload_text: str | None = None
    trace_text: str | None = None

    @property
    def violation(self) -> bool:
        return (not self.serializable or self.final_store_match is False
                or bool(self.audit) or self.error is not None)


def fuzz_one(cfg: FuzzConfig, i: int, keep_artifacts: bool = False) -> FuzzOutcome:
    seed = cfg.run_seed(i)
    sched = cfg.scheduler_for(i)
    text = generate_workload(cfg, random.Random(seed))
    wl = parse_workload(text)
    trace = run(wl, seed, sched, strict=cfg.strict, stagger=cfg.stagger)
    deadlocks = sum(1 for _ in trace.events("deadlock"))
    out = FuzzOutcome(i, seed, sched, trace.status, len(trace.footer["committed"]),
                      len(trace.footer["aborted"]), deadlocks, False, None)
    try:
        verdict = check_serializable(trace, wl)
        out.serializable = verdict.serializable
        out.final_store_match = verdict.final_store_match
        out.failure = verdict.failure
    except MltxError as exc:
        out.error = f"{type(exc).__name__}: {exc}"
    out.audit = audit_two_phase(trace).violations + audit_lock_before_touch(trace, wl).violations
    if keep_artifacts or out.violation:
        out.workload_text = text
        out.trace_text = trace.to_jsonl()
    return out


@dataclass
class FuzzSummary:
    runs: int = 0
    completed: int = 0
    round_limit: int = 0
    commits: int = 0
    aborts: int = 0
    deadlocks: int = 0
    violations: int = 0
    failing: list = field(default_factory=list)

    def add(self, o: FuzzOutcome):
        self.runs += 1
        self.completed += o.status == "completed"
        self.round_limit += o.status != "completed"
        self.commits += o.committed
        self.aborts += o.aborted
        self.deadlocks += o.deadlocks
        if o.violation:
            self.violations += 1
            self.failing.append(o)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failing"] = [{"index": o.index, "seed": o.seed, "scheduler": o.scheduler} for o in self.failing]
        return d


def _worker(args):
    cfg, i, keep = args
    return fuzz_one(cfg, i, keep)


def fuzz(cfg: FuzzConfig, jobs: int = 1, keep_going: bool = False, keep_artifacts: bool = False,
         on_outcome=None) -> FuzzSummary:
    """Run ``cfg.runs`` generated workloads; stop at the first violation unless ``keep_going``."""
    summary = FuzzSummary()
    tasks = [(cfg, i, keep_artifacts) for i in range(cfg.runs)]
    if jobs <= 1 or len(tasks) < 2:
        results = map(_worker, tasks)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        results = pool.map(_worker, tasks, chunksize=max(1, len(tasks) // (4 * jobs)))
    try:
        for o in results:
            summary.add(o)
            if on_outcome is not None:
                on_outcome(o)
            if o.violation and not keep_going:
                break
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return summary
