"""Step-based transaction programs and their evaluation.

Workload file example::

    init /acct = { a: 10, b: 20 }

    machine T1
      shared /acct
      step:
        read /acct/a
        write /acct/a := read(/acct/a) - 5
      step:
        partial /acct/b add 5

Each ``step:`` body is indented below it and holds ``read``, ``guard``,
``write`` and ``partial`` lines.  Expressions support integers, strings,
booleans, ``read(/path)``, ``+ - *``, comparisons, ``and``/``or``/``not``,
tree literals ``{k: expr}`` and ``choose([e1, e2, ...])``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import EvaluationError, ParseError, UndeclaredLocation, UnresolvedLocation
from .ops import DEFAULT_REGISTRY, GenuineUpdate, PartialUpdate, Registry
from .syntax import TokenStream, tokenize
from .values import (
    INT64_MAX,
    Classification,
    Path,
    Store,
    eval_loc,
    parse_value_tokens,
    resolves,
    same_value,
    wrap64,
    write_root,
)

# -- expressions -------------------------------------------------------------
# AST nodes are tuples: ("lit", v) ("read", path) ("bin", op, a, b)
# ("neg", a) ("not", a) ("choose", site, [exprs]) ("tree", [(key, expr)])

_CMP = ("==", "!=", "<", "<=", ">", ">=")


class _ExprParser:
    def __init__(self, ts: TokenStream, first_site: int = 0):
        self.ts = ts
        self.choose_sites = first_site
        self.reads: list[tuple[Path, int]] = []

    def parse(self):
        return self.or_()

    def or_(self):
        e = self.and_()
        while self.ts.accept("name", "or"):
            e = ("bin", "or", e, self.and_())
        return e

    def and_(self):
        e = self.not_()
        while self.ts.accept("name", "and"):
            e = ("bin", "and", e, self.not_())
        return e

    def not_(self):
        if self.ts.accept("name", "not"):
            return ("not", self.not_())
        return self.cmp()

    def cmp(self):
        e = self.sum()
        tok = self.ts.peek()
        if tok.kind == "op" and tok.text in _CMP:
            self.ts.next()
            e = ("bin", tok.text, e, self.sum())
        return e

    def sum(self):
        e = self.prod()
        while True:
            tok = self.ts.peek()
            if tok.kind == "op" and tok.text in "+-":
                self.ts.next()
                e = ("bin", tok.text, e, self.prod())
            else:
                return e

    def prod(self):
        e = self.unary()
        while self.ts.accept("op", "*"):
            e = ("bin", "*", e, self.unary())
        return e

    def unary(self):
        if self.ts.accept("op", "-"):
            return ("neg", self.unary())
        return self.atom()

    def atom(self):
        ts = self.ts
        tok = ts.peek()
        if tok.kind in ("int", "str"):
            ts.next()
            if tok.kind == "int" and tok.value > INT64_MAX:
                raise ParseError(f"integer {tok.text} outside signed 64-bit range", ts.line, tok.column)
            return ("lit", tok.value)
        if tok.kind == "name":
            if tok.text in ("true", "false"):
                ts.next()
                return ("lit", tok.text == "true")
            if tok.text == "read":
                ts.next()
                ts.expect("op", "(")
                ptok = ts.expect("path")
                ts.expect("op", ")")
                path = Path.parse(ptok.text)
                self.reads.append((path, ptok.column))
                return ("read", path)
            if tok.text == "choose":
                ts.next()
                ts.expect("op", "(")
                ts.expect("op", "[")
                options = [self.parse()]
                while ts.accept("op", ","):
                    options.append(self.parse())
                ts.expect("op", "]")
                ts.expect("op", ")")
                site = self.choose_sites
                self.choose_sites += 1
                return ("choose", site, options)
        if ts.accept("op", "("):
            e = self.parse()
            ts.expect("op", ")")
            return e
        if ts.accept("op", "{"):
            items = []
            if not ts.accept("op", "}"):
                while True:
                    key = ts.next()
                    if key.kind not in ("name", "int"):
                        raise ParseError(f"expected key, got {key.text!r}", ts.line, key.column)
                    ts.expect("op", ":")
                    items.append((key.text, self.parse()))
                    if ts.accept("op", "}"):
                        break
                    ts.expect("op", ",")
            return ("tree", items)
        raise ts.error(f"unexpected {tok.text!r}" if tok.kind != "end" else "expression expected")


def choice_index(seed: int, machine_id: str, pc: int, site: int, n: int) -> int:
    """Pure choice function: same inputs, same pick, across processes."""
    digest = hashlib.sha256(f"{seed}:{machine_id}:{pc}:{site}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % n


def _kind(v):
    if type(v) is bool:
        return "boolean"
    if type(v) is int:
        return "integer"
    if type(v) is str:
        return "string"
    return "tree"


class _Evaluator:
    def __init__(self, read_values, seed, machine_id, pc):
        self.read_values = read_values
        self.seed = seed
        self.machine_id = machine_id
        self.pc = pc

    def eval(self, e):
        tag = e[0]
        if tag == "lit":
            return e[1]
        if tag == "read":
            return self.read_values[e[1]]
        if tag == "neg":
            v = self.eval(e[1])
            if type(v) is not int:
                raise EvaluationError(f"cannot negate {_kind(v)}")
            return wrap64(-v)
        if tag == "not":
            v = self.eval(e[1])
            if type(v) is not bool:
                raise EvaluationError(f"'not' needs a boolean, got {_kind(v)}")
            return not v
        if tag == "choose":
            _, site, options = e
            return self.eval(options[choice_index(self.seed, self.machine_id, self.pc, site, len(options))])
        if tag == "tree":
            return {k: self.eval(x) for k, x in e[1]}
        _, op, a, b = e
        if op in ("and", "or"):
            x = self.eval(a)
            y = self.eval(b)
            if type(x) is not bool or type(y) is not bool:
                raise EvaluationError(f"'{op}' needs booleans")
            return (x and y) if op == "and" else (x or y)
        x, y = self.eval(a), self.eval(b)
        if op in ("==", "!="):
            if _kind(x) != _kind(y):
                raise EvaluationError(f"cannot compare {_kind(x)} with {_kind(y)}")
            return same_value(x, y) == (op == "==")
        if op in ("<", "<=", ">", ">="):
            if _kind(x) != _kind(y) or _kind(x) not in ("integer", "string"):
                raise EvaluationError(f"cannot order {_kind(x)} and {_kind(y)}")
            return {"<": x < y, "<=": x <= y, ">": x > y, ">=": x >= y}[op]
        if op == "+":
            if type(x) is int and type(y) is int:
                return wrap64(x + y)
            if type(x) is str and type(y) is str:
                return x + y
            raise EvaluationError(f"cannot add {_kind(x)} and {_kind(y)}")
        if type(x) is not int or type(y) is not int:
            raise EvaluationError(f"'{op}' needs integers, got {_kind(x)} and {_kind(y)}")
        return wrap64(x - y) if op == "-" else wrap64(x * y)


# -- programs ----------------------------------------------------------------

@dataclass(frozen=True)
class WriteInstr:
    kind: str  # "genuine" | "partial"
    loc: Path
    expr: tuple
    op: str | None = None


@dataclass(frozen=True)
class Step:
    reads: tuple[Path, ...] = ()
    guard: tuple | None = None
    writes: tuple[WriteInstr, ...] = ()


@dataclass(frozen=True)
class Program:
    machine_id: str
    shared: frozenset = frozenset()
    monitored: frozenset = frozenset()
    output: frozenset = frozenset()
    steps: tuple[Step, ...] = ()

    @property
    def classification(self) -> Classification:
        return Classification(self.shared, self.monitored, self.output)


@dataclass(frozen=True)
class StepIntent:
    read_values: dict
    genuine: tuple[GenuineUpdate, ...]
    partial: tuple[PartialUpdate, ...]
    r_loc: frozenset
    w_loc: frozenset
    genuine_write_loc: frozenset
    # Set when evaluation failed; the location sets then fall back to
    # every location the step could touch so locks can still be computed.
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class Workload:
    programs: tuple[Program, ...]
    store: Store
    text: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def program(self, machine_id: str) -> Program:
        for p in self.programs:
            if p.machine_id == machine_id:
                return p
        raise KeyError(machine_id)

    @property
    def machine_ids(self) -> list[str]:
        return [p.machine_id for p in self.programs]

    @property
    def total_steps(self) -> int:
        return sum(len(p.steps) for p in self.programs)


def terminated(p: Program, pc: int) -> bool:
    return pc >= len(p.steps)


def eval_step(p: Program, pc: int, s: Store, choice_seed: int) -> StepIntent:
    """Evaluate step ``pc`` of ``p`` in store ``s``.

    Raises :class:`UnresolvedLocation` for a missing read location and
    :class:`EvaluationError` for expression type errors.
    """
    step = p.steps[pc]
    read_values = {path: eval_loc(path, s) for path in step.reads}
    ev = _Evaluator(read_values, choice_seed, p.machine_id, pc)
    writes = step.writes
    if step.guard is not None:
        g = ev.eval(step.guard)
        if type(g) is not bool:
            raise EvaluationError(f"guard must be boolean, got {_kind(g)}")
        if not g:
            writes = ()
    genuine, partial = [], []
    for w in writes:
        v = ev.eval(w.expr)
        if w.kind == "genuine":
            genuine.append(GenuineUpdate(w.loc, v))
        else:
            partial.append(PartialUpdate(w.loc, w.op, v))
    return StepIntent(
        read_values=read_values,
        genuine=tuple(genuine),
        partial=tuple(partial),
        r_loc=frozenset(step.reads),
        w_loc=frozenset(w.loc for w in writes),
        genuine_write_loc=frozenset(u.loc for u in genuine),
    )


def static_intent(p: Program, pc: int, error: str) -> StepIntent:
    """Conservative intent covering every location the step might touch."""
    step = p.steps[pc]
    return StepIntent(
        read_values={},
        genuine=(),
        partial=tuple(PartialUpdate(w.loc, w.op, None) for w in step.writes if w.kind == "partial"),
        r_loc=frozenset(step.reads),
        w_loc=frozenset(w.loc for w in step.writes),
        genuine_write_loc=frozenset(w.loc for w in step.writes if w.kind == "genuine"),
        error=error,
    )


# -- workload file parser ----------------------------------------------------

def _paths(ts: TokenStream) -> list[tuple[Path, int]]:
    out = []
    while not ts.at("end"):
        tok = ts.expect("path")
        out.append((Path.parse(tok.text), tok.column))
    return out


def _strip_comment(line: str) -> str:
    in_str = False
    escaped = False
    for i, ch in enumerate(line):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            return line[:i]
    return line


@dataclass
class _MachineDraft:
    machine_id: str
    line: int
    shared: list = field(default_factory=list)
    monitored: list = field(default_factory=list)
    output: list = field(default_factory=list)
    steps: list = field(default_factory=list)


@dataclass
class _StepDraft:
    line: int
    indent: int
    reads: list = field(default_factory=list)
    guard: tuple | None = None
    expr_reads: list = field(default_factory=list)
    writes: list = field(default_factory=list)
    sites: int = 0


def parse_workload(text: str, registry: Registry = DEFAULT_REGISTRY) -> Workload:
    root: dict = {}
    machines: list[_MachineDraft] = []
    current: _MachineDraft | None = None
    step: _StepDraft | None = None
    to_check: list[tuple[Path, int, int]] = []  # path, line, column

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        body = line.lstrip()
        keyword, _, rest = body.partition(" ")
        rest_col = indent + len(keyword) + 2
        ts = TokenStream(tokenize(rest, lineno, rest_col - 1), lineno)

        if step is not None and indent > step.indent and keyword in ("read", "write", "partial", "guard"):
            if keyword == "read":
                for path, col in _paths(ts):
                    step.reads.append(path)
                    to_check.append((path, lineno, col))
                continue
            if keyword == "guard":
                if step.guard is not None:
                    raise ParseError("step already has a guard", lineno, indent + 1)
                ep = _ExprParser(ts, step.sites)
                step.guard = ep.parse()
                ts.expect_end()
                step.expr_reads += [(p, lineno, c) for p, c in ep.reads]
                step.sites = ep.choose_sites
                continue
            ptok = ts.expect("path")
            target = Path.parse(ptok.text)
            to_check.append((target, lineno, ptok.column))
            if keyword == "write":
                ts.expect("op", ":=")
                op = None
            else:
                optok = ts.expect("name")
                op = optok.text
                if not registry.is_requestable(op):
                    raise ParseError(f"unknown or non-requestable operator {op!r}", lineno, optok.column)
            ep = _ExprParser(ts, step.sites)
            expr = ep.parse()
            ts.expect_end()
            step.sites = ep.choose_sites
            step.expr_reads += [(p, lineno, c) for p, c in ep.reads]
            step.writes.append(WriteInstr("genuine" if op is None else "partial", target, expr, op))
            continue

        if keyword in ("read", "write", "partial", "guard"):
            raise ParseError(f"'{keyword}' must be indented inside a step", lineno, indent + 1)

        step = None
        if keyword == "machine":
            name = ts.expect("name")
            ts.expect_end()
            if any(m.machine_id == name.text for m in machines):
                raise ParseError(f"duplicate machine id {name.text!r}", lineno, name.column)
            current = _MachineDraft(name.text, lineno)
            machines.append(current)
        elif keyword in ("shared", "monitored", "output"):
            if current is None:
                raise ParseError(f"'{keyword}' outside a machine block", lineno, indent + 1)
            for path, col in _paths(ts):
                getattr(current, keyword).append(path)
                to_check.append((path, lineno, col))
        elif keyword == "init":
            ptok = ts.expect("path")
            ts.expect("op", "=")
            value = parse_value_tokens(ts)
            ts.expect_end()
            path = Path.parse(ptok.text)
            try:
                root = _init_write(root, path, value)
            except UnresolvedLocation:
                raise ParseError(f"init {path} goes below a scalar", lineno, ptok.column) from None
        elif keyword == "step:" or body == "step:":
            if current is None:
                raise ParseError("'step:' outside a machine block", lineno, indent + 1)
            step = _StepDraft(lineno, indent)
            current.steps.append(step)
        else:
            raise ParseError(f"unknown directive {keyword!r}", lineno, indent + 1)

    for path, lineno, col in to_check:
        if not resolves(path, root):
            raise UndeclaredLocation(f"location {path} is not declared by any init", lineno, col)

    programs = []
    for m in machines:
        steps = []
        for sd in m.steps:
            declared = set(sd.reads)
            for path, lineno, col in sd.expr_reads:
                if path not in declared:
                    raise ParseError(f"read({path}) used without a 'read {path}' line in this step", lineno, col)
            steps.append(Step(tuple(dict.fromkeys(sd.reads)), sd.guard, tuple(sd.writes)))
        programs.append(Program(m.machine_id, frozenset(m.shared), frozenset(m.monitored), frozenset(m.output), tuple(steps)))

    store = Store(root, {p.machine_id: p.classification for p in programs})
    return Workload(tuple(programs), store, text)


def _init_write(root: dict, path: Path, value) -> dict:
    # init may create intermediate nodes; later inits may refine earlier trees
    for i in range(1, len(path.segments)):
        prefix = Path(path.segments[:i])
        if not resolves(prefix, root):
            root = write_root(root, prefix, {})
    return write_root(root, path, value)


def load_workload(filename, registry: Registry = DEFAULT_REGISTRY) -> Workload:
    with open(filename, encoding="utf-8") as fh:
        return parse_workload(fh.read(), registry)
